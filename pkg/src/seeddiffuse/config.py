"""Pipeline configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    sigma: float = 0.1
    seed_frac: float = 0.7
    bg_thresh: float = 0.05
    accept_thresh: float = 0.5
    slic_k: int = 600
    slic_compactness: float = 10.0
    slic_iters: int = 10
    solver_tol: float = 1e-8
    # 0 means 10 * number of superpixels
    solver_max_iters: int = 0
    affinity_norm: str = "linear"
    diffusion_mode: str = "clamped"
    jacobi_iters: int = 100

    def __post_init__(self):
        checks = [
            (self.sigma > 0, "sigma must be > 0"),
            (0 < self.seed_frac <= 1, "seed_frac must be in (0, 1]"),
            (0 <= self.bg_thresh < 1, "bg_thresh must be in [0, 1)"),
            (0 <= self.accept_thresh < 1, "accept_thresh must be in [0, 1)"),
            (self.slic_k >= 1, "slic_k must be >= 1"),
            (self.slic_compactness >= 0, "slic_compactness must be >= 0"),
            (self.slic_iters >= 1, "slic_iters must be >= 1"),
            (self.solver_tol > 0, "solver_tol must be > 0"),
            (self.solver_max_iters >= 0, "solver_max_iters must be >= 0"),
            (self.affinity_norm in ("linear", "squared"), "affinity_norm: linear|squared"),
            (self.diffusion_mode in ("clamped", "jacobi"), "diffusion_mode: clamped|jacobi"),
            (self.jacobi_iters >= 1, "jacobi_iters must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def max_iters_for(self, n):
        return self.solver_max_iters or 10 * n


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _convert(key, raw):
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    return PipelineConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg):
    return "".join(f"{f} = {getattr(cfg, f)!r}\n".replace("'", "") for f in _FIELDS)
