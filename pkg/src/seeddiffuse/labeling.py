"""Seeds from activation maps, per-superpixel class fusion, rasterization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import SeedAssignment
from .errors import DimensionMismatch, LengthMismatch, NoSeedsForClass
from .imagecore import LabelMap
from .superpixel import region_means


@dataclass(frozen=True)
class ActivationSet:
    """Ordered (class index, FloatMap) pairs, one per image-level label."""

    maps: tuple

    def __post_init__(self):
        maps = tuple((int(c), m) for c, m in self.maps)
        if not maps:
            raise ValueError("activation set is empty")
        classes = [c for c, _ in maps]
        if len(set(classes)) != len(classes) or min(classes) < 1:
            raise ValueError("class indices must be unique and >= 1")
        shape = maps[0][1].data.shape
        if any(m.data.shape != shape for _, m in maps):
            raise DimensionMismatch("activation maps differ in size")
        object.__setattr__(self, "maps", maps)

    @property
    def classes(self):
        return [c for c, _ in self.maps]


@dataclass(frozen=True)
class SeedReport:
    per_class: dict
    background_zeros: frozenset
    thresholds: dict


def extract_seeds(sp, acts, m, seed_frac=0.7, bg_thresh=0.05):
    """Pick positive seeds per class and background zero-seeds.

    A superpixel seeds class ``c`` when its mean activation reaches
    ``seed_frac`` times the best superpixel mean for ``c``. A superpixel that
    qualifies for several classes goes to the one with the highest mean
    (lower class index on ties). Background zero-seeds are superpixels with
    mean M below ``bg_thresh`` that qualify for no class.
    """
    if not 0 < seed_frac <= 1:
        raise ValueError("seed_frac must be in (0, 1]")
    if not 0 <= bg_thresh < 1:
        raise ValueError("bg_thresh must be in [0, 1)")
    shape = sp.assignment.shape
    if m.data.shape != shape or acts.maps[0][1].data.shape != shape:
        raise DimensionMismatch("superpixel map, M and activations must share dimensions")

    classes = acts.classes
    means = np.stack([region_means(sp, a.data) for _, a in acts.maps])  # (C, N)
    best = means.max(axis=1)
    thresholds = {c: float(seed_frac * best[k]) for k, c in enumerate(classes)}
    passes = np.zeros_like(means, dtype=bool)
    for k, c in enumerate(classes):
        if best[k] <= 0:
            raise NoSeedsForClass(c)
        passes[k] = means[k] >= thresholds[c]

    # conflict resolution: highest mean, then lowest class index
    order = np.argsort(classes, kind="stable")
    masked = np.where(passes, means, -np.inf)[order]
    winner = order[np.argmax(masked, axis=0)]
    any_pass = passes.any(axis=0)

    m_means = region_means(sp, m.data)
    background = frozenset(np.nonzero((m_means < bg_thresh) & ~any_pass)[0].tolist())

    ones = {}
    for k, c in enumerate(classes):
        nodes = np.nonzero(any_pass & (winner == k))[0]
        if nodes.size == 0:
            raise NoSeedsForClass(c)
        ones[c] = frozenset(nodes.tolist())

    per_class = {}
    for c in classes:
        others = frozenset().union(*(ones[o] for o in classes if o != c))
        per_class[c] = SeedAssignment(ones[c], background | others)
    return SeedReport(per_class, background, thresholds)


def fuse_labels(fields, report, accept_thresh=0.5):
    """Per-superpixel class: argmax over classes of q, or 0 below threshold.

    Ties go to the lower class index. Positive seeds always keep their class.
    """
    if not 0 <= accept_thresh < 1:
        raise ValueError("accept_thresh must be in [0, 1)")
    if not fields:
        raise ValueError("no diffusion fields to fuse")
    classes = sorted(fields)
    qs = [np.asarray(fields[c].q, dtype=np.float64) for c in classes]
    n = qs[0].shape[0]
    if any(q.shape != (n,) for q in qs):
        raise LengthMismatch("diffusion fields differ in length")
    stack = np.stack(qs)
    best = np.argmax(stack, axis=0)
    out = np.where(stack.max(axis=0) >= accept_thresh, np.asarray(classes)[best], 0)
    if report is not None:
        for c, s in report.per_class.items():
            idx = list(s.clamp_one)
            if idx and max(idx) >= n:
                raise LengthMismatch("seed report refers to nodes beyond the fields")
            out[idx] = c
    return out.astype(np.int64)


def rasterize(sp, classes, class_table):
    """Paint every pixel with its superpixel's class."""
    classes = np.asarray(classes)
    if classes.shape != (sp.n,):
        raise LengthMismatch(f"expected {sp.n} class entries, got {classes.shape}")
    return LabelMap(classes[sp.assignment], class_table=class_table)
