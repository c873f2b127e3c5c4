"""Exit criteria for the label-transfer pipeline.

Each test checks one criterion at its pinned tolerance and records a
PASS/FAIL line shown in the pytest terminal summary.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
from conftest import (
    assert_valid_field,
    path_graph,
    random_connected_graph,
    random_seeds,
    record_criterion,
)

from seeddiffuse.cli import main
from seeddiffuse.diffusion import (
    SeedAssignment,
    build_affinity,
    diffuse_all_classes,
    energy,
    solve_diffusion,
    solve_diffusion_oracle,
)
from seeddiffuse.evaluation import ConfusionMatrix, accumulate, iou_per_class, mean_iou
from seeddiffuse.imagecore import (
    FloatMap,
    LabelMap,
    RawImage,
    decode_fmap,
    encode_fmap,
    load_label_png,
    normalize_lab,
    rgb_to_lab,
    save_label_png,
)
from seeddiffuse.pipeline import run_pipeline
from seeddiffuse.superpixel import Adjacency, FeatureTable, slic_segment
from seeddiffuse.synth import CLASS_TABLE, make_fixture

SOLVER_TOL = 1e-8
ORACLE_LINF = 1e-6
HAND_TOL = 1e-9
ENERGY_TOL = 1e-8
AFFINITY_TOL = 1e-12
SYNTH_IOU = 0.95

# every (graph, field) produced below; criterion 2 audits all of them
SOLVES = []


def _track(g, field):
    SOLVES.append((g, field))
    return field


def _random_cases(seed, count, n_lo=3, n_hi=100):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(n_lo, n_hi + 1))
        yield random_connected_graph(rng, n), rng


def test_c01_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for g, rng in _random_cases(1001, 200):
        seeds = random_seeds(rng, g.n)
        cg = _track(g, solve_diffusion(g, seeds, tol=SOLVER_TOL))
        dense = _track(g, solve_diffusion_oracle(g, seeds))
        worst = max(worst, float(np.max(np.abs(cg.q - dense.q))))
    elapsed = time.perf_counter() - start
    ok = worst <= ORACLE_LINF and elapsed < 30.0
    record_criterion(1, ok, f"200 graphs, max |dq| = {worst:.2e} (<= 1e-6), {elapsed:.1f}s (< 30s)")
    assert ok


def test_c03_hand_solvable_cases():
    results = []
    g = path_graph([1.0, 1.0])
    results.append(_track(g, solve_diffusion(g, SeedAssignment({0}, {2}))).q[1] - 0.5)
    # weights in ratio 1:3, scaled into (0, 1]
    g = path_graph([1.0 / 3.0, 1.0])
    results.append(_track(g, solve_diffusion(g, SeedAssignment({0}, {2}))).q[1] - 0.25)
    g = path_graph([1.0, 1.0, 1.0])
    fields = diffuse_all_classes(g, {1: SeedAssignment({0}), 2: SeedAssignment({3})})
    for f in fields.values():
        _track(g, f)
    results.extend(fields[1].q - np.array([1, 2 / 3, 1 / 3, 0]))
    results.extend(fields[2].q - np.array([0, 1 / 3, 2 / 3, 1]))
    worst = float(np.max(np.abs(results)))
    ok = worst <= HAND_TOL
    record_criterion(3, ok, f"path-graph cases, max error {worst:.1e} (<= 1e-9)")
    assert ok


def test_c04_energy_optimality():
    worst = 0.0
    cases = [
        (path_graph([1.0, 1.0]), SeedAssignment({0}, {2})),
        (path_graph([1.0 / 3.0, 1.0]), SeedAssignment({0}, {2})),
        (path_graph([1.0, 1.0, 1.0]), SeedAssignment({0}, {3})),
    ]
    for g, rng in _random_cases(1004, 100):
        cases.append((g, random_seeds(rng, g.n)))
    for g, seeds in cases:
        cg = _track(g, solve_diffusion(g, seeds, tol=SOLVER_TOL))
        dense = _track(g, solve_diffusion_oracle(g, seeds))
        worst = max(worst, abs(energy(g, cg.q) - energy(g, dense.q)))
    ok = worst <= ENERGY_TOL
    record_criterion(4, ok, f"{len(cases)} shared cases, max |dE| = {worst:.1e} (<= 1e-8)")
    assert ok


def test_c05_seed_monotonicity():
    violations = 0
    tested = 0
    for g, rng in _random_cases(1005, 100):
        seeds = random_seeds(rng, g.n)
        free = sorted(set(range(g.n)) - seeds.clamp_one - seeds.clamp_zero)
        if not free:
            continue
        added = SeedAssignment(seeds.clamp_one | {int(rng.choice(free))}, seeds.clamp_zero)
        before = _track(g, solve_diffusion_oracle(g, seeds)).q
        after = _track(g, solve_diffusion_oracle(g, added)).q
        cg_before = _track(g, solve_diffusion(g, seeds)).q
        cg_after = _track(g, solve_diffusion(g, added)).q
        tested += 1
        if np.any(after < before - 1e-9) or np.any(cg_after < cg_before - ORACLE_LINF):
            violations += 1
    ok = violations == 0 and tested >= 95
    record_criterion(5, ok, f"{tested} instances, {violations} violations")
    assert ok


def _write_fixture(tmp, seed):
    fx = tmp / f"fx{seed}"
    assert main(["synth", "--out", str(fx), "--seed", str(seed), "--variant", "two-blob"]) == 0
    return fx


def _diffuse(fx, out):
    return main(
        [
            "diffuse", "--image", str(fx / "image.png"), "--mask", str(fx / "m.fmap"),
            "--act", f"1:{fx / 'act_1.fmap'}", "--act", f"2:{fx / 'act_2.fmap'}",
            "--classes", str(fx / "classes.txt"), "--out", str(out),
        ]
    )


def test_c06_synthetic_end_to_end(tmp_path):
    start = time.perf_counter()
    worst_class, worst_miou = 1.0, 1.0
    codes = []
    for seed in range(10):
        fx = _write_fixture(tmp_path, seed)
        out = tmp_path / f"pred{seed}.png"
        codes.append(_diffuse(fx, out))
        gt = load_label_png(fx / "gt.png", CLASS_TABLE)
        cm = accumulate(ConfusionMatrix.empty(3), gt, load_label_png(out, CLASS_TABLE))
        worst_class = min(worst_class, float(np.nanmin(iou_per_class(cm))))
        worst_miou = min(worst_miou, mean_iou(cm))
    elapsed = time.perf_counter() - start
    ok = (
        all(c == 0 for c in codes)
        and worst_class >= SYNTH_IOU
        and worst_miou >= SYNTH_IOU
        and elapsed < 60.0
    )
    record_criterion(
        6, ok,
        f"10 two-blob fixtures, min class IoU {worst_class:.4f}, min mIoU {worst_miou:.4f} "
        f"(>= 0.95), {elapsed:.1f}s (< 60s)",
    )
    assert ok


def test_c02_harmonicity_and_maximum_principle():
    # pipeline solves on synthetic fixtures join the random/hand-made ones
    for seed in range(3):
        fx = make_fixture("two-blob", seed)
        result = run_pipeline(fx.image, fx.m, fx.activations, CLASS_TABLE)
        for f in result.fields.values():
            _track(result.graph, f)
    if len(SOLVES) < 100:
        # run standalone: generate the solves here
        for g, rng in _random_cases(1002, 50):
            seeds = random_seeds(rng, g.n)
            _track(g, solve_diffusion(g, seeds))
            _track(g, solve_diffusion_oracle(g, seeds))
    failures = 0
    for g, f in SOLVES:
        try:
            assert_valid_field(g, f, SOLVER_TOL)
        except AssertionError:
            failures += 1
    ok = failures == 0
    record_criterion(2, ok, f"{len(SOLVES)} solves audited, {failures} failures")
    assert ok


def test_c07_metric_identities():
    rng = np.random.default_rng(1007)
    gt = rng.integers(0, 4, (20, 20))
    perfect = mean_iou(accumulate(ConfusionMatrix.empty(4), gt, gt))
    third_gt = np.array([[1, 1, 0, 0], [1, 1, 0, 0]])
    third_pred = np.array([[0, 1, 1, 0], [0, 1, 1, 0]])
    third = iou_per_class(accumulate(ConfusionMatrix.empty(2), third_gt, third_pred))[1]
    pairs = [(rng.integers(0, 5, (8, 9)), rng.integers(0, 5, (8, 9))) for _ in range(12)]
    reference = ConfusionMatrix.empty(5)
    for g, p in pairs:
        reference = accumulate(reference, g, p)
    order_ok = True
    for _ in range(20):
        cm = ConfusionMatrix.empty(5)
        for i in rng.permutation(len(pairs)):
            cm = accumulate(cm, *pairs[i])
        order_ok &= np.array_equal(cm.counts, reference.counts)
    ok = perfect == 1.0 and third == 1 / 3 and order_ok
    record_criterion(
        7, ok, f"perfect mIoU {perfect}, hand IoU {float(third)!r}, shuffled batches equal: {order_ok}"
    )
    assert ok


def test_c08_format_round_trips(tmp_path):
    rng = np.random.default_rng(1008)
    fmap_ok = png_ok = 0
    for i in range(100):
        h, w = (int(v) for v in rng.integers(1, 40, 2))
        data = rng.random((h, w)).astype(np.float32)
        data[rng.random((h, w)) < 0.1] = 1.0
        data[rng.random((h, w)) < 0.1] = 0.0
        fmap_ok += decode_fmap(encode_fmap(FloatMap(data))).data.tobytes() == data.tobytes()

        k = int(rng.integers(1, 22))
        table = ((0, "background"),) + tuple((c, f"c{c}") for c in range(1, k))
        labels = rng.integers(0, k, (h, w))
        path = tmp_path / f"l{i}.png"
        save_label_png(LabelMap(labels, table), path)
        png_ok += np.array_equal(load_label_png(path, table).data, labels)
    ok = fmap_ok == 100 and png_ok == 100
    record_criterion(8, ok, f"FMAP {fmap_ok}/100, indexed PNG {png_ok}/100 bit-exact")
    assert ok


def test_c09_determinism(tmp_path):
    fx = _write_fixture(tmp_path, 5)
    outs = [tmp_path / "a.png", tmp_path / "b.png"]
    codes = [_diffuse(fx, outs[0]), _diffuse(fx, outs[1])]
    # a third run in a fresh interpreter
    outs.append(tmp_path / "c.png")
    proc = subprocess.run(
        [
            sys.executable, "-m", "seeddiffuse", "diffuse",
            "--image", str(fx / "image.png"), "--mask", str(fx / "m.fmap"),
            "--act", f"1:{fx / 'act_1.fmap'}", "--act", f"2:{fx / 'act_2.fmap'}",
            "--classes", str(fx / "classes.txt"), "--out", str(outs[2]),
        ],
        capture_output=True,
    )
    codes.append(proc.returncode)
    same_files = len({p.read_bytes() for p in outs}) == 1
    rng = np.random.default_rng(1009)
    lab = normalize_lab(rgb_to_lab(RawImage(rng.integers(0, 256, (60, 80, 3)).astype(np.uint8))))
    runs = [slic_segment(lab, 50).assignment for _ in range(3)]
    slic_same = all(np.array_equal(runs[0], r) for r in runs[1:])
    ok = codes == [0, 0, 0] and same_files and slic_same
    record_criterion(9, ok, f"diffuse outputs identical: {same_files}, SLIC identical: {slic_same}")
    assert ok


def test_c10_affinity_formula():
    adj = Adjacency(2, np.array([[0, 1]]))
    errors = []
    sigma = 0.3
    feats = FeatureTable(np.array([[0, 0, 0, 0], [2 * sigma**2, 0, 0, 0]], dtype=np.float64))
    errors.append(build_affinity(adj, feats, sigma).weights[0] - math.exp(-1))
    feats = FeatureTable(np.array([[0.5, 0.5, 0.5, 0.5], [0.5, 0.5, 0.5, 0.52]]))
    errors.append(build_affinity(adj, feats, 0.1).weights[0] - math.exp(-1))
    worst = max(abs(e) for e in errors)
    ok = worst <= AFFINITY_TOL
    record_criterion(10, ok, f"z = exp(-1) cases, max error {worst:.1e} (<= 1e-12)")
    assert ok
