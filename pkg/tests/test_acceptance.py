"""Acceptance criteria. Each test prints one PASS/FAIL line; the summary repeats them."""

import json
import math
import time

import numpy as np
import pytest
from conftest import make_det, make_pose, make_region, one_joint, write_pair

from ocpose.cli import main
from ocpose.dataset_io import (
    GTKind,
    Scene,
    SigmaTable,
    coco_sigmas,
    dump_ground_truth,
    load_ground_truth,
)
from ocpose.evaluator import EvalOptions, evaluate, evaluate_scenes, sweep
from ocpose.masks import BBox, BinaryMask, distance_to_mask
from ocpose.matcher import CostMatrix, brute_force_oracle, solve_transport
from ocpose.similarity import oks_bbox, oks_crowd, oks_mask, oks_pose
from ocpose.synthetic import (
    SyntheticSpec,
    generate_synthetic_dataset,
    inject_far_false_positives,
)

pytestmark = pytest.mark.acceptance

E1 = math.exp(-1.0)


def test_oracle_equivalence(criterion):
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        e = int(rng.integers(0, 6))
        n_gt = int(rng.integers(0, 6))
        c = min(n_gt, int(rng.integers(1, 3))) if rng.random() < 0.5 else 0
        costs = CostMatrix(rng.random((e, n_gt)), n_gt - c, c)
        worst = max(worst, abs(solve_transport(costs).total_cost - brute_force_oracle(costs).total_cost))
    elapsed = time.perf_counter() - start
    criterion(
        "oracle equivalence on 200 instances",
        worst <= 1e-9 and elapsed < 10.0,
        f"max |delta| = {worst:.1e}, {elapsed:.2f} s",
    )


def test_analytic_oks_suite(criterion, sigmas):
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 200, (17, 2))
    k, s = 0.1, 100.0
    d = s * k * math.sqrt(2)
    box = BBox(0, 0, 10, 10)
    square = np.zeros((40, 40), bool)
    square[10:30, 10:30] = True
    sq = BinaryMask.from_array(square)
    dot = np.zeros((30, 30), bool)
    dot[10, 10] = True
    off = np.full((17, 2), 15.0)
    off[3] = (300.0, 300.0)
    conf = np.full(17, 0.9)
    conf[3] = 0.0

    cases = [
        ("pose identity", oks_pose(make_det(xy), make_pose(xy), sigmas).value, 1.0),
        ("pose exponent -1", oks_pose(make_det([[d, 0]]), make_pose([[0, 0]], area=s * s), one_joint(k)).value, E1),
        ("bbox inside", oks_bbox(make_det(np.full((17, 2), 5.0)), box, 30.0, sigmas).value, 1.0),
        ("bbox exponent -1", oks_bbox(make_det([[10 + d, 5]]), box, s, one_joint(k)).value, E1),
        (
            "bbox two-joint mean",
            oks_bbox(make_det([[5, 5], [5, -d]]), box, s, SigmaTable((k, k))).value,
            (1 + E1) / 2,
        ),
        ("mask on foreground", oks_mask(make_det(np.full((17, 2), 20.0)), sq, 20.0, sigmas).value, 1.0),
        (
            "mask exponent -1",
            oks_mask(make_det([[20.0, 10.0]], conf=0.8), BinaryMask.from_array(dot), 50 * math.sqrt(2), one_joint(k)).value,
            E1,
        ),
        ("zero-confidence off-mask joint", oks_mask(make_det(off, conf=conf), sq, 20.0, sigmas).value, 1.0),
        ("crowd inside", oks_crowd(make_det(np.full((17, 2), 20.0)), sq, 25.0, sigmas).value, 1.0),
    ]
    bad = [(n, got, want) for n, got, want in cases if abs(got - want) > 1e-9]
    criterion("analytic OKS suite", not bad, f"{len(cases) - len(bad)}/{len(cases)} cases" + (f", failing {bad}" if bad else ""))


def test_distance_oracle(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        h, w = (int(v) for v in rng.integers(1, 33, 2))
        arr = rng.random((h, w)) < rng.choice([0.005, 0.05, 0.3])
        m = BinaryMask.from_array(arr)
        fg = np.argwhere(arr)
        for x, y in rng.uniform(-8, 40, (10, 2)):
            c, r = math.floor(x + 0.5), math.floor(y + 0.5)
            ref = min((math.hypot(rr - r, cc - c) for rr, cc in fg), default=math.inf)
            got = distance_to_mask((x, y), m)
            worst = max(worst, 0.0 if got == ref else abs(got - ref))
    criterion("distance oracle on 100 random masks", worst <= 1e-9, f"max |delta| = {worst:.1e}")


def test_fp_penalty_law(criterion, sigmas):
    base = generate_synthetic_dataset(SyntheticSpec(n_poses=10, seed=11), 1)
    before = evaluate_scenes(base).aggregate
    rows = []
    ok = before["ocpose_pooled"] == 0.0
    for k in (1, 10, 100):
        after = evaluate_scenes(inject_far_false_positives(base, k, 0.01, sigmas, seed=k)).aggregate
        err = abs(after["ocpose_pooled"] - k / (10 + k))
        ap_err = max(abs(after["ap_per_threshold"][t] - before["ap_per_threshold"][t]) for t in before["ap_per_threshold"])
        ok &= err <= 1e-12 and ap_err <= 1e-12
        rows.append(f"K={k}: OCpose {after['ocpose_pooled']:.6f} vs {k}/{10 + k}, AP shift {ap_err:.0e}")
    criterion("FP penalty law", ok, "; ".join(rows))


def test_boundary_scores(criterion, sigmas):
    gt = make_pose(np.full((17, 2), 50.0), area=30.0**2)
    crowd_arr = np.zeros((100, 100), bool)
    crowd_arr[20:80, 20:80] = True
    crowd = make_region(crowd_arr, GTKind.CROWD)
    miss = Scene(1, (100, 100), (gt, gt), ())
    absorbed = Scene(2, (100, 100), (crowd,), tuple(make_det(np.full((17, 2), 40.0 + i), index=i) for i in range(3)))
    empty = Scene(3, (100, 100), (), ())

    miss_v = evaluate_scenes([miss]).aggregate["ocpose"]
    abs_v = evaluate_scenes([absorbed]).aggregate["ocpose"]
    both = evaluate_scenes([miss, empty])
    empty_row = both.per_image[1]
    ok = (
        miss_v == 1.0
        and abs_v == 0.0
        and empty_row["ocpose"] == 0.0
        and both.aggregate["images_in_mean"] == 1
        and both.aggregate["ocpose_per_image_mean"] == 1.0
    )
    criterion(
        "boundary scores",
        ok,
        f"all-miss {miss_v}, crowd-absorbed {abs_v}, empty {empty_row['ocpose']} "
        f"with {both.aggregate['images_in_mean']} of 2 images in the mean",
    )


def test_metric_invariance_contrast(criterion):
    rng = np.random.default_rng(5)
    xy = rng.uniform(40, 120, (17, 2))
    gt = make_pose(xy, area=40.0**2)
    good, bad = xy, xy + 400.0
    aps, ocs = set(), set()
    for _ in range(50):
        scores = rng.permutation(rng.uniform(0.05, 1.0, 2))
        dets = (make_det(good, score=scores[0], index=0), make_det(bad, score=scores[1], index=1))
        scene = Scene(1, (600, 600), (gt,), tuple(sorted(dets, key=lambda d: (-d.score, d.index))))
        agg = evaluate_scenes([scene]).aggregate
        aps.add(agg["ap_per_threshold"]["0.50"])
        ocs.add(agg["ocpose"])
    criterion(
        "metric-invariance contrast over 50 score permutations",
        len(aps) > 1 and len(ocs) == 1,
        f"AP values {sorted(aps)}, OCpose values {sorted(ocs)}",
    )


def test_sweep_shape(criterion, tmp_path):
    spec = SyntheticSpec(
        n_poses=4, jitter=1.5, n_duplicates=1, duplicate_score=0.3, n_far_fp=3, fp_score=0.05, seed=21
    )
    gt, dt = write_pair(tmp_path, generate_synthetic_dataset(spec, 10))
    res = sweep(gt, dt)
    at_zero = res.grid[0]
    best = next(p for p in res.grid if p.threshold == res.argmin_threshold)
    drop = at_zero.map - best.map
    criterion(
        "sweep reproduction shape",
        res.argmin_threshold > 0 and drop < 0.05,
        f"argmin {res.argmin_threshold:.2f}, OCpose {at_zero.ocpose:.4f} -> {best.ocpose:.4f}, "
        f"mAP {at_zero.map:.4f} -> {best.map:.4f}",
    )


def test_determinism(criterion, tmp_path, capsys):
    spec = SyntheticSpec(n_poses=4, n_masks=1, n_crowds=1, dets_in_crowds=2, n_far_fp=2, jitter=2.0, seed=8)
    gt, dt = write_pair(tmp_path, generate_synthetic_dataset(spec, 12))
    runs = []
    for i, jobs in enumerate((1, 1, 8)):
        out = tmp_path / f"run{i}"
        main(["evaluate", "--gt", str(gt), "--dt", str(dt), "--jobs", str(jobs), "--out", str(out)])
        runs.append((out / "report.json").read_bytes())
    api = evaluate(gt, dt, options=EvalOptions(jobs=8)).to_json().encode()
    criterion(
        "determinism",
        runs[0] == runs[1] == runs[2] == api,
        f"{len(runs[0])} report bytes identical across 2 runs and jobs 1 vs 8",
    )


def test_round_trip(criterion, tmp_path):
    spec = SyntheticSpec(n_poses=3, n_masks=1, n_crowds=1, seed=13)
    scenes = generate_synthetic_dataset(spec, 20)
    first = tmp_path / "gt1.json"
    first.write_text(json.dumps(dump_ground_truth(scenes, 17)))
    loaded = load_ground_truth(first, coco_sigmas())
    second = tmp_path / "gt2.json"
    second.write_text(json.dumps(dump_ground_truth(loaded, 17)))
    reloaded = load_ground_truth(second, coco_sigmas())
    same = [s.gts for s in loaded] == [s.gts for s in reloaded] == [s.gts for s in scenes]
    criterion(
        "round-trip fixed point on 20 images",
        same and first.read_bytes() == second.read_bytes(),
        f"{sum(len(s.gts) for s in scenes)} entries",
    )
