"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with -s to see them inline). Tolerances are fixed here,
not tuned at runtime."""

import math
import time

import numpy as np
import pytest

from icbs import fixtures
from icbs.geometry import Pose6D
from icbs.harness import build_exemplars, rng_stream, run_experiment, synthesize_rw
from icbs.identity import IdentityPolicy, synchronize
from icbs.loop import hellinger
from icbs.model import (Histogram, HistogramBinning, SceneGraph,
                        make_box_mesh)
from icbs.percept import process
from icbs.render import CameraIntrinsics, frames_equal, render, roi_of
from icbs.world import WorldState

from conftest import box_model, pose_xyz
from test_identity import best_assignment, greedy_assignment


def _report(criterion: int, ok: bool, detail: str):
    word = "PASS" if ok else "FAIL"
    print(f"[criterion {criterion}] {word}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. histogram distance agrees with a brute-force formula evaluation
# ---------------------------------------------------------------------------

def _hellinger_brute_force(c1, c2):
    n = len(c1)
    mean1 = sum(c1) / n
    mean2 = sum(c2) / n
    s = sum(math.sqrt(a * b) for a, b in zip(c1, c2))
    rad = 1.0 - s / math.sqrt(mean1 * mean2 * n * n)
    return math.sqrt(min(1.0, max(0.0, rad)))


def test_criterion_1_hellinger_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        c1 = rng.integers(0, 500, n)
        c2 = rng.integers(0, 500, n)
        if c1.sum() == 0:
            c1[0] = 1
        if c2.sum() == 0:
            c2[0] = 1
        binning = HistogramBinning(bins_per_channel=n)
        got = hellinger(Histogram(c1, binning), Histogram(c2, binning))
        want = _hellinger_brute_force(c1.tolist(), c2.tolist())
        worst = max(worst, abs(got - want))
    ok = worst <= 1e-9

    binning = HistogramBinning(bins_per_channel=4)
    h = Histogram(np.array([6, 0, 14, 4] * 16), binning)
    ok &= hellinger(h, h) == 0.0
    for c in (0.5, 2, 10):
        scaled = Histogram((h.counts * c).astype(np.int64), binning)
        ok &= hellinger(h, scaled) <= 1e-6
    b2 = HistogramBinning(bins_per_channel=2)
    disjoint = hellinger(Histogram(np.array([5, 0, 0, 0, 0, 0, 0, 0]), b2),
                         Histogram(np.array([0, 9, 0, 0, 0, 0, 0, 0]), b2))
    ok &= disjoint == 1.0

    elapsed = time.perf_counter() - start
    ok &= elapsed < 1.0
    _report(1, ok, f"max |d - oracle| = {worst:.2e} over 1000 pairs, "
                   f"identities and scale invariance hold, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. renderer determinism and occlusion against the min-depth oracle
# ---------------------------------------------------------------------------

def test_criterion_2_renderer_determinism_and_occlusion():
    start = time.perf_counter()
    intr = CameraIntrinsics(128, 96, 100.0, 100.0, 64.0, 48.0)
    rng = np.random.default_rng(99)

    scene = [(1, box_model("a", size=(0.4, 0.3, 0.2)), pose_xyz(0, 0, 1.5)),
             (2, box_model("b", size=(0.2, 0.2, 0.2)), pose_xyz(0.1, 0.05, 2.0))]
    f1 = render(scene, [], Pose6D.identity(), intr)
    f2 = render(scene, [], Pose6D.identity(), intr)
    deterministic = frames_equal(f1, f2)

    mismatches = 0
    for _ in range(200):
        models = []
        for i in range(2):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            pose = Pose6D(np.array([rng.uniform(-0.4, 0.4),
                                    rng.uniform(-0.3, 0.3),
                                    rng.uniform(0.8, 2.5)]), q)
            models.append((i + 1, box_model(f"m{i}",
                                            size=tuple(rng.uniform(0.08, 0.5, 3))),
                           pose))
        combined = render(models, [], Pose6D.identity(), intr)
        singles = [render([m], [], Pose6D.identity(), intr) for m in models]
        d1 = np.where(singles[0].depth > 0, singles[0].depth, np.inf)
        d2 = np.where(singles[1].depth > 0, singles[1].depth, np.inf)
        want_mask = np.where(d1 <= d2, singles[0].mask, singles[1].mask)
        want_mask[np.isinf(d1) & np.isinf(d2)] = 0
        if not np.array_equal(combined.mask, want_mask):
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = deterministic and mismatches == 0 and elapsed < 30.0
    _report(2, ok, f"bitwise deterministic, {mismatches}/200 oracle mismatches, "
                   f"{elapsed:.1f}s at 128x96")


# ---------------------------------------------------------------------------
# 3. physics plausibility on constructed cases
# ---------------------------------------------------------------------------

def test_criterion_3_physics_plausibility(desk_map, desk_library):
    world = WorldState(desk_map, desk_library)
    checks = []

    _, events = world.spawn("carton_red", pose_xyz(0.0, 0.0, 0.3))
    checks.append(any(e.kind == "Collision" and e.partner == "static"
                      for e in events))

    pose = fixtures.resting_pose("carton_red", desk_library, 0.3, 0.0)
    _, events = world.spawn("carton_red",
                            Pose6D(pose.position + (0, 0, 0.10), pose.orientation))
    falls = [e for e in events if e.kind == "Fall"]
    checks.append(len(falls) == 1
                  and abs(falls[0].displacement[2] + 0.10) <= 1e-3)

    world2 = WorldState(desk_map, desk_library)
    lower = desk_library.get("box_blue")
    world2.spawn("box_blue", fixtures.resting_pose("box_blue", desk_library, 0, 0))
    lower_top = fixtures.TABLE_TOP + 2 * lower.box_half[2]
    upper = desk_library.get("carton_red")
    start_z = lower_top + 0.02 + upper.box_half[2] - upper.box_center[2]
    aw_up, events = world2.spawn("carton_red", pose_xyz(0.0, 0.0, start_z))
    falls = [e for e in events if e.kind == "Fall"]
    settled_bottom = (world2.pose_of(aw_up).position[2]
                      - upper.box_half[2] + upper.box_center[2])
    checks.append(len(falls) == 1
                  and abs(falls[0].displacement[2] + 0.02) <= 1e-6
                  and abs(settled_bottom - lower_top) <= 1e-6)

    ok = all(checks)
    _report(3, ok, f"in-wall collision / 10 cm fall / stacked settle: "
                   f"{sum(checks)}/3 constructed cases")


# ---------------------------------------------------------------------------
# 4. identity stability, exchange handling, and matching quality
# ---------------------------------------------------------------------------

def _run_ois_frames(scn, classifier, graph, policy, frames_range, placements=None):
    events = []
    placements = placements if placements is not None else scn.placements
    objs = [(i + 1, scn.library.get(l), p) for i, (l, p) in enumerate(placements)]
    for tick in frames_range:
        cam = scn.trajectory[tick % len(scn.trajectory)]
        frame = render(objs, scn.semantic_map.statics, cam, scn.intrinsics,
                       timestamp=tick)
        sigma = scn.noise.pixel_sigma
        if sigma > 0:
            rng = rng_stream(scn.seed + tick, "pixel")
            noisy = np.clip(np.rint(frame.rgb.astype(float)
                                    + rng.normal(0, sigma, frame.rgb.shape)),
                            0, 255).astype(np.uint8)
            frame.rgb = noisy
        fresh = process(frame, scn.semantic_map, classifier)
        events.extend(synchronize(graph, fresh, policy, tick))
    return events


def test_criterion_4_identity_stability():
    labels = ["carton_red", "carton_green", "box_blue", "box_yellow", "tin_white"]
    scn = fixtures.desk_scenario(n_frames=50, pixel_sigma=2.0, labels=labels)
    classifier = build_exemplars(scn)
    graph = SceneGraph()
    policy = IdentityPolicy()
    events = _run_ois_frames(scn, classifier, graph, policy, range(50))
    after_first = [e for e in events if e.tick > 0
                   and e.kind in ("Added", "Removed")]
    stable = len(after_first) == 0 and len(graph.objects) == 5

    # exchange: one product swapped for a different one at the same slot
    scn2 = fixtures.desk_scenario(n_frames=12, pixel_sigma=2.0,
                                  labels=["carton_red"])
    classifier2 = build_exemplars(scn2)
    graph2 = SceneGraph()
    swapped = [("pack_cyan", fixtures.resting_pose("pack_cyan", scn2.library,
                                                   *fixtures._SLOTS[0],
                                                   yaw_deg=fixtures._YAWS[0]))]
    ev_before = _run_ois_frames(scn2, classifier2, graph2, policy, range(3))
    ev_after = _run_ois_frames(scn2, classifier2, graph2, policy, range(3, 12),
                               placements=swapped)
    added = [e for e in ev_after if e.kind == "Added"]
    removed = [e for e in ev_after if e.kind == "Removed"]
    exchange_ok = len(added) == 1 and len(removed) == 1 \
        and len(graph2.objects) == 1

    rng = np.random.default_rng(123)
    g_sum = o_sum = 0.0
    for _ in range(500):
        n_f, n_k = rng.integers(1, 7), rng.integers(1, 7)
        scores = rng.uniform(0, 1, (n_f, n_k))
        g_sum += greedy_assignment(scores, 0.6)[0]
        o_sum += best_assignment(scores, 0.6)[0]
    greedy_ok = g_sum >= 0.9 * o_sum

    ok = stable and exchange_ok and greedy_ok
    _report(4, ok, f"50-frame id churn after frame 1: {len(after_first)}, "
                   f"swap events added={len(added)} removed={len(removed)}, "
                   f"greedy/optimal = {g_sum / o_sum:.3f}")


# ---------------------------------------------------------------------------
# 5. classification-verification trend
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def corruption_run():
    scn = fixtures.desk_scenario(name="desk_c5", n_frames=100, pixel_sigma=2.0,
                                 label_corruption=0.15, seed=7)
    start = time.perf_counter()
    report = run_experiment(scn)
    return report, time.perf_counter() - start


def test_criterion_5_classification_verification(corruption_run):
    report, elapsed = corruption_run
    s = report.summary
    baseline = s["baseline_accuracy"]
    verified = s["verified_accuracy"]
    handled = s["corrupted_distinct_handled_rate"]
    false_rate = s["false_rejection_rate"]
    ok = (0.80 <= baseline <= 0.90
          and handled is not None and handled >= 0.80
          and false_rate is not None and false_rate <= 0.05
          and verified is not None and verified > baseline
          and elapsed < 120.0)
    _report(5, ok, f"baseline={baseline:.3f}, verified={verified:.3f}, "
                   f"handled distinct corruptions={handled:.3f} "
                   f"(n={s['corrupted_distinct']}), "
                   f"confusers handled={s['corrupted_confuser_handled_rate']} "
                   f"(n={s['corrupted_confuser']}, excluded from the bound), "
                   f"false rejection rate={false_rate:.3f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. pose-flip detection trend
# ---------------------------------------------------------------------------

def test_criterion_6_pose_flip_trend():
    start = time.perf_counter()
    scn = fixtures.desk_scenario(name="desk_c6", n_frames=40, pixel_sigma=2.0,
                                 flip_rate=0.5, seed=11,
                                 labels=["carton_red", "carton_green",
                                         "box_blue", "box_yellow"])
    report = run_experiment(scn)
    s = report.summary
    fix_rate = s["flip_fix_rate_distinct"]
    n_flips = s["flips_distinct"]

    scn_sym = fixtures.desk_scenario(name="desk_c6_sym", n_frames=12,
                                     pixel_sigma=2.0, flip_rate=0.5, seed=11,
                                     labels=["cola_classic", "cola_zero"])
    report_sym = run_experiment(scn_sym)
    sym_rate = report_sym.summary["flip_fix_rate_confuser"]
    sym_n = report_sym.summary["flips_confuser"]
    elapsed = time.perf_counter() - start
    ok = (n_flips >= 30 and fix_rate is not None and fix_rate >= 0.90
          and elapsed < 120.0)
    _report(6, ok, f"{n_flips} flips on asymmetric products, "
                   f"corrected rate={fix_rate:.3f}; front-back-symmetric "
                   f"products: rate={sym_rate} over n={sym_n} "
                   f"(reported, no bound), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. self-consistency with no noise and no corruption
# ---------------------------------------------------------------------------

def test_criterion_7_self_consistency():
    scn = fixtures.desk_scenario(name="desk_c7", n_frames=20, pixel_sigma=0.0,
                                 label_corruption=0.0, flip_rate=0.0, seed=3)
    report = run_experiment(scn)
    s = report.summary
    one_round = all(r.rounds == 1 for r in report.rows)
    all_confirmed = all(r.status == "confirmed" for r in report.rows)
    ok = (s["baseline_accuracy"] == 1.0 and s["verified_accuracy"] == 1.0
          and s["rejected"] == 0 and one_round and all_confirmed)
    _report(7, ok, f"accuracy={s['verified_accuracy']}, "
                   f"rejections={s['rejected']}, all verdicts match in "
                   f"iteration 1: {one_round}")


# ---------------------------------------------------------------------------
# 8. end-to-end determinism of the corruption experiment
# ---------------------------------------------------------------------------

def test_criterion_8_end_to_end_determinism(corruption_run):
    report, _ = corruption_run
    scn = fixtures.desk_scenario(name="desk_c5", n_frames=100, pixel_sigma=2.0,
                                 label_corruption=0.15, seed=7)
    rerun = run_experiment(scn)
    csv_a = report.to_csv().encode()
    csv_b = rerun.to_csv().encode()
    ok = csv_a == csv_b and report.summary_json() == rerun.summary_json()
    _report(8, ok, f"two runs, {len(csv_a)} CSV bytes, byte-identical: "
                   f"{csv_a == csv_b}")
