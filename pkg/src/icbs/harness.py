"""Synthetic experiment harness.

Stands in for a real sensor and an imperfect perception stack: it renders
the ground-truth world into observed frames (with seeded pixel noise),
injects label corruption and 180 degree pose flips into fresh hypotheses,
runs the verification loop over a camera trajectory, and scores the outcome
against ground truth. One seed fixes every stochastic draw; independent
named streams keep noise, corruption, and flips decoupled so changing one
rate never perturbs the others.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose6D, quat_angle, quat_from_axis_angle, quat_mul
from .identity import IdentityPolicy
from .loop import Query, answer_query, flip_about_up
from .model import STATUS_CONFIRMED, STATUS_REJECTED, SceneGraph
from .percept import (ClassifierModel, FeatureVector, SegmentParams,
                      histogram_expert, segment, shape_pose_expert)
from .render import SensorFrame, render
from .scenario import Scenario
from .world import WorldState

_STREAMS = {"pixel": 0, "jitter": 1, "corrupt": 2, "flip": 3}

# ground-truth association radius, meters
GT_MATCH_RADIUS = 0.10
# a corrected flip must land within this of the true yaw
FLIP_FIX_TOL = math.radians(20.0)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named stream of a run."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, _STREAMS[name]))))


def _gt_world_objects(scenario: Scenario) -> list:
    return [(i + 1, scenario.library.get(label), pose)
            for i, (label, pose) in enumerate(scenario.placements)]


def _jittered(pose: Pose6D, noise, rng: np.random.Generator) -> Pose6D:
    if noise.pose_jitter_m <= 0 and noise.pose_jitter_deg <= 0:
        return pose
    dp = rng.normal(0.0, max(noise.pose_jitter_m, 1e-12), 3) \
        if noise.pose_jitter_m > 0 else np.zeros(3)
    q = pose.orientation
    if noise.pose_jitter_deg > 0:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        ang = math.radians(rng.normal(0.0, noise.pose_jitter_deg))
        q = quat_mul(quat_from_axis_angle(axis, ang), q)
        q /= np.linalg.norm(q)
    return Pose6D(pose.position + dp, q)


def synthesize_rw(scenario: Scenario, tick: int,
                  rng_pixel: np.random.Generator = None,
                  rng_jitter: np.random.Generator = None) -> SensorFrame:
    """Observed frame for one trajectory tick.

    The ground-truth world renders through the (optionally jittered) camera;
    the frame still reports the nominal pose, the way a robot believes its
    localization. Gaussian pixel noise lands on the RGB channels only,
    clamped to [0, 255].
    """
    nominal = scenario.trajectory[tick]
    render_pose = nominal
    if rng_jitter is not None:
        render_pose = _jittered(nominal, scenario.noise, rng_jitter)
    frame = render(_gt_world_objects(scenario), scenario.semantic_map.statics,
                   render_pose, scenario.intrinsics, timestamp=tick)
    sigma = scenario.noise.pixel_sigma
    if sigma > 0 and rng_pixel is not None:
        noise = rng_pixel.normal(0.0, sigma, frame.rgb.shape)
        rgb = np.clip(np.rint(frame.rgb.astype(np.float64) + noise), 0, 255)
        frame.rgb = rgb.astype(np.uint8)
    frame.camera_pose = nominal
    return frame


@dataclass
class CorruptionRecord:
    hypothesis: object
    original_label: str
    injected_label: str  # equals original_label when not corrupted
    corrupted: bool
    flipped: bool


def corrupt(hypotheses: list, scenario: Scenario,
            rng_corrupt: np.random.Generator,
            rng_flip: np.random.Generator) -> list[CorruptionRecord]:
    """Inject classification and pose errors into fresh hypotheses.

    With the corruption rate, the top label swaps for a uniformly chosen
    wrong one and the true label drops to rank 2; with the flip rate, the
    believed yaw turns 180 degrees. Draws happen for every hypothesis
    regardless of the rates, so the streams stay aligned across runs that
    differ only in one rate.
    """
    labels = scenario.library.labels()
    records = []
    for hyp in hypotheses:
        u_corrupt = rng_corrupt.random()
        pick = int(rng_corrupt.integers(0, max(1, len(labels) - 1)))
        u_flip = rng_flip.random()
        original = hyp.top_label()
        injected = original
        corrupted = u_corrupt < scenario.noise.label_corruption and len(labels) > 1
        if corrupted:
            injected = [l for l in labels if l != original][pick]
            old = hyp.class_ranking
            rest = [(l, s) for l, s in old[1:] if l != injected]
            second = min(old[0][1], old[1][1] if len(old) > 1 else old[0][1] / 2.0)
            ranking = [(injected, old[0][1]), (original, second)]
            for l, s in rest:
                if l != original:
                    ranking.append((l, min(s, second)))
            hyp.class_ranking = ranking
        flipped = u_flip < scenario.noise.flip_rate
        if flipped:
            model = scenario.library.get(original)
            hyp.pose = flip_about_up(hyp.pose, model.up_axis)
        records.append(CorruptionRecord(hyp, original, injected, corrupted, flipped))
    return records


def build_exemplars(scenario: Scenario) -> ClassifierModel:
    """Classifier exemplars, inline from the scenario or rendered fresh.

    Rendered exemplars place each library model alone at several spots on
    the first support surface and run the perception experts from a handful
    of trajectory viewpoints, covering the run's range of viewing angles.
    """
    if scenario.exemplars_inline:
        feats = np.stack([fv for _, fv in scenario.exemplars_inline])
        labels = [label for label, _ in scenario.exemplars_inline]
        return ClassifierModel(feats, labels, k=scenario.knn_k)
    views = scenario.exemplar_views
    if views is None:
        traj = scenario.trajectory
        picks = sorted({0, len(traj) // 4, len(traj) // 2,
                        (3 * len(traj)) // 4, len(traj) - 1})
        views = [traj[i] for i in picks]
    params = SegmentParams()
    feats, labels = [], []
    region = scenario.semantic_map.surfaces[0]
    spots = [f * region.extent[0] / 2.0 * region.x_axis for f in (-0.6, 0.0, 0.6)]
    for label in scenario.library.labels():
        model = scenario.library.get(label)
        lift = (region.origin[2] + model.box_half[2] - model.box_center[2]
                - region.origin[2])
        for spot in spots:
            pose = Pose6D(region.origin + spot + np.array([0.0, 0.0, lift]),
                          np.array([1.0, 0.0, 0.0, 0.0]))
            for view in views:
                frame = render([(1, model, pose)], scenario.semantic_map.statics,
                               view, scenario.intrinsics)
                clusters = segment(frame, scenario.semantic_map, params)
                if not clusters:
                    continue
                cluster = max(clusters, key=lambda c: len(c.roi))
                hist = histogram_expert(frame, cluster.roi)
                extents, _, _ = shape_pose_expert(cluster, region, params)
                feats.append(FeatureVector.build(hist, extents).values)
                labels.append(label)
    if not feats:
        raise ValueError("no exemplars could be rendered for this scenario")
    return ClassifierModel(np.stack(feats), labels,
                           k=min(scenario.knn_k, len(feats)))


@dataclass
class RowRecord:
    tick: int
    identity: int
    gt_label: str
    pred_label: str
    final_label: str
    corrupted: bool
    flipped: bool
    status: str
    distance_first: float
    distance_final: float
    depth_mae: float
    rounds: int
    reason: str = ""


CSV_COLUMNS = ["tick", "identity", "gt_label", "pred_label", "final_label",
               "corrupted", "flipped", "status", "distance_first",
               "distance_final", "depth_mae", "rounds", "reason"]


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        if math.isinf(x) or math.isnan(x):
            return ""
        return format(x, ".9g")
    return str(x)


@dataclass
class ExperimentReport:
    """Per-prediction rows plus the run-level summary.

    `frame_log` carries one dict per frame with the identity events and the
    comparison reports, for JSONL export and post-hoc inspection.
    """

    scenario_name: str
    seed: int
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    per_round_distances: list = field(default_factory=list)  # [round][values]
    frame_log: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=1, sort_keys=True) + "\n"

    def frame_log_jsonl(self) -> str:
        return "".join(json.dumps(entry, sort_keys=True) + "\n"
                       for entry in self.frame_log)


def _match_gt(position: np.ndarray, placements) -> tuple[str, Pose6D] | None:
    best, best_d = None, GT_MATCH_RADIUS
    for label, pose in placements:
        d = float(np.linalg.norm(pose.position[:2] - position[:2]))
        if d < best_d:
            best, best_d = (label, pose), d
    return best


def _yaw_matches(final: Pose6D, truth: Pose6D) -> bool:
    return quat_angle(final.orientation, truth.orientation) <= FLIP_FIX_TOL


def run_experiment(scenario: Scenario, query: Query = None,
                   policy: IdentityPolicy = None) -> ExperimentReport:
    """Run the loop over the whole trajectory and score it against truth.

    Baseline accuracy scores the post-corruption predictions; the verified
    accuracy scores confirmed predictions after the loop ran. Handled
    corruptions (corrected or rejected) and flip fixes are reported split by
    the scenario's confuser labels, which are exempt from strict detection.
    """
    scenario.validate()
    query = query or Query()
    policy = policy or IdentityPolicy()
    classifier = build_exemplars(scenario)
    world = WorldState(scenario.semantic_map, scenario.library,
                       camera_pose=scenario.trajectory[0],
                       intrinsics=scenario.intrinsics)
    graph = SceneGraph()
    rngs = {name: rng_stream(scenario.seed, name) for name in _STREAMS}

    report = ExperimentReport(scenario.name, scenario.seed)
    confuser = set(scenario.confusers)
    stats = {
        "predictions": 0, "baseline_correct": 0,
        "confirmed": 0, "confirmed_correct": 0,
        "rejected": 0, "true_rejections": 0, "false_rejections": 0,
        "corrupted": {"distinct": [0, 0], "confuser": [0, 0]},  # [total, handled]
        "flips": {"distinct": [0, 0], "confuser": [0, 0]},  # [injected, corrected]
    }
    round_distances: list[list[float]] = []

    for tick in range(len(scenario.trajectory)):
        s_rw = synthesize_rw(scenario, tick, rngs["pixel"], rngs["jitter"])
        records: list[CorruptionRecord] = []

        def hook(fresh, _records=records):
            _records.extend(corrupt(fresh, scenario, rngs["corrupt"],
                                    rngs["flip"]))

        _, results = answer_query(query, [s_rw], scenario.semantic_map,
                                  classifier, world, graph, policy,
                                  corrupt_hook=hook)
        res = results[0]
        by_hyp = {id(rec.hypothesis): rec for rec in records}
        for hyp in res.hypotheses:
            rec = by_hyp.get(id(hyp))
            gt = _match_gt(hyp.pose.position, scenario.placements)
            gt_label = gt[0] if gt else ""
            # the prediction is the post-corruption top class at perception time
            pred_label = rec.injected_label if rec else hyp.top_label()
            final_label = hyp.top_label()
            dists = res.distances.get(hyp.identity, [])
            row = RowRecord(
                tick=tick, identity=hyp.identity, gt_label=gt_label,
                pred_label=pred_label, final_label=final_label,
                corrupted=bool(rec and rec.corrupted),
                flipped=bool(rec and rec.flipped),
                status=hyp.status,
                distance_first=dists[0] if dists else math.nan,
                distance_final=dists[-1] if dists else math.nan,
                depth_mae=res.depth_errors.get(hyp.identity, math.nan),
                rounds=res.rounds,
                reason=_rejection_reason(res, hyp.identity))
            report.rows.append(row)
            _score_row(stats, row, hyp, rec, gt, confuser)
        for i, d in enumerate(_round_values(res)):
            while len(round_distances) <= i:
                round_distances.append([])
            round_distances[i].extend(d)

    report.per_round_distances = round_distances
    report.summary = _summarize(stats, scenario, round_distances)
    return report


def _rejection_reason(res, identity) -> str:
    for rec in res.rejections:
        if rec.identity == identity:
            return rec.reason
    return ""


def _round_values(res) -> list[list[float]]:
    out: list[list[float]] = []
    for dists in res.distances.values():
        for i, d in enumerate(dists):
            while len(out) <= i:
                out.append([])
            out[i].append(d)
    return out


def _score_row(stats, row: RowRecord, hyp, rec, gt, confuser):
    if not gt:
        return
    gt_label, gt_pose = gt
    stats["predictions"] += 1
    baseline_ok = row.pred_label == gt_label
    stats["baseline_correct"] += baseline_ok
    if hyp.status == STATUS_CONFIRMED:
        stats["confirmed"] += 1
        stats["confirmed_correct"] += row.final_label == gt_label
    elif hyp.status == STATUS_REJECTED:
        stats["rejected"] += 1
        if baseline_ok:
            stats["false_rejections"] += 1
        else:
            stats["true_rejections"] += 1
    if rec and rec.corrupted:
        kind = "confuser" if gt_label in confuser else "distinct"
        stats["corrupted"][kind][0] += 1
        handled = (hyp.status == STATUS_REJECTED
                   or (hyp.status == STATUS_CONFIRMED and row.final_label == gt_label))
        stats["corrupted"][kind][1] += handled
    if rec and rec.flipped:
        kind = "confuser" if gt_label in confuser else "distinct"
        stats["flips"][kind][0] += 1
        stats["flips"][kind][1] += _yaw_matches(hyp.pose, gt_pose)


def _rate(pair) -> float | None:
    total, hit = pair
    return (hit / total) if total else None


def _summarize(stats, scenario, round_distances) -> dict:
    n = stats["predictions"]
    confirmed = stats["confirmed"]
    return {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "frames": len(scenario.trajectory),
        "predictions": n,
        "baseline_accuracy": stats["baseline_correct"] / n if n else None,
        "verified_accuracy": stats["confirmed_correct"] / confirmed if confirmed else None,
        "confirmed": confirmed,
        "rejected": stats["rejected"],
        "true_rejections": stats["true_rejections"],
        "false_rejections": stats["false_rejections"],
        "false_rejection_rate": (stats["false_rejections"] / stats["baseline_correct"]
                                 if stats["baseline_correct"] else None),
        "corrupted_distinct": stats["corrupted"]["distinct"][0],
        "corrupted_distinct_handled_rate": _rate(stats["corrupted"]["distinct"]),
        "corrupted_confuser": stats["corrupted"]["confuser"][0],
        "corrupted_confuser_handled_rate": _rate(stats["corrupted"]["confuser"]),
        "flips_distinct": stats["flips"]["distinct"][0],
        "flip_fix_rate_distinct": _rate(stats["flips"]["distinct"]),
        "flips_confuser": stats["flips"]["confuser"][0],
        "flip_fix_rate_confuser": _rate(stats["flips"]["confuser"]),
        "mean_distance_per_round": [float(np.mean(vals)) if vals else None
                                    for vals in round_distances],
    }
