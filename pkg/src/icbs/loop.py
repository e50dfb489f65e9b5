"""The belief verification loop.

Per frame: perceive, synchronize identities, mirror the belief into the
artificial world, render the expected view, and compare it against the real
view region by region. Objects whose expectation does not explain the
observation get refined (a 180 degree turn about the model's up axis, then
the classifier's runner-up label) or rejected. At most `max_iterations`
compare rounds run per frame, and an edit is only kept when the measured
distance improves by a fixed margin, so per-object distances never increase
across rounds.

One query is processed at a time; for its duration the loop owns the scene
graph and the world command channel.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose6D, compose, quat_angle, quat_from_axis_angle
from .model import (Histogram, HistogramBinning, SceneGraph, SemanticMap,
                    STATUS_CONFIRMED, STATUS_MISMATCHED, STATUS_REJECTED,
                    STATUS_UNVERIFIED, hellinger)
from .identity import IdentityPolicy, synchronize
from .percept import ClassifierModel, SegmentParams, histogram_expert, process
from .render import SensorFrame, roi_of
from .world import WorldError, WorldState

__all__ = ["Query", "ObjectComparison", "ComparisonReport", "QueryAnswer",
           "FrameResult", "RejectionRecord", "hellinger", "sync_belief",
           "compare", "refine", "answer_query"]

VERDICT_MATCH = "match"
VERDICT_MISMATCH = "mismatch"
VERDICT_IMPLAUSIBLE = "implausible"

# minimum distance improvement for a refinement edit to be kept
IMPROVEMENT_MARGIN = 0.05
# pose deltas below these need not be pushed to the world
SYNC_POS_TOL = 5e-4
SYNC_ANG_TOL = math.radians(0.2)
CAMERA_POSE_TOL = 1e-6


@dataclass
class Query:
    """A perception task: what to look for and how strictly to verify it."""

    kind: str = "detect"  # "detect" | "verify"
    class_filter: str | None = None
    region_filter: str | None = None
    max_iterations: int = 3
    tau_match: float = 0.45
    tau_depth: float = 0.03  # meters, mean absolute depth error

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.tau_match < 1.0:
            raise ValueError("tau_match must lie in (0, 1)")

    def admits(self, hyp) -> bool:
        if self.class_filter is not None and hyp.top_label() != self.class_filter:
            return False
        if self.region_filter is not None and hyp.surface != self.region_filter:
            return False
        return True


@dataclass
class ObjectComparison:
    identity: int
    aw_id: int | None
    distance: float
    depth_mae: float
    events: list
    verdict: str
    reason: str = ""

    def to_dict(self) -> dict:
        return {"identity": self.identity, "aw_id": self.aw_id,
                "distance": self.distance,
                "depth_mae": None if math.isinf(self.depth_mae) else self.depth_mae,
                "events": [e.to_dict() for e in self.events],
                "verdict": self.verdict, "reason": self.reason}


@dataclass
class ComparisonReport:
    tick: int
    entries: list[ObjectComparison] = field(default_factory=list)

    def entry(self, identity: int) -> ObjectComparison | None:
        for e in self.entries:
            if e.identity == identity:
                return e
        return None

    def unresolved(self) -> list[ObjectComparison]:
        return [e for e in self.entries if e.verdict != VERDICT_MATCH]

    def to_dict(self) -> dict:
        return {"tick": self.tick,
                "entries": [e.to_dict() for e in self.entries]}


@dataclass(frozen=True)
class RejectionRecord:
    identity: int
    tick: int
    label: str
    reason: str


@dataclass
class QueryAnswer:
    confirmed: list
    rejected: list[RejectionRecord]
    iterations: int

    def to_dict(self) -> dict:
        return {
            "confirmed": [{"identity": h.identity, "label": h.top_label(),
                           "pose": h.pose.to_list(),
                           "distance": h.last_distance}
                          for h in self.confirmed],
            "rejected": [{"identity": r.identity, "tick": r.tick,
                          "label": r.label, "reason": r.reason}
                         for r in self.rejected],
            "iterations": self.iterations,
        }


@dataclass
class FrameResult:
    """Everything the harness needs about one processed frame."""

    tick: int
    hypotheses: list
    reports: list[ComparisonReport]
    distances: dict  # identity -> [distance per compare round]
    depth_errors: dict  # identity -> final depth MAE
    identity_events: list
    rejections: list[RejectionRecord]
    rounds: int


def _disqualifying(events, fall_reject: float) -> str:
    for ev in events:
        if ev.kind == "Collision":
            return f"collision with {ev.partner}"
        if ev.kind == "Fall":
            drop = float(np.linalg.norm(ev.displacement))
            if drop > fall_reject:
                return f"fell {drop:.3f} m"
    return ""


def flip_about_up(pose: Pose6D, up_axis) -> Pose6D:
    """The same pose turned 180 degrees about the model's up axis."""
    turn = Pose6D(np.zeros(3), quat_from_axis_angle(up_axis, math.pi))
    flipped = compose(turn, pose)
    return Pose6D(pose.position, flipped.orientation)


def sync_belief(graph: SceneGraph, world: WorldState) -> dict:
    """Mirror the scene graph into the world; returns events per identity.

    Unlinked objects spawn their believed top-class model at the believed
    pose; linked objects get pose or model updates when the belief changed;
    world objects with no remaining link are deleted. The believed pose
    stays the perception estimate: the world may settle its copy, and that
    displacement is exactly the plausibility signal.
    """
    events_by_id: dict[int, list] = {}
    linked_aw = set(graph.links.values())
    for aw_id in sorted(world.objects):
        if aw_id not in linked_aw:
            world.delete(aw_id)

    for identity in sorted(graph.objects):
        hyp = graph.objects[identity]
        label = hyp.top_label()
        events = []
        aw_id = graph.links.get(identity)
        try:
            if aw_id is None:
                aw_id, events = world.spawn(label, hyp.pose)
                graph.set_link(identity, aw_id)
            elif world.label_of(aw_id) != label:
                world.delete(aw_id)
                graph.unlink(identity)
                aw_id, events = world.spawn(label, hyp.pose)
                graph.set_link(identity, aw_id)
            else:
                current = world.pose_of(aw_id)
                if (np.linalg.norm(current.position - hyp.pose.position) > SYNC_POS_TOL
                        or quat_angle(current.orientation,
                                      hyp.pose.orientation) > SYNC_ANG_TOL):
                    events = world.set_pose(aw_id, hyp.pose)
        except WorldError as exc:
            events_by_id[identity] = [("spawn_failed", str(exc))]
            continue
        events_by_id[identity] = events
    return events_by_id


def _rw_histogram(s_rw: SensorFrame, hyp, binning: HistogramBinning) -> Histogram:
    return histogram_expert(s_rw, hyp.roi, binning)


def _aw_distance(s_rw: SensorFrame, s_aw: SensorFrame, hyp, aw_id: int,
                 binning: HistogramBinning) -> tuple[float, float]:
    """(color distance, depth MAE) for one linked object, or (1, inf) when
    the expected view shows nothing."""
    aw_roi = roi_of(s_aw, aw_id)
    if aw_roi.size == 0:
        return 1.0, math.inf
    h_rw = _rw_histogram(s_rw, hyp, binning)
    h_aw = histogram_expert(s_aw, aw_roi, binning)
    distance = hellinger(h_rw, h_aw)
    common = np.intersect1d(hyp.roi, aw_roi, assume_unique=True)
    if common.size == 0:
        return distance, math.inf
    d_rw = s_rw.depth.ravel()[common]
    d_aw = s_aw.depth.ravel()[common]
    return distance, float(np.abs(d_rw - d_aw).mean())


def compare(s_rw: SensorFrame, s_aw: SensorFrame, graph: SceneGraph,
            query: Query, events_by_id: dict = None,
            fall_reject: float = 0.02, binning: HistogramBinning = None,
            only_ids=None) -> ComparisonReport:
    """Compare expected and observed sensor data per linked object.

    Both frames must come from the same camera pose (asserted to 1e-6,
    since one drive feeds both). Verdict is match only when the color
    distance and depth error clear the query thresholds and no
    disqualifying physics event is attributed.
    """
    if (np.linalg.norm(s_rw.camera_pose.position - s_aw.camera_pose.position)
            > CAMERA_POSE_TOL or
            quat_angle(s_rw.camera_pose.orientation,
                       s_aw.camera_pose.orientation) > CAMERA_POSE_TOL):
        raise ValueError("expected and observed frames disagree on camera pose")
    events_by_id = events_by_id or {}
    binning = binning or HistogramBinning()
    report = ComparisonReport(tick=s_rw.timestamp)
    for identity in sorted(graph.objects):
        if only_ids is not None and identity not in only_ids:
            continue
        hyp = graph.objects[identity]
        if query.kind == "verify" and not query.admits(hyp):
            continue
        events = events_by_id.get(identity, [])
        if events and isinstance(events[0], tuple):
            report.entries.append(ObjectComparison(
                identity, None, 1.0, math.inf, [], VERDICT_IMPLAUSIBLE,
                reason=f"spawn failed: {events[0][1]}"))
            continue
        aw_id = graph.links.get(identity)
        if aw_id is None:
            continue
        distance, depth_mae = _aw_distance(s_rw, s_aw, hyp, aw_id, binning)
        reason = _disqualifying(events, fall_reject)
        if reason:
            verdict = VERDICT_IMPLAUSIBLE
        elif roi_of(s_aw, aw_id).size == 0:
            verdict, reason = VERDICT_MISMATCH, "not visible as expected"
        elif distance <= query.tau_match and depth_mae <= query.tau_depth:
            verdict = VERDICT_MATCH
        else:
            verdict = VERDICT_MISMATCH
            reason = ("color distance above threshold"
                      if distance > query.tau_match else "depth error above threshold")
        hyp.last_distance = distance
        report.entries.append(ObjectComparison(identity, aw_id, distance,
                                               depth_mae, list(events), verdict,
                                               reason))
    return report


def _trial_distance(s_rw, world, hyp, aw_id, binning) -> tuple[float, float]:
    s_aw = world.snapshot(camera_override=s_rw.camera_pose,
                          timestamp=s_rw.timestamp)
    return _aw_distance(s_rw, s_aw, hyp, aw_id, binning)


def refine(graph: SceneGraph, report: ComparisonReport, s_rw: SensorFrame,
           world: WorldState, query: Query,
           binning: HistogramBinning = None) -> tuple[bool, list[RejectionRecord]]:
    """Try candidate edits on every unresolved object.

    Edit order is fixed: first the 180 degree turn about the model's up
    axis, then the classifier's next label; an edit sticks only when the
    re-rendered distance improves by the margin and lands below the match
    threshold. Physics-implausible objects skip the turn. Objects no edit
    helps are rejected.
    """
    binning = binning or HistogramBinning()
    changed = False
    rejections = []
    for entry in report.unresolved():
        identity = entry.identity
        hyp = graph.objects.get(identity)
        aw_id = graph.links.get(identity)
        if hyp is None or aw_id is None:
            continue
        d_old = entry.distance
        accepted = False

        if entry.verdict == VERDICT_MISMATCH:
            model = world.objects[aw_id][0]
            original = world.pose_of(aw_id)
            flipped = flip_about_up(hyp.pose, model.up_axis)
            events = world.set_pose(aw_id, flipped)
            d_new, _ = _trial_distance(s_rw, world, hyp, aw_id, binning)
            if (not _disqualifying(events, world.config.fall_reject)
                    and d_old - d_new > IMPROVEMENT_MARGIN
                    and d_new <= query.tau_match):
                hyp.pose = flipped
                entry.events = events
                accepted = changed = True
            else:
                world.set_pose(aw_id, original)

        if not accepted:
            labels = [l for l, _ in hyp.class_ranking]
            current = hyp.top_label()
            nxt = None
            if current in labels:
                after = labels.index(current) + 1
                if after < len(labels):
                    nxt = labels[after]
            if nxt is not None:
                original_label = world.label_of(aw_id)
                original_pose = world.pose_of(aw_id)
                world.delete(aw_id)
                graph.unlink(identity)
                # the believed pose is the perception estimate, which is
                # independent of the believed class; the new model seats there
                new_id, events = world.spawn(nxt, hyp.pose)
                graph.set_link(identity, new_id)
                d_new, _ = _trial_distance(s_rw, world, hyp, new_id, binning)
                if (not _disqualifying(events, world.config.fall_reject)
                        and d_old - d_new > IMPROVEMENT_MARGIN
                        and d_new <= query.tau_match):
                    hyp.promote_label(nxt)
                    entry.events = events
                    accepted = changed = True
                else:
                    world.delete(new_id)
                    graph.unlink(identity)
                    back_id, _ = world.spawn(original_label, original_pose)
                    graph.set_link(identity, back_id)

        if not accepted:
            hyp.advance_status(STATUS_REJECTED)
            rejections.append(RejectionRecord(identity, report.tick,
                                              hyp.top_label(),
                                              entry.reason or "no edit improved the match"))
    return changed, rejections


def _apply_verdicts(graph: SceneGraph, report: ComparisonReport):
    for entry in report.entries:
        hyp = graph.objects.get(entry.identity)
        if hyp is None or hyp.status in (STATUS_CONFIRMED, STATUS_REJECTED):
            continue
        if entry.verdict == VERDICT_MATCH:
            hyp.advance_status(STATUS_CONFIRMED)
        else:
            hyp.advance_status(STATUS_MISMATCHED)


def _make_visibility(graph: SceneGraph, world: WorldState, camera_pose: Pose6D):
    """Mask-query visibility for removal decisions, rendered lazily once."""
    cache = {}

    def visible(identity: int) -> bool:
        if "frame" not in cache:
            cache["frame"] = world.snapshot(camera_override=camera_pose)
        aw_id = graph.links.get(identity)
        if aw_id is None:
            return True
        return bool(roi_of(cache["frame"], aw_id).size)

    return visible


def answer_query(query: Query, frames, semantic_map: SemanticMap,
                 classifier: ClassifierModel, world: WorldState,
                 graph: SceneGraph, policy: IdentityPolicy = None,
                 corrupt_hook=None, params: SegmentParams = None,
                 binning: HistogramBinning = None) -> tuple[QueryAnswer, list[FrameResult]]:
    """Run the full loop over a stream of observed frames.

    `corrupt_hook`, when given, mutates the fresh hypotheses between
    perception and identity synchronization (the harness's error injection
    point). Returns the answer plus per-frame results for inspection.
    """
    policy = policy or IdentityPolicy()
    params = params or SegmentParams()
    binning = binning or HistogramBinning()
    frames = list(frames)
    if not frames:
        raise ValueError("empty frame stream")

    results = []
    for frame in frames:
        tick = frame.timestamp
        world.camera_pose = frame.camera_pose
        fresh = process(frame, semantic_map, classifier, params, binning)
        if corrupt_hook is not None:
            corrupt_hook(fresh)
        visible = _make_visibility(graph, world, frame.camera_pose)
        id_events = synchronize(graph, fresh, policy, tick, visible)
        events_by_id = sync_belief(graph, world)

        s_aw = world.snapshot(camera_override=frame.camera_pose, timestamp=tick)
        report = compare(frame, s_aw, graph, query, events_by_id,
                         world.config.fall_reject, binning)
        _apply_verdicts(graph, report)
        reports = [report]
        distances = {e.identity: [e.distance] for e in report.entries}
        depth_errors = {e.identity: e.depth_mae for e in report.entries}
        rejections: list[RejectionRecord] = []
        rounds = 1

        while rounds < query.max_iterations:
            pending = [e for e in reports[-1].entries
                       if graph.objects.get(e.identity) is not None
                       and graph.objects[e.identity].status == STATUS_MISMATCHED]
            if not pending:
                break
            changed, rejected = refine(graph, reports[-1], frame, world, query,
                                       binning)
            rejections.extend(rejected)
            if not changed:
                break
            still = {e.identity for e in reports[-1].entries
                     if graph.objects.get(e.identity) is not None
                     and graph.objects[e.identity].status == STATUS_MISMATCHED}
            if not still:
                break
            s_aw = world.snapshot(camera_override=frame.camera_pose,
                                  timestamp=tick)
            events_now = {i: [] for i in still}
            next_report = compare(frame, s_aw, graph, query, events_now,
                                  world.config.fall_reject, binning,
                                  only_ids=still)
            _apply_verdicts(graph, next_report)
            for e in next_report.entries:
                distances.setdefault(e.identity, []).append(e.distance)
                depth_errors[e.identity] = e.depth_mae
            reports.append(next_report)
            rounds += 1

        # anything still unresolved after the final round is rejected
        for identity in sorted(graph.objects):
            hyp = graph.objects[identity]
            if hyp.status == STATUS_MISMATCHED:
                last = None
                for rep in reversed(reports):
                    last = rep.entry(identity)
                    if last is not None:
                        break
                hyp.advance_status(STATUS_REJECTED)
                rejections.append(RejectionRecord(
                    identity, tick, hyp.top_label(),
                    (last.reason if last and last.reason else
                     "unresolved mismatch")))

        results.append(FrameResult(tick, fresh, reports, distances,
                                   depth_errors, id_events, rejections, rounds))

    confirmed = [h for _, h in sorted(graph.objects.items())
                 if h.status == STATUS_CONFIRMED and query.admits(h)]
    final_rejections = []
    seen = set()
    for res in reversed(results):
        for rec in res.rejections:
            hyp = graph.objects.get(rec.identity)
            if hyp is not None and hyp.status == STATUS_REJECTED \
                    and rec.identity not in seen:
                seen.add(rec.identity)
                final_rejections.append(rec)
    final_rejections.sort(key=lambda r: (r.tick, r.identity))
    return QueryAnswer(confirmed, final_rejections, results[-1].rounds), results
