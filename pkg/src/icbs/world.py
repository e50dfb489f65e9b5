"""The stateful artificial world.

Holds instantiated virtual objects over the semantic map's static geometry,
processes add/modify/delete commands strictly in arrival order, and runs
quasi-static plausibility checks after every mutation: an oriented-box
overlap test (separating axes) and a settle check that drops unsupported
objects onto the nearest support below. Physics events are recorded per
command and also queued for later draining.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import Pose6D
from .model import ObjectModel, SemanticMap
from .render import CameraIntrinsics, SensorFrame, render

AXIS_EPS_SQ = 1e-12


class WorldError(Exception):
    pass


@dataclass(frozen=True)
class PhysicsEvent:
    kind: str  # "Collision" | "Fall"
    subject: int
    tick: int
    partner: object = None  # aw id or "static" for collisions
    displacement: tuple = None  # settle vector, meters, for falls

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "subject": self.subject, "tick": self.tick}
        if self.kind == "Collision":
            d["partner"] = self.partner
        else:
            d["displacement"] = list(self.displacement)
        return d


@dataclass(eq=False)
class OrientedBox:
    center: np.ndarray  # world
    half: np.ndarray  # local half extents
    rot: np.ndarray  # local -> world rotation

    @staticmethod
    def of(local_center, half, pose: Pose6D) -> "OrientedBox":
        rot = pose.rotation()
        return OrientedBox(pose.position + rot @ np.asarray(local_center),
                           np.asarray(half, dtype=np.float64), rot)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                          for sz in (-1, 1)], dtype=np.float64)
        return self.center + (signs * self.half) @ self.rot.T

    def inflated(self, margin: float) -> "OrientedBox":
        return OrientedBox(self.center, self.half + margin, self.rot)


def sat_penetration(a: OrientedBox, b: OrientedBox) -> float:
    """Signed penetration depth between two oriented boxes.

    Positive means overlap by that amount along the least-overlapping axis;
    non-positive means separated. Symmetric in its arguments.
    """
    axes = [a.rot[:, i] for i in range(3)] + [b.rot[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(a.rot[:, i], b.rot[:, j])
            if c @ c > AXIS_EPS_SQ:
                axes.append(c / np.linalg.norm(c))
    delta = b.center - a.center
    depth = np.inf
    for axis in axes:
        ra = float(np.abs(a.rot.T @ axis) @ a.half)
        rb = float(np.abs(b.rot.T @ axis) @ b.half)
        overlap = ra + rb - abs(float(delta @ axis))
        if overlap < depth:
            depth = overlap
    return depth


@dataclass
class WorldConfig:
    penetration_tol: float = 0.002
    support_tol: float = 0.003
    max_drop: float = 2.0
    # falls larger than this mark the owning hypothesis implausible
    fall_reject: float = 0.02


class WorldState:
    """Virtual objects and static geometry behind a command interface.

    Commands mutate one at a time; snapshots never interleave with a
    mutation, so readers observe the state between commands.
    """

    def __init__(self, semantic_map: SemanticMap, library,
                 camera_pose: Pose6D = None,
                 intrinsics: CameraIntrinsics = None,
                 config: WorldConfig = None):
        self.map = semantic_map
        self.library = library
        self.camera_pose = camera_pose or Pose6D.identity()
        self.intrinsics = intrinsics or CameraIntrinsics(128, 96, 100.0, 100.0, 64.0, 48.0)
        self.config = config or WorldConfig()
        self.objects: dict[int, tuple[ObjectModel, Pose6D]] = {}
        self.event_log: list[PhysicsEvent] = []
        self.pending: list[PhysicsEvent] = []
        self.tick = 0
        self._next_id = 1
        self._static_boxes = [self._mesh_box(mesh, pose)
                              for _, mesh, pose in semantic_map.statics]

    @staticmethod
    def _mesh_box(mesh, pose: Pose6D) -> OrientedBox:
        lo, hi = mesh.bounds()
        return OrientedBox.of((lo + hi) / 2.0, (hi - lo) / 2.0, pose)

    def _box(self, aw_id: int) -> OrientedBox:
        model, pose = self.objects[aw_id]
        return OrientedBox.of(model.box_center, model.box_half, pose)

    def _record(self, event: PhysicsEvent):
        self.event_log.append(event)
        self.pending.append(event)

    # -- checks ------------------------------------------------------------

    def _collision_events(self, aw_id: int) -> list[PhysicsEvent]:
        """Overlap checks against static geometry and every other object.

        Margins inflate boxes only to find contact candidates; the event
        fires when the raw boxes interpenetrate beyond the tolerance, so a
        resting contact is not a collision.
        """
        model, _ = self.objects[aw_id]
        box = self._box(aw_id)
        tol = self.config.penetration_tol
        events = []
        for sbox in self._static_boxes:
            if sat_penetration(box.inflated(model.margin), sbox) <= 0:
                continue
            if sat_penetration(box, sbox) > tol:
                events.append(PhysicsEvent("Collision", aw_id, self.tick,
                                           partner="static"))
                break
        for other_id in self.objects:
            if other_id == aw_id:
                continue
            other_model, _ = self.objects[other_id]
            obox = self._box(other_id)
            if sat_penetration(box.inflated(model.margin),
                               obox.inflated(other_model.margin)) <= 0:
                continue
            if sat_penetration(box, obox) > tol:
                events.append(PhysicsEvent("Collision", aw_id, self.tick,
                                           partner=other_id))
        for ev in events:
            self._record(ev)
        return events

    def _settle_event(self, aw_id: int):
        """Drop the object onto the highest support below its footprint.

        Supports are horizontal surface regions and other objects' box tops
        whose xy footprint overlaps. A gap above the support tolerance
        translates the object down and logs a Fall; with no support within
        the drop limit the displacement is capped there, which signals a
        grossly implausible pose.
        """
        model, pose = self.objects[aw_id]
        corners = self._box(aw_id).corners()
        bottom = float(corners[:, 2].min())
        top = float(corners[:, 2].max())
        xy_min = corners[:, :2].min(axis=0)
        xy_max = corners[:, :2].max(axis=0)
        tol = self.config.support_tol

        supports = []
        for region in self.map.surfaces:
            if abs(float(region.normal @ np.array([0.0, 0.0, 1.0]))) < 0.99:
                continue
            rc = region.corners()
            if np.any(rc[:, :2].min(axis=0) > xy_max) or \
               np.any(rc[:, :2].max(axis=0) < xy_min):
                continue
            supports.append(float(region.origin[2]))
        for other_id in self.objects:
            if other_id == aw_id:
                continue
            oc = self._box(other_id).corners()
            if np.any(oc[:, :2].min(axis=0) > xy_max) or \
               np.any(oc[:, :2].max(axis=0) < xy_min):
                continue
            supports.append(float(oc[:, 2].max()))

        # a support plane passing through the box is contact, not a gap;
        # the interpenetration itself is the collision check's business
        below = [s for s in supports if s <= bottom + tol or s < top]
        if below:
            gap = bottom - max(below)
            if gap <= tol:
                return None
            drop = min(gap, self.config.max_drop)
        else:
            drop = self.config.max_drop
        displacement = (0.0, 0.0, -drop)
        new_pose = Pose6D(pose.position + np.array(displacement), pose.orientation)
        self.objects[aw_id] = (model, new_pose)
        event = PhysicsEvent("Fall", aw_id, self.tick, displacement=displacement)
        self._record(event)
        return event

    def _run_checks(self, aw_id: int) -> list[PhysicsEvent]:
        events = self._collision_events(aw_id)
        fall = self._settle_event(aw_id)
        if fall is not None:
            events.append(fall)
        return events

    # -- commands ----------------------------------------------------------

    def spawn(self, label: str, pose: Pose6D) -> tuple[int, list[PhysicsEvent]]:
        if label not in self.library:
            raise WorldError(f"unknown model label {label!r}")
        self.tick += 1
        aw_id = self._next_id
        self._next_id += 1
        self.objects[aw_id] = (self.library.get(label), pose)
        return aw_id, self._run_checks(aw_id)

    def set_pose(self, aw_id: int, pose: Pose6D) -> list[PhysicsEvent]:
        if aw_id not in self.objects:
            raise WorldError(f"unknown world object {aw_id}")
        self.tick += 1
        model, _ = self.objects[aw_id]
        self.objects[aw_id] = (model, pose)
        return self._run_checks(aw_id)

    def delete(self, aw_id: int):
        if aw_id not in self.objects:
            raise WorldError(f"unknown world object {aw_id}")
        self.tick += 1
        del self.objects[aw_id]

    def settle(self, aw_id: int):
        if aw_id not in self.objects:
            raise WorldError(f"unknown world object {aw_id}")
        self.tick += 1
        return self._settle_event(aw_id)

    def pose_of(self, aw_id: int) -> Pose6D:
        if aw_id not in self.objects:
            raise WorldError(f"unknown world object {aw_id}")
        return self.objects[aw_id][1]

    def label_of(self, aw_id: int) -> str:
        if aw_id not in self.objects:
            raise WorldError(f"unknown world object {aw_id}")
        return self.objects[aw_id][0].label

    def snapshot(self, camera_override: Pose6D = None, timestamp: int = None) -> SensorFrame:
        cam = camera_override or self.camera_pose
        objs = [(aw_id, *self.objects[aw_id]) for aw_id in sorted(self.objects)]
        return render(objs, self.map.statics, cam, self.intrinsics,
                      timestamp if timestamp is not None else self.tick)

    def drain_events(self) -> list[PhysicsEvent]:
        events = self.pending
        self.pending = []
        return events
