"""Domain types shared across the system: meshes, object models, the semantic
map, color histograms, object hypotheses, and the belief scene graph.

SceneGraph mutation is single-writer (the belief loop); everything else here
is a freely copyable value type.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose6D, normalized

MIN_TRIANGLE_AREA = 1e-12
DEFAULT_COLLISION_MARGIN = 0.005
SURFACE_ATTACH_TOL = 0.01


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

class TriangleMesh:
    """Indexed triangle soup with one albedo color per triangle.

    Vertices in meters, albedo RGB in [0, 1]. Degenerate triangles
    (area <= 1e-12 m^2) and out-of-range indices are rejected.
    """

    def __init__(self, vertices, triangles, albedo):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        albedo = np.asarray(albedo, dtype=np.float64)
        if albedo.ndim == 1:
            albedo = np.tile(albedo.reshape(1, 3), (len(self.triangles), 1))
        self.albedo = albedo.reshape(-1, 3)
        self._validate()

    def _validate(self):
        nv = len(self.vertices)
        if len(self.triangles) == 0:
            raise ModelError("mesh has no triangles")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= nv:
            raise ModelError("triangle index out of range")
        if len(self.albedo) != len(self.triangles):
            raise ModelError("albedo count does not match triangle count")
        if self.albedo.min() < 0.0 or self.albedo.max() > 1.0:
            raise ModelError("albedo values must lie in [0, 1]")
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        if np.any(areas <= MIN_TRIANGLE_AREA):
            raise ModelError("mesh contains degenerate triangles")

    def bounds(self):
        """Axis-aligned (min, max) corners in the mesh's own frame."""
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed_vertices(self, pose: Pose6D) -> np.ndarray:
        return pose.apply(self.vertices)


_FACE_ORDER = ("+x", "-x", "+y", "-y", "+z", "-z")


def make_box_mesh(size, color=(0.7, 0.7, 0.7), face_colors=None) -> TriangleMesh:
    """Axis-aligned box centered at the origin.

    `size` is the full extent per axis. `face_colors` may override the base
    color per face ("+x", "-x", "+y", "-y", "+z", "-z").
    """
    hx, hy, hz = np.asarray(size, dtype=np.float64) / 2.0
    v = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ])
    quads = {
        "+x": (1, 2, 6, 5), "-x": (3, 0, 4, 7),
        "+y": (2, 3, 7, 6), "-y": (0, 1, 5, 4),
        "+z": (4, 5, 6, 7), "-z": (3, 2, 1, 0),
    }
    face_colors = face_colors or {}
    tris, cols = [], []
    for face in _FACE_ORDER:
        a, b, c, d = quads[face]
        col = face_colors.get(face, color)
        tris += [(a, b, c), (a, c, d)]
        cols += [col, col]
    return TriangleMesh(v, tris, cols)


def make_two_tone_box(size, body, back) -> TriangleMesh:
    """Box with a differently colored back face and back top half.

    A 180 degree turn about +z swaps which tone faces the camera on both
    the side and the top, so front-to-back orientation is visible from
    steep viewpoints too.
    """
    hx, hy, hz = np.asarray(size, dtype=np.float64) / 2.0
    base = make_box_mesh(size, body, face_colors={"+y": back})
    # rebuild the +z face (triangles 8, 9 per _FACE_ORDER) as two y-halves
    keep = [i for i in range(len(base.triangles)) if i not in (8, 9)]
    verts = list(base.vertices)
    tris = [tuple(base.triangles[i]) for i in keep]
    cols = [tuple(base.albedo[i]) for i in keep]
    for y0, y1, col in ((-hy, 0.0, body), (0.0, hy, back)):
        i0 = len(verts)
        verts += [(-hx, y0, hz), (hx, y0, hz), (hx, y1, hz), (-hx, y1, hz)]
        tris += [(i0, i0 + 1, i0 + 2), (i0, i0 + 2, i0 + 3)]
        cols += [col, col]
    return TriangleMesh(verts, tris, cols)


def make_striped_top_box(size, color, stripe_color, band_frac=1.0 / 3.0) -> TriangleMesh:
    """Box whose top face carries a centered stripe band along y.

    The stripe is symmetric under a 180 degree turn about +z, so it does not
    reveal front-to-back orientation; it only separates otherwise look-alike
    products.
    """
    hx, hy, hz = np.asarray(size, dtype=np.float64) / 2.0
    base = make_box_mesh(size, color)
    # drop the +z face (triangle indices 8, 9 per _FACE_ORDER) and rebuild it in bands
    keep = [i for i in range(len(base.triangles)) if i not in (8, 9)]
    verts = list(base.vertices)
    tris = [tuple(base.triangles[i]) for i in keep]
    cols = [tuple(base.albedo[i]) for i in keep]
    xb = hx * band_frac
    bands = [(-hx, -xb, color), (-xb, xb, stripe_color), (xb, hx, color)]
    for x0, x1, col in bands:
        i0 = len(verts)
        verts += [(x0, -hy, hz), (x1, -hy, hz), (x1, hy, hz), (x0, hy, hz)]
        tris += [(i0, i0 + 1, i0 + 2), (i0, i0 + 2, i0 + 3)]
        cols += [col, col]
    return TriangleMesh(verts, tris, cols)


# ---------------------------------------------------------------------------
# Object models and the model library
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ObjectModel:
    """A known product: mesh plus an auto-derived collision box.

    The collision box is the mesh's axis-aligned bounds in the model frame;
    `margin` inflates it for contact candidate detection only.
    """

    label: str
    mesh: TriangleMesh
    margin: float = DEFAULT_COLLISION_MARGIN
    up_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if self.margin < 0:
            raise ModelError("collision margin must be >= 0")
        self.up_axis = normalized(self.up_axis)
        lo, hi = self.mesh.bounds()
        self.box_center = (lo + hi) / 2.0
        self.box_half = (hi - lo) / 2.0


class ModelLibrary:
    """Label -> ObjectModel with unique labels."""

    def __init__(self, models=()):
        self._models: dict[str, ObjectModel] = {}
        for m in models:
            self.add(m)

    def add(self, model: ObjectModel):
        if model.label in self._models:
            raise ModelError(f"duplicate model label {model.label!r}")
        self._models[model.label] = model

    def get(self, label: str) -> ObjectModel:
        try:
            return self._models[label]
        except KeyError:
            raise ModelError(f"unknown model label {label!r}") from None

    def __contains__(self, label: str) -> bool:
        return label in self._models

    def labels(self) -> list[str]:
        return list(self._models)

    def __len__(self) -> int:
        return len(self._models)

    def __iter__(self):
        return iter(self._models.values())


# ---------------------------------------------------------------------------
# Semantic map
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SurfaceRegion:
    """Rectangular support region on a plane, with a height band of interest.

    `origin` is the rectangle center, `normal` the plane normal, `x_axis` the
    in-plane first axis; `extent` is the full (x, y) size of the rectangle.
    """

    name: str
    origin: np.ndarray
    normal: np.ndarray
    x_axis: np.ndarray
    extent: np.ndarray
    height_band: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.normal = normalized(self.normal)
        x = np.asarray(self.x_axis, dtype=np.float64)
        x = x - np.dot(x, self.normal) * self.normal
        self.x_axis = normalized(x)
        self.y_axis = np.cross(self.normal, self.x_axis)
        self.extent = np.asarray(self.extent, dtype=np.float64)
        if np.any(self.extent <= 0) or self.height_band <= 0:
            raise ModelError(f"surface region {self.name!r} has empty bounds")

    def heights(self, points) -> np.ndarray:
        return (np.asarray(points) - self.origin) @ self.normal

    def plane_coords(self, points) -> np.ndarray:
        d = np.asarray(points) - self.origin
        return np.stack([d @ self.x_axis, d @ self.y_axis], axis=-1)

    def in_bounds(self, points) -> np.ndarray:
        uv = self.plane_coords(points)
        return (np.abs(uv[..., 0]) <= self.extent[0] / 2.0) & \
               (np.abs(uv[..., 1]) <= self.extent[1] / 2.0)

    def corners(self) -> np.ndarray:
        ex, ey = self.extent / 2.0
        return np.array([self.origin + sx * ex * self.x_axis + sy * ey * self.y_axis
                         for sx in (-1, 1) for sy in (-1, 1)])


def _point_triangle_distance(p, a, b, c) -> float:
    # closest distance from point to triangle, via clamped barycentric projection
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(ap))
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 <= d1 and d3 <= 0:
        t = d1 / (d1 - d3)
        return float(np.linalg.norm(ap - t * ab))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 <= d2 and d6 <= 0:
        t = d2 / (d2 - d6)
        return float(np.linalg.norm(ap - t * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and d4 - d3 >= 0 and d5 - d6 >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + t * (c - b))))
    n = np.cross(ab, ac)
    return float(abs(ap @ n) / np.linalg.norm(n))


@dataclass(eq=False)
class SemanticMap:
    """Static environment geometry plus the support surfaces of interest."""

    statics: list  # (name, TriangleMesh, Pose6D)
    surfaces: list  # SurfaceRegion

    def validate_surfaces(self, tol: float = SURFACE_ATTACH_TOL):
        """Check each region rectangle sits on some static face, within `tol`."""
        world_tris = []
        for _, mesh, pose in self.statics:
            verts = mesh.transformed_vertices(pose)
            for tri in mesh.triangles:
                world_tris.append(verts[tri])
        for region in self.surfaces:
            for corner in region.corners():
                d = min((_point_triangle_distance(corner, *t) for t in world_tris),
                        default=math.inf)
                if d > tol:
                    raise ModelError(
                        f"surface region {region.name!r} is {d:.3f} m away from "
                        f"static geometry (tolerance {tol} m)")

    def region(self, name: str) -> SurfaceRegion:
        for r in self.surfaces:
            if r.name == name:
                return r
        raise ModelError(f"unknown surface region {name!r}")


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistogramBinning:
    color_space: str = "rgb"
    bins_per_channel: int = 8

    @property
    def total_bins(self) -> int:
        return self.bins_per_channel ** 3


@dataclass(eq=False)
class Histogram:
    """Bin counts plus the binning descriptor that produced them."""

    counts: np.ndarray
    binning: HistogramBinning = field(default_factory=HistogramBinning)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ModelError("histogram counts must be one-dimensional")
        if np.any(self.counts < 0):
            raise ModelError("histogram counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def hellinger(h1: Histogram, h2: Histogram) -> float:
    """Histogram distance in [0, 1]; 0 for identical histograms.

    d = sqrt(1 - sum_I sqrt(H1(I) H2(I)) / sqrt(m1 m2 N^2)) with m the average
    bin value and N the bin count. Uniform scaling of either histogram cancels.
    The radicand is clamped to [0, 1] against float noise.
    """
    if h1.binning != h2.binning or len(h1.counts) != len(h2.counts):
        raise ValueError("histogram binning mismatch")
    n = len(h1.counts)
    if n == 0:
        raise ValueError("empty histogram")
    c1 = h1.counts.astype(np.float64)
    c2 = h2.counts.astype(np.float64)
    t1, t2 = c1.sum(), c2.sum()
    if t1 <= 0 or t2 <= 0:
        raise ValueError("all-zero histogram")
    mean1, mean2 = t1 / n, t2 / n
    s = float(np.sqrt(c1 * c2).sum())
    rad = 1.0 - s / math.sqrt(mean1 * mean2 * n * n)
    return math.sqrt(min(1.0, max(0.0, rad)))


# ---------------------------------------------------------------------------
# Hypotheses, virtual objects, and the scene graph
# ---------------------------------------------------------------------------

STATUS_UNVERIFIED = "unverified"
STATUS_CONFIRMED = "confirmed"
STATUS_MISMATCHED = "mismatched"
STATUS_REJECTED = "rejected"

_ALLOWED_TRANSITIONS = {
    STATUS_UNVERIFIED: {STATUS_CONFIRMED, STATUS_MISMATCHED},
    STATUS_MISMATCHED: {STATUS_CONFIRMED, STATUS_REJECTED},
    STATUS_CONFIRMED: set(),
    STATUS_REJECTED: set(),
}


@dataclass(eq=False)
class ObjectHypothesis:
    """A perceived object candidate with its expert annotations.

    `roi` holds sorted flat pixel indices into the source frame. The class
    ranking is sorted by descending score. Status moves only along
    unverified -> {confirmed, mismatched} -> {confirmed, rejected}.
    """

    pose: Pose6D
    roi: np.ndarray
    class_ranking: list  # (label, score), descending score
    histogram: Histogram | None = None
    extents: np.ndarray | None = None  # (major, minor, height) spans, meters
    identity: int | None = None
    created_tick: int = 0
    surface: str = ""
    ambiguous_yaw: bool = False
    status: str = STATUS_UNVERIFIED
    last_distance: float | None = None

    def __post_init__(self):
        self.roi = np.asarray(self.roi, dtype=np.int64)
        if self.roi.size == 0:
            raise ModelError("hypothesis ROI must be non-empty")
        scores = [s for _, s in self.class_ranking]
        if scores != sorted(scores, reverse=True):
            raise ModelError("class ranking must be sorted by descending score")
        if self.extents is not None:
            self.extents = np.asarray(self.extents, dtype=np.float64)

    def top_label(self) -> str:
        return self.class_ranking[0][0]

    def advance_status(self, new: str):
        if new == self.status:
            return
        if new not in _ALLOWED_TRANSITIONS[self.status]:
            raise ModelError(f"illegal status transition {self.status} -> {new}")
        self.status = new

    def promote_label(self, label: str):
        """Reorder the ranking so `label` becomes the believed top class."""
        labels = [l for l, _ in self.class_ranking]
        if label not in labels:
            raise ModelError(f"label {label!r} not in ranking")
        labels.remove(label)
        labels.insert(0, label)
        scores = [s for _, s in self.class_ranking]
        self.class_ranking = list(zip(labels, scores))


@dataclass(eq=False)
class VirtualObject:
    """An instantiated model in the artificial world."""

    aw_id: int
    label: str
    pose: Pose6D


EVENT_ADDED = "Added"
EVENT_MOVED = "Moved"
EVENT_REMOVED = "Removed"
EVENT_UPDATED = "Updated"


@dataclass(frozen=True)
class IdentityEvent:
    kind: str
    identity: int
    tick: int
    detail: str = ""

    def to_json(self) -> str:
        d = {"kind": self.kind, "identity": self.identity, "tick": self.tick}
        if self.detail:
            d["detail"] = self.detail
        return json.dumps(d, sort_keys=True)


def events_to_jsonl(events) -> str:
    return "\n".join(e.to_json() for e in events)


class SceneGraph:
    """The persistent belief: identified objects plus links into the world.

    The link map (identity -> world object id) is kept injective; violating
    inserts raise. Only one writer may mutate the graph at a time.
    """

    def __init__(self):
        self.objects: dict[int, ObjectHypothesis] = {}
        self.links: dict[int, int] = {}
        self.events: list[IdentityEvent] = []
        self.miss_counts: dict[int, int] = {}
        self._next_identity = 1

    def add(self, hyp: ObjectHypothesis, tick: int) -> int:
        identity = self._next_identity
        self._next_identity += 1
        hyp.identity = identity
        hyp.created_tick = tick
        self.objects[identity] = hyp
        self.miss_counts[identity] = 0
        self.log(IdentityEvent(EVENT_ADDED, identity, tick))
        return identity

    def replace(self, identity: int, fresh: ObjectHypothesis):
        if identity not in self.objects:
            raise ModelError(f"unknown identity {identity}")
        fresh.identity = identity
        fresh.created_tick = self.objects[identity].created_tick
        self.objects[identity] = fresh
        self.miss_counts[identity] = 0

    def remove(self, identity: int, tick: int):
        if identity not in self.objects:
            raise ModelError(f"unknown identity {identity}")
        del self.objects[identity]
        self.links.pop(identity, None)
        self.miss_counts.pop(identity, None)
        self.log(IdentityEvent(EVENT_REMOVED, identity, tick))

    def set_link(self, identity: int, aw_id: int):
        if identity not in self.objects:
            raise ModelError(f"cannot link unknown identity {identity}")
        for ident, aw in self.links.items():
            if aw == aw_id and ident != identity:
                raise ModelError(f"world object {aw_id} already linked to {ident}")
        self.links[identity] = aw_id

    def unlink(self, identity: int):
        self.links.pop(identity, None)

    def log(self, event: IdentityEvent):
        self.events.append(event)
