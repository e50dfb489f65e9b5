"""Percept processing: turns an incoming sensor frame into annotated object
hypotheses.

The frame is treated as unstructured input that a pipeline of experts
annotates: surface-based segmentation over the semantic map, a color
histogram expert, a principal-axes shape and pose expert, and a k-NN
classifier over deterministic appearance features. Everything here is a
pure function of its inputs; cluster order is fixed by the top-left ROI
pixel so results are reproducible.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose6D, matrix_to_quat
from .model import (Histogram, HistogramBinning, ModelError, ObjectHypothesis,
                    SemanticMap, STATUS_UNVERIFIED)
from .render import SensorFrame


@dataclass
class SegmentParams:
    link_distance: float = 0.02
    min_points: int = 30
    plane_clearance: float = 0.005
    # principal in-plane eigenvalue ratio below which yaw is ambiguous
    isotropy_ratio: float = 1.2


@dataclass(eq=False)
class PointCluster:
    """Pixels of one segmented object plus their back-projected 3D points."""

    roi: np.ndarray  # sorted flat pixel indices
    points: np.ndarray  # (N, 3) map frame
    surface: str


def back_project(frame: SensorFrame) -> tuple[np.ndarray, np.ndarray]:
    """Map-frame 3D points for all pixels with valid depth.

    Returns (flat pixel indices, points). Ray directions have unit z in the
    camera frame, so the point is direction * depth.
    """
    depth = frame.depth.ravel()
    valid = np.flatnonzero(depth > 0)
    dirs = frame.intrinsics.ray_directions().reshape(-1, 3)[valid]
    cam_points = dirs * depth[valid, None]
    return valid, frame.camera_pose.apply(cam_points)


def _single_linkage(points: np.ndarray, link: float) -> np.ndarray:
    """Union-find over all point pairs closer than `link`."""
    n = len(points)
    parent = np.arange(n)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    tree = cKDTree(points)
    for i, j in tree.query_pairs(link, output_type="ndarray"):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(n)])


def segment(frame: SensorFrame, semantic_map: SemanticMap,
            params: SegmentParams = None) -> list[PointCluster]:
    """Cluster back-projected points lying over the map's support surfaces.

    Points within the plane clearance of a surface are dropped (they belong
    to the surface itself); the rest cluster by single linkage at the link
    distance, and clusters below the minimum point count are discarded.
    """
    params = params or SegmentParams()
    pix, pts = back_project(frame)
    clusters = []
    claimed = np.zeros(len(pix), dtype=bool)
    for region in semantic_map.surfaces:
        h = region.heights(pts)
        cand = (~claimed & region.in_bounds(pts)
                & (h > params.plane_clearance) & (h <= region.height_band))
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            continue
        labels = _single_linkage(pts[idx], params.link_distance)
        claimed[idx] = True
        for root in np.unique(labels):
            member = idx[labels == root]
            if member.size < params.min_points:
                continue
            order = np.argsort(pix[member])
            clusters.append(PointCluster(pix[member][order], pts[member][order],
                                         region.name))
    clusters.sort(key=lambda c: int(c.roi[0]))
    return clusters


def histogram_expert(frame: SensorFrame, roi: np.ndarray,
                     binning: HistogramBinning = None) -> Histogram:
    """Color histogram of the ROI pixels under the given binning."""
    binning = binning or HistogramBinning()
    roi = np.asarray(roi, dtype=np.int64)
    if roi.size == 0:
        raise ValueError("empty ROI")
    b = binning.bins_per_channel
    rgb = frame.rgb.reshape(-1, 3)[roi].astype(np.int64)
    chan = rgb * b // 256
    bins = (chan[:, 0] * b + chan[:, 1]) * b + chan[:, 2]
    counts = np.bincount(bins, minlength=binning.total_bins)
    return Histogram(counts, binning)


def _refine_axis(centered: np.ndarray, axis_uv: np.ndarray,
                 half_range_deg: int = 30) -> np.ndarray:
    """Tighten the in-plane axis by minimizing the footprint rectangle area.

    Surface sampling piles points onto the camera-facing sides, which skews
    a covariance axis; the minimum-area footprint around the seed axis is
    far less sensitive to that. Angles are scanned outward from the seed so
    ties resolve toward it.
    """
    best_axis, best_area = axis_uv, math.inf
    base = math.atan2(axis_uv[1], axis_uv[0])
    for step in range(half_range_deg + 1):
        for signed in ({step, -step} if step else {0}):
            ang = base + math.radians(signed)
            u = np.array([math.cos(ang), math.sin(ang)])
            v = np.array([-u[1], u[0]])
            area = float(np.ptp(centered @ u)) * float(np.ptp(centered @ v))
            if area < best_area:
                best_area, best_axis = area, u
    return best_axis


def shape_pose_expert(cluster: PointCluster, region,
                      params: SegmentParams = None) -> tuple[np.ndarray, Pose6D, bool]:
    """Principal-axes shape and pose estimate for one cluster.

    The orientation constrains z to the surface normal and takes yaw from
    the first in-plane principal axis (locally refined by a minimum-area
    footprint fit), sign-canonicalized toward world +x. Yaw carries an
    inherent 180 degree ambiguity; near-isotropic or degenerate clusters
    get yaw 0 and the ambiguous flag.

    Returns (extents, pose, ambiguous). Extents are the spans along the
    principal in-plane axes plus the height above the support plane; the
    position centers the object on the plane under that height.
    """
    params = params or SegmentParams()
    if len(cluster.points) < params.min_points:
        raise ValueError("cluster too small for shape estimation")
    uv = region.plane_coords(cluster.points)
    heights = region.heights(cluster.points)
    centroid_uv = uv.mean(axis=0)
    centered = uv - centroid_uv
    cov = centered.T @ centered / len(centered)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    ambiguous = False
    degenerate = evals[0] < 1e-12 or evals[1] < 1e-12
    if degenerate:
        ambiguous = True
        axis_uv = np.array([1.0, 0.0])
    else:
        if evals[1] / evals[0] < params.isotropy_ratio:
            ambiguous = True
        axis_uv = _refine_axis(centered, evecs[:, 1])
    dir_world = axis_uv[0] * region.x_axis + axis_uv[1] * region.y_axis
    if dir_world[0] < -1e-12 or (abs(dir_world[0]) <= 1e-12 and dir_world[1] < 0):
        dir_world = -dir_world
        axis_uv = -axis_uv
    minor_uv = np.array([-axis_uv[1], axis_uv[0]])
    along_major = centered @ axis_uv
    along_minor = centered @ minor_uv
    span_major = float(np.ptp(along_major))
    span_minor = float(np.ptp(along_minor))
    height = float(heights.max())
    extents = np.array([span_major, span_minor, height])

    # span midpoints, not the point mean: visible surfaces pile up on the
    # camera-facing side and would drag a mean off center
    mid = (centroid_uv
           + 0.5 * (along_major.max() + along_major.min()) * axis_uv
           + 0.5 * (along_minor.max() + along_minor.min()) * minor_uv)
    x_axis = dir_world / np.linalg.norm(dir_world)
    z_axis = region.normal
    y_axis = np.cross(z_axis, x_axis)
    rot = np.column_stack([x_axis, y_axis, z_axis])
    position = (region.origin + mid[0] * region.x_axis
                + mid[1] * region.y_axis + (height / 2.0) * region.normal)
    return extents, Pose6D(position, matrix_to_quat(rot)), ambiguous


@dataclass(eq=False)
class FeatureVector:
    """L1-normalized color histogram concatenated with descending extents."""

    values: np.ndarray

    @staticmethod
    def build(histogram: Histogram, extents: np.ndarray) -> "FeatureVector":
        total = histogram.total
        if total <= 0:
            raise ValueError("cannot featurize an empty histogram")
        hist = histogram.counts.astype(np.float64) / total
        ext = np.sort(np.asarray(extents, dtype=np.float64))[::-1]
        return FeatureVector(np.concatenate([hist, ext]))


@dataclass(eq=False)
class ClassifierModel:
    """Exemplar store for k-nearest-neighbor classification."""

    exemplars: np.ndarray  # (n, d)
    labels: list
    k: int = 3

    def __post_init__(self):
        self.exemplars = np.asarray(self.exemplars, dtype=np.float64)
        if self.k < 1 or self.k > len(self.exemplars):
            raise ModelError("k must satisfy 1 <= k <= number of exemplars")
        if len(self.labels) != len(self.exemplars):
            raise ModelError("labels must match exemplars")


def classify(model: ClassifierModel, fv: FeatureVector) -> list:
    """Ranked (label, score) list from the k nearest exemplars.

    Scores are neighbor-count fractions; ties break by smaller mean neighbor
    distance, then lexicographic label.
    """
    dists = np.linalg.norm(model.exemplars - fv.values[None, :], axis=1)
    order = np.argsort(dists, kind="stable")[:model.k]
    by_label: dict[str, list[float]] = {}
    for i in order:
        by_label.setdefault(model.labels[i], []).append(float(dists[i]))
    ranked = sorted(by_label.items(),
                    key=lambda kv: (-len(kv[1]) / model.k,
                                    sum(kv[1]) / len(kv[1]), kv[0]))
    return [(label, len(ds) / model.k) for label, ds in ranked]


def process(frame: SensorFrame, semantic_map: SemanticMap,
            classifier: ClassifierModel, params: SegmentParams = None,
            binning: HistogramBinning = None) -> list[ObjectHypothesis]:
    """Full expert pipeline; hypotheses come back with identity unassigned."""
    params = params or SegmentParams()
    binning = binning or HistogramBinning()
    hypotheses = []
    for cluster in segment(frame, semantic_map, params):
        region = semantic_map.region(cluster.surface)
        hist = histogram_expert(frame, cluster.roi, binning)
        extents, pose, ambiguous = shape_pose_expert(cluster, region, params)
        ranking = classify(classifier, FeatureVector.build(hist, extents))
        hypotheses.append(ObjectHypothesis(
            pose=pose, roi=cluster.roi, class_ranking=ranking, histogram=hist,
            extents=extents, surface=cluster.surface, ambiguous_yaw=ambiguous,
            status=STATUS_UNVERIFIED, created_tick=frame.timestamp))
    return hypotheses
