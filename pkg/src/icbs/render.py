"""Deterministic pinhole ray-cast renderer.

Produces the (rgb, depth, object mask) sensor triple for a world state seen
through a posed camera. Per pixel the nearest triangle intersection wins,
with distance ties broken by the lower global triangle index; the output is
bitwise reproducible for identical inputs. Shading is a fixed-direction
Lambert term clamped to [0.2, 1.0]; no shadows, textures, or anti-aliasing.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import Pose6D, normalized

LIGHT_DIRECTION = normalized((-1.0, -1.0, -2.0))
LAMBERT_FLOOR = 0.2
DET_EPS = 1e-9
RAY_EPS = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("image dimensions must be at least 16 pixels")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def ray_directions(self) -> np.ndarray:
        """Per-pixel ray directions in the camera frame, z component 1."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        dirs = np.empty((self.height, self.width, 3))
        dirs[..., 0] = xs[None, :]
        dirs[..., 1] = ys[:, None]
        dirs[..., 2] = 1.0
        return dirs


@dataclass(eq=False)
class SensorFrame:
    """RGB, depth, and object-mask images plus the camera pose that saw them.

    depth is in meters with 0 meaning no hit; mask holds world object ids
    with 0 for background and static geometry.
    """

    rgb: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    camera_pose: Pose6D
    intrinsics: CameraIntrinsics
    timestamp: int = 0

    def __post_init__(self):
        if not (self.rgb.shape[:2] == self.depth.shape == self.mask.shape):
            raise ValueError("rgb, depth, and mask dimensions must agree")
        if self.rgb.dtype != np.uint8 or self.rgb.shape[2] != 3:
            raise ValueError("rgb must be an 8-bit 3-channel image")
        if np.any(self.depth < 0):
            raise ValueError("depth must be non-negative")

    @property
    def shape(self):
        return self.depth.shape


def frames_equal(a: SensorFrame, b: SensorFrame) -> bool:
    return (np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)
            and np.array_equal(a.mask, b.mask))


def _gather_triangles(objects, statics):
    v0s, v1s, v2s, albedos, owners = [], [], [], [], []
    for name, mesh, pose in statics:
        verts = mesh.transformed_vertices(pose)
        tri = mesh.triangles
        v0s.append(verts[tri[:, 0]])
        v1s.append(verts[tri[:, 1]])
        v2s.append(verts[tri[:, 2]])
        albedos.append(mesh.albedo)
        owners.append(np.zeros(len(tri), dtype=np.int64))
    for aw_id, model, pose in objects:
        verts = model.mesh.transformed_vertices(pose)
        tri = model.mesh.triangles
        v0s.append(verts[tri[:, 0]])
        v1s.append(verts[tri[:, 1]])
        v2s.append(verts[tri[:, 2]])
        albedos.append(model.mesh.albedo)
        owners.append(np.full(len(tri), aw_id, dtype=np.int64))
    if not v0s:
        return None
    return (np.concatenate(v0s), np.concatenate(v1s), np.concatenate(v2s),
            np.concatenate(albedos), np.concatenate(owners))


def render(objects, statics, camera_pose: Pose6D, intrinsics: CameraIntrinsics,
           timestamp: int = 0) -> SensorFrame:
    """Ray-cast the scene into a SensorFrame.

    `objects` is a sequence of (aw_id, ObjectModel, Pose6D); `statics` a
    sequence of (name, TriangleMesh, Pose6D) owned by mask id 0. An empty
    scene yields the background frame (rgb 0, depth 0, mask 0).
    """
    h, w = intrinsics.height, intrinsics.width
    npix = h * w
    dirs_cam = intrinsics.ray_directions().reshape(npix, 3)
    rot = camera_pose.rotation()
    origin = camera_pose.position
    dirs_world = dirs_cam @ rot.T

    best_t = np.full(npix, np.inf)
    best_tri = np.full(npix, -1, dtype=np.int64)

    soup = _gather_triangles(objects, statics)
    if soup is not None:
        v0, v1, v2, albedo, owner = soup
        # camera-frame vertex depths, used only for per-triangle pixel culling
        vc = np.stack([(v - origin) @ rot for v in (v0, v1, v2)], axis=1)
        zs = vc[..., 2]
        full_rect = (0, h, 0, w)
        for ti in range(len(v0)):
            z = zs[ti]
            if np.all(z <= RAY_EPS):
                continue
            if np.any(z <= RAY_EPS):
                r0, r1, c0, c1 = full_rect
            else:
                px = intrinsics.fx * vc[ti, :, 0] / z + intrinsics.cx
                py = intrinsics.fy * vc[ti, :, 1] / z + intrinsics.cy
                c0 = max(0, int(np.floor(px.min())) - 1)
                c1 = min(w, int(np.ceil(px.max())) + 2)
                r0 = max(0, int(np.floor(py.min())) - 1)
                r1 = min(h, int(np.ceil(py.max())) + 2)
                if r0 >= r1 or c0 >= c1:
                    continue
            rows = np.arange(r0, r1)
            cols = np.arange(c0, c1)
            idx = (rows[:, None] * w + cols[None, :]).ravel()
            d = dirs_world[idx]

            e1 = v1[ti] - v0[ti]
            e2 = v2[ti] - v0[ti]
            s = origin - v0[ti]
            q = np.cross(s, e1)
            te2 = float(e2 @ q)
            hvec = np.cross(d, e2)
            a = hvec @ e1
            with np.errstate(divide="ignore", invalid="ignore"):
                f = 1.0 / a
                u = (hvec @ s) * f
                vbar = (d @ q) * f
                t = te2 * f
            valid = ((np.abs(a) >= DET_EPS) & (u >= 0.0) & (u <= 1.0)
                     & (vbar >= 0.0) & (u + vbar <= 1.0) & (t > RAY_EPS))
            if not valid.any():
                continue
            sel = idx[valid]
            closer = t[valid] < best_t[sel]
            upd = sel[closer]
            best_t[upd] = t[valid][closer]
            best_tri[upd] = ti

    hit = best_tri >= 0
    depth = np.where(hit, best_t, 0.0).reshape(h, w)
    rgb = np.zeros((npix, 3), dtype=np.uint8)
    mask = np.zeros(npix, dtype=np.int64)
    if hit.any():
        tris = best_tri[hit]
        mask[hit] = owner[tris]
        e1 = v1[tris] - v0[tris]
        e2 = v2[tris] - v0[tris]
        n = np.cross(e1, e2)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        facing = np.einsum("ij,ij->i", n, dirs_world[hit])
        n = np.where(facing[:, None] > 0, -n, n)
        lam = np.clip(n @ (-LIGHT_DIRECTION), LAMBERT_FLOOR, 1.0)
        shade = np.rint(albedo[tris] * lam[:, None] * 255.0)
        rgb[hit] = np.clip(shade, 0, 255).astype(np.uint8)
    return SensorFrame(rgb.reshape(h, w, 3), depth, mask.reshape(h, w),
                       camera_pose, intrinsics, timestamp)


def roi_of(frame: SensorFrame, aw_id: int) -> np.ndarray:
    """Sorted flat pixel indices whose mask equals `aw_id`.

    An absent id yields an empty array, signaling occlusion or out-of-view.
    """
    return np.flatnonzero(frame.mask.ravel() == aw_id)
