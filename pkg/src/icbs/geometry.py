"""Rigid-body poses and quaternion math. World frame is z-up, right-handed."""

from dataclasses import dataclass

import numpy as np

# Constructors renormalize quaternions; inputs farther off than this are rejected.
QUAT_INPUT_TOL = 1e-6


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {a.shape}")
    return a


def normalized(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero vector")
    return a / n


def quat_mul(q1, q2) -> np.ndarray:
    """Hamilton product q1*q2, both (w, x, y, z)."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v (..., 3) by unit quaternion q."""
    u = np.asarray(q[1:], dtype=np.float64)
    w = float(q[0])
    v = np.asarray(v, dtype=np.float64)
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    a = normalized(axis)
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * a))


def rot_z(angle: float) -> np.ndarray:
    """Quaternion for a rotation by `angle` radians about +z."""
    return quat_from_axis_angle((0.0, 0.0, 1.0), angle)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), Shepperd's method."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    return q / np.linalg.norm(q)


def quat_angle(q1, q2) -> float:
    """Angle in radians of the relative rotation between two unit quaternions."""
    d = abs(float(np.dot(q1, q2)))
    return 2.0 * np.arccos(min(1.0, d))


@dataclass(frozen=True, eq=False)
class Pose6D:
    """Position (meters) plus unit quaternion (w, x, y, z).

    Value type: treat as immutable. The constructor renormalizes the
    quaternion and rejects inputs whose norm is off by more than 1e-6.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = _vec3(self.position)
        q = np.asarray(self.orientation, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError(f"expected quaternion (w,x,y,z), got shape {q.shape}")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > QUAT_INPUT_TOL:
            raise ValueError(f"quaternion norm {n} too far from 1")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", q / n)

    @staticmethod
    def identity() -> "Pose6D":
        return Pose6D(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_list(cls, values, normalize: bool = True) -> "Pose6D":
        """Build from [x, y, z, qw, qx, qy, qz]; normalizes lax inputs."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (7,):
            raise ValueError(f"expected 7 values, got shape {v.shape}")
        q = v[3:]
        if normalize:
            n = np.linalg.norm(q)
            if abs(n - 1.0) > 1e-3:
                raise ValueError(f"quaternion norm {n} too far from 1")
            q = q / n
        return cls(v[:3], q)

    def to_list(self) -> list:
        return [*self.position.tolist(), *self.orientation.tolist()]

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation()
        m[:3, 3] = self.position
        return m

    def apply(self, points) -> np.ndarray:
        """Map point(s) from this pose's local frame to the parent frame."""
        return quat_rotate(self.orientation, points) + self.position

    def apply_inverse(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64) - self.position
        return quat_rotate(quat_conjugate(self.orientation), p)

    def inverse(self) -> "Pose6D":
        qc = quat_conjugate(self.orientation)
        return Pose6D(-quat_rotate(qc, self.position), qc)


def compose(a: Pose6D, b: Pose6D) -> Pose6D:
    """Rigid transform equivalent to applying `a` first, then `b`."""
    return Pose6D(b.apply(a.position), quat_mul(b.orientation, a.orientation))


def poses_close(a: Pose6D, b: Pose6D, pos_tol: float = 1e-9, ang_tol: float = 1e-9) -> bool:
    return (np.linalg.norm(a.position - b.position) <= pos_tol
            and quat_angle(a.orientation, b.orientation) <= ang_tol)


@dataclass(frozen=True, eq=False)
class FrameTransform:
    """Transform taking points expressed in `child` into the `parent` frame."""

    parent: str
    child: str
    transform: Pose6D

    def apply(self, points) -> np.ndarray:
        return self.transform.apply(points)

    def apply_inverse(self, points) -> np.ndarray:
        return self.transform.apply_inverse(points)

    def inverse(self) -> "FrameTransform":
        return FrameTransform(self.child, self.parent, self.transform.inverse())


def transform_point(t: FrameTransform, p) -> np.ndarray:
    """Rotation then translation of a child-frame point into the parent frame."""
    return t.apply(_vec3(p))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose6D:
    """Camera pose at `eye` facing `target`.

    Camera convention: x right, y down, z forward (pinhole optical axis).
    Falls back to a +y reference when the view direction is parallel to `up`.
    """
    eye = _vec3(eye)
    forward = normalized(_vec3(target) - eye)
    ref = _vec3(up)
    right = np.cross(forward, ref)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = normalized(right)
    down = np.cross(forward, right)
    rot = np.column_stack([right, down, forward])
    return Pose6D(eye, matrix_to_quat(rot))
