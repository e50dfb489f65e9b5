"""Built-in desk-scale scenario builders.

The default library holds eight visually distinct box products (each with a
differently colored back face, so a 180 degree turn changes their visible
appearance) plus two near-identical "flavor variant" cans that differ only
in a small top stripe. The desk is a single table with one support region,
watched by a camera orbiting gently in front of it.
"""

import math

import numpy as np

from .geometry import Pose6D, look_at, rot_z
from .model import (ModelLibrary, ObjectModel, SemanticMap, SurfaceRegion,
                    make_box_mesh, make_striped_top_box, make_two_tone_box)
from .render import CameraIntrinsics
from .scenario import NoiseConfig, Scenario

TABLE_TOP = 0.75

# Channel values sit at histogram bin centers under the top-face shading
# term, so sensor noise rarely pushes the dominant face across a bin edge.
_C = (0.077, 0.231, 0.385, 0.538, 0.692, 0.846)

# label -> (size, body color, back color)
_PRODUCTS = {
    "carton_red": ((0.090, 0.055, 0.120), (_C[5], _C[0], _C[0]), (_C[0], _C[1], _C[5])),
    "carton_green": ((0.095, 0.060, 0.130), (_C[0], _C[4], _C[1]), (_C[5], _C[5], _C[0])),
    "box_blue": ((0.100, 0.060, 0.130), (_C[0], _C[1], _C[5]), (_C[5], _C[3], _C[0])),
    "box_yellow": ((0.085, 0.055, 0.125), (_C[5], _C[5], _C[0]), (_C[3], _C[0], _C[4])),
    "pack_purple": ((0.095, 0.050, 0.115), (_C[3], _C[0], _C[4]), (_C[0], _C[5], _C[4])),
    "pack_cyan": ((0.105, 0.065, 0.120), (_C[0], _C[5], _C[5]), (_C[5], _C[1], _C[1])),
    "tin_white": ((0.090, 0.060, 0.100), (_C[5], _C[5], _C[5]), (_C[1], _C[1], _C[2])),
    "tin_orange": ((0.100, 0.055, 0.135), (_C[5], _C[3], _C[0]), (_C[0], _C[2], _C[1])),
}

# near-symmetric confusers: same body, slightly different top stripe
_CONFUSERS = {
    "cola_classic": ((0.070, 0.070, 0.115), (_C[4], _C[0], _C[0]), (_C[1], _C[3], _C[1])),
    "cola_zero": ((0.070, 0.070, 0.115), (_C[4], _C[0], _C[0]), (_C[2], _C[3], _C[0])),
}

CONFUSER_LABELS = tuple(_CONFUSERS)
DISTINCT_LABELS = tuple(_PRODUCTS)


def desk_library() -> ModelLibrary:
    models = []
    for label, (size, body, back) in _PRODUCTS.items():
        models.append(ObjectModel(label, make_two_tone_box(size, body, back)))
    for label, (size, body, stripe) in _CONFUSERS.items():
        models.append(ObjectModel(label, make_striped_top_box(size, body, stripe)))
    return ModelLibrary(models)


def desk_map(table_size=(1.4, 0.8, TABLE_TOP)) -> SemanticMap:
    sx, sy, sz = table_size
    table = make_box_mesh((sx, sy, sz), color=(0.45, 0.42, 0.40))
    table_pose = Pose6D(np.array([0.0, 0.0, sz / 2.0]),
                        np.array([1.0, 0.0, 0.0, 0.0]))
    region = SurfaceRegion("desk", origin=(0.0, 0.0, sz), normal=(0, 0, 1),
                           x_axis=(1, 0, 0), extent=(1.2, 0.6), height_band=0.4)
    return SemanticMap([("table", table, table_pose)], [region])


def desk_intrinsics() -> CameraIntrinsics:
    # 160x120 keeps the far edges of small top faces sampled well enough
    # for the shape expert while a full loop frame stays a few milliseconds
    return CameraIntrinsics(160, 120, 125.0, 125.0, 80.0, 60.0)


def orbit_trajectory(n_frames: int, radius=0.9, height=1.9,
                     sweep_deg=40.0) -> list:
    """Camera poses sweeping an arc in front of the desk, aimed at its center."""
    target = np.array([0.0, 0.0, TABLE_TOP + 0.06])
    poses = []
    for i in range(n_frames):
        frac = 0.5 if n_frames == 1 else i / (n_frames - 1)
        az = math.radians((frac - 0.5) * sweep_deg)
        eye = np.array([radius * math.sin(az), -radius * math.cos(az), height])
        poses.append(look_at(eye, target))
    return poses


def resting_pose(label: str, library: ModelLibrary, x: float, y: float,
                 yaw_deg: float = 0.0) -> Pose6D:
    """Pose placing the model's box flush on the table top."""
    model = library.get(label)
    z = TABLE_TOP + model.box_half[2] - model.box_center[2]
    return Pose6D(np.array([x, y, z]), rot_z(math.radians(yaw_deg)))


# yaws stay small so every product's printed front faces the camera sweep;
# larger rotations are exercised by the shape expert's own tests
_SLOTS = [(-0.36, -0.15), (-0.12, -0.15), (0.12, -0.15), (0.36, -0.15),
          (-0.24, 0.14), (0.0, 0.14), (0.24, 0.14), (-0.42, 0.14)]
_YAWS = [10.0, -15.0, 12.0, -5.0, 15.0, -12.0, 8.0, 0.0]


def desk_scenario(name="desk", n_frames=20, seed=7, labels=None,
                  pixel_sigma=2.0, label_corruption=0.0, flip_rate=0.0,
                  knn_k=3) -> Scenario:
    """Assemble a complete desk scenario.

    `labels` picks which products stand on the table (default: four distinct
    products plus both confusers). Ground-truth yaws stay well inside the
    (-90, 90) degree band that the shape expert resolves unambiguously.
    """
    library = desk_library()
    if labels is None:
        labels = ["carton_red", "carton_green", "box_blue", "box_yellow",
                  "cola_classic", "cola_zero"]
    if len(labels) > len(_SLOTS):
        raise ValueError("too many objects for the desk slots")
    placements = [(label, resting_pose(label, library, *_SLOTS[i],
                                       yaw_deg=_YAWS[i]))
                  for i, label in enumerate(labels)]
    return Scenario(
        name=name,
        seed=seed,
        semantic_map=desk_map(),
        library=library,
        placements=placements,
        intrinsics=desk_intrinsics(),
        trajectory=orbit_trajectory(n_frames),
        noise=NoiseConfig(pixel_sigma=pixel_sigma,
                          label_corruption=label_corruption,
                          flip_rate=flip_rate),
        knn_k=knn_k,
        confusers=[l for l in labels if l in CONFUSER_LABELS],
    ).validate()
