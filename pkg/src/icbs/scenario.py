"""Scenario files: one JSON document describing the semantic map, the model
library, ground-truth placements, the camera trajectory, and noise settings.

Meshes are either inline vertex/triangle/albedo arrays or references to
OBJ-subset files (v/f records only). Poses are [x, y, z, qw, qx, qy, qz].
See the README for the full schema.
"""

import json
import os

import numpy as np

from .geometry import Pose6D
from .model import (ModelError, ModelLibrary, ObjectModel, SemanticMap,
                    SurfaceRegion, TriangleMesh, DEFAULT_COLLISION_MARGIN)
from .render import CameraIntrinsics
from dataclasses import dataclass, field


class ScenarioError(ValueError):
    pass


@dataclass
class NoiseConfig:
    pixel_sigma: float = 0.0  # 8-bit counts, Gaussian, clamped
    pose_jitter_m: float = 0.0  # camera position, per frame
    pose_jitter_deg: float = 0.0  # camera orientation, per frame
    label_corruption: float = 0.0
    flip_rate: float = 0.0

    def __post_init__(self):
        for name in ("label_corruption", "flip_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ScenarioError(f"{name} must lie in [0, 1], got {v}")
        if self.pixel_sigma < 0 or self.pose_jitter_m < 0 or self.pose_jitter_deg < 0:
            raise ScenarioError("noise magnitudes must be non-negative")


@dataclass
class Scenario:
    """Everything a deterministic experiment run needs, seed included."""

    name: str
    seed: int
    semantic_map: SemanticMap
    library: ModelLibrary
    placements: list  # (label, Pose6D) ground truth
    intrinsics: CameraIntrinsics
    trajectory: list  # Pose6D per tick
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    knn_k: int = 3
    exemplar_views: list = None  # Pose6D; None -> derived from the trajectory
    exemplars_inline: list = None  # (label, feature array)
    confusers: list = field(default_factory=list)  # labels excluded from strict bounds

    def validate(self):
        if not self.trajectory:
            raise ScenarioError("trajectory must contain at least one pose")
        for label, _ in self.placements:
            if label not in self.library:
                raise ScenarioError(f"placement references unknown label {label!r}")
        for label in self.confusers:
            if label not in self.library:
                raise ScenarioError(f"confuser list references unknown label {label!r}")
        try:
            self.semantic_map.validate_surfaces()
        except ModelError as exc:
            raise ScenarioError(str(exc)) from exc
        return self


def _pose_from(values, where: str) -> Pose6D:
    try:
        return Pose6D.from_list(values)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"bad pose in {where}: {exc}") from exc


def load_obj_mesh(path: str, albedo) -> TriangleMesh:
    """Minimal OBJ reader: v and f records, polygons fan-triangulated."""
    vertices, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for i in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[i], idx[i + 1]))
    if not vertices or not faces:
        raise ScenarioError(f"OBJ file {path!r} has no usable v/f records")
    return TriangleMesh(vertices, faces, albedo)


def mesh_from_dict(d: dict, base_dir: str, where: str) -> TriangleMesh:
    albedo = d.get("albedo", (0.7, 0.7, 0.7))
    try:
        if "obj" in d:
            return load_obj_mesh(os.path.join(base_dir, d["obj"]), albedo)
        return TriangleMesh(d["vertices"], d["triangles"], albedo)
    except (KeyError, ModelError, ValueError, OSError) as exc:
        raise ScenarioError(f"bad mesh in {where}: {exc}") from exc


def mesh_to_dict(mesh: TriangleMesh) -> dict:
    return {"vertices": mesh.vertices.tolist(),
            "triangles": mesh.triangles.tolist(),
            "albedo": mesh.albedo.tolist()}


def scenario_from_dict(d: dict, base_dir: str = ".") -> Scenario:
    try:
        map_d = d["map"]
        statics = [(s["name"],
                    mesh_from_dict(s["mesh"], base_dir, f"static {s.get('name')}"),
                    _pose_from(s.get("pose", [0, 0, 0, 1, 0, 0, 0]),
                               f"static {s.get('name')}"))
                   for s in map_d.get("static", [])]
        surfaces = [SurfaceRegion(s["name"], s["origin"], s["normal"],
                                  s.get("x_axis", (1, 0, 0)), s["extent"],
                                  s["height_band"])
                    for s in map_d.get("surfaces", [])]
        semantic_map = SemanticMap(statics, surfaces)

        lib_d = d["library"]
        models = []
        for m in lib_d["models"]:
            mesh = mesh_from_dict(m["mesh"], base_dir, f"model {m.get('label')}")
            models.append(ObjectModel(m["label"], mesh,
                                      margin=m.get("margin", DEFAULT_COLLISION_MARGIN),
                                      up_axis=m.get("up_axis", (0, 0, 1))))
        library = ModelLibrary(models)

        cam = d["camera"]
        intr = cam["intrinsics"]
        intrinsics = CameraIntrinsics(int(intr["width"]), int(intr["height"]),
                                      float(intr["fx"]), float(intr["fy"]),
                                      float(intr["cx"]), float(intr["cy"]))
        trajectory = [_pose_from(p, "trajectory") for p in cam["trajectory"]]

        placements = [(o["label"], _pose_from(o["pose"], f"object {o.get('label')}"))
                      for o in d.get("objects", [])]

        noise = NoiseConfig(**d.get("noise", {}))
        exemplar_views = None
        if "exemplar_views" in lib_d:
            exemplar_views = [_pose_from(p, "exemplar_views")
                              for p in lib_d["exemplar_views"]]
        exemplars_inline = None
        if "exemplars" in lib_d:
            exemplars_inline = [(e["label"], np.asarray(e["features"], dtype=float))
                                for e in lib_d["exemplars"]]
        scenario = Scenario(
            name=d.get("name", "scenario"),
            seed=int(d.get("seed", 0)),
            semantic_map=semantic_map,
            library=library,
            placements=placements,
            intrinsics=intrinsics,
            trajectory=trajectory,
            noise=noise,
            knn_k=int(lib_d.get("knn_k", 3)),
            exemplar_views=exemplar_views,
            exemplars_inline=exemplars_inline,
            confusers=list(d.get("confusers", [])),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError, ModelError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    return scenario.validate()


def scenario_to_dict(s: Scenario) -> dict:
    d = {
        "name": s.name,
        "seed": s.seed,
        "map": {
            "static": [{"name": name, "mesh": mesh_to_dict(mesh),
                        "pose": pose.to_list()}
                       for name, mesh, pose in s.semantic_map.statics],
            "surfaces": [{"name": r.name, "origin": r.origin.tolist(),
                          "normal": r.normal.tolist(),
                          "x_axis": r.x_axis.tolist(),
                          "extent": r.extent.tolist(),
                          "height_band": r.height_band}
                         for r in s.semantic_map.surfaces],
        },
        "library": {
            "models": [{"label": m.label, "mesh": mesh_to_dict(m.mesh),
                        "margin": m.margin, "up_axis": m.up_axis.tolist()}
                       for m in s.library],
            "knn_k": s.knn_k,
        },
        "objects": [{"label": label, "pose": pose.to_list()}
                    for label, pose in s.placements],
        "camera": {
            "intrinsics": {"width": s.intrinsics.width, "height": s.intrinsics.height,
                           "fx": s.intrinsics.fx, "fy": s.intrinsics.fy,
                           "cx": s.intrinsics.cx, "cy": s.intrinsics.cy},
            "trajectory": [p.to_list() for p in s.trajectory],
        },
        "noise": {"pixel_sigma": s.noise.pixel_sigma,
                  "pose_jitter_m": s.noise.pose_jitter_m,
                  "pose_jitter_deg": s.noise.pose_jitter_deg,
                  "label_corruption": s.noise.label_corruption,
                  "flip_rate": s.noise.flip_rate},
        "confusers": list(s.confusers),
    }
    if s.exemplar_views is not None:
        d["library"]["exemplar_views"] = [p.to_list() for p in s.exemplar_views]
    if s.exemplars_inline is not None:
        d["library"]["exemplars"] = [{"label": label, "features": fv.tolist()}
                                     for label, fv in s.exemplars_inline]
    return d


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def save_scenario(s: Scenario, path: str):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(s), f, indent=1)
        f.write("\n")
