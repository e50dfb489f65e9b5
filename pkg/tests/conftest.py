import numpy as np
import pytest

from icbs import fixtures
from icbs.geometry import Pose6D
from icbs.model import ModelLibrary, ObjectModel, SemanticMap, make_box_mesh
from icbs.render import CameraIntrinsics


@pytest.fixture(scope="session")
def desk_library():
    return fixtures.desk_library()


@pytest.fixture(scope="session")
def desk_map():
    return fixtures.desk_map()


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(128, 96, 100.0, 100.0, 64.0, 48.0)


def box_model(label="box", size=(0.1, 0.1, 0.1), color=(0.8, 0.2, 0.2), margin=0.005):
    return ObjectModel(label, make_box_mesh(size, color), margin=margin)


def simple_library():
    return ModelLibrary([box_model("red", color=(0.8, 0.2, 0.2)),
                         box_model("green", color=(0.2, 0.8, 0.2)),
                         box_model("tall", size=(0.08, 0.08, 0.2),
                                   color=(0.2, 0.2, 0.8))])


def pose_xyz(x, y, z, q=(1.0, 0.0, 0.0, 0.0)):
    return Pose6D(np.array([x, y, z], dtype=float), np.array(q, dtype=float))
