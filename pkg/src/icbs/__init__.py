"""Imagination-capable belief state.

A perception belief maintained as a scene graph in a simulated artificial
world: detected objects are mirrored as posed models, the expected view is
rendered and compared against observed sensor data, and hypotheses that do
not explain the observation are refined or rejected.
"""

from .geometry import FrameTransform, Pose6D, compose, look_at, transform_point
from .model import (Histogram, HistogramBinning, IdentityEvent, ModelLibrary,
                    ObjectHypothesis, ObjectModel, SceneGraph, SemanticMap,
                    SurfaceRegion, TriangleMesh, VirtualObject, hellinger)
from .render import CameraIntrinsics, SensorFrame, render, roi_of
from .world import PhysicsEvent, WorldConfig, WorldError, WorldState
from .percept import (ClassifierModel, FeatureVector, PointCluster,
                      SegmentParams, classify, histogram_expert, process,
                      segment, shape_pose_expert)
from .identity import IdentityPolicy, similarity, synchronize
from .loop import (ComparisonReport, Query, QueryAnswer, answer_query,
                   compare, refine, sync_belief)
from .scenario import NoiseConfig, Scenario, ScenarioError, load_scenario, save_scenario
from .harness import ExperimentReport, build_exemplars, corrupt, run_experiment, synthesize_rw

__version__ = "0.1.0"
