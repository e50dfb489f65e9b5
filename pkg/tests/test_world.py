import numpy as np
import pytest
from scipy.optimize import linprog

from icbs import fixtures
from icbs.geometry import Pose6D, rot_z
from icbs.model import ModelLibrary, SemanticMap, SurfaceRegion, make_box_mesh
from icbs.render import frames_equal
from icbs.world import (OrientedBox, PhysicsEvent, WorldError, WorldState,
                        sat_penetration)

from conftest import box_model, pose_xyz, simple_library


@pytest.fixture
def world(desk_map, desk_library):
    return WorldState(desk_map, desk_library)


def table_pose(library, label, x=0.0, y=0.0, lift=0.0, yaw=0.0):
    model = library.get(label)
    z = fixtures.TABLE_TOP + model.box_half[2] - model.box_center[2] + lift
    return Pose6D(np.array([x, y, z]), rot_z(yaw))


# ---------------------------------------------------------------------------
# oriented-box overlap
# ---------------------------------------------------------------------------

def boxes_intersect_lp(a: OrientedBox, b: OrientedBox) -> bool:
    """Feasibility oracle: the two boxes share a point iff the 12 half-space
    constraints admit a solution."""
    a_ub, b_ub = [], []
    for box in (a, b):
        for i in range(3):
            axis = box.rot[:, i]
            off = float(axis @ box.center)
            a_ub.append(axis)
            b_ub.append(off + box.half[i])
            a_ub.append(-axis)
            b_ub.append(-(off - box.half[i]))
    res = linprog(c=[0, 0, 0], A_ub=np.array(a_ub), b_ub=np.array(b_ub),
                  bounds=[(None, None)] * 3, method="highs")
    return res.status == 0


def random_box(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    pose = Pose6D(rng.uniform(-0.5, 0.5, 3), q)
    return OrientedBox.of(np.zeros(3), rng.uniform(0.05, 0.4, 3), pose)


def test_sat_against_lp_oracle_and_symmetry():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 200:
        a, b = random_box(rng), random_box(rng)
        depth_ab = sat_penetration(a, b)
        depth_ba = sat_penetration(b, a)
        assert depth_ab == pytest.approx(depth_ba, abs=1e-12)
        if abs(depth_ab) < 1e-6:
            continue  # skip numerically touching configurations
        assert (depth_ab > 0) == boxes_intersect_lp(a, b)
        checked += 1


def test_sat_known_penetration_depth():
    a = OrientedBox(np.zeros(3), np.array([0.5, 0.5, 0.5]), np.eye(3))
    b = OrientedBox(np.array([0.9, 0.0, 0.0]), np.array([0.5, 0.5, 0.5]), np.eye(3))
    assert sat_penetration(a, b) == pytest.approx(0.1, abs=1e-12)
    c = OrientedBox(np.array([1.2, 0.0, 0.0]), np.array([0.5, 0.5, 0.5]), np.eye(3))
    assert sat_penetration(a, c) == pytest.approx(-0.2, abs=1e-12)


# ---------------------------------------------------------------------------
# spawn / set_pose / delete
# ---------------------------------------------------------------------------

def test_spawn_resting_no_events(world, desk_library):
    aw, events = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    assert events == []
    assert aw in world.objects


def test_spawn_floating_falls(world, desk_library):
    _, events = world.spawn("carton_red",
                            table_pose(desk_library, "carton_red", lift=0.10))
    assert len(events) == 1 and events[0].kind == "Fall"
    assert np.allclose(events[0].displacement, (0, 0, -0.10), atol=1e-3)


def test_spawn_inside_static_collides(world):
    _, events = world.spawn("carton_red", pose_xyz(0.0, 0.0, 0.3))
    kinds = [e.kind for e in events]
    assert "Collision" in kinds
    partner = [e.partner for e in events if e.kind == "Collision"]
    assert partner == ["static"]


def test_spawn_unknown_label_rejected(world):
    with pytest.raises(WorldError):
        world.spawn("nonexistent", pose_xyz(0, 0, 1))


def test_set_pose_same_pose_no_events(world, desk_library):
    pose = table_pose(desk_library, "carton_red")
    aw, _ = world.spawn("carton_red", pose)
    assert world.set_pose(aw, pose) == []


def test_set_pose_into_other_object_collides(world, desk_library):
    pose_a = table_pose(desk_library, "carton_red", x=-0.2)
    aw_a, _ = world.spawn("carton_red", pose_a)
    aw_b, _ = world.spawn("box_blue", table_pose(desk_library, "box_blue", x=0.2))
    events = world.set_pose(aw_b, table_pose(desk_library, "box_blue", x=-0.2))
    partners = [e.partner for e in events if e.kind == "Collision"]
    assert partners == [aw_a]


def test_set_pose_above_surface_settles(world, desk_library):
    aw, _ = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    events = world.set_pose(aw, table_pose(desk_library, "carton_red", lift=0.05))
    falls = [e for e in events if e.kind == "Fall"]
    assert len(falls) == 1
    assert np.allclose(falls[0].displacement, (0, 0, -0.05), atol=1e-3)


def test_set_pose_unknown_id(world):
    with pytest.raises(WorldError):
        world.set_pose(99, pose_xyz(0, 0, 1))


def test_delete_lifecycle(world, desk_library):
    aw, _ = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    world.delete(aw)
    assert world.objects == {}
    with pytest.raises(WorldError):
        world.delete(aw)


def test_spawn_delete_restores_bitwise_render(world, desk_library):
    world.camera_pose = fixtures.orbit_trajectory(1)[0]
    before = world.snapshot()
    aw, _ = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    mid = world.snapshot()
    assert not frames_equal(before, mid)
    world.delete(aw)
    after = world.snapshot()
    assert frames_equal(before, after)


def test_delete_then_render_absent(world, desk_library):
    world.camera_pose = fixtures.orbit_trajectory(1)[0]
    aw, _ = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    world.delete(aw)
    frame = world.snapshot()
    assert not (frame.mask == aw).any()


# ---------------------------------------------------------------------------
# settle
# ---------------------------------------------------------------------------

def test_settle_resting_none(world, desk_library):
    aw, _ = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    assert world.settle(aw) is None


def test_settle_gap_translates_down(world, desk_library):
    aw, _ = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    world.objects[aw] = (world.objects[aw][0],
                         table_pose(desk_library, "carton_red", lift=0.10))
    event = world.settle(aw)
    assert event.kind == "Fall"
    assert np.allclose(event.displacement, (0, 0, -0.10), atol=1e-9)
    assert world.settle(aw) is None


def test_stacked_boxes_settle_on_intermediate_support(world, desk_library):
    """Support interval oracle: the highest support below the bottom wins."""
    lower = desk_library.get("box_blue")
    upper = desk_library.get("carton_red")
    aw_low, _ = world.spawn("box_blue", table_pose(desk_library, "box_blue"))
    lower_top = fixtures.TABLE_TOP + 2 * lower.box_half[2]
    gap = 0.02
    upper_z = lower_top + gap + upper.box_half[2] - upper.box_center[2]
    aw_up, events = world.spawn("carton_red",
                                Pose6D(np.array([0.0, 0.0, upper_z]),
                                       np.array([1.0, 0, 0, 0])))
    falls = [e for e in events if e.kind == "Fall"]
    assert len(falls) == 1
    # oracle: candidate supports are the table plane and the lower box top;
    # the expected drop is the gap to the higher one
    supports = [fixtures.TABLE_TOP, lower_top]
    bottom = upper_z - upper.box_half[2] + upper.box_center[2]
    want = bottom - max(s for s in supports if s <= bottom + 0.003)
    assert falls[0].displacement[2] == pytest.approx(-want, abs=1e-9)
    assert falls[0].displacement[2] == pytest.approx(-gap, abs=1e-9)
    # upper box now rests on the lower one, not the table
    new_bottom = world.pose_of(aw_up).position[2] - upper.box_half[2] \
        + upper.box_center[2]
    assert new_bottom == pytest.approx(lower_top, abs=1e-9)


def test_settle_without_support_caps_at_drop_limit(desk_map, desk_library):
    world = WorldState(desk_map, desk_library)
    # far off the table: no support region below the footprint
    _, events = world.spawn("carton_red", pose_xyz(5.0, 5.0, 1.0))
    falls = [e for e in events if e.kind == "Fall"]
    assert len(falls) == 1
    assert falls[0].displacement[2] == pytest.approx(-2.0)


def test_settle_never_leaves_penetration(world, desk_library):
    rng = np.random.default_rng(3)
    for _ in range(20):
        label = rng.choice(["carton_red", "box_blue", "cola_classic"])
        pose = table_pose(desk_library, str(label), x=float(rng.uniform(-0.4, 0.4)),
                          y=float(rng.uniform(-0.2, 0.2)),
                          lift=float(rng.uniform(0.0, 0.3)))
        aw, _ = world.spawn(str(label), pose)
        model, settled = world.objects[aw]
        bottom = settled.position[2] - model.box_half[2] + model.box_center[2]
        assert bottom >= fixtures.TABLE_TOP - world.config.penetration_tol
        world.delete(aw)


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------

def test_drain_events_empty_and_order(world, desk_library):
    assert world.drain_events() == []
    world.spawn("carton_red", table_pose(desk_library, "carton_red", lift=0.10))
    events = world.drain_events()
    assert [e.kind for e in events] == ["Fall"]
    assert world.drain_events() == []


def test_overlapping_spawn_two_collisions_pairwise_oracle(world, desk_library):
    """A spawn overlapping two neighbors reports one collision per partner."""
    pose_a = table_pose(desk_library, "carton_red", x=-0.045)
    pose_b = table_pose(desk_library, "carton_red", x=0.045)
    aw_a, _ = world.spawn("carton_red", pose_a)
    aw_b, _ = world.spawn("carton_red", pose_b)
    world.drain_events()
    aw_c, events = world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    collisions = [e for e in events if e.kind == "Collision"]
    # pairwise box-overlap oracle
    model = desk_library.get("carton_red")
    box_c = OrientedBox.of(model.box_center, model.box_half,
                           table_pose(desk_library, "carton_red"))
    expected = []
    for aw, pose in ((aw_a, pose_a), (aw_b, pose_b)):
        other = OrientedBox.of(model.box_center, model.box_half, pose)
        if sat_penetration(box_c, other) > world.config.penetration_tol:
            expected.append(aw)
    assert sorted(e.partner for e in collisions) == sorted(expected)
    assert len(collisions) == 2


def test_event_log_append_only_ordered_ticks(world, desk_library):
    world.spawn("carton_red", table_pose(desk_library, "carton_red", lift=0.1))
    world.spawn("box_blue", pose_xyz(0, 0, 0.3))
    ticks = [e.tick for e in world.event_log]
    assert ticks == sorted(ticks)
    assert len(world.event_log) >= 2


def test_tick_strictly_increasing(world, desk_library):
    t0 = world.tick
    world.spawn("carton_red", table_pose(desk_library, "carton_red"))
    t1 = world.tick
    world.spawn("box_blue", table_pose(desk_library, "box_blue", x=0.3))
    assert t0 < t1 < world.tick


def test_event_serialization():
    ev = PhysicsEvent("Fall", 3, 7, displacement=(0.0, 0.0, -0.1))
    assert ev.to_dict() == {"kind": "Fall", "subject": 3, "tick": 7,
                            "displacement": [0.0, 0.0, -0.1]}
    ev2 = PhysicsEvent("Collision", 4, 8, partner="static")
    assert ev2.to_dict() == {"kind": "Collision", "subject": 4, "tick": 8,
                             "partner": "static"}
