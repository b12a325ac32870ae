from __future__ import annotations

import heapq
import math

import numpy as np
import pytest

from echonav.geometry import (
    AGENT_RADIUS,
    FORWARD_STEP,
    OCTILE_FACTOR,
    TURN_INCREMENT,
    Action,
    Pose,
    Rect,
    ScenePlan,
    geodesic_distance,
    line_of_sight,
    path_length,
    range_scan,
    relative_goal,
    shortest_path,
    step_pose,
    wrap_angle,
)


def grid_dijkstra_oracle(scene: ScenePlan, a: tuple[float, float], b: tuple[float, float]) -> float:
    """Independent uniform-cost search on the same occupancy grid (pure Python)."""
    mask = scene.free_mask()
    ny, nx = scene.grid_shape
    res = scene.grid_resolution

    def snap(p):
        iy, ix = scene.cell_of(*p)
        if mask[iy, ix]:
            return iy, ix
        best, bd = None, math.inf
        for jy in range(ny):
            for jx in range(nx):
                if mask[jy, jx]:
                    cx, cy = scene.cell_center(jy, jx)
                    d = (cx - p[0]) ** 2 + (cy - p[1]) ** 2
                    if d < bd:
                        best, bd = (jy, jx), d
        return best

    start, goal = snap(a), snap(b)
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, cell = heapq.heappop(heap)
        if cell == goal:
            return d
        if d > dist.get(cell, math.inf):
            continue
        cy, cx = cell
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                ncell = (cy + dy, cx + dx)
                if not (0 <= ncell[0] < ny and 0 <= ncell[1] < nx) or not mask[ncell]:
                    continue
                nd = d + (res * math.sqrt(2) if dy and dx else res)
                if nd < dist.get(ncell, math.inf):
                    dist[ncell] = nd
                    heapq.heappush(heap, (nd, ncell))
    return math.inf


# ----------------------------------------------------------------------
# step_pose


def test_turn_left_adds_15_degrees(empty_room):
    pose = Pose(1.0, 1.0, 0.0)
    new, moved = step_pose(empty_room, pose, Action.TURN_LEFT)
    assert new.heading == TURN_INCREMENT
    assert new.heading == pytest.approx(math.pi / 12, abs=1e-9)
    assert moved == 0.0
    assert (new.x, new.y) == (1.0, 1.0)


def test_forward_in_open_space(empty_room):
    new, moved = step_pose(empty_room, Pose(1.0, 1.0, 0.0), Action.MOVE_FORWARD)
    assert moved == pytest.approx(FORWARD_STEP, abs=1e-12)
    assert new.x == pytest.approx(1.25, abs=1e-12)
    assert new.y == 1.0


def test_forward_blocked_at_contact(cluttered_room):
    # agent disk already overlapping the inflated obstacle: center 0.05 m from
    # the obstacle face, facing it
    pose = Pose(2.0 - 0.05, 2.5, 0.0)
    new, moved = step_pose(cluttered_room, pose, Action.MOVE_FORWARD)
    assert moved == 0.0
    assert new == pose


def test_forward_truncates_at_wall(empty_room):
    # wall 0.2 m beyond the disk edge: only 0.2 m of travel is possible
    pose = Pose(10.0 - AGENT_RADIUS - 0.2, 5.0, 0.0)
    new, moved = step_pose(empty_room, pose, Action.MOVE_FORWARD)
    assert moved == pytest.approx(0.2, abs=1e-8)
    assert empty_room.clearance(new.x, new.y) >= AGENT_RADIUS - 1e-7


def test_stop_leaves_pose_unchanged(empty_room):
    pose = Pose(3.0, 4.0, 1.0)
    new, moved = step_pose(empty_room, pose, Action.STOP)
    assert new == pose and moved == 0.0


def test_step_pose_rejects_pose_in_obstacle(cluttered_room):
    with pytest.raises(ValueError):
        step_pose(cluttered_room, Pose(2.5, 2.5, 0.0), Action.MOVE_FORWARD)


def test_turns_are_exact_inverses(cluttered_room):
    rng = np.random.default_rng(7)
    for _ in range(500):
        k = rng.integers(-11, 13)
        pose = Pose(1.0, 1.0, k * TURN_INCREMENT)
        left, _ = step_pose(cluttered_room, pose, Action.TURN_LEFT)
        back, _ = step_pose(cluttered_room, left, Action.TURN_RIGHT)
        assert back.heading == pose.heading  # bit-for-bit
        right, _ = step_pose(cluttered_room, pose, Action.TURN_RIGHT)
        back2, _ = step_pose(cluttered_room, right, Action.TURN_LEFT)
        assert back2.heading == pose.heading


def test_random_steps_never_penetrate(cluttered_room):
    rng = np.random.default_rng(42)
    scene = cluttered_room
    actions = list(Action)
    checked = 0
    while checked < 10_000:
        x = rng.uniform(0, scene.width)
        y = rng.uniform(0, scene.height)
        if not scene.is_free(x, y):
            continue
        pose = Pose(x, y, int(rng.integers(-11, 13)) * TURN_INCREMENT)
        for _ in range(4):
            pose, _ = step_pose(scene, pose, actions[rng.integers(0, 4)])
            assert scene.clearance(pose.x, pose.y) >= AGENT_RADIUS - 1e-7
            assert -math.pi < pose.heading <= math.pi
            checked += 1


# ----------------------------------------------------------------------
# relative_goal


def test_relative_goal_dead_ahead():
    az, d = relative_goal(Pose(0.0, 0.0, 0.0), (1.0, 0.0))
    assert az == 0.0
    assert d == 1.0


def test_relative_goal_diagonal():
    az, d = relative_goal(Pose(0.0, 0.0, 0.0), (1.0, 1.0))
    assert az == pytest.approx(math.pi / 4, abs=1e-12)
    assert d == pytest.approx(math.sqrt(2), abs=1e-12)


def test_turn_left_decreases_azimuth(empty_room):
    rng = np.random.default_rng(3)
    for _ in range(50):
        pose = Pose(rng.uniform(1, 9), rng.uniform(1, 9), int(rng.integers(-11, 13)) * TURN_INCREMENT)
        goal = (rng.uniform(1, 9), rng.uniform(1, 9))
        az0, _ = relative_goal(pose, goal)
        turned, _ = step_pose(empty_room, pose, Action.TURN_LEFT)
        az1, _ = relative_goal(turned, goal)
        assert wrap_angle(az0 - az1) == pytest.approx(TURN_INCREMENT, abs=1e-12)


# ----------------------------------------------------------------------
# geodesic_distance


def test_geodesic_identity(empty_room):
    assert geodesic_distance(empty_room, (2.0, 2.0), (2.0, 2.0)) == 0.0


def test_geodesic_octile_bounds(empty_room):
    d = geodesic_distance(empty_room, (1.0, 1.0), (4.0, 5.0))
    assert 5.0 <= d <= 1.09 * 5.0


def test_geodesic_matches_bfs_oracle(l_corridor):
    # coarse grid so the pure-Python oracle stays fast
    scene = ScenePlan(
        id="l-coarse",
        width=10.0,
        height=10.0,
        obstacles=list(l_corridor.obstacles),
        wall_absorption=0.5,
        grid_resolution=0.25,
    )
    pairs = [((1.0, 2.0), (1.0, 8.0)), ((2.0, 1.0), (3.0, 9.0)), ((5.0, 3.0), (5.0, 7.0))]
    for a, b in pairs:
        assert geodesic_distance(scene, a, b) == pytest.approx(grid_dijkstra_oracle(scene, a, b), abs=1e-9)


def test_geodesic_rejects_out_of_bounds(empty_room):
    with pytest.raises(ValueError):
        geodesic_distance(empty_room, (-1.0, 2.0), (2.0, 2.0))


def test_geodesic_symmetry_and_triangle(cluttered_room):
    rng = np.random.default_rng(11)
    scene = cluttered_room
    diag = scene.grid_resolution * math.sqrt(2)
    pts = []
    while len(pts) < 9:
        p = (rng.uniform(0, scene.width), rng.uniform(0, scene.height))
        if scene.is_free(*p):
            pts.append(p)
    for i in range(0, 9, 3):
        a, b, c = pts[i], pts[i + 1], pts[i + 2]
        dab = geodesic_distance(scene, a, b)
        assert dab == pytest.approx(geodesic_distance(scene, b, a), abs=1e-9)
        assert dab <= geodesic_distance(scene, a, c) + geodesic_distance(scene, c, b) + diag


def test_geodesic_lower_bound_vs_euclidean(cluttered_room):
    rng = np.random.default_rng(13)
    scene = cluttered_room
    for _ in range(30):
        a = (rng.uniform(0, scene.width), rng.uniform(0, scene.height))
        b = (rng.uniform(0, scene.width), rng.uniform(0, scene.height))
        if not (scene.is_free(*a) and scene.is_free(*b)):
            continue
        d = geodesic_distance(scene, a, b)
        assert d >= math.hypot(a[0] - b[0], a[1] - b[1]) - 2 * scene.grid_resolution


# ----------------------------------------------------------------------
# shortest_path


def test_path_identity(empty_room):
    assert shortest_path(empty_room, (2.0, 2.0), (2.0, 2.0)) == [(2.0, 2.0)]


def test_path_straight_in_empty_room(empty_room):
    path = shortest_path(empty_room, (1.0, 1.0), (8.0, 6.0))
    assert path == [(1.0, 1.0), (8.0, 6.0)]


def test_path_corner_near_wall_end(l_corridor):
    a, b = (1.0, 2.0), (1.0, 8.0)
    path = shortest_path(l_corridor, a, b)
    assert len(path) >= 3
    # the wall spans x in [0.05, 6.55] at y in [4.5, 5.5]; the detour must
    # round its right end
    corner_pts = [(6.55, 4.5), (6.55, 5.5)]
    assert any(
        min(math.hypot(px - cx, py - cy) for cx, cy in corner_pts) < 0.5 for px, py in path[1:-1]
    )
    # every leg is traversable
    for p, q in zip(path, path[1:]):
        assert line_of_sight(l_corridor, p, q)


def test_path_length_vs_geodesic(cluttered_room):
    rng = np.random.default_rng(5)
    scene = cluttered_room
    for _ in range(20):
        a = (rng.uniform(0, scene.width), rng.uniform(0, scene.height))
        b = (rng.uniform(0, scene.width), rng.uniform(0, scene.height))
        if not (scene.is_free(*a) and scene.is_free(*b)):
            continue
        geo = geodesic_distance(scene, a, b)
        plen = path_length(shortest_path(scene, a, b))
        # a line-of-sight-shortcut path can undercut the octile geodesic by
        # the octile factor, never more
        assert plen >= geo / OCTILE_FACTOR - 2 * scene.grid_resolution
        assert plen <= geo + 2 * scene.grid_resolution


# ----------------------------------------------------------------------
# range_scan


def test_scan_center_ray_in_empty_room(empty_room):
    ranges = range_scan(empty_room, Pose(5.0, 5.0, 0.0))
    mid = 0.5 * (ranges[15] + ranges[16])
    assert mid == pytest.approx(5.0, abs=0.02)
    assert ranges.shape == (32,)


def test_scan_wall_ahead_bounded():
    scene = ScenePlan(id="wall", width=10.0, height=10.0, obstacles=[Rect(5.0, 0.5, 0.5, 9.0)], wall_absorption=0.5)
    ranges = range_scan(scene, Pose(4.0, 5.0, 0.0))
    assert np.all(ranges <= 1.0 / math.cos(math.pi / 4) + 1e-9)
    assert np.all(ranges > 0)


def test_scan_caps_at_max_range():
    scene = ScenePlan(id="big", width=40.0, height=40.0, wall_absorption=0.5)
    ranges = range_scan(scene, Pose(20.0, 20.0, 0.0))
    assert np.all(ranges == 10.0)


def test_scan_ordering_right_to_left(empty_room):
    # agent near the south wall facing +x: rightmost rays (-45 deg) hit the
    # south wall sooner than leftmost rays
    ranges = range_scan(empty_room, Pose(5.0, 1.0, 0.0))
    assert ranges[0] < ranges[-1]


# ----------------------------------------------------------------------
# scene plan validation and io


def test_scene_rejects_outside_obstacle():
    with pytest.raises(ValueError):
        ScenePlan(id="bad", width=5.0, height=5.0, obstacles=[Rect(4.0, 1.0, 2.0, 1.0)], wall_absorption=0.5)


def test_scene_rejects_bad_absorption():
    with pytest.raises(ValueError):
        ScenePlan(id="bad", width=5.0, height=5.0, wall_absorption=1.0)


def test_scene_json_roundtrip(tmp_path, cluttered_room):
    p = tmp_path / "scene.json"
    cluttered_room.save(p)
    loaded = ScenePlan.load(p)
    assert loaded.to_dict() == cluttered_room.to_dict()


def test_connectivity_check(l_corridor):
    assert l_corridor.free_space_connected()
    sealed = ScenePlan(
        id="sealed",
        width=10.0,
        height=10.0,
        obstacles=[Rect(0.05, 4.5, 9.9, 1.0)],
        wall_absorption=0.5,
    )
    assert not sealed.free_space_connected()
