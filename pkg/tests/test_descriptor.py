from __future__ import annotations

import math

import numpy as np
import pytest

from echonav.acoustics import (
    CHUNK_SAMPLES,
    RenderState,
    binaural_rir,
    reference_probe,
    render_step,
    synth_source,
)
from echonav.descriptor import (
    Accddoa,
    DistanceCalibration,
    EpisodicBuffer,
    BufferRecord,
    GoalTracker,
    TrackerMeasurement,
    build_category_templates,
    classify_category,
    estimate_azimuth,
    estimate_distance,
    oracle_accddoa,
    propagate_estimate,
    spectrum_of,
)
from echonav.geometry import TURN_INCREMENT, Action, Pose, ScenePlan, relative_goal, step_pose

N_CAT = 8


def active_chunk(cat: int, var: int, seed: int) -> np.ndarray:
    s = synth_source(cat, var, 2.0, seed=seed)
    for i in range(s.n_samples // CHUNK_SAMPLES):
        seg = slice(i * CHUNK_SAMPLES, (i + 1) * CHUNK_SAMPLES)
        if s.activity_mask[seg].mean() == 1.0:
            return s.waveform[seg]
    return s.waveform[:CHUNK_SAMPLES]


def render_frame(scene: ScenePlan, sig: np.ndarray, src: tuple[float, float], listener: Pose, order: int = 0) -> np.ndarray:
    rir = binaural_rir(scene, src, listener, max_order=order)
    frame, _ = render_step(RenderState.empty(), sig, rir)
    return frame


@pytest.fixture(scope="module")
def open_scene() -> ScenePlan:
    return ScenePlan(id="open20", width=20.0, height=20.0, wall_absorption=0.5)


@pytest.fixture(scope="module")
def calibration(open_scene) -> DistanceCalibration:
    ref = render_frame(open_scene, reference_probe(), (11.0, 10.0), Pose(10.0, 10.0, 0.0))
    return DistanceCalibration(ref_energy=float(np.mean(ref**2)))


# ----------------------------------------------------------------------
# Accddoa and oracle labels


def test_accddoa_invariants_and_compact_roundtrip():
    a = Accddoa.single(N_CAT, 3, 0.7, 0.4)
    a.check_invariants()
    b = Accddoa.from_compact(a.to_compact(), N_CAT)
    assert np.allclose(a.activity, b.activity)
    assert np.allclose(a.doa, b.doa)
    assert np.allclose(a.distance, b.distance)
    inactive = Accddoa.inactive(N_CAT)
    inactive.check_invariants()
    assert inactive.to_compact() is None
    bad = Accddoa.single(N_CAT, 0, 0.0, 0.5)
    bad.doa[0] *= 2.0
    with pytest.raises(ValueError):
        bad.check_invariants()


def test_oracle_label_dead_ahead():
    label = oracle_accddoa(Pose(0.0, 0.0, 0.0), (10.0, 0.0), 2, N_CAT, goal_active=True)
    assert label.activity[2] == 1.0
    assert np.allclose(label.doa[2], [1.0, 0.0, 0.0])
    assert label.distance[2] == pytest.approx(0.5)


def test_oracle_label_left_at_scale():
    label = oracle_accddoa(Pose(0.0, 0.0, 0.0), (0.0, 20.0), 0, N_CAT, goal_active=True)
    assert np.allclose(label.doa[0], [0.0, 1.0, 0.0], atol=1e-12)
    assert label.distance[0] == pytest.approx(1.0)


def test_oracle1_silent_after_sound_ends():
    label = oracle_accddoa(Pose(0.0, 0.0, 0.0), (5.0, 0.0), 1, N_CAT, goal_active=False, mode="oracle1")
    assert not label.activity.any()
    label2 = oracle_accddoa(Pose(0.0, 0.0, 0.0), (5.0, 0.0), 1, N_CAT, goal_active=False, mode="oracle2")
    assert label2.activity[1] == 1.0


# ----------------------------------------------------------------------
# azimuth estimation


def test_azimuth_identical_channels():
    sig = np.random.default_rng(0).normal(size=CHUNK_SAMPLES)
    az, conf = estimate_azimuth(np.stack([sig, sig]))
    assert az == 0.0
    assert conf > 0.5


def test_azimuth_zero_frame():
    az, conf = estimate_azimuth(np.zeros((2, CHUNK_SAMPLES)))
    assert az == 0.0 and conf == 0.0


def test_azimuth_render_sweep(open_scene):
    rng = np.random.default_rng(1)
    errs = []
    for i in range(60):
        sig = active_chunk(int(rng.integers(0, N_CAT)), int(rng.integers(0, 6)), i)
        az = rng.uniform(-math.pi / 2, math.pi / 2)
        dist = rng.uniform(1.0, 8.0)
        heading = rng.uniform(-math.pi, math.pi)
        goal = (10.0 + dist * math.cos(heading + az), 10.0 + dist * math.sin(heading + az))
        est, _ = estimate_azimuth(render_frame(open_scene, sig, goal, Pose(10.0, 10.0, heading)))
        errs.append(abs(math.degrees(est - az)))
    assert np.mean(errs) <= 10.0


def test_azimuth_saturates_at_90(open_scene):
    sig = active_chunk(2, 0, 3)
    est, _ = estimate_azimuth(render_frame(open_scene, sig, (10.0, 13.0), Pose(10.0, 10.0, 0.0)))
    # arcsin is steep at the saturation edge: sub-sample ITD bias maps to ~10 deg
    assert math.degrees(est) == pytest.approx(90.0, abs=12.0)


# ----------------------------------------------------------------------
# distance estimation


def test_distance_calibration_identity(calibration, open_scene):
    frame = render_frame(open_scene, reference_probe(), (11.0, 10.0), Pose(10.0, 10.0, 0.0))
    assert estimate_distance(frame, calibration) == pytest.approx(1.0, abs=1e-9)


def test_distance_inverse_square(calibration):
    frame = render_frame(
        ScenePlan(id="o", width=20.0, height=20.0, wall_absorption=0.5),
        reference_probe(),
        (11.0, 10.0),
        Pose(10.0, 10.0, 0.0),
    )
    quarter = frame / 2.0  # energy / 4
    assert estimate_distance(quarter, calibration) == pytest.approx(2.0, abs=1e-9)


def test_distance_zero_frame(calibration):
    assert estimate_distance(np.zeros((2, CHUNK_SAMPLES)), calibration) is None


def test_distance_render_sweep(open_scene, calibration):
    rng = np.random.default_rng(2)
    rel = []
    for i in range(60):
        sig = active_chunk(int(rng.integers(0, N_CAT)), int(rng.integers(0, 6)), 100 + i)
        az = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(1.0, 15.0)
        heading = rng.uniform(-math.pi, math.pi)
        goal = (10.0 + dist * math.cos(heading + az), 10.0 + dist * math.sin(heading + az))
        if not (0.5 < goal[0] < 19.5 and 0.5 < goal[1] < 19.5):
            continue
        d = estimate_distance(render_frame(open_scene, sig, goal, Pose(10.0, 10.0, heading)), calibration)
        rel.append(abs(d - dist) / dist)
    assert np.median(rel) <= 0.25


# ----------------------------------------------------------------------
# category classification


@pytest.fixture(scope="module")
def templates() -> np.ndarray:
    return build_category_templates(list(range(N_CAT)), [0, 1, 2], seed=0)


def test_classify_train_variant_self_match(templates):
    for c in range(N_CAT):
        spec = spectrum_of(synth_source(c, 1, 2.0, seed=0).waveform)
        assert int(np.argmax(classify_category(spec, templates))) == c


def test_classify_unheard_variant_top2(templates):
    rng = np.random.default_rng(3)
    hits = 0
    trials = 100
    for i in range(trials):
        c = int(rng.integers(0, N_CAT))
        spec = spectrum_of(synth_source(c, int(rng.integers(10, 20)), 2.0, seed=500 + i).waveform)
        scores = classify_category(spec, templates)
        if c in np.argsort(scores)[-2:]:
            hits += 1
    assert hits / trials >= 0.8


def test_classify_silence_uniform(templates):
    scores = classify_category(np.zeros(257), templates)
    assert np.allclose(scores, 1.0 / N_CAT)


# ----------------------------------------------------------------------
# propagation


def test_propagate_collinear_forward():
    az, d = propagate_estimate(0.0, 1.0, Action.MOVE_FORWARD, 0.25)
    assert az == 0.0
    assert d == pytest.approx(0.75, abs=1e-15)


def test_propagate_turn_left():
    az, d = propagate_estimate(math.radians(30.0), 2.0, Action.TURN_LEFT)
    assert az == pytest.approx(math.radians(15.0), abs=1e-9)
    assert d == 2.0


def test_propagate_lateral_forward():
    az, d = propagate_estimate(math.pi / 2, 1.0, Action.MOVE_FORWARD, 0.25)
    assert d == pytest.approx(math.sqrt(1.0625), abs=1e-12)
    assert math.degrees(az) == pytest.approx(104.0362, abs=1e-3)


def test_propagate_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        propagate_estimate(0.0, 0.0, Action.MOVE_FORWARD, 0.25)


def test_propagation_matches_relative_goal_exactly(cluttered_room):
    # dead-reckoned estimate vs ground-truth geometry along random
    # collision-free action sequences
    rng = np.random.default_rng(4)
    scene = cluttered_room
    n_sequences = 0
    while n_sequences < 50:
        x, y = rng.uniform(0, scene.width), rng.uniform(0, scene.height)
        if not scene.is_free(x, y):
            continue
        pose = Pose(x, y, int(rng.integers(-11, 13)) * TURN_INCREMENT)
        gx, gy = rng.uniform(0, scene.width), rng.uniform(0, scene.height)
        if not scene.is_free(gx, gy):
            continue
        az, dist = relative_goal(pose, (gx, gy))
        for _ in range(60):
            action = [Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT][rng.integers(0, 3)]
            new_pose, moved = step_pose(scene, pose, action)
            if action is Action.MOVE_FORWARD and moved < 0.25:
                action = Action.TURN_LEFT  # keep the sequence collision-free
                new_pose, moved = step_pose(scene, pose, action)
            pose = new_pose
            az, dist = propagate_estimate(az, dist, action, moved)
            true_az, true_dist = relative_goal(pose, (gx, gy))
            assert abs(dist - true_dist) < 1e-9
            assert abs(math.remainder(az - true_az, math.tau)) < 1e-9
        n_sequences += 1


# ----------------------------------------------------------------------
# episodic buffer and tracker


def test_buffer_capacity_and_order():
    buf = EpisodicBuffer(capacity=4)
    for i in range(10):
        buf.append(
            BufferRecord(
                azimuth=float(i),
                distance_norm=0.1,
                active=1.0,
                category_scores=np.zeros(N_CAT),
                norm_pose=np.zeros(5),
                prev_action=None,
            )
        )
    assert len(buf) == 4
    assert [r.azimuth for r in buf] == [6.0, 7.0, 8.0, 9.0]
    mat = buf.window_matrix(8, N_CAT)
    assert mat.shape == (8, 3 + N_CAT + 5 + 4)
    assert not mat[:4].any()  # left zero-padding


def test_tracker_silent_episode_stays_inactive():
    tracker = GoalTracker(N_CAT)
    for _ in range(20):
        out = tracker.update(frame=np.zeros((2, CHUNK_SAMPLES)), prev_action=Action.MOVE_FORWARD, moved=0.25)
        assert not out.activity.any()
    assert not tracker.ever_active


def test_tracker_propagates_exactly_through_silence(open_scene, calibration, templates):
    tracker = GoalTracker(N_CAT, templates=templates, calibration=calibration)
    sig = active_chunk(1, 0, 7)
    listener = Pose(10.0, 10.0, 0.0)
    rir = binaural_rir(open_scene, (14.0, 12.0), listener, max_order=0)
    state = RenderState.empty()
    for _ in range(4):
        frame, state = render_step(state, sig, rir)
        tracker.update(frame=frame, prev_action=None, moved=0.0)
    # two silent frames drain the residual tail before the turns
    for _ in range(2):
        frame, state = render_step(state, np.zeros(CHUNK_SAMPLES), rir)
        tracker.update(frame=frame, prev_action=Action.STOP, moved=0.0)
    az_before = tracker.azimuth
    out1 = tracker.update(frame=np.zeros((2, CHUNK_SAMPLES)), prev_action=Action.TURN_LEFT)
    out2 = tracker.update(frame=np.zeros((2, CHUNK_SAMPLES)), prev_action=Action.TURN_LEFT)
    assert tracker.azimuth == pytest.approx(az_before - 2 * TURN_INCREMENT, abs=1e-12)
    assert not out1.activity.any() and not out2.activity.any()  # VAD-gated output


def test_tracker_oracle_measurements_reach_fixed_point(cluttered_room):
    rng = np.random.default_rng(8)
    scene = cluttered_room
    tracker = GoalTracker(N_CAT)
    pose = Pose(1.0, 1.0, 0.0)
    goal = (10.0, 7.0)
    action, moved = None, 0.0
    for t in range(80):
        az_true, dist_true = relative_goal(pose, goal)
        meas = TrackerMeasurement(azimuth=az_true, distance_m=dist_true, confidence=1.0, category=3)
        out = tracker.update(measurement=meas, prev_action=action, moved=moved)
        out.check_invariants()
        label = oracle_accddoa(pose, goal, 3, N_CAT, goal_active=True)
        assert np.max(np.abs(out.to_vector() - label.to_vector())) < 1e-9
        action = [Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT][rng.integers(0, 3)]
        pose, moved = step_pose(scene, pose, action)


def test_tracker_translation_invariance(open_scene, calibration, templates):
    # identical relative geometry at two world offsets yields identical estimates
    outs = []
    for ox, oy in ((4.0, 4.0), (9.0, 11.0)):
        tracker = GoalTracker(N_CAT, templates=templates, calibration=calibration)
        sig = active_chunk(0, 0, 9)
        scene = ScenePlan(id="big", width=40.0, height=40.0, wall_absorption=0.5)
        listener = Pose(ox, oy, 0.0)
        rir = binaural_rir(
            ScenePlan(id="huge", width=400.0, height=400.0, wall_absorption=0.99, grid_resolution=1.0),
            (ox + 3.0, oy + 1.0),
            Pose(ox, oy, 0.0),
            max_order=0,
        )
        frame, _ = render_step(RenderState.empty(), sig, rir)
        out = tracker.update(frame=frame, prev_action=None)
        outs.append((tracker.azimuth, tracker.distance_m))
    assert outs[0][0] == pytest.approx(outs[1][0], abs=1e-6)
    assert outs[0][1] == pytest.approx(outs[1][1], rel=1e-4)
