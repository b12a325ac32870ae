"""Scripted navigation policies: Random, Oracle1, Oracle2, and Tracker.

All agents map observations (plus, for the oracles, ground-truth ACCDDOA
labels) to discrete actions. Oracle1 and Oracle2 share one greedy controller
and differ only in label availability; Oracle1 carries its last label through
silence by exact self-motion propagation. The Tracker runs the same
controller on its audio-driven tracker estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .descriptor import (
    DISTANCE_SCALE,
    Accddoa,
    DistanceCalibration,
    GoalTracker,
    propagate_estimate,
)
from .geometry import TURN_INCREMENT, Action
from .simulation import NormalizationConfig, ObservationBundle, normalize_pose

STOP_THRESHOLD = 0.9           # meters; inside the 1.0 m success radius
ALIGN_TOLERANCE = TURN_INCREMENT / 2
ESCAPE_CLEAR_RANGE = 0.6       # central scan rays must exceed this to leave escape
ESCAPE_FORWARD_STEPS = 4
EXPLORE_PROBS = (0.7, 0.15, 0.15)  # forward / left / right

_ACTIONS = (Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT, Action.STOP)


@dataclass
class AgentConfig:
    kind: str = "tracker"  # random | oracle1 | oracle2 | tracker
    stop_threshold: float = STOP_THRESHOLD
    seed: int = 0
    action_distribution: dict[str, float] | None = None  # random agent only

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "stop_threshold": self.stop_threshold,
            "seed": self.seed,
            "action_distribution": self.action_distribution,
        }


class _MotionMonitor:
    """Detects zero-movement forwards from consecutive relative poses."""

    def __init__(self) -> None:
        self._last_xy: tuple[float, float] | None = None
        self.moved = 0.0

    def observe(self, obs: ObservationBundle) -> float:
        xy = (obs.pose.x, obs.pose.y)
        self.moved = math.dist(xy, self._last_xy) if self._last_xy is not None else 0.0
        self._last_xy = xy
        return self.moved


class _GreedyController:
    """Turn toward the DOA, advance, stop inside the threshold; stateful
    obstacle escape.

    Two blocked forwards trigger a turn toward the freer scan half until the
    center clears, then a forward burst. The escape direction stays sticky
    until the goal-distance estimate actually improves: re-picking a side at
    every encounter makes the agent shuttle in front of a wide obstacle
    (the freer-looking half flips between the shuttle endpoints) instead of
    committing around one end.
    """

    def __init__(self, stop_threshold: float) -> None:
        self.stop_threshold = stop_threshold
        self._blocked = 0
        self._escape_turn: Action | None = None
        self._escape_forward = 0
        self._last_dir: Action | None = None
        self._dir_anchor_dist: float | None = None  # goal distance when the side was picked
        self._moved_since_trigger = True
        self._required_turns = 1
        self._turns_done = 0

    def note_motion(self, prev_action: Action | None, moved: float) -> None:
        if prev_action is not Action.MOVE_FORWARD:
            return
        if moved < 0.02:  # contact creep does not count as progress
            self._blocked += 2 if self._escape_forward > 0 else 1
        else:
            self._blocked = 0
            self._moved_since_trigger = True
            self._required_turns = 1
            if self._escape_forward > 0:
                self._escape_forward -= 1

    def escape_action(self, obs: ObservationBundle, goal_dist: float) -> Action | None:
        scan = obs.range_scan
        if self._blocked >= 2 and self._escape_turn is None:
            made_progress = self._dir_anchor_dist is not None and goal_dist < self._dir_anchor_dist - 0.75
            if self._last_dir is not None and not made_progress:
                self._escape_turn = self._last_dir
                if not self._moved_since_trigger:
                    # the last dash failed on the spot: the scan sees past a
                    # corner the agent disk still clips, so demand extra turns
                    self._required_turns = min(self._required_turns + 2, 12)
            else:
                # scan is ordered right (-45 deg) to left (+45 deg)
                left_room = float(np.mean(scan[16:]))
                right_room = float(np.mean(scan[:16]))
                self._escape_turn = Action.TURN_LEFT if left_room >= right_room else Action.TURN_RIGHT
                self._required_turns = 1
                self._dir_anchor_dist = goal_dist
            self._last_dir = self._escape_turn
            self._moved_since_trigger = False
            self._blocked = 0
            self._escape_forward = 0
            self._turns_done = 0
        if self._escape_turn is not None:
            if self._turns_done >= self._required_turns and float(np.min(scan[12:20])) >= ESCAPE_CLEAR_RANGE:
                self._escape_turn = None
                self._escape_forward = ESCAPE_FORWARD_STEPS
            else:
                self._turns_done += 1
                return self._escape_turn
        if self._escape_forward > 0:
            return Action.MOVE_FORWARD
        return None

    def decide(self, azimuth: float, distance_m: float, obs: ObservationBundle) -> Action:
        if distance_m <= self.stop_threshold:
            return Action.STOP
        escape = self.escape_action(obs, distance_m)
        if escape is not None:
            return escape
        if abs(azimuth) >= ALIGN_TOLERANCE - 1e-12:
            return Action.TURN_LEFT if azimuth > 0 else Action.TURN_RIGHT
        return Action.MOVE_FORWARD


class _ExplorationWalk:
    """Seeded forward-biased wander used before any goal information exists."""

    def __init__(self, seed: int) -> None:
        self._rng = np.random.default_rng([101, seed])
        self._turn: Action | None = None

    def decide(self, obs: ObservationBundle, blocked: bool) -> Action:
        scan = obs.range_scan
        if blocked or float(np.min(scan[12:20])) < 0.4:
            if self._turn is None:
                left = float(np.mean(scan[16:]))
                right = float(np.mean(scan[:16]))
                self._turn = Action.TURN_LEFT if left >= right else Action.TURN_RIGHT
            if float(np.min(scan[12:20])) < ESCAPE_CLEAR_RANGE:
                return self._turn
        self._turn = None
        roll = self._rng.random()
        if roll < EXPLORE_PROBS[0]:
            return Action.MOVE_FORWARD
        return Action.TURN_LEFT if roll < EXPLORE_PROBS[0] + EXPLORE_PROBS[1] else Action.TURN_RIGHT


class Agent:
    """Base: act() consumes an observation and an oracle label (oracles only)."""

    def act(self, obs: ObservationBundle, label: Accddoa | None = None) -> Action:
        raise NotImplementedError

    @property
    def estimate(self) -> Accddoa | None:
        """Per-step goal estimate recorded into the trace, if the agent forms one."""
        return None


class RandomAgent(Agent):
    def __init__(self, config: AgentConfig) -> None:
        dist = config.action_distribution or {a.value: 0.25 for a in _ACTIONS}
        probs = np.array([dist.get(a.value, 0.0) for a in _ACTIONS], dtype=float)
        if probs.sum() <= 0:
            raise ValueError("random agent action distribution must have positive mass")
        self._probs = probs / probs.sum()
        self._rng = np.random.default_rng([103, config.seed])

    def act(self, obs: ObservationBundle, label: Accddoa | None = None) -> Action:
        return _ACTIONS[int(self._rng.choice(len(_ACTIONS), p=self._probs))]


class OracleAgent(Agent):
    """Consumes ground-truth labels (oracle1: sounding period only; oracle2:
    whole episode) and dead-reckons through gaps."""

    def __init__(self, config: AgentConfig, n_categories: int) -> None:
        self.n_categories = n_categories
        self._controller = _GreedyController(config.stop_threshold)
        self._walk = _ExplorationWalk(config.seed)
        self._monitor = _MotionMonitor()
        self._azimuth: float | None = None
        self._distance: float | None = None
        self._consumed: Accddoa | None = None

    def act(self, obs: ObservationBundle, label: Accddoa | None = None) -> Action:
        moved = self._monitor.observe(obs)
        self._controller.note_motion(obs.prev_action, moved)
        if self._azimuth is not None and obs.prev_action is not None:
            self._azimuth, self._distance = propagate_estimate(
                self._azimuth, self._distance, obs.prev_action, moved
            )
        category = label.active_category() if label is not None else None
        self._consumed = label if category is not None else None
        if category is not None:
            self._azimuth = label.azimuth_of(category)
            self._distance = label.distance[category] * DISTANCE_SCALE
        if self._azimuth is None:
            return self._walk.decide(obs, blocked=obs.prev_action is Action.MOVE_FORWARD and moved < 1e-9)
        return self._controller.decide(self._azimuth, self._distance, obs)

    @property
    def estimate(self) -> Accddoa | None:
        # the consumed label verbatim while one is available, all-inactive
        # through silence (the dead-reckoned memory steers the controller
        # but is not an active detection)
        return self._consumed if self._consumed is not None else Accddoa.inactive(self.n_categories)


class TrackerAgent(Agent):
    """Greedy controller driven by the audio tracker's memory-augmented estimate."""

    def __init__(
        self,
        config: AgentConfig,
        n_categories: int,
        templates: np.ndarray,
        calibration: DistanceCalibration,
        norm: NormalizationConfig = NormalizationConfig(),
    ) -> None:
        self.tracker = GoalTracker(n_categories, templates=templates, calibration=calibration)
        self._controller = _GreedyController(config.stop_threshold)
        self._walk = _ExplorationWalk(config.seed)
        self._monitor = _MotionMonitor()
        self._norm = norm
        self._last_estimate: Accddoa | None = None

    def act(self, obs: ObservationBundle, label: Accddoa | None = None) -> Action:
        moved = self._monitor.observe(obs)
        self._controller.note_motion(obs.prev_action, moved)
        self._last_estimate = self.tracker.update(
            frame=obs.binaural,
            prev_action=obs.prev_action,
            moved=moved,
            norm_pose=normalize_pose(obs.pose, obs.step_index, self._norm),
        )
        if not self.tracker.has_estimate:
            return self._walk.decide(obs, blocked=obs.prev_action is Action.MOVE_FORWARD and moved < 1e-9)
        return self._controller.decide(self.tracker.azimuth, self.tracker.distance_m, obs)

    @property
    def estimate(self) -> Accddoa | None:
        return self._last_estimate


def build_agent(
    config: AgentConfig,
    n_categories: int,
    templates: np.ndarray | None = None,
    calibration: DistanceCalibration | None = None,
) -> Agent:
    kind = config.kind.lower()
    if kind == "random":
        return RandomAgent(config)
    if kind in ("oracle1", "oracle2"):
        return OracleAgent(config, n_categories)
    if kind == "tracker":
        if templates is None or calibration is None:
            raise ValueError("tracker agent requires category templates and a distance calibration")
        return TrackerAgent(config, n_categories, templates, calibration)
    raise ValueError(f"unknown agent kind {config.kind!r}")


def oracle_mode(config: AgentConfig) -> str | None:
    """Which oracle label stream the agent consumes, if any."""
    kind = config.kind.lower()
    return kind if kind in ("oracle1", "oracle2") else None
