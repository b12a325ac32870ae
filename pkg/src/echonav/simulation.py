"""Episode lifecycle: stepping, observation assembly, sound scheduling, and rewards.

One Environment instance owns one episode. Each step advances the pose,
renders one 0.25 s binaural frame per scheduled source (residual tails keep
ringing after a source goes quiet), mixes them, and judges termination.
Reward = +10 on success + (geodesic decrease) - 0.01 per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .acoustics import CHUNK_SAMPLES, RenderState, binaural_rir, mix_sources, render_step, synth_source
from .dataset import STEP_SECONDS, EpisodeSpec, SoundSpec
from .descriptor import DISTANCE_SCALE
from .geometry import Action, Pose, ScenePlan, range_scan, step_pose, wrap_angle

MAX_STEPS = 500
SUCCESS_RADIUS = 1.0
TIME_PENALTY = 0.01
SUCCESS_REWARD = 10.0


@dataclass(frozen=True)
class NormalizationConfig:
    d: float = DISTANCE_SCALE
    t_max: int = MAX_STEPS

    def __post_init__(self) -> None:
        if self.d <= 0 or self.t_max <= 0:
            raise ValueError("normalization scales must be positive")


def normalize_pose(pose: Pose, t: int, cfg: NormalizationConfig = NormalizationConfig()) -> np.ndarray:
    """[x/d, y/d, sin(heading), cos(heading), t/t_max]."""
    return np.array(
        [pose.x / cfg.d, pose.y / cfg.d, math.sin(pose.heading), math.cos(pose.heading), t / cfg.t_max]
    )


class Termination(Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    STOPPED_WRONG_PLACE = "StoppedWrongPlace"
    STOPPED_AT_DISTRACTOR = "StoppedAtDistractor"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    done: bool
    termination: Termination
    dtg: float


@dataclass(frozen=True)
class ObservationBundle:
    binaural: np.ndarray        # (2, 4000)
    range_scan: np.ndarray      # (32,) meters
    pose: Pose                  # relative to the episode start
    step_index: int
    prev_action: Action | None


class _ScheduledSource:
    """A sound source active on [onset_frame, end_frame) with its own render tail."""

    def __init__(self, sound: SoundSpec, onset_frame: int, end_frame: int, seed: int) -> None:
        self.point = sound.point
        n_frames = end_frame - onset_frame
        self.sound = synth_source(sound.category_id, sound.sound_variant, n_frames * STEP_SECONDS, seed=seed)
        self.onset_frame = onset_frame
        self.end_frame = end_frame
        self.state = RenderState.empty()

    def chunk(self, t: int) -> np.ndarray:
        idx = t - self.onset_frame
        if 0 <= idx < self.end_frame - self.onset_frame:
            return self.sound.waveform[idx * CHUNK_SAMPLES : (idx + 1) * CHUNK_SAMPLES]
        return np.zeros(CHUNK_SAMPLES)

    def render(self, scene: ScenePlan, pose: Pose, t: int, max_order: int) -> np.ndarray:
        chunk = self.chunk(t)
        if not chunk.any() and not self.state.tail_left.size and not self.state.tail_right.size:
            return np.zeros((2, CHUNK_SAMPLES))
        rir = binaural_rir(scene, self.point, pose, max_order=max_order)
        frame, self.state = render_step(self.state, chunk, rir)
        return frame


class Environment:
    """One episode of the binaural navigation task."""

    def __init__(
        self,
        scene: ScenePlan,
        spec: EpisodeSpec,
        seed: int = 0,
        include_distractor: bool = True,
        max_order: int = 3,
    ) -> None:
        if not scene.is_free(spec.start.x, spec.start.y):
            raise ValueError(f"episode {spec.episode_id}: start pose not in free space")
        if not scene.is_free(*spec.goal.point):
            raise ValueError(f"episode {spec.episode_id}: goal not in free space")
        self.scene = scene
        self.spec = spec
        self.seed = seed
        self.include_distractor = include_distractor and spec.distractor is not None
        self.max_order = max_order
        self._field = scene.distance_field(*spec.goal.point)
        self._started = False
        self.done = False

    # ------------------------------------------------------------------

    def reset(self) -> ObservationBundle:
        """Arm source schedules and return the step-0 observation (deterministic per seed)."""
        self._pose = self.spec.start
        self._t = 0
        self.done = False
        self.termination = Termination.RUNNING
        self._sources = [
            _ScheduledSource(self.spec.goal, self.spec.onset_frame, self.spec.end_frame, seed=self.seed)
        ]
        if self.include_distractor:
            # the distractor shares the goal's temporal boundaries
            self._sources.append(
                _ScheduledSource(self.spec.distractor, self.spec.onset_frame, self.spec.end_frame, seed=self.seed + 1)
            )
        self._started = True
        return self._observe(prev_action=None)

    def step(self, action: Action) -> tuple[ObservationBundle, StepOutcome]:
        if not self._started:
            raise RuntimeError("step() before reset()")
        if self.done:
            raise RuntimeError(f"episode {self.spec.episode_id} already terminated ({self.termination.value})")
        geo_before = self.geodesic_to_goal()
        self._pose, _ = step_pose(self.scene, self._pose, action)
        self._t += 1
        geo_after = self.geodesic_to_goal()
        reward = (geo_before - geo_after) - TIME_PENALTY
        termination = Termination.RUNNING
        if action is Action.STOP:
            if math.dist(self._pose.xy, self.spec.goal.point) <= SUCCESS_RADIUS:
                termination = Termination.SUCCESS
                reward += SUCCESS_REWARD
            elif (
                self.include_distractor
                and math.dist(self._pose.xy, self.spec.distractor.point) <= SUCCESS_RADIUS
            ):
                termination = Termination.STOPPED_AT_DISTRACTOR
            else:
                termination = Termination.STOPPED_WRONG_PLACE
        elif self._t >= MAX_STEPS:
            termination = Termination.TIMEOUT
        self.termination = termination
        self.done = termination is not Termination.RUNNING
        obs = self._observe(prev_action=action)
        outcome = StepOutcome(reward=reward, done=self.done, termination=termination, dtg=geo_after)
        return obs, outcome

    # ------------------------------------------------------------------

    def _observe(self, prev_action: Action | None) -> ObservationBundle:
        frames = [src.render(self.scene, self._pose, self._t, self.max_order) for src in self._sources]
        return ObservationBundle(
            binaural=mix_sources(frames),
            range_scan=range_scan(self.scene, self._pose),
            pose=self.relative_pose(),
            step_index=self._t,
            prev_action=prev_action,
        )

    def relative_pose(self) -> Pose:
        start = self.spec.start
        dx = self._pose.x - start.x
        dy = self._pose.y - start.y
        c, s = math.cos(-start.heading), math.sin(-start.heading)
        return Pose(c * dx - s * dy, s * dx + c * dy, wrap_angle(self._pose.heading - start.heading))

    @property
    def world_pose(self) -> Pose:
        return self._pose

    @property
    def step_index(self) -> int:
        return self._t

    def goal_active(self, t: int | None = None) -> bool:
        return self.spec.sounding(self._t if t is None else t)

    def geodesic_to_goal(self) -> float:
        cell = self.scene.snap_to_free_cell(self._pose.x, self._pose.y)
        return float(self._field[cell])

    def distance_to_goal(self) -> float:
        return math.dist(self._pose.xy, self.spec.goal.point)
