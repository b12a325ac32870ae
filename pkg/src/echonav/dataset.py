"""Procedural scenes, episode sampling, oracle-path statistics, and dataset persistence.

A dataset directory holds `manifest.json` (split metadata, master seed, the
random-agent action distribution), a `scenes/` directory of scene JSONs, and
one JSON-Lines file of episode specs per split. Generation is a pure function
of (master seed, config): per-scene and per-episode RNGs are derived from
stable integer sequences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    AGENT_RADIUS,
    TURN_INCREMENT,
    Action,
    Pose,
    Rect,
    ScenePlan,
    free_travel,
    geodesic_distance,
    relative_goal,
    shortest_path,
    step_pose,
)

FORMAT_VERSION = 1
STEP_SECONDS = 0.25
ORACLE_STOP_DISTANCE = 0.5
ORACLE_ALIGN_TOLERANCE = TURN_INCREMENT / 2  # 7.5 degrees
WAYPOINT_RADIUS = 0.3
MIN_GOAL_CLEARANCE = 0.4
MIN_DISTRACTOR_SEPARATION = 2.0


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SoundSpec:
    point: tuple[float, float]
    category_id: int
    sound_variant: int

    def to_dict(self) -> dict:
        return {"point": list(self.point), "category_id": self.category_id, "sound_variant": self.sound_variant}

    @classmethod
    def from_dict(cls, d: dict) -> "SoundSpec":
        return cls(point=(d["point"][0], d["point"][1]), category_id=d["category_id"], sound_variant=d["sound_variant"])


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: str
    scene_id: str
    start: Pose
    goal: SoundSpec
    distractor: SoundSpec | None
    onset_s: float
    duration_s: float
    oracle_actions: int
    geodesic_start_goal: float

    @property
    def onset_frame(self) -> int:
        return int(self.onset_s / STEP_SECONDS)

    @property
    def duration_frames(self) -> int:
        return max(1, int(round(self.duration_s / STEP_SECONDS)))

    @property
    def end_frame(self) -> int:
        return self.onset_frame + self.duration_frames

    def sounding(self, t: int) -> bool:
        return self.onset_frame <= t < self.end_frame

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "scene_id": self.scene_id,
            "start": [self.start.x, self.start.y, self.start.heading],
            "goal": self.goal.to_dict(),
            "distractor": self.distractor.to_dict() if self.distractor else None,
            "onset_s": self.onset_s,
            "duration_s": self.duration_s,
            "oracle_actions": self.oracle_actions,
            "geodesic_start_goal": self.geodesic_start_goal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSpec":
        return cls(
            episode_id=d["episode_id"],
            scene_id=d["scene_id"],
            start=Pose(*d["start"]),
            goal=SoundSpec.from_dict(d["goal"]),
            distractor=SoundSpec.from_dict(d["distractor"]) if d.get("distractor") else None,
            onset_s=d["onset_s"],
            duration_s=d["duration_s"],
            oracle_actions=d["oracle_actions"],
            geodesic_start_goal=d["geodesic_start_goal"],
        )

    def validate(self, scene: ScenePlan, goal_categories: list[int], distractor_categories: list[int]) -> None:
        if self.scene_id != scene.id:
            raise DatasetError(f"episode {self.episode_id} references scene {self.scene_id}, got {scene.id}")
        if not 0.0 <= self.onset_s <= 5.0:
            raise DatasetError(f"episode {self.episode_id}: onset {self.onset_s} outside [0, 5] s")
        if not 1.0 <= self.duration_s <= 45.0:
            raise DatasetError(f"episode {self.episode_id}: duration {self.duration_s} outside [1, 45] s")
        if not scene.is_free(self.start.x, self.start.y):
            raise DatasetError(f"episode {self.episode_id}: start pose not in free space")
        if not scene.is_free(*self.goal.point):
            raise DatasetError(f"episode {self.episode_id}: goal not in free space")
        if self.goal.category_id not in goal_categories:
            raise DatasetError(f"episode {self.episode_id}: unknown goal category {self.goal.category_id}")
        if self.distractor is not None:
            if self.distractor.category_id not in distractor_categories:
                raise DatasetError(
                    f"episode {self.episode_id}: distractor category {self.distractor.category_id} "
                    "not in the distractor bank"
                )
            gap = math.dist(self.distractor.point, self.goal.point)
            if gap < MIN_DISTRACTOR_SEPARATION:
                raise DatasetError(f"episode {self.episode_id}: distractor only {gap:.2f} m from goal")
        if self.oracle_actions <= 0:
            raise DatasetError(f"episode {self.episode_id}: non-positive oracle action count")


@dataclass
class DatasetConfig:
    """Desk-scale defaults; a full-scale bank (e.g. 21 goal categories, 102
    distractor sounds, hundreds of thousands of episodes) is reachable by
    overriding the fields."""

    master_seed: int = 0
    goal_categories: list[int] = field(default_factory=lambda: list(range(8)))
    distractor_categories: list[int] = field(default_factory=lambda: list(range(8, 16)))
    distractor_variants: list[int] = field(default_factory=lambda: [0, 1])
    goal_variants: dict[str, list[int]] = field(
        default_factory=lambda: {"train": [0, 1, 2, 3], "val": [4, 5], "test": [6, 7]}
    )
    scene_counts: dict[str, int] = field(default_factory=lambda: {"train": 40, "val": 5, "test": 10})
    episode_counts: dict[str, int] = field(default_factory=lambda: {"train": 2000, "val": 200, "test": 400})
    large_scene_fraction: float = 0.25
    min_geodesic: float = 4.0
    max_geodesic: float = 20.0
    with_distractor: bool = True

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "goal_categories": self.goal_categories,
            "distractor_categories": self.distractor_categories,
            "distractor_variants": self.distractor_variants,
            "goal_variants": self.goal_variants,
            "scene_counts": self.scene_counts,
            "episode_counts": self.episode_counts,
            "large_scene_fraction": self.large_scene_fraction,
            "min_geodesic": self.min_geodesic,
            "max_geodesic": self.max_geodesic,
            "with_distractor": self.with_distractor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(**d)

    def validate(self) -> None:
        if set(self.goal_categories) & set(self.distractor_categories):
            raise DatasetError("goal and distractor category banks must be disjoint")
        ranges = list(self.goal_variants.values())
        for i in range(len(ranges)):
            for j in range(i + 1, len(ranges)):
                if set(ranges[i]) & set(ranges[j]):
                    raise DatasetError("sound variant ranges must be pairwise disjoint across splits")


SPLITS = ("train", "val", "test")


# ----------------------------------------------------------------------
# scene generation


def gen_scene(seed: int, size_class: str = "small") -> ScenePlan:
    """Rejection-sample a connected floorplan with 3-8 obstacles and >= 0.6 m corridors."""
    if size_class not in ("small", "large"):
        raise DatasetError(f"unknown size class {size_class!r}")
    rng = np.random.default_rng([31, seed])
    lo, hi = (8.0, 12.0) if size_class == "small" else (14.0, 20.0)
    for _ in range(1000):
        width = float(rng.uniform(lo, hi))
        height = float(rng.uniform(lo, hi))
        n_obstacles = int(rng.integers(3, 9))
        rects: list[Rect] = []
        ok = True
        for _ in range(n_obstacles):
            placed = False
            for _ in range(50):
                w = float(rng.uniform(0.5, 3.0))
                h = float(rng.uniform(0.5, 3.0))
                x = float(rng.uniform(0.6, width - w - 0.6))
                y = float(rng.uniform(0.6, height - h - 0.6))
                cand = Rect(x, y, w, h)
                if all(
                    cand.x + cand.w + 0.6 <= r.x
                    or r.x + r.w + 0.6 <= cand.x
                    or cand.y + cand.h + 0.6 <= r.y
                    or r.y + r.h + 0.6 <= cand.y
                    for r in rects
                ):
                    rects.append(cand)
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        scene = ScenePlan(
            id=f"scene-{size_class}-{seed:06d}",
            width=width,
            height=height,
            obstacles=rects,
            wall_absorption=float(rng.uniform(0.3, 0.7)),
        )
        if scene.free_space_connected():
            return scene
    raise DatasetError(f"scene sampling failed after 1000 attempts (seed {seed})")


def _sample_free_point(rng: np.random.Generator, scene: ScenePlan, clearance: float) -> tuple[float, float]:
    for _ in range(1000):
        p = (float(rng.uniform(0, scene.width)), float(rng.uniform(0, scene.height)))
        if scene.is_free(*p, radius=clearance):
            return p
    raise DatasetError(f"free-point sampling exhausted in scene {scene.id}")


# ----------------------------------------------------------------------
# oracle controller


def oracle_controller(
    scene: ScenePlan, start: Pose, goal: tuple[float, float], max_actions: int = 500
) -> tuple[list[Action], int] | None:
    """Greedy waypoint follower: rotate until aligned within 7.5 degrees, then
    move; Stop within 0.5 m of the goal. Returns None if it fails to reach the
    goal within the action budget.

    Contact recovery is stateful: after two zero-movement forwards the
    follower turns toward the freer side until the forward ray clears, takes
    a short burst, then resumes seeking (a single inserted turn would be
    undone immediately and livelock against the wall).
    """
    waypoints = shortest_path(scene, start.xy, goal)[1:]
    if not waypoints:
        waypoints = [goal]
    pose = start
    actions: list[Action] = []
    wp_i = 0
    blocked = 0
    escape_turn: Action | None = None
    escape_forward = 0

    def forward_room(p: Pose) -> float:
        return free_travel(scene, p.x, p.y, math.cos(p.heading), math.sin(p.heading), 1.0)

    while len(actions) < max_actions:
        if math.dist(pose.xy, goal) <= ORACLE_STOP_DISTANCE:
            actions.append(Action.STOP)
            return actions, len(actions)
        while wp_i < len(waypoints) - 1 and math.dist(pose.xy, waypoints[wp_i]) < WAYPOINT_RADIUS:
            wp_i += 1
        if escape_turn is not None:
            if forward_room(pose) >= 0.3:
                escape_turn = None
                escape_forward = 2
            else:
                pose, _ = step_pose(scene, pose, escape_turn)
                actions.append(escape_turn)
                continue
        if escape_forward > 0:
            action = Action.MOVE_FORWARD
        else:
            azimuth, _ = relative_goal(pose, waypoints[wp_i])
            if abs(azimuth) >= ORACLE_ALIGN_TOLERANCE - 1e-12:
                action = Action.TURN_LEFT if azimuth > 0 else Action.TURN_RIGHT
            else:
                action = Action.MOVE_FORWARD
        pose, moved = step_pose(scene, pose, action)
        actions.append(action)
        if action is Action.MOVE_FORWARD:
            if moved < 0.02:  # contact creep counts as blocked
                blocked += 1
                escape_forward = 0
                if blocked >= 2:
                    blocked = 0
                    left = free_travel(
                        scene, pose.x, pose.y, -math.sin(pose.heading), math.cos(pose.heading), 2.0
                    )
                    right = free_travel(
                        scene, pose.x, pose.y, math.sin(pose.heading), -math.cos(pose.heading), 2.0
                    )
                    escape_turn = Action.TURN_LEFT if left >= right else Action.TURN_RIGHT
            else:
                blocked = 0
                if escape_forward > 0:
                    escape_forward -= 1
    return None


# ----------------------------------------------------------------------
# episode sampling


def sample_onset_duration(rng: np.random.Generator) -> tuple[float, float]:
    """Onset ~ U[0, 5] s; duration ~ Normal(15, 9) s clipped to [1, 45]."""
    onset = float(rng.uniform(0.0, 5.0))
    duration = float(np.clip(rng.normal(15.0, 9.0), 1.0, 45.0))
    return onset, duration


def sample_episode(
    rng: np.random.Generator,
    scene: ScenePlan,
    config: DatasetConfig,
    split: str,
    episode_id: str,
) -> EpisodeSpec:
    variants = config.goal_variants[split]
    for _ in range(200):
        sx, sy = _sample_free_point(rng, scene, AGENT_RADIUS)
        heading = int(rng.integers(-11, 13)) * TURN_INCREMENT  # on the turn lattice
        gx, gy = _sample_free_point(rng, scene, MIN_GOAL_CLEARANCE)
        geo = geodesic_distance(scene, (sx, sy), (gx, gy))
        if not config.min_geodesic <= geo <= config.max_geodesic:
            continue
        start = Pose(sx, sy, heading)
        oracle = oracle_controller(scene, start, (gx, gy))
        if oracle is None:
            continue
        onset, duration = sample_onset_duration(rng)
        goal = SoundSpec(
            point=(gx, gy),
            category_id=int(rng.choice(config.goal_categories)),
            sound_variant=int(rng.choice(variants)),
        )
        distractor = None
        if config.with_distractor:
            for _ in range(100):
                dp = _sample_free_point(rng, scene, MIN_GOAL_CLEARANCE)
                if math.dist(dp, (gx, gy)) >= MIN_DISTRACTOR_SEPARATION:
                    distractor = SoundSpec(
                        point=dp,
                        category_id=int(rng.choice(config.distractor_categories)),
                        sound_variant=int(rng.choice(config.distractor_variants)),
                    )
                    break
            if distractor is None:
                continue
        return EpisodeSpec(
            episode_id=episode_id,
            scene_id=scene.id,
            start=start,
            goal=goal,
            distractor=distractor,
            onset_s=onset,
            duration_s=duration,
            oracle_actions=oracle[1],
            geodesic_start_goal=float(geo),
        )
    raise DatasetError(f"episode sampling exhausted in scene {scene.id}")


# ----------------------------------------------------------------------
# generation and persistence


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def generate_dataset(config: DatasetConfig, out_dir: str | Path) -> dict:
    """Generate scenes and episode splits under out_dir; returns the manifest."""
    config.validate()
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    manifest: dict = {"format_version": FORMAT_VERSION, "master_seed": config.master_seed, "config": config.to_dict()}
    splits_meta: dict = {}
    action_counts = {a.value: 0 for a in Action}
    scene_seq = 0
    for split_idx, split in enumerate(SPLITS):
        scenes: list[ScenePlan] = []
        frac = config.large_scene_fraction
        for i in range(config.scene_counts.get(split, 0)):
            size = "large" if math.floor((i + 1) * frac) > math.floor(i * frac) else "small"
            scene = gen_scene(seed=config.master_seed * 1_000_000 + scene_seq, size_class=size)
            scene = ScenePlan(
                id=f"{split}-{i:03d}",
                width=scene.width,
                height=scene.height,
                obstacles=list(scene.obstacles),
                wall_absorption=scene.wall_absorption,
                grid_resolution=scene.grid_resolution,
            )
            scene.save(out / "scenes" / f"{scene.id}.json")
            scenes.append(scene)
            scene_seq += 1
        episodes = []
        n_episodes = config.episode_counts.get(split, 0)
        for i in range(n_episodes):
            rng = np.random.default_rng([config.master_seed, split_idx, i])
            scene = scenes[i % len(scenes)] if scenes else None
            if scene is None:
                raise DatasetError(f"split {split} has episodes but no scenes")
            spec = sample_episode(rng, scene, config, split, episode_id=f"{split}-{i:05d}")
            episodes.append(spec)
            # the random-agent action distribution: oracle action frequencies
            # over (a stable prefix of) the train split
            if split == "train" and i < 300:
                replay = oracle_controller(scene, spec.start, spec.goal.point)
                if replay is not None:
                    for a in replay[0]:
                        action_counts[a.value] += 1
        with (out / f"{split}.jsonl").open("w", encoding="utf-8") as f:
            for spec in episodes:
                f.write(_canonical_json(spec.to_dict()) + "\n")
        splits_meta[split] = {
            "scene_ids": [s.id for s in scenes],
            "episode_count": n_episodes,
            "goal_variants": config.goal_variants[split],
        }
    total = sum(action_counts.values())
    manifest["splits"] = splits_meta
    manifest["random_action_distribution"] = {
        k: (v / total if total else 0.25) for k, v in sorted(action_counts.items())
    }
    (out / "manifest.json").write_text(_canonical_json(manifest) + "\n", encoding="utf-8")
    return manifest


def generate_scenes(seed: int, count: int, out_dir: str | Path, large_fraction: float = 0.25) -> list[str]:
    """Write `count` standalone scene JSONs plus a manifest; idempotent per seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        size = "large" if math.floor((i + 1) * large_fraction) > math.floor(i * large_fraction) else "small"
        scene = gen_scene(seed=seed * 1_000_000 + i, size_class=size)
        scene.save(out / f"{scene.id}.json")
        ids.append(scene.id)
    (out / "manifest.json").write_text(
        _canonical_json({"command": "gen-scenes", "seed": seed, "count": count, "scene_ids": ids}) + "\n",
        encoding="utf-8",
    )
    return ids


def load_manifest(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json under {dataset_dir}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format version {manifest.get('format_version')}")
    return manifest


def load_scene(dataset_dir: str | Path, scene_id: str) -> ScenePlan:
    return ScenePlan.load(Path(dataset_dir) / "scenes" / f"{scene_id}.json")


def read_dataset(dataset_dir: str | Path, split: str) -> list[EpisodeSpec]:
    """Read and fully validate one split; raises DatasetError with a line number on violations."""
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    config = DatasetConfig.from_dict(manifest["config"])
    config.validate()
    # split disjointness over scenes and sound variants
    for a in SPLITS:
        for b in SPLITS:
            if a >= b:
                continue
            shared = set(manifest["splits"][a]["scene_ids"]) & set(manifest["splits"][b]["scene_ids"])
            if shared:
                raise DatasetError(f"scene ids shared between splits {a} and {b}: {sorted(shared)}")
    scenes: dict[str, ScenePlan] = {}
    episodes: list[EpisodeSpec] = []
    split_scenes = set(manifest["splits"][split]["scene_ids"])
    split_variants = set(manifest["splits"][split]["goal_variants"])
    path = dataset_dir / f"{split}.jsonl"
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                spec = EpisodeSpec.from_dict(json.loads(line))
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise DatasetError(f"{path.name}:{lineno}: malformed episode record ({exc})") from exc
            if spec.scene_id not in split_scenes:
                raise DatasetError(f"{path.name}:{lineno}: scene {spec.scene_id} does not belong to split {split}")
            if spec.goal.sound_variant not in split_variants:
                raise DatasetError(
                    f"{path.name}:{lineno}: goal sound variant {spec.goal.sound_variant} outside split range"
                )
            if spec.scene_id not in scenes:
                scenes[spec.scene_id] = load_scene(dataset_dir, spec.scene_id)
            try:
                spec.validate(scenes[spec.scene_id], config.goal_categories, config.distractor_categories)
            except DatasetError as exc:
                raise DatasetError(f"{path.name}:{lineno}: {exc}") from exc
            episodes.append(spec)
    return episodes
