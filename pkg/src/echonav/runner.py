"""Batch evaluation: episode execution, parallel workers, trace and report files.

Every episode runs under a seed derived by hashing (master seed, run index,
episode id), so results are independent of worker count and episode order;
the merge is by episode id. Per-process caches hold scenes, category
templates, and distance calibrations.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .acoustics import RenderState, binaural_rir, reference_probe, render_step
from .agents import AgentConfig, build_agent, oracle_mode
from .dataset import DatasetConfig, EpisodeSpec, load_manifest, load_scene, read_dataset
from .descriptor import Accddoa, DistanceCalibration, build_category_templates, oracle_accddoa
from .geometry import Action, Pose, ScenePlan
from .metrics import build_report, curves_csv, report_csv, report_markdown
from .simulation import Environment
from .traces import EpisodeTrace, canonical_json, load_trace_dir

CONDITIONS = ("clean", "distracted")


@dataclass
class RunConfig:
    dataset_dir: str
    split: str = "test"
    agent: AgentConfig = field(default_factory=AgentConfig)
    condition: str = "clean"
    seed: int = 0
    workers: int = 1
    runs: int = 1
    out_dir: str | None = None
    max_order: int = 3
    episode_limit: int | None = None

    def validate(self) -> None:
        if not Path(self.dataset_dir).is_dir():
            raise ValueError(f"dataset directory {self.dataset_dir} does not exist")
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if self.runs < 1:
            raise ValueError("run count must be >= 1")


def episode_seed(master_seed: int, run: int, episode_id: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{run}:{episode_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**31)


# ----------------------------------------------------------------------
# per-process caches (workers rebuild lazily)

_scene_cache: dict[tuple[str, str], ScenePlan] = {}
_template_cache: dict[str, np.ndarray] = {}
_calibration_cache: dict[tuple[str, str], DistanceCalibration] = {}
_manifest_cache: dict[str, dict] = {}


def _cached_manifest(dataset_dir: str) -> dict:
    if dataset_dir not in _manifest_cache:
        _manifest_cache[dataset_dir] = load_manifest(dataset_dir)
    return _manifest_cache[dataset_dir]


def _cached_scene(dataset_dir: str, scene_id: str) -> ScenePlan:
    key = (dataset_dir, scene_id)
    if key not in _scene_cache:
        _scene_cache[key] = load_scene(dataset_dir, scene_id)
    return _scene_cache[key]


def _cached_templates(dataset_dir: str, manifest: dict) -> np.ndarray:
    if dataset_dir not in _template_cache:
        config = DatasetConfig.from_dict(manifest["config"])
        _template_cache[dataset_dir] = build_category_templates(
            config.goal_categories, config.goal_variants["train"], seed=0
        )
    return _template_cache[dataset_dir]


def calibrate_scene(scene: ScenePlan) -> DistanceCalibration:
    """Render the reference probe 1 m ahead of the most open listener spot (order 0)."""
    mask = scene.free_mask()
    ny, nx = scene.grid_shape
    cx = (np.arange(nx) + 0.5) * scene.grid_resolution
    cy = (np.arange(ny) + 0.5) * scene.grid_resolution
    gx, gy = np.meshgrid(cx, cy)
    clear = np.minimum.reduce([gx, scene.width - gx, gy, scene.height - gy])
    for r in scene.obstacles:
        dx = np.maximum(np.maximum(r.x - gx, 0.0), gx - (r.x + r.w))
        dy = np.maximum(np.maximum(r.y - gy, 0.0), gy - (r.y + r.h))
        clear = np.minimum(clear, np.hypot(dx, dy))
    clear = np.where(mask, clear, -1.0)
    iy, ix = np.unravel_index(int(np.argmax(clear)), clear.shape)
    px, py = scene.cell_center(iy, ix)
    probe = reference_probe()
    for heading in (0.0, math.pi / 2, math.pi, -math.pi / 2):
        src = (px + math.cos(heading), py + math.sin(heading))
        if scene.is_free(*src):
            rir = binaural_rir(scene, src, Pose(px, py, heading), max_order=0)
            frame, _ = render_step(RenderState.empty(), probe, rir)
            return DistanceCalibration(ref_energy=float(np.mean(frame**2)))
    raise ValueError(f"no calibration spot found in scene {scene.id}")


def _cached_calibration(dataset_dir: str, scene: ScenePlan) -> DistanceCalibration:
    key = (dataset_dir, scene.id)
    if key not in _calibration_cache:
        _calibration_cache[key] = calibrate_scene(scene)
    return _calibration_cache[key]


# ----------------------------------------------------------------------
# episode execution


def run_episode(
    scene: ScenePlan,
    spec: EpisodeSpec,
    agent_config: AgentConfig,
    n_categories: int,
    seed: int,
    condition: str = "clean",
    max_order: int = 3,
    templates: np.ndarray | None = None,
    calibration: DistanceCalibration | None = None,
    split: str = "",
) -> EpisodeTrace:
    env = Environment(
        scene, spec, seed=seed, include_distractor=(condition == "distracted"), max_order=max_order
    )
    agent = build_agent(agent_config, n_categories, templates=templates, calibration=calibration)
    label_mode = oracle_mode(agent_config)
    obs = env.reset()
    steps: list[dict] = []
    stop_step = None
    outcome = None

    def make_row(action: Action | None, reward: float) -> dict:
        pose = env.world_pose
        label2 = oracle_accddoa(
            pose, spec.goal.point, spec.goal.category_id, n_categories, env.goal_active(), mode="oracle2"
        )
        estimate = agent.estimate
        return {
            "t": env.step_index,
            "action": action.value if action else None,
            "pose": [pose.x, pose.y, pose.heading],
            "reward": reward,
            "goal_active": env.goal_active(),
            "estimate": estimate.to_compact() if estimate is not None else None,
            "label": label2.to_compact(),
        }

    def label_for_agent() -> Accddoa | None:
        if label_mode is None:
            return None
        return oracle_accddoa(
            env.world_pose,
            spec.goal.point,
            spec.goal.category_id,
            n_categories,
            env.goal_active(),
            mode=label_mode,
        )

    while not env.done:
        action = agent.act(obs, label_for_agent())
        row = make_row(action, 0.0)
        obs, outcome = env.step(action)
        row["reward"] = outcome.reward
        steps.append(row)
        if action is Action.STOP:
            stop_step = row["t"]
    # terminal state row: let the agent observe it (keeping the estimate
    # stream aligned with labels), then discard the would-be action
    agent.act(obs, label_for_agent())
    steps.append(make_row(None, 0.0))
    trace = EpisodeTrace(steps=steps)
    distractor_distance = None
    if spec.distractor is not None:
        distractor_distance = math.dist(env.world_pose.xy, spec.distractor.point)
    trace.summary = {
        "episode_id": spec.episode_id,
        "scene_id": spec.scene_id,
        "agent": agent_config.kind,
        "condition": condition,
        "split": split,
        "seed": seed,
        "termination": outcome.termination.value,
        "dtg": outcome.dtg,
        "path_length": trace.path_length(),
        "num_actions": len(steps) - 1,
        "stop_step": stop_step,
        "onset_frame": spec.onset_frame,
        "end_frame": spec.end_frame,
        "onset_s": spec.onset_s,
        "duration_s": spec.duration_s,
        "oracle_actions": spec.oracle_actions,
        "geodesic_start_goal": spec.geodesic_start_goal,
        "distractor_distance": distractor_distance,
        "n_categories": n_categories,
        "has_estimates": agent.estimate is not None,
    }
    return trace


def _episode_task(payload: dict) -> tuple[int, int, str]:
    """Worker entry: returns (run, index, serialized trace)."""
    dataset_dir = payload["dataset_dir"]
    manifest = _cached_manifest(dataset_dir)
    config = DatasetConfig.from_dict(manifest["config"])
    spec = EpisodeSpec.from_dict(payload["spec"])
    scene = _cached_scene(dataset_dir, spec.scene_id)
    agent_config = AgentConfig(**payload["agent"])
    templates = calibration = None
    if agent_config.kind == "tracker":
        templates = _cached_templates(dataset_dir, manifest)
        calibration = _cached_calibration(dataset_dir, scene)
    if agent_config.kind == "random" and agent_config.action_distribution is None:
        agent_config.action_distribution = manifest["random_action_distribution"]
    # per-episode agent randomness, shifted by the user-level agent seed
    agent_config.seed = payload["seed"] + agent_config.seed
    trace = run_episode(
        scene,
        spec,
        agent_config,
        n_categories=len(config.goal_categories),
        seed=payload["seed"],
        condition=payload["condition"],
        max_order=payload["max_order"],
        templates=templates,
        calibration=calibration,
        split=payload["split"],
    )
    return payload["run"], payload["index"], trace.to_lines()


# ----------------------------------------------------------------------
# evaluation driver


def run_eval(config: RunConfig) -> dict:
    """Run every episode of the split under the configured agent; returns the report.

    Writes per-episode traces and report files under out_dir when set. The
    result is byte-identical for any worker count.
    """
    config.validate()
    episodes = read_dataset(config.dataset_dir, config.split)
    if config.episode_limit is not None:
        episodes = episodes[: config.episode_limit]
    if not episodes:
        raise ValueError(f"split {config.split} has no episodes")
    payloads = []
    for run in range(config.runs):
        for index, spec in enumerate(episodes):
            payloads.append(
                {
                    "dataset_dir": str(config.dataset_dir),
                    "split": config.split,
                    "spec": spec.to_dict(),
                    "agent": config.agent.to_dict(),
                    "condition": config.condition,
                    "seed": episode_seed(config.seed, run, spec.episode_id),
                    "max_order": config.max_order,
                    "run": run,
                    "index": index,
                }
            )
    if config.workers == 1:
        results = [_episode_task(p) for p in payloads]
    else:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as pool:
            results = list(pool.map(_episode_task, payloads, chunksize=4))
    results.sort(key=lambda r: (r[0], r[1]))
    traces = []
    for run, index, lines in results:
        trace = EpisodeTrace.load_from_lines(lines)
        traces.append(trace)
    report = build_report(traces)
    report["runs"] = config.runs
    if config.out_dir is not None:
        out = Path(config.out_dir)
        for (run, index, lines), trace in zip(results, traces):
            run_dir = out / "traces" / f"run-{run:02d}"
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / f"{trace.episode_id}.jsonl").write_text(lines, encoding="utf-8")
        write_report_files(report, out)
    return report


def write_report_files(report: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(canonical_json(report) + "\n", encoding="utf-8")
    (out / "report.csv").write_text(report_csv(report), encoding="utf-8")
    (out / "report.md").write_text(report_markdown(report), encoding="utf-8")
    for factor, curve in report.get("curves", {}).items():
        (out / f"curve_{factor}.csv").write_text(curves_csv(curve), encoding="utf-8")


def rebuild_report(trace_dir: str | Path, out_dir: str | Path | None = None) -> dict:
    """Recompute the metric report from saved traces alone."""
    traces = load_trace_dir(trace_dir)
    report = build_report(traces)
    report["runs"] = len({p.parent.name for p in Path(trace_dir).rglob("*.jsonl")})
    if out_dir is not None:
        write_report_files(report, out_dir)
    return report


# ----------------------------------------------------------------------
# GDN experience collection


def collect_gdn_episodes(dataset_dir: str | Path, split: str, limit: int, seed: int = 0):
    """Tracker rollouts over a split, yielding complete GDN training episodes.

    Inputs are the tracker's fused per-step records; targets are ground-truth
    descriptors during the sounding window and all-inactive outside it.
    """
    from .gdn import GdnEpisode

    dataset_dir = str(dataset_dir)
    manifest = _cached_manifest(dataset_dir)
    config = DatasetConfig.from_dict(manifest["config"])
    n_categories = len(config.goal_categories)
    templates = _cached_templates(dataset_dir, manifest)
    episodes = read_dataset(dataset_dir, split)[:limit]
    out = []
    for spec in episodes:
        scene = _cached_scene(dataset_dir, spec.scene_id)
        env = Environment(scene, spec, seed=episode_seed(seed, 0, spec.episode_id), include_distractor=False)
        agent = build_agent(
            AgentConfig(kind="tracker", seed=episode_seed(seed, 1, spec.episode_id)),
            n_categories,
            templates=templates,
            calibration=_cached_calibration(dataset_dir, scene),
        )
        obs = env.reset()
        records, labels = [], []
        while not env.done:
            action = agent.act(obs)
            records.append(agent.tracker.buffer.latest().to_vector())
            labels.append(
                oracle_accddoa(
                    env.world_pose,
                    spec.goal.point,
                    spec.goal.category_id,
                    n_categories,
                    env.goal_active(),
                    mode="oracle1",
                ).to_vector()
            )
            obs, _ = env.step(action)
        out.append(GdnEpisode(records=np.stack(records), labels=np.stack(labels)))
    return out


# ----------------------------------------------------------------------
# audio export


def export_audio(dataset_dir: str | Path, trace: EpisodeTrace, out_path: str | Path) -> int:
    """Deterministically re-render an episode's binaural stream to a WAV file.

    Returns the number of samples written (steps x 4000).
    """
    from .acoustics import write_wav

    spec = None
    for candidate in read_dataset(dataset_dir, trace.summary["split"]):
        if candidate.episode_id == trace.episode_id:
            spec = candidate
            break
    if spec is None:
        raise ValueError(f"episode {trace.episode_id} not found in split {trace.summary['split']}")
    scene = load_scene(dataset_dir, spec.scene_id)
    env = Environment(
        scene,
        spec,
        seed=trace.summary["seed"],
        include_distractor=(trace.summary["condition"] == "distracted"),
    )
    obs = env.reset()
    frames = [obs.binaural]
    for step in trace.steps:
        if step["action"] is None:
            continue
        obs, _ = env.step(Action(step["action"]))
        frames.append(obs.binaural)
    stream = np.concatenate(frames, axis=1)
    write_wav(out_path, stream)
    return stream.shape[1]
