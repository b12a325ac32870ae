"""Pydantic request/response models for the evaluation service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class AgentSpec(BaseModel):
    kind: str = "tracker"
    stop_threshold: float = 0.9
    seed: int = 0
    action_distribution: dict[str, float] | None = None


class SceneGenRequest(BaseModel):
    seed: int = 0
    count: int = Field(default=4, ge=0)
    large_fraction: float = 0.25
    out_dir: str


class SceneGenResponse(BaseModel):
    scene_ids: list[str]
    out_dir: str


class DatasetGenRequest(BaseModel):
    out_dir: str
    config: dict = Field(default_factory=dict)  # DatasetConfig field overrides


class DatasetGenResponse(BaseModel):
    manifest: dict


class EvalRequest(BaseModel):
    dataset_dir: str
    split: str = "test"
    agent: AgentSpec = Field(default_factory=AgentSpec)
    condition: str = "clean"
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    runs: int = Field(default=1, ge=1)
    out_dir: str | None = None
    max_order: int = 3
    episode_limit: int | None = None


class EvalResponse(BaseModel):
    report: dict


class ReportRequest(BaseModel):
    trace_dir: str
    out_dir: str | None = None


class ExportAudioRequest(BaseModel):
    dataset_dir: str
    trace_path: str
    out_path: str


class ExportAudioResponse(BaseModel):
    out_path: str
    n_samples: int
    seconds: float


class TrainGdnRequest(BaseModel):
    episodes: int = Field(default=200, ge=1)
    seed: int = 0
    epochs: int = 10
    n_categories: int = 8
    out_path: str | None = None
    dataset_dir: str | None = None  # when set, collect tracker rollouts instead of synthetic walks
    split: str = "train"


class TrainGdnResponse(BaseModel):
    history: dict
    out_path: str | None


class SessionCreateRequest(BaseModel):
    dataset_dir: str
    split: str = "test"
    episode_id: str
    seed: int = 0
    condition: str = "clean"
    max_order: int = 3


class Observation(BaseModel):
    binaural: list[list[float]]
    range_scan: list[float]
    pose: list[float]  # [x, y, heading] relative to the episode start
    step_index: int
    prev_action: str | None


class Outcome(BaseModel):
    reward: float
    done: bool
    termination: str
    dtg: float


class SessionCreateResponse(BaseModel):
    session_id: str
    observation: Observation


class SessionStepRequest(BaseModel):
    action: str  # MoveForward | TurnLeft | TurnRight | Stop


class SessionStepResponse(BaseModel):
    observation: Observation
    outcome: Outcome
