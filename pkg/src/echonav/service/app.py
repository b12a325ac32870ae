"""FastAPI service wrapping the simulator: generation, evaluation, episode sessions.

The session endpoints expose the raw environment loop (reset/step with
rewards), so external training code can drive episodes over HTTP.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, HTTPException

from ..agents import AgentConfig
from ..dataset import (
    DatasetConfig,
    DatasetError,
    generate_dataset,
    generate_scenes,
    load_scene,
    read_dataset,
)
from ..gdn import GdnConfig, synthesize_gdn_episodes, train_gdn
from ..geometry import Action
from ..runner import RunConfig, collect_gdn_episodes, export_audio, rebuild_report, run_eval
from ..simulation import Environment, ObservationBundle, StepOutcome
from ..traces import EpisodeTrace
from .schemas import (
    DatasetGenRequest,
    DatasetGenResponse,
    EvalRequest,
    EvalResponse,
    ExportAudioRequest,
    ExportAudioResponse,
    Observation,
    Outcome,
    ReportRequest,
    SceneGenRequest,
    SceneGenResponse,
    SessionCreateRequest,
    SessionCreateResponse,
    SessionStepRequest,
    SessionStepResponse,
    TrainGdnRequest,
    TrainGdnResponse,
)

_ACTION_NAMES = {a.value for a in Action}


def _observation(obs: ObservationBundle) -> Observation:
    return Observation(
        binaural=obs.binaural.tolist(),
        range_scan=obs.range_scan.tolist(),
        pose=[obs.pose.x, obs.pose.y, obs.pose.heading],
        step_index=obs.step_index,
        prev_action=obs.prev_action.value if obs.prev_action else None,
    )


def _outcome(out: StepOutcome) -> Outcome:
    return Outcome(reward=out.reward, done=out.done, termination=out.termination.value, dtg=out.dtg)


def create_app() -> FastAPI:
    app = FastAPI(title="echonav", version="0.1.0")
    sessions: dict[str, Environment] = {}
    lock = threading.Lock()
    counter = {"next": 0}

    @app.exception_handler(ValueError)
    async def value_error_handler(request, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/scenes/generate", response_model=SceneGenResponse)
    def gen_scenes(req: SceneGenRequest) -> SceneGenResponse:
        ids = generate_scenes(req.seed, req.count, req.out_dir, large_fraction=req.large_fraction)
        return SceneGenResponse(scene_ids=ids, out_dir=req.out_dir)

    @app.post("/datasets/generate", response_model=DatasetGenResponse)
    def gen_dataset(req: DatasetGenRequest) -> DatasetGenResponse:
        base = DatasetConfig().to_dict()
        unknown = set(req.config) - set(base)
        if unknown:
            raise HTTPException(400, detail=f"unknown dataset config keys: {sorted(unknown)}")
        base.update(req.config)
        manifest = generate_dataset(DatasetConfig.from_dict(base), req.out_dir)
        return DatasetGenResponse(manifest=manifest)

    @app.post("/evaluations", response_model=EvalResponse)
    def evaluate(req: EvalRequest) -> EvalResponse:
        config = RunConfig(
            dataset_dir=req.dataset_dir,
            split=req.split,
            agent=AgentConfig(**req.agent.model_dump()),
            condition=req.condition,
            seed=req.seed,
            workers=req.workers,
            runs=req.runs,
            out_dir=req.out_dir,
            max_order=req.max_order,
            episode_limit=req.episode_limit,
        )
        return EvalResponse(report=run_eval(config))

    @app.post("/reports", response_model=EvalResponse)
    def report(req: ReportRequest) -> EvalResponse:
        return EvalResponse(report=rebuild_report(req.trace_dir, req.out_dir))

    @app.post("/audio/export", response_model=ExportAudioResponse)
    def audio_export(req: ExportAudioRequest) -> ExportAudioResponse:
        trace = EpisodeTrace.load(req.trace_path)
        n = export_audio(req.dataset_dir, trace, req.out_path)
        return ExportAudioResponse(out_path=req.out_path, n_samples=n, seconds=n / 16000.0)

    @app.post("/gdn/train", response_model=TrainGdnResponse)
    def gdn_train(req: TrainGdnRequest) -> TrainGdnResponse:
        config = GdnConfig(n_categories=req.n_categories, epochs=req.epochs)
        if req.dataset_dir is not None:
            episodes = collect_gdn_episodes(req.dataset_dir, req.split, req.episodes, seed=req.seed)
        else:
            episodes = synthesize_gdn_episodes(req.episodes, config, seed=req.seed)
        weights, history = train_gdn(episodes, config, seed=req.seed)
        if req.out_path is not None:
            weights.save(req.out_path)
        return TrainGdnResponse(history=history, out_path=req.out_path)

    @app.post("/sessions", response_model=SessionCreateResponse)
    def create_session(req: SessionCreateRequest) -> SessionCreateResponse:
        try:
            episodes = {e.episode_id: e for e in read_dataset(req.dataset_dir, req.split)}
        except DatasetError as exc:
            raise HTTPException(400, detail=str(exc)) from exc
        if req.episode_id not in episodes:
            raise HTTPException(404, detail=f"episode {req.episode_id} not in split {req.split}")
        spec = episodes[req.episode_id]
        scene = load_scene(req.dataset_dir, spec.scene_id)
        env = Environment(
            scene,
            spec,
            seed=req.seed,
            include_distractor=(req.condition == "distracted"),
            max_order=req.max_order,
        )
        obs = env.reset()
        with lock:
            session_id = f"session-{counter['next']:06d}"
            counter["next"] += 1
            sessions[session_id] = env
        return SessionCreateResponse(session_id=session_id, observation=_observation(obs))

    @app.post("/sessions/{session_id}/step", response_model=SessionStepResponse)
    def step_session(session_id: str, req: SessionStepRequest) -> SessionStepResponse:
        env = sessions.get(session_id)
        if env is None:
            raise HTTPException(404, detail=f"no such session {session_id}")
        if req.action not in _ACTION_NAMES:
            raise HTTPException(400, detail=f"unknown action {req.action!r}")
        try:
            obs, out = env.step(Action(req.action))
        except RuntimeError as exc:
            raise HTTPException(409, detail=str(exc)) from exc
        return SessionStepResponse(observation=_observation(obs), outcome=_outcome(out))

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str) -> dict:
        with lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(404, detail=f"no such session {session_id}")
        return {"deleted": session_id}

    return app


app = create_app()
