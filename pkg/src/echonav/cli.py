"""Command-line client for the evaluation service.

Every subcommand builds a request and POSTs it to the service: a remote one
when --server is given, otherwise an in-process instance of the same app.
A JSON config file can pre-fill any request field; explicit flags win.
Commands exit nonzero with a single-line JSON reason on error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click


def _client(server: str | None):
    import httpx

    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _call(server: str | None, path: str, payload: dict) -> dict:
    with _client(server) as client:
        response = client.post(path, json=payload)
    if response.status_code >= 400:
        try:
            reason = response.json().get("detail", response.text)
        except ValueError:
            reason = response.text
        print(json.dumps({"error": str(reason)}), file=sys.stderr)
        sys.exit(1)
    return response.json()


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": f"config file {path}: {exc}"}), file=sys.stderr)
        sys.exit(1)


def _merge(config: dict, flags: dict) -> dict:
    merged = dict(config)
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


@click.group()
@click.option("--server", default=None, help="Service URL; defaults to an in-process service.")
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Binaural audio navigation simulator and evaluation suite."""
    ctx.obj = server


@main.command("gen-scenes")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--count", type=int, default=4, show_default=True)
@click.option("--large-fraction", type=float, default=0.25, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_obj
def gen_scenes(server: str | None, seed: int, count: int, large_fraction: float, out_dir: str) -> None:
    """Generate standalone floorplan JSONs."""
    _emit(
        _call(
            server,
            "/scenes/generate",
            {"seed": seed, "count": count, "large_fraction": large_fraction, "out_dir": out_dir},
        )
    )


@main.command("gen-dataset")
@click.option("--seed", type=int, default=None, help="Master seed (overrides config).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="JSON DatasetConfig overrides.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_obj
def gen_dataset(server: str | None, seed: int | None, config_path: str | None, out_dir: str) -> None:
    """Generate scenes, episode splits, and the manifest."""
    config = _merge(_load_config(config_path), {"master_seed": seed})
    _emit(_call(server, "/datasets/generate", {"out_dir": out_dir, "config": config}))


@main.command("run-eval")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--split", default=None, help="train / val / test (default test).")
@click.option("--agent", "agent_kind", default=None, help="random / oracle1 / oracle2 / tracker.")
@click.option("--stop-threshold", type=float, default=None)
@click.option("--condition", default=None, type=click.Choice(["clean", "distracted"]))
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--runs", type=int, default=None)
@click.option("--episodes", "episode_limit", type=int, default=None, help="Cap the number of episodes.")
@click.option("--max-order", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="JSON request overrides.")
@click.pass_obj
def run_eval_cmd(
    server: str | None,
    dataset_dir: str,
    split: str | None,
    agent_kind: str | None,
    stop_threshold: float | None,
    condition: str | None,
    seed: int | None,
    workers: int | None,
    runs: int | None,
    episode_limit: int | None,
    max_order: int | None,
    out_dir: str | None,
    config_path: str | None,
) -> None:
    """Evaluate an agent over a split; writes traces and report files."""
    payload = _merge(
        _load_config(config_path),
        {
            "dataset_dir": dataset_dir,
            "split": split,
            "condition": condition,
            "seed": seed,
            "workers": workers,
            "runs": runs,
            "episode_limit": episode_limit,
            "max_order": max_order,
            "out_dir": out_dir,
        },
    )
    agent = dict(payload.get("agent") or {})
    if agent_kind is not None:
        agent["kind"] = agent_kind
    if stop_threshold is not None:
        agent["stop_threshold"] = stop_threshold
    if agent:
        payload["agent"] = agent
    _emit(_call(server, "/evaluations", payload))


@main.command("report")
@click.option("--traces", "trace_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.pass_obj
def report_cmd(server: str | None, trace_dir: str, out_dir: str | None) -> None:
    """Recompute the metric report from saved traces."""
    _emit(_call(server, "/reports", {"trace_dir": trace_dir, "out_dir": out_dir}))


@main.command("export-audio")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def export_audio_cmd(server: str | None, dataset_dir: str, trace_path: str, out_path: str) -> None:
    """Re-render an episode's binaural stream to a stereo WAV."""
    _emit(
        _call(
            server,
            "/audio/export",
            {"dataset_dir": dataset_dir, "trace_path": trace_path, "out_path": out_path},
        )
    )


@main.command("train-gdn")
@click.option("--episodes", type=int, default=None, help="Training episodes (default 200).")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), default=None, help="Collect tracker rollouts from this dataset instead of synthetic walks.")
@click.option("--split", default=None)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Weights file (.npz).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.pass_obj
def train_gdn_cmd(
    server: str | None,
    episodes: int | None,
    seed: int | None,
    epochs: int | None,
    dataset_dir: str | None,
    split: str | None,
    out_path: str | None,
    config_path: str | None,
) -> None:
    """Train the goal-descriptor regressor (MSE + Adam) and save weights."""
    payload = _merge(
        _load_config(config_path),
        {
            "episodes": episodes,
            "seed": seed,
            "epochs": epochs,
            "dataset_dir": dataset_dir,
            "split": split,
            "out_path": out_path,
        },
    )
    _emit(_call(server, "/gdn/train", payload))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the evaluation service."""
    import uvicorn

    uvicorn.run("echonav.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
