"""Dense ACCDDOA regressor: hand-written forward/backward, Adam, and the training loop.

The network maps a flattened window of the last K episodic-memory records to
per-category [a, Rx, Ry, Rz, d] descriptors. Training uses MSE against
ground-truth labels (active steps carry the true descriptor, silent steps an
all-inactive target) with Adam at lr 1e-3; episodes shorter than 30 steps are
discarded so every kept episode contains sound.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptor import (
    DISTANCE_SCALE,
    Accddoa,
    GoalTracker,
    TrackerMeasurement,
    propagate_estimate,
    record_dim,
)
from .geometry import TURN_INCREMENT, Action

logger = logging.getLogger(__name__)

WEIGHTS_FORMAT_VERSION = 1
MIN_EPISODE_STEPS = 30

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class GdnConfig:
    n_categories: int = 8
    window: int = 8
    hidden: tuple[int, int] = (64, 64)
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32

    @property
    def input_dim(self) -> int:
        return self.window * record_dim(self.n_categories)

    @property
    def output_dim(self) -> int:
        return self.n_categories * 5


class GdnWeights:
    """Parameters plus Adam moment accumulators for the 2-hidden-layer regressor."""

    def __init__(self, config: GdnConfig, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        h1, h2 = config.hidden
        dims = [(h1, config.input_dim), (h1,), (h2, h1), (h2,), (config.output_dim, h2), (config.output_dim,)]
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        for name, shape in zip(_PARAM_NAMES, dims):
            if name.startswith("w"):
                self.params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), size=shape)
            else:
                self.params[name] = np.zeros(shape)
        self.adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_t = 0

    def save(self, path: str | Path) -> None:
        meta = {
            "version": WEIGHTS_FORMAT_VERSION,
            "n_categories": self.config.n_categories,
            "window": self.config.window,
            "hidden": list(self.config.hidden),
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "adam_t": self.adam_t,
        }
        arrays = dict(self.params)
        arrays.update({f"m_{k}": v for k, v in self.adam_m.items()})
        arrays.update({f"v_{k}": v for k, v in self.adam_v.items()})
        np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "GdnWeights":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta["version"] != WEIGHTS_FORMAT_VERSION:
                raise ValueError(f"unsupported weights version {meta['version']}")
            config = GdnConfig(
                n_categories=meta["n_categories"], window=meta["window"], hidden=tuple(meta["hidden"])
            )
            out = cls(config, seed=0)
            for name in _PARAM_NAMES:
                arr = data[name]
                if list(arr.shape) != meta["shapes"][name]:
                    raise ValueError(f"shape mismatch for {name}")
                out.params[name] = arr
                out.adam_m[name] = data[f"m_{name}"]
                out.adam_v[name] = data[f"v_{name}"]
            out.adam_t = meta["adam_t"]
        return out


def gdn_forward(weights: GdnWeights, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """dense-tanh-dense-tanh-dense forward pass; x is (batch, input_dim)."""
    p = weights.params
    z1 = x @ p["w1"].T + p["b1"]
    h1 = np.tanh(z1)
    z2 = h1 @ p["w2"].T + p["b2"]
    h2 = np.tanh(z2)
    y = h2 @ p["w3"].T + p["b3"]
    return y, {"x": x, "h1": h1, "h2": h2}


def gdn_backward(weights: GdnWeights, cache: dict, grad_y: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of any scalar loss given d(loss)/dy."""
    p = weights.params
    x, h1, h2 = cache["x"], cache["h1"], cache["h2"]
    grads = {"w3": grad_y.T @ h2, "b3": grad_y.sum(axis=0)}
    dh2 = (grad_y @ p["w3"]) * (1.0 - h2**2)
    grads["w2"] = dh2.T @ h1
    grads["b2"] = dh2.sum(axis=0)
    dh1 = (dh2 @ p["w2"]) * (1.0 - h1**2)
    grads["w1"] = dh1.T @ x
    grads["b1"] = dh1.sum(axis=0)
    return grads


def mse_and_grads(weights: GdnWeights, x: np.ndarray, target: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    y, cache = gdn_forward(weights, x)
    diff = y - target
    loss = float(np.mean(diff**2))
    grad_y = 2.0 * diff / diff.size
    return loss, gdn_backward(weights, cache, grad_y)


def adam_step(weights: GdnWeights, grads: dict[str, np.ndarray], lr: float = 1e-3) -> None:
    weights.adam_t += 1
    t = weights.adam_t
    for k, g in grads.items():
        m = weights.adam_m[k] = ADAM_BETA1 * weights.adam_m[k] + (1 - ADAM_BETA1) * g
        v = weights.adam_v[k] = ADAM_BETA2 * weights.adam_v[k] + (1 - ADAM_BETA2) * g**2
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        weights.params[k] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ----------------------------------------------------------------------
# training data


@dataclass
class GdnEpisode:
    """One complete episode: per-step fused records and ACCDDOA target vectors."""

    records: np.ndarray  # (T, record_dim)
    labels: np.ndarray   # (T, n_categories * 5)

    def __len__(self) -> int:
        return self.records.shape[0]


def episode_windows(episode: GdnEpisode, config: GdnConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-step training pairs: flattened left-zero-padded K-record windows and labels."""
    t_len, rdim = episode.records.shape
    k = config.window
    padded = np.concatenate([np.zeros((k - 1, rdim)), episode.records])
    windows = np.stack([padded[t : t + k].ravel() for t in range(t_len)])
    return windows, episode.labels


def synthesize_gdn_episodes(n_episodes: int, config: GdnConfig, seed: int = 0) -> list[GdnEpisode]:
    """Oracle-measurement random walks in an open world (no audio rendering).

    Each episode drives a GoalTracker with noisy direct measurements during a
    random sounding window; labels carry the exactly-propagated ground truth
    while the sound is active and all-inactive targets elsewhere.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_episodes):
        t_len = int(rng.integers(20, 81))
        onset = int(rng.integers(0, 10))
        end = onset + int(rng.integers(8, 60))
        category = int(rng.integers(0, config.n_categories))
        az_true = float(rng.uniform(-math.pi, math.pi))
        dist_true = float(rng.uniform(3.0, 18.0))
        x = y = 0.0
        heading_k = int(rng.integers(-11, 13))
        tracker = GoalTracker(config.n_categories)
        labels = []
        action: Action | None = None
        moved = 0.0
        for t in range(t_len):
            if t > 0:
                action = [Action.MOVE_FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT][
                    rng.choice(3, p=[0.5, 0.25, 0.25])
                ]
                if action is Action.MOVE_FORWARD:
                    moved = 0.25
                    theta = heading_k * TURN_INCREMENT
                    x += moved * math.cos(theta)
                    y += moved * math.sin(theta)
                else:
                    moved = 0.0
                    heading_k += 1 if action is Action.TURN_LEFT else -1
                    heading_k = (heading_k + 11) % 24 - 11
                az_true, dist_true = propagate_estimate(az_true, dist_true, action, moved)
            active = onset <= t < end
            measurement = None
            if active:
                measurement = TrackerMeasurement(
                    azimuth=az_true + rng.normal(0.0, 0.1),
                    distance_m=max(0.25, dist_true * (1.0 + rng.normal(0.0, 0.15))),
                    confidence=float(rng.uniform(0.5, 1.0)),
                    category=category,
                )
            theta = heading_k * TURN_INCREMENT
            norm_pose = np.array([x / DISTANCE_SCALE, y / DISTANCE_SCALE, math.sin(theta), math.cos(theta), t / 500.0])
            tracker.update(measurement=measurement, prev_action=action, moved=moved, norm_pose=norm_pose)
            if active:
                labels.append(
                    Accddoa.single(config.n_categories, category, az_true, dist_true / DISTANCE_SCALE).to_vector()
                )
            else:
                labels.append(Accddoa.inactive(config.n_categories).to_vector())
        records = np.stack([r.to_vector() for r in tracker.buffer])
        episodes.append(GdnEpisode(records=records, labels=np.stack(labels)))
    return episodes


def train_gdn(
    episodes: list[GdnEpisode],
    config: GdnConfig | None = None,
    seed: int = 0,
) -> tuple[GdnWeights, dict]:
    """Train on complete episodes; returns the weights and a training history dict."""
    config = config or GdnConfig()
    kept = [e for e in episodes if len(e) >= MIN_EPISODE_STEPS]
    n_filtered = len(episodes) - len(kept)
    if n_filtered:
        logger.warning("discarded %d episodes shorter than %d steps", n_filtered, MIN_EPISODE_STEPS)
    if not kept:
        raise ValueError(f"no episodes of at least {MIN_EPISODE_STEPS} steps to train on")
    xs, ys = zip(*(episode_windows(e, config) for e in kept))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    weights = GdnWeights(config, seed=seed)
    initial_mse = float(np.mean((gdn_forward(weights, x)[0] - y) ** 2))
    rng = np.random.default_rng(seed + 1)
    epoch_mse = []
    for _ in range(config.epochs):
        order = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = mse_and_grads(weights, x[batch], y[batch])
            adam_step(weights, grads, lr=config.learning_rate)
            losses.append(loss)
        epoch_mse.append(float(np.mean(losses)))
    final_mse = float(np.mean((gdn_forward(weights, x)[0] - y) ** 2))
    history = {
        "filtered_episodes": n_filtered,
        "kept_episodes": len(kept),
        "n_windows": int(x.shape[0]),
        "initial_mse": initial_mse,
        "epoch_mse": epoch_mse,
        "final_mse": final_mse,
    }
    return weights, history
