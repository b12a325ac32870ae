"""Episode traces: JSON-Lines step logs consumed by the metric suite.

One record per step: `{t, action, pose: [x, y, th], reward, goal_active,
estimate?, label?}` — `action`/`reward` describe the transition taken from
that state (the terminal state carries action null) — followed by one summary
record holding termination, dtg, path_length, num_actions, and the episode
metadata the metrics need. Serialization is canonical (sorted keys, compact
separators), so identical episodes produce identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .descriptor import Accddoa


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class EpisodeTrace:
    steps: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def episode_id(self) -> str:
        return self.summary["episode_id"]

    @property
    def n_categories(self) -> int:
        return self.summary["n_categories"]

    @property
    def success(self) -> bool:
        return self.summary["termination"] == "Success"

    def sounding(self, t: int) -> bool:
        return self.summary["onset_frame"] <= t < self.summary["end_frame"]

    def estimate_at(self, i: int) -> Accddoa:
        return Accddoa.from_compact(self.steps[i].get("estimate"), self.n_categories)

    def label_at(self, i: int) -> Accddoa:
        return Accddoa.from_compact(self.steps[i].get("label"), self.n_categories)

    def path_length(self) -> float:
        total = 0.0
        for a, b in zip(self.steps, self.steps[1:]):
            total += math.dist(a["pose"][:2], b["pose"][:2])
        return total

    def to_lines(self) -> str:
        lines = [canonical_json(s) for s in self.steps]
        lines.append(canonical_json(self.summary))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_lines(), encoding="utf-8")

    @classmethod
    def load_from_lines(cls, text: str, source: str = "<string>") -> "EpisodeTrace":
        steps: list[dict] = []
        summary: dict = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "termination" in rec:
                summary = rec
            else:
                steps.append(rec)
        if not summary:
            raise ValueError(f"trace {source} has no summary record")
        return cls(steps=steps, summary=summary)

    @classmethod
    def load(cls, path: str | Path) -> "EpisodeTrace":
        return cls.load_from_lines(Path(path).read_text(encoding="utf-8"), source=str(path))


def load_trace_dir(path: str | Path) -> list[EpisodeTrace]:
    """All traces under a directory (recursing into per-run subdirectories), id-sorted."""
    root = Path(path)
    files = sorted(root.rglob("*.jsonl"))
    if not files:
        raise ValueError(f"no trace files under {root}")
    return [EpisodeTrace.load(f) for f in files]
