"""Navigation metrics, SELD metrics, and factor analyses over episode traces.

Navigation: SR, SPL (shortest-path efficiency), SNA (oracle-action
efficiency), DTG, SWS (success while silent), DSR (ended at the distractor).
SELD: frame-level error rate and F1 within a 20-degree localization
tolerance, plus localization error / recall and relative distance error over
class-correct detections, macro-averaged across goal categories and reported
separately for the sounding and silent periods.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .descriptor import DISTANCE_SCALE
from .traces import EpisodeTrace

LOCALIZATION_TOLERANCE_DEG = 20.0
EMPTY_CD_LE_SENTINEL = 180.0
EMPTY_CD_RDE_SENTINEL = 1.0
DISTRACTOR_RADIUS = 1.0

SOUNDING = "sounding"
SILENT = "silent"


# ----------------------------------------------------------------------
# navigation


def nav_metrics(traces: list[EpisodeTrace]) -> dict:
    if not traces:
        raise ValueError("no traces to score")
    per: dict[str, list[float]] = {k: [] for k in ("sr", "spl", "sna", "dtg", "sws", "dsr")}
    for trace in traces:
        s = trace.summary
        success = float(trace.success)
        per["sr"].append(success)
        length = s["geodesic_start_goal"]
        per["spl"].append(success * length / max(s["path_length"], length))
        n_oracle = s["oracle_actions"]
        per["sna"].append(success * n_oracle / max(n_oracle, s["num_actions"]))
        per["dtg"].append(s["dtg"])
        stop_step = s.get("stop_step")
        per["sws"].append(1.0 if (success and stop_step is not None and not trace.sounding(stop_step)) else 0.0)
        dist = s.get("distractor_distance")
        per["dsr"].append(1.0 if (dist is not None and dist <= DISTRACTOR_RADIUS) else 0.0)
    out = {k: float(np.mean(v)) for k, v in per.items()}
    out["n_episodes"] = len(traces)
    return out


# ----------------------------------------------------------------------
# SELD


@dataclass
class _CategoryCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    subs: int = 0
    gt: int = 0
    cd: int = 0
    le_sum: float = 0.0
    rde_sum: float = 0.0


def _angular_error_deg(pred_az: float, gt_az: float) -> float:
    return abs(math.degrees(math.remainder(pred_az - gt_az, math.tau)))


def accumulate_seld_counts(
    traces: list[EpisodeTrace], period: str, counts: dict[int, _CategoryCounts] | None = None
) -> dict[int, _CategoryCounts]:
    """Frame-level detection/localization counts per category over one period.

    Sounding = steps in [onset, onset + duration); Silent = steps at or after
    onset + duration. A class-correct detection (CD) pairs an active
    prediction with active ground truth of the same category; a true positive
    additionally requires angular error <= 20 degrees. Substitutions pair a
    wrong-class false positive with a missed ground truth at the same step.
    """
    if period not in (SOUNDING, SILENT):
        raise ValueError(f"unknown period {period!r}")
    counts = counts if counts is not None else {}
    for trace in traces:
        n_cat = trace.n_categories
        for c in range(n_cat):
            counts.setdefault(c, _CategoryCounts())
        for i, step in enumerate(trace.steps):
            t = step["t"]
            in_period = trace.sounding(t) if period == SOUNDING else t >= trace.summary["end_frame"]
            if not in_period:
                continue
            gt = trace.label_at(i)
            pred = trace.estimate_at(i)
            wrong_class_fp: dict[int, int] = {}
            missed: dict[int, int] = {}
            for c in range(n_cat):
                cc = counts[c]
                gt_active = gt.activity[c] > 0.5
                pred_active = pred.activity[c] > 0.5
                cc.gt += gt_active
                if pred_active and gt_active:
                    cc.cd += 1
                    err = _angular_error_deg(pred.azimuth_of(c), gt.azimuth_of(c))
                    cc.le_sum += err
                    gt_dist = gt.distance[c] * DISTANCE_SCALE
                    cc.rde_sum += abs(pred.distance[c] - gt.distance[c]) * DISTANCE_SCALE / max(gt_dist, 1e-9)
                    if err <= LOCALIZATION_TOLERANCE_DEG:
                        cc.tp += 1
                    else:
                        cc.fp += 1
                        cc.fn += 1
                        missed[c] = 1
                elif pred_active:
                    cc.fp += 1
                    wrong_class_fp[c] = 1
                elif gt_active:
                    cc.fn += 1
                    missed[c] = 1
            # class confusions: pair wrong-class insertions with deletions at this step
            n_subs = min(sum(wrong_class_fp.values()), sum(missed.values()))
            for c in list(wrong_class_fp)[:n_subs]:
                counts[c].subs += 1
    return counts


def seld_from_counts(counts: dict[int, _CategoryCounts]) -> dict:
    """Macro-average over categories present in the ground truth."""
    rows = []
    for c, cc in sorted(counts.items()):
        if cc.gt == 0:
            continue  # category absent from this split's ground truth
        f = 2 * cc.tp / max(2 * cc.tp + cc.fp + cc.fn, 1)
        subs = min(cc.subs, cc.fn, cc.fp)
        deletions = cc.fn - subs
        insertions = cc.fp - subs
        er = (subs + deletions + insertions) / cc.gt
        le = cc.le_sum / cc.cd if cc.cd else EMPTY_CD_LE_SENTINEL
        lr = cc.cd / cc.gt
        rde = cc.rde_sum / cc.cd if cc.cd else EMPTY_CD_RDE_SENTINEL
        rows.append((f, er, le, lr, rde, cc.cd))
    if not rows:
        return {"er": 0.0, "f": 0.0, "le_cd": 0.0, "lr_cd": 0.0, "rde": 0.0, "cd_count": 0, "n_categories": 0}
    arr = np.array([r[:5] for r in rows])
    return {
        "er": float(np.mean(arr[:, 1])),
        "f": float(np.mean(arr[:, 0])),
        "le_cd": float(np.mean(arr[:, 2])),
        "lr_cd": float(np.mean(arr[:, 3])),
        "rde": float(np.mean(arr[:, 4])),
        "cd_count": int(sum(r[5] for r in rows)),
        "n_categories": len(rows),
    }


def seld_metrics(traces: list[EpisodeTrace], period: str) -> dict:
    return seld_from_counts(accumulate_seld_counts(traces, period))


# ----------------------------------------------------------------------
# factor curves


def episode_factor(trace: EpisodeTrace, factor: str) -> float | None:
    s = trace.summary
    if factor == "action_ratio":
        frames = s["duration_s"] / 0.25
        if frames <= 0:
            warnings.warn(f"episode {trace.episode_id} has zero sound duration; excluded from factor curve")
            return None
        return s["oracle_actions"] / frames
    if factor == "geodesic":
        return s["geodesic_start_goal"]
    raise ValueError(f"unknown factor {factor!r}")


def factor_curves(traces: list[EpisodeTrace], factor: str, bins: list[float]) -> list[dict]:
    """Cumulative success rate over episodes whose factor value is <= each bin edge."""
    pairs = []
    for trace in traces:
        value = episode_factor(trace, factor)
        if value is not None:
            pairs.append((value, trace.success))
    curve = []
    for edge in bins:
        included = [s for v, s in pairs if v <= edge]
        if included:
            curve.append({"bin_edge": edge, "cumulative_sr": float(np.mean(included)), "n": len(included)})
    return curve


def default_bins(traces: list[EpisodeTrace], factor: str, n_bins: int = 8) -> list[float]:
    values = [v for t in traces if (v := episode_factor(t, factor)) is not None]
    if not values:
        return []
    return [float(q) for q in np.quantile(values, np.linspace(1.0 / n_bins, 1.0, n_bins))]


# ----------------------------------------------------------------------
# report assembly


def build_report(traces: list[EpisodeTrace]) -> dict:
    """Full metric report; a pure function of the traces, so re-running it
    from saved trace files reproduces the inline report exactly."""
    if not traces:
        raise ValueError("no traces to report on")
    summary0 = traces[0].summary
    report: dict = {
        "agent": summary0.get("agent"),
        "condition": summary0.get("condition"),
        "split": summary0.get("split"),
        "n_episodes": len(traces),
        "nav": nav_metrics(traces),
    }
    if any(t.summary.get("has_estimates") for t in traces):
        report["seld"] = {
            SOUNDING: seld_metrics(traces, SOUNDING),
            SILENT: seld_metrics(traces, SILENT),
        }
    report["curves"] = {
        factor: factor_curves(traces, factor, default_bins(traces, factor))
        for factor in ("action_ratio", "geodesic")
    }
    return report


def report_csv(report: dict) -> str:
    lines = ["metric,period,value"]
    for key in ("sr", "spl", "sna", "dtg", "sws", "dsr"):
        lines.append(f"{key.upper()},,{report['nav'][key]!r}")
    for period, block in report.get("seld", {}).items():
        for key in ("er", "f", "le_cd", "lr_cd", "rde"):
            lines.append(f"{key.upper()},{period},{block[key]!r}")
    return "\n".join(lines) + "\n"


def report_markdown(report: dict) -> str:
    nav = report["nav"]
    out = [
        f"## {report.get('agent')} / {report.get('condition')} / {report.get('split')}"
        f" ({report['n_episodes']} episodes)",
        "",
        "| SR | SPL | SNA | DTG (m) | SWS | DSR |",
        "|---:|---:|---:|---:|---:|---:|",
        "| {sr:.3f} | {spl:.3f} | {sna:.3f} | {dtg:.2f} | {sws:.3f} | {dsr:.3f} |".format(**nav),
    ]
    if "seld" in report:
        out += [
            "",
            "| Period | ER<=20 | F<=20 | LE_CD (deg) | LR_CD | RDE |",
            "|---|---:|---:|---:|---:|---:|",
        ]
        for period, b in report["seld"].items():
            out.append(
                f"| {period} | {b['er']:.3f} | {b['f']:.3f} | {b['le_cd']:.2f} | {b['lr_cd']:.3f} | {b['rde']:.3f} |"
            )
    return "\n".join(out) + "\n"


def curves_csv(curve: list[dict]) -> str:
    lines = ["bin_edge,cumulative_sr"]
    for point in curve:
        lines.append(f"{point['bin_edge']!r},{point['cumulative_sr']!r}")
    return "\n".join(lines) + "\n"
