"""Derived statistics over benchmark results or published numbers.

Ingests per-language task scores and per-model efficiency metrics, computes
macro-averages and improvement factors against a baseline model, extracts
Pareto frontiers over (score, metric) pairs, and emits one CSV per figure.
All computation is full precision; rounding happens only at display time.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

LOWER_BETTER = "lower_better"
HIGHER_BETTER = "higher_better"


@dataclass
class ParetoPoint:
    model: str
    score: float
    metric: float
    orientation: str = LOWER_BETTER


@dataclass
class CurvePoint:
    batch_size: int
    latency_ms_mean: float
    throughput_sps: float
    j_per_sample: float


@dataclass
class ModelRecord:
    model: str
    scores: Optional[dict[str, float]] = None
    latency_bs1_ms: Optional[float] = None
    peak_throughput_sps: Optional[float] = None
    optimal_j_per_sample: Optional[float] = None
    curve: Optional[list[CurvePoint]] = None

    @property
    def avg_score(self) -> Optional[float]:
        if not self.scores:
            return None
        return macro_average(self.scores)


def macro_average(scores: Mapping[str, float]) -> float:
    """Unweighted arithmetic mean over languages."""
    if not scores:
        raise DataError("macro_average needs at least one language score")
    return sum(scores.values()) / len(scores)


def improvement_factor(baseline: float, candidate: float, orientation: str) -> float:
    """Relative speedup-style factor; the baseline is 1.0x by construction."""
    if baseline <= 0 or candidate <= 0:
        raise DataError(
            f"improvement_factor needs positive inputs, got {baseline} and {candidate}"
        )
    if orientation == LOWER_BETTER:
        return baseline / candidate
    if orientation == HIGHER_BETTER:
        return candidate / baseline
    raise DataError(f"unknown orientation '{orientation}'")


def _dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """Whether ``a`` dominates ``b``: at least as good on both axes, strictly
    better on one. Score is always higher-better; metric follows orientation."""
    if a.orientation == LOWER_BETTER:
        metric_geq = a.metric <= b.metric
        metric_strict = a.metric < b.metric
    else:
        metric_geq = a.metric >= b.metric
        metric_strict = a.metric > b.metric
    score_geq = a.score >= b.score
    score_strict = a.score > b.score
    return metric_geq and score_geq and (metric_strict or score_strict)


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset, sorted by metric; exact duplicates both survive."""
    points = list(points)
    if not points:
        return []
    orientations = {p.orientation for p in points}
    if len(orientations) > 1:
        raise DataError(f"mixed orientations in one frontier: {sorted(orientations)}")
    front = [
        p
        for p in points
        if not any(q is not p and _dominates(q, p) for q in points)
    ]
    return sorted(front, key=lambda p: (p.metric, -p.score, p.model))


# -- published-number ingestion ------------------------------------------------


def load_scores_csv(path) -> dict[str, dict[str, float]]:
    """``model,lang,score`` rows; scores must sit in [0, 100]."""
    out: dict[str, dict[str, float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"model", "lang", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"{path} must have columns {sorted(required)}")
        for row in reader:
            score = float(row["score"])
            if not 0.0 <= score <= 100.0:
                raise DataError(
                    f"{path}: score {score} for {row['model']}/{row['lang']} outside [0, 100]"
                )
            out.setdefault(row["model"], {})[row["lang"]] = score
    if not out:
        raise DataError(f"{path} contains no score rows")
    return out


EFFICIENCY_COLUMNS = ("latency_bs1_ms", "peak_throughput_sps", "optimal_j_per_sample")


def load_efficiency_csv(path) -> dict[str, dict[str, float]]:
    """``model`` plus positive latency/throughput/energy columns."""
    out: dict[str, dict[str, float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"model", *EFFICIENCY_COLUMNS}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"{path} must have columns {sorted(required)}")
        for row in reader:
            metrics = {}
            for col in EFFICIENCY_COLUMNS:
                val = float(row[col])
                if val <= 0:
                    raise DataError(f"{path}: {col}={val} for {row['model']} must be > 0")
                metrics[col] = val
            out[row["model"]] = metrics
    if not out:
        raise DataError(f"{path} contains no efficiency rows")
    return out


def build_records(
    scores: Optional[dict[str, dict[str, float]]] = None,
    efficiency: Optional[dict[str, dict[str, float]]] = None,
    curves: Optional[dict[str, list[CurvePoint]]] = None,
) -> list[ModelRecord]:
    """Join score and efficiency tables on model id."""
    models: list[str] = []
    for table in (scores, efficiency, curves):
        for m in table or {}:
            if m not in models:
                models.append(m)
    records = []
    for m in models:
        eff = (efficiency or {}).get(m, {})
        records.append(
            ModelRecord(
                model=m,
                scores=(scores or {}).get(m),
                latency_bs1_ms=eff.get("latency_bs1_ms"),
                peak_throughput_sps=eff.get("peak_throughput_sps"),
                optimal_j_per_sample=eff.get("optimal_j_per_sample"),
                curve=(curves or {}).get(m),
            )
        )
    return records


# -- summary table ---------------------------------------------------------------


def summary_table(records: Sequence[ModelRecord], baseline: str) -> list[dict]:
    """One row per model mirroring the condensed results-table layout:
    macro-average score plus latency, throughput, and energy factors
    relative to ``baseline``."""
    by_id = {r.model: r for r in records}
    if baseline not in by_id:
        raise DataError(f"baseline '{baseline}' not among models {sorted(by_id)}")
    base = by_id[baseline]
    for col in ("latency_bs1_ms", "peak_throughput_sps", "optimal_j_per_sample"):
        if getattr(base, col) is None:
            raise DataError(f"baseline '{baseline}' lacks efficiency column {col}")
    rows = []
    for r in records:
        row: dict = {"model": r.model, "avg_score": r.avg_score}
        row["latency_bs1_ms"] = r.latency_bs1_ms
        row["peak_throughput_sps"] = r.peak_throughput_sps
        row["optimal_j_per_sample"] = r.optimal_j_per_sample
        row["latency_impr"] = (
            improvement_factor(base.latency_bs1_ms, r.latency_bs1_ms, LOWER_BETTER)
            if r.latency_bs1_ms is not None
            else None
        )
        row["throughput_impr"] = (
            improvement_factor(base.peak_throughput_sps, r.peak_throughput_sps, HIGHER_BETTER)
            if r.peak_throughput_sps is not None
            else None
        )
        row["j_per_sample_impr"] = (
            improvement_factor(base.optimal_j_per_sample, r.optimal_j_per_sample, LOWER_BETTER)
            if r.optimal_j_per_sample is not None
            else None
        )
        rows.append(row)
    return rows


SUMMARY_COLUMNS = (
    "model",
    "avg_score",
    "latency_bs1_ms",
    "latency_impr",
    "peak_throughput_sps",
    "throughput_impr",
    "optimal_j_per_sample",
    "j_per_sample_impr",
)


def write_summary_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                ["" if row.get(c) is None else _fmt(row[c]) for c in SUMMARY_COLUMNS]
            )


def format_summary(rows: Sequence[dict]) -> str:
    """Human-readable table at display precision (1 d.p. scores and factors)."""
    header = f"{'model':<18}{'avg':>7}{'lat ms':>9}{'lat x':>7}{'tput':>10}{'tput x':>8}{'J/sample':>10}{'J x':>7}"
    lines = [header]
    for r in rows:
        def cell(v, spec):
            return "-" if v is None else format(v, spec)

        lines.append(
            f"{r['model']:<18}"
            f"{cell(r['avg_score'], '.1f'):>7}"
            f"{cell(r['latency_bs1_ms'], '.2f'):>9}"
            f"{cell(r['latency_impr'], '.1f'):>7}"
            f"{cell(r['peak_throughput_sps'], '.1f'):>10}"
            f"{cell(r['throughput_impr'], '.1f'):>8}"
            f"{cell(r['optimal_j_per_sample'], '.4f'):>10}"
            f"{cell(r['j_per_sample_impr'], '.1f'):>7}"
        )
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


# -- figure emission -----------------------------------------------------------------


def _frontier_figure(
    records: Sequence[ModelRecord], metric_attr: str, orientation: str
) -> Optional[list[dict]]:
    usable = [
        r
        for r in records
        if r.scores and getattr(r, metric_attr) is not None
    ]
    if not usable:
        return None
    points = [
        ParetoPoint(r.model, r.avg_score, getattr(r, metric_attr), orientation) for r in usable
    ]
    front = {p.model for p in pareto_frontier(points)}
    return [
        {
            "model": p.model,
            "score": p.score,
            "metric": p.metric,
            "on_frontier": p.model in front,
        }
        for p in sorted(points, key=lambda p: (p.metric, p.model))
    ]


FIGURES = {
    "fig_score_vs_latency.csv": ("latency_bs1_ms", LOWER_BETTER),
    "fig_score_vs_throughput.csv": ("peak_throughput_sps", HIGHER_BETTER),
    "fig_score_vs_optimal_energy.csv": ("optimal_j_per_sample", LOWER_BETTER),
}


def emit_figures(records: Sequence[ModelRecord], out_dir) -> list[str]:
    """Write one CSV per figure; figures lacking their fields are skipped
    with a warning. Output is deterministic for identical records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    for filename, (attr, orientation) in FIGURES.items():
        rows = _frontier_figure(records, attr, orientation)
        if rows is None:
            log.warning("skipping %s: no record has both scores and %s", filename, attr)
            continue
        path = out_dir / filename
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "score", attr, "on_frontier"])
            for row in rows:
                writer.writerow(
                    [row["model"], _fmt(row["score"]), _fmt(row["metric"]), str(row["on_frontier"]).lower()]
                )
        written.append(str(path))

    curve_rows = [r for r in records if r.curve]
    curve_figures = {
        "fig_energy_vs_throughput.csv": ("throughput_sps", "j_per_sample"),
        "fig_energy_vs_latency.csv": ("latency_ms_mean", "j_per_sample"),
    }
    for filename, (x_attr, y_attr) in curve_figures.items():
        if not curve_rows:
            log.warning("skipping %s: no record carries per-batch-size curves", filename)
            continue
        path = out_dir / filename
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "batch_size", x_attr, y_attr])
            for r in curve_rows:
                for point in sorted(r.curve, key=lambda c: c.batch_size):
                    writer.writerow(
                        [r.model, point.batch_size, _fmt(getattr(point, x_attr)), _fmt(getattr(point, y_attr))]
                    )
        written.append(str(path))
    return written
