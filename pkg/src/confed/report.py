"""Run reports: per-round summary text, CSV, and figures.

``summarize_metrics`` reduces a metrics.csv to per-round min/avg/max of
the metric across learners plus the active-model and fork trajectories.
``write_report`` renders that summary three ways next to each other: a
human-readable text block, ``report.csv`` for downstream tooling, and two
PNG figures (metric envelope, model-count trajectory).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


@dataclass
class RoundSummary:
    round: int
    minimum: float
    average: float
    maximum: float
    active_models: int
    forks: int
    rows: int


@dataclass
class MetricsSummary:
    metric_kind: str
    rounds: list[RoundSummary]

    @property
    def final(self) -> RoundSummary:
        return self.rounds[-1]


def read_metrics(path) -> list[dict]:
    """Parse metrics.csv rows with typed fields."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {
            "round", "learner_id", "model_id", "metric_kind", "value",
            "models_trained", "active_model_count", "fork_count_this_round",
        }
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "round": int(row["round"]),
                    "learner_id": row["learner_id"],
                    "model_id": row["model_id"],
                    "metric_kind": row["metric_kind"],
                    "value": float(row["value"]),
                    "models_trained": int(row["models_trained"]),
                    "active_model_count": int(row["active_model_count"]),
                    "fork_count_this_round": int(row["fork_count_this_round"]),
                })
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed row ({exc})") from exc
    if not rows:
        raise ValueError(f"{path}: no metric rows")
    return rows


def summarize_metrics(rows: list[dict]) -> MetricsSummary:
    kinds = {row["metric_kind"] for row in rows}
    if len(kinds) != 1:
        raise ValueError(f"mixed metric kinds in one file: {sorted(kinds)}")
    by_round: dict[int, list[dict]] = {}
    for row in rows:
        by_round.setdefault(row["round"], []).append(row)
    summaries = []
    for round_no in sorted(by_round):
        values = [row["value"] for row in by_round[round_no]]
        first = by_round[round_no][0]
        summaries.append(RoundSummary(
            round=round_no,
            minimum=min(values),
            average=sum(values) / len(values),
            maximum=max(values),
            active_models=first["active_model_count"],
            forks=first["fork_count_this_round"],
            rows=len(values),
        ))
    return MetricsSummary(metric_kind=kinds.pop(), rounds=summaries)


def format_report(summary: MetricsSummary) -> str:
    lines = [
        f"metric: {summary.metric_kind}",
        f"rounds: {len(summary.rounds)}",
        "",
        f"{'round':>5}  {'min':>10}  {'avg':>10}  {'max':>10}  {'active':>6}  {'forks':>5}",
    ]
    for rs in summary.rounds:
        lines.append(
            f"{rs.round:>5}  {rs.minimum:>10.4f}  {rs.average:>10.4f}  "
            f"{rs.maximum:>10.4f}  {rs.active_models:>6}  {rs.forks:>5}"
        )
    final = summary.final
    total_forks = sum(rs.forks for rs in summary.rounds)
    lines += [
        "",
        f"final round {final.round}: min={final.minimum:.4f} "
        f"avg={final.average:.4f} max={final.maximum:.4f}",
        f"final active models: {final.active_models}",
        f"cumulative forks: {total_forks}",
    ]
    return "\n".join(lines) + "\n"


def write_report_csv(summary: MetricsSummary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "min", "avg", "max", "active_models", "forks"])
        for rs in summary.rounds:
            writer.writerow([
                rs.round, f"{rs.minimum:.17g}", f"{rs.average:.17g}",
                f"{rs.maximum:.17g}", rs.active_models, rs.forks,
            ])


def render_metric_figure(summary: MetricsSummary, path) -> None:
    """Min/avg/max metric envelope across learners, per round."""
    rounds = [rs.round for rs in summary.rounds]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(
        rounds,
        [rs.minimum for rs in summary.rounds],
        [rs.maximum for rs in summary.rounds],
        alpha=0.25, label="min-max across learners",
    )
    ax.plot(rounds, [rs.average for rs in summary.rounds], marker="o", markersize=3, label="average")
    ax.set_xlabel("round")
    ax.set_ylabel(summary.metric_kind)
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_model_count_figure(summary: MetricsSummary, path) -> None:
    """Active-model and fork trajectories, per round."""
    rounds = [rs.round for rs in summary.rounds]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.step(rounds, [rs.active_models for rs in summary.rounds], where="mid", label="active models")
    ax.bar(rounds, [rs.forks for rs in summary.rounds], alpha=0.4, label="forks this round")
    ax.set_xlabel("round")
    ax.set_ylabel("count")
    ax.yaxis.get_major_locator().set_params(integer=True)
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(metrics_path, out_dir=None) -> tuple[str, dict[str, Path]]:
    """Produce the full report bundle next to the metrics file.

    Returns the summary text plus the paths of report.csv and the two
    figures.
    """
    metrics_path = Path(metrics_path)
    out = Path(out_dir) if out_dir is not None else metrics_path.parent
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize_metrics(read_metrics(metrics_path))
    paths = {
        "csv": out / "report.csv",
        "metric_figure": out / "report_metric.png",
        "models_figure": out / "report_models.png",
    }
    write_report_csv(summary, paths["csv"])
    render_metric_figure(summary, paths["metric_figure"])
    render_model_count_figure(summary, paths["models_figure"])
    return format_report(summary), paths
