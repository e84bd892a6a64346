"""Exploration-strategy evaluation: metrics table, JSON summary, and figures."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .actions import Lexicon
from .bandit import StopThresholds
from .metrics import action_entropy, pareto_win_rate, topk_at_stop
from .pipeline import PreparedScene, prepare_scenes, run_sampling_by_name
from .env import SceneSpec

REPORT_COLUMNS = ("strategy", "topk_mean", "topk_std", "pwr", "entropy", "budget_mean")


@dataclass
class StrategySummary:
    strategy: str
    topk_mean: float
    topk_std: float
    pwr: float
    entropy: float
    budget_mean: float

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "topk_mean": self.topk_mean,
            "topk_std": self.topk_std,
            "pwr": self.pwr,
            "entropy": self.entropy,
            "budget_mean": self.budget_mean,
        }


def evaluate_strategies(
    specs: Sequence[SceneSpec],
    lexicon: Lexicon,
    strategies: Sequence[str] = ("ucb", "eps", "greedy", "random"),
    seeds: Sequence[int] = (0, 1, 2),
    thresholds: StopThresholds = StopThresholds(),
    explore: float = 1.0,
    eps: float = 0.1,
    gt_weight: float = 0.5,
    prepared: Optional[Sequence[PreparedScene]] = None,
) -> dict:
    """Sample every strategy over the scene batch for each seed.

    The Pareto-win-rate column compares each strategy against the ``random``
    runs of the same seed (0 when random is absent or for random itself).
    """
    if prepared is None:
        prepared = prepare_scenes(specs, lexicon)
    per_seed_topk: dict[str, list[float]] = {s: [] for s in strategies}
    per_seed_records: dict[tuple[str, int], list] = {}
    budgets: dict[str, list[float]] = {s: [] for s in strategies}
    counts: dict[str, np.ndarray] = {}
    for strategy in strategies:
        pooled = None
        for seed in seeds:
            batch = run_sampling_by_name(
                prepared,
                lexicon,
                strategy,
                seed,
                thresholds,
                explore=explore,
                eps=eps,
                gt_weight=gt_weight,
            )
            per_seed_records[(strategy, seed)] = batch.records
            per_seed_topk[strategy].append(
                float(np.mean([topk_at_stop(r) for r in batch.records]))
            )
            budgets[strategy].extend(r.budget for r in batch.records)
            pooled = batch.action_counts if pooled is None else pooled + batch.action_counts
        counts[strategy] = pooled

    summaries = []
    for strategy in strategies:
        topks = np.asarray(per_seed_topk[strategy])
        pwr = 0.0
        if "random" in strategies and strategy != "random":
            pwr = float(
                np.mean(
                    [
                        pareto_win_rate(
                            per_seed_records[(strategy, seed)],
                            per_seed_records[("random", seed)],
                        )
                        for seed in seeds
                    ]
                )
            )
        summaries.append(
            StrategySummary(
                strategy=strategy,
                topk_mean=float(topks.mean()),
                topk_std=float(topks.std(ddof=1)) if len(topks) > 1 else 0.0,
                pwr=pwr,
                entropy=float(action_entropy(counts[strategy][1:])),
                budget_mean=float(np.mean(budgets[strategy])),
            )
        )
    return {
        "n_scenes": len(prepared),
        "seeds": list(seeds),
        "strategies": [s.as_dict() for s in summaries],
        "per_seed_topk": {s: per_seed_topk[s] for s in strategies},
    }


def render_report_text(report: dict) -> str:
    """Line-oriented table, one row per strategy."""
    lines = [
        f"exploration evaluation: {report['n_scenes']} scenes, seeds {report['seeds']}",
        f"{'strategy':<10} {'topk_mean':>10} {'topk_std':>10} {'pwr':>8} "
        f"{'entropy':>9} {'budget':>8}",
    ]
    for row in report["strategies"]:
        lines.append(
            f"{row['strategy']:<10} {row['topk_mean']:>10.4f} {row['topk_std']:>10.4f} "
            f"{row['pwr']:>8.1f} {row['entropy']:>9.4f} {row['budget_mean']:>8.2f}"
        )
    return "\n".join(lines) + "\n"


def _figure_paths(report_path: Path) -> tuple[Path, Path]:
    stem = report_path.with_suffix("")
    return (
        stem.parent / f"{stem.name}_topk.png",
        stem.parent / f"{stem.name}_budget.png",
    )


def render_figures(report: dict, report_path: os.PathLike) -> list[Path]:
    """Bar chart of Top-K per strategy and a budget/quality scatter, as PNGs.

    Saved next to the report file with deterministic bytes.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = report["strategies"]
    names = [r["strategy"] for r in rows]
    topk_path, budget_path = _figure_paths(Path(report_path))

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    means = [r["topk_mean"] for r in rows]
    stds = [r["topk_std"] for r in rows]
    ax.bar(names, means, yerr=stds, capsize=4, color="#4878d0")
    ax.set_ylabel("Top-K@Stop")
    ax.set_title("Exploration quality by strategy")
    fig.tight_layout()
    fig.savefig(topk_path, dpi=120, metadata={"Software": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for row in rows:
        ax.scatter(row["budget_mean"], row["topk_mean"], label=row["strategy"], s=45)
    ax.set_xlabel("mean trajectories per image")
    ax.set_ylabel("Top-K@Stop")
    ax.set_title("Sampling budget vs quality")
    ax.legend()
    fig.tight_layout()
    fig.savefig(budget_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return [topk_path, budget_path]


def write_report(
    report: dict, report_path: os.PathLike, figures: bool = True
) -> list[Path]:
    """Write the text table, a JSON twin (same stem), and optionally figures."""
    path = Path(report_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report_text(report), encoding="utf-8")
    json_path = path.with_suffix(".json")
    json_path.write_text(
        json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    written = [path, json_path]
    if figures:
        written.extend(render_figures(report, path))
    return written
