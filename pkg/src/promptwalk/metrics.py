"""Evaluation metrics for comparing exploration strategies and RM training runs."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import ImageRecord


def topk_at_stop(record: ImageRecord) -> float:
    """Mean reward of the best 10% of trajectories (at least one).

    Trajectory reward is the mean of its step rewards.
    """
    rewards = record.trajectory_rewards()
    if not rewards:
        raise ValueError("record has no trajectories")
    k = max(1, int(math.floor(0.1 * len(rewards))))
    top = sorted(rewards, reverse=True)[:k]
    return sum(top) / k


def pareto_win_rate(
    records_a: Sequence[ImageRecord], records_b: Sequence[ImageRecord]
) -> float:
    """Percentage of images where A beats B on Top-K without a larger budget.

    Strict inequality on Top-K, so a strategy never Pareto-beats itself.
    """
    by_id_a = {r.image_id: r for r in records_a}
    by_id_b = {r.image_id: r for r in records_b}
    if set(by_id_a) != set(by_id_b):
        raise ValueError("record sets cover different images")
    if not by_id_a:
        raise ValueError("empty record sets")
    wins = 0
    for image_id, rec_a in by_id_a.items():
        rec_b = by_id_b[image_id]
        if topk_at_stop(rec_a) > topk_at_stop(rec_b) and rec_a.budget <= rec_b.budget:
            wins += 1
    return 100.0 * wins / len(by_id_a)


def action_entropy(counts: Sequence[float]) -> float:
    """Shannon entropy (nats) of the empirical action frequencies."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0.0:
        raise ValueError("counts must sum to a positive value")
    p = c / total
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def rm_loss_std(loss_history: Sequence[float]) -> float:
    """Sample standard deviation of the last 20% of epoch losses (minimum 2)."""
    if len(loss_history) < 2:
        raise ValueError("need at least two epochs of loss history")
    tail_len = max(2, int(math.ceil(0.2 * len(loss_history))))
    tail = np.asarray(loss_history[-tail_len:], dtype=np.float64)
    return float(tail.std(ddof=1))


def frobenius_delta(matrix_a: np.ndarray, matrix_b: np.ndarray) -> float:
    """Frobenius norm of the elementwise difference."""
    a = np.asarray(matrix_a, dtype=np.float64)
    b = np.asarray(matrix_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
