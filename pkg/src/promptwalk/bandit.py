"""Action-selection policies, transition bookkeeping, stopping rules, sampling loop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .actions import ActionConfig, DEFAULT_CONFIG, Lexicon, PhraseTable, apply_action
from .core import (
    ActionId,
    BoundingBox,
    ImageRecord,
    NUM_ACTIONS,
    NUM_STATES,
    PromptState,
    ScoreStats,
    TrajectoryStep,
    VisualContext,
    WeakUnit,
    context_distance,
    make_weak_unit,
    normalized_entropy,
)
from .env import DetectorPort, step_reward
from .raster import RasterImage

ACTIONS = tuple(ActionId)


@dataclass(frozen=True)
class StopThresholds:
    """Trajectory- and image-level termination thresholds."""

    state_delta: float = 0.02
    reward_delta: float = 1e-3
    reward_eps: float = 1e-3
    posterior_eps: float = 1e-3
    max_steps: int = 7
    max_episodes: int = 50

    def __post_init__(self) -> None:
        for name in ("state_delta", "reward_delta", "reward_eps", "posterior_eps"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps < 0 or self.max_episodes < 1:
            raise ValueError("max_steps must be >= 0 and max_episodes >= 1")


class ArmStats:
    """Running mean reward and visit count per (state, action) pair."""

    def __init__(self) -> None:
        self.mean = np.zeros((NUM_STATES, NUM_ACTIONS + 1))
        self.count = np.zeros((NUM_STATES, NUM_ACTIONS + 1), dtype=np.int64)

    def update(self, state: int, action: ActionId, reward: float) -> None:
        a = int(action)
        self.count[state, a] += 1
        n = self.count[state, a]
        self.mean[state, a] += (reward - self.mean[state, a]) / n

    def mean_for(self, state: int, action: ActionId) -> float:
        return float(self.mean[state, int(action)])

    def count_for(self, state: int, action: ActionId) -> int:
        return int(self.count[state, int(action)])

    def total_pulls(self) -> int:
        """Total decisions recorded across all states."""
        return int(self.count.sum())


@dataclass(frozen=True)
class DirichletCounts:
    """8x8 transition pseudo-counts; column 0 (initial state) is never a successor."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=np.float64)
        if c.shape != (NUM_STATES, NUM_STATES):
            raise ValueError(f"counts shape {c.shape} != (8, 8)")
        if np.any(c < 0.0):
            raise ValueError("negative pseudo-counts")
        if np.any(c[:, 0] != 0.0):
            raise ValueError("column 0 must stay zero")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @classmethod
    def fresh(cls) -> "DirichletCounts":
        c = np.ones((NUM_STATES, NUM_STATES))
        c[:, 0] = 0.0
        return cls(c)


def update_dirichlet(
    counts: DirichletCounts, from_state: int, to_state: int
) -> DirichletCounts:
    """Record one observed transition; the initial state cannot be a successor."""
    if not 0 <= from_state < NUM_STATES:
        raise ValueError(f"from_state {from_state} out of range")
    if not 1 <= to_state < NUM_STATES:
        raise ValueError(f"to_state {to_state} must be in 1..7")
    c = counts.counts.copy()
    c[from_state, to_state] += 1.0
    return DirichletCounts(c)


def posterior(counts: DirichletCounts) -> np.ndarray:
    """Posterior-mean transition matrix: rows normalized over successors 1..7."""
    totals = counts.counts[:, 1:].sum(axis=1)
    if np.any(totals <= 0.0):
        raise ValueError("every row needs positive total pseudo-count")
    return counts.counts / totals[:, None]


def ucb_select(
    stats: ArmStats, state: int, t: int, explore: float = 1.0
) -> ActionId:
    """Highest mean-plus-bonus arm; unvisited arms score as mean 0.

    Bonus = explore * sqrt(ln(max(2, t)) / (1 + n)). Ties go to the smallest
    action index.
    """
    if explore < 0.0:
        raise ValueError("explore must be >= 0")
    log_t = math.log(max(2, t))
    best, best_q = ACTIONS[0], -math.inf
    for action in ACTIONS:
        n = stats.count_for(state, action)
        mu = stats.mean_for(state, action) if n > 0 else 0.0
        q = mu + explore * math.sqrt(log_t / (1 + n))
        if q > best_q:
            best, best_q = action, q
    return best


def baseline_select(
    kind: str,
    stats: ArmStats,
    state: int,
    rng: np.random.Generator,
    eps: float = 0.1,
) -> ActionId:
    """Reference policies: random, greedy over means, or epsilon-greedy.

    The value-based policies try each untried arm once (smallest index first)
    before exploiting; with every reward nonnegative, a plain argmax against
    a zero default would lock onto its first arm forever and never rank.
    """
    if kind == "random":
        return ACTIONS[int(rng.integers(NUM_ACTIONS))]
    if kind == "greedy":
        for action in ACTIONS:
            if stats.count_for(state, action) == 0:
                return action
        best, best_mu = ACTIONS[0], -math.inf
        for action in ACTIONS:
            mu = stats.mean_for(state, action)
            if mu > best_mu:
                best, best_mu = action, mu
        return best
    if kind == "eps_greedy":
        if rng.random() < eps:
            return ACTIONS[int(rng.integers(NUM_ACTIONS))]
        return baseline_select("greedy", stats, state, rng)
    raise ValueError(f"unknown baseline kind {kind!r}")


class Policy:
    """Selection strategy interface used by the sampling loop."""

    name = "policy"

    def select(
        self, stats: ArmStats, state: int, t: int, rng: np.random.Generator
    ) -> ActionId:
        raise NotImplementedError


class UcbPolicy(Policy):
    name = "ucb"

    def __init__(self, explore: float = 1.0):
        self.explore = explore

    def select(self, stats, state, t, rng):
        return ucb_select(stats, state, t, self.explore)


class RandomPolicy(Policy):
    name = "random"

    def select(self, stats, state, t, rng):
        return baseline_select("random", stats, state, rng)


class GreedyPolicy(Policy):
    name = "greedy"

    def select(self, stats, state, t, rng):
        return baseline_select("greedy", stats, state, rng)


class EpsGreedyPolicy(Policy):
    name = "eps"

    def __init__(self, eps: float = 0.1):
        self.eps = eps

    def select(self, stats, state, t, rng):
        return baseline_select("eps_greedy", stats, state, rng, self.eps)


def make_policy(name: str, explore: float = 1.0, eps: float = 0.1) -> Policy:
    table = {
        "ucb": lambda: UcbPolicy(explore),
        "random": RandomPolicy,
        "greedy": GreedyPolicy,
        "eps": lambda: EpsGreedyPolicy(eps),
        "eps_greedy": lambda: EpsGreedyPolicy(eps),
    }
    if name not in table:
        raise ValueError(f"unknown policy {name!r}")
    return table[name]()


def traj_stop(
    unit_prev: WeakUnit,
    unit_cur: WeakUnit,
    reward_prev: float,
    reward_cur: float,
    t: int,
    thresholds: StopThresholds,
) -> bool:
    """Trajectory termination: context stabilized, reward converged, or step cap.

    The first step passes reward_prev = 0, so its reward-convergence test
    compares against zero rather than being skipped.
    """
    if t >= thresholds.max_steps:
        return True
    if context_distance(unit_prev, unit_cur) < thresholds.state_delta:
        return True
    if abs(reward_cur - reward_prev) < thresholds.reward_delta:
        return True
    return False


def image_stop(
    episode_mean_rewards: list[float],
    posterior_prev: np.ndarray,
    posterior_cur: np.ndarray,
    episode: int,
    thresholds: StopThresholds,
) -> bool:
    """Image-level termination: flat episode rewards, frozen posterior, or cap."""
    if episode < 1:
        raise ValueError("episode must be >= 1")
    if episode >= thresholds.max_episodes:
        return True
    delta = np.asarray(posterior_cur) - np.asarray(posterior_prev)
    if float(np.linalg.norm(delta)) < thresholds.posterior_eps:
        return True
    if len(episode_mean_rewards) >= 2:
        if abs(episode_mean_rewards[-1] - episode_mean_rewards[-2]) < thresholds.reward_eps:
            return True
    return False


def _score_stats(scores: tuple[float, ...], n_boxes: int) -> ScoreStats:
    return ScoreStats(
        max_score=max(scores),
        entropy=normalized_entropy(scores),
        n_boxes=n_boxes,
    )


@dataclass
class SampleResult:
    record: ImageRecord
    stats: ArmStats
    counts: DirichletCounts
    action_counts: np.ndarray  # selections per action over the whole run


def sample_image(
    image: RasterImage,
    prompt: PromptState,
    detector: DetectorPort,
    lexicon: Lexicon,
    policy: Policy,
    thresholds: StopThresholds,
    seed: int,
    image_id: str = "image",
    gt_box: Optional[BoundingBox] = None,
    gt_weight: float = 0.5,
    roi: Optional[BoundingBox] = None,
    config: ActionConfig = DEFAULT_CONFIG,
    phrases: Optional[PhraseTable] = None,
    stats: Optional[ArmStats] = None,
) -> SampleResult:
    """Run bandit episodes on one image until the image-level stop fires.

    Each episode restarts from the bare prompt; arm statistics and Dirichlet
    counts carry across episodes. Passing ``stats`` shares arm estimates
    across images (the batch runners do); by default each image explores
    fresh. Transition counts and the posterior are always per-image. Episodes
    where the detector raises are kept as partial trajectories and flagged in
    the record. Fully reproducible for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    if roi is None:
        roi = BoundingBox(0.0, 0.0, float(image.width), float(image.height))
    if phrases is None:
        phrases = PhraseTable.compute(image, roi, prompt.base_noun, lexicon, config)
    if stats is None:
        stats = ArmStats()
    counts = DirichletCounts.fresh()
    posterior_prev = posterior(counts)
    trajectories: list[tuple[TrajectoryStep, ...]] = []
    episode_means: list[float] = []
    aborted: list[int] = []
    action_counts = np.zeros(NUM_ACTIONS + 1, dtype=np.int64)

    for episode in range(1, thresholds.max_episodes + 1):
        context = VisualContext(image_id=image_id, roi=roi, prompt=prompt, step=0)
        steps: list[TrajectoryStep] = []
        failed = False
        try:
            detection = detector.detect(image, context.prompt)
        except Exception:
            aborted.append(episode)
            trajectories.append(())
            episode_means.append(0.0)
            posterior_cur = posterior(counts)
            if image_stop(episode_means, posterior_prev, posterior_cur, episode, thresholds):
                break
            posterior_prev = posterior_cur
            continue
        unit = make_weak_unit(context, None, detection, thresholds.max_steps)
        reward_prev = 0.0
        t = 0
        while t < thresholds.max_steps:
            # the UCB log term counts every decision so far, so the bonus of a
            # rarely-tried arm keeps growing until it gets probed again
            action = policy.select(stats, unit.state, stats.total_pulls(), rng)
            action_counts[int(action)] += 1
            next_context = apply_action(
                context, action, image, lexicon, config, phrases
            )
            try:
                next_detection = detector.detect(image, next_context.prompt)
            except Exception:
                failed = True
                break
            next_unit = make_weak_unit(
                next_context, action, next_detection, thresholds.max_steps
            )
            reward = step_reward(
                next_detection.top_box(),
                gt_box,
                detection.top_scores(),
                next_detection.top_scores(),
                gt_weight,
            )
            counts = update_dirichlet(counts, unit.state, next_unit.state)
            stats.update(unit.state, action, reward)
            steps.append(
                TrajectoryStep(
                    z_from=unit,
                    action=action,
                    z_to=next_unit,
                    reward=reward,
                    stats_before=_score_stats(
                        detection.top_scores(), len(detection.boxes)
                    ),
                    stats_after=_score_stats(
                        next_detection.top_scores(), len(next_detection.boxes)
                    ),
                )
            )
            t += 1
            stop = traj_stop(unit, next_unit, reward_prev, reward, t, thresholds)
            reward_prev = reward
            context, unit, detection = next_context, next_unit, next_detection
            if stop:
                break
        if failed:
            aborted.append(episode)
        trajectories.append(tuple(steps))
        episode_means.append(
            sum(s.reward for s in steps) / len(steps) if steps else 0.0
        )
        posterior_cur = posterior(counts)
        if image_stop(episode_means, posterior_prev, posterior_cur, episode, thresholds):
            break
        posterior_prev = posterior_cur

    record = ImageRecord(
        image_id=image_id,
        trajectories=tuple(trajectories),
        transition_posterior=posterior(counts),
        aborted_episodes=tuple(aborted),
    )
    return SampleResult(
        record=record, stats=stats, counts=counts, action_counts=action_counts
    )
