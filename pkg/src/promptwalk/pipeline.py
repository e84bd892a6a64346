"""Batch orchestration: prepare scenes once, then sample or infer over them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .actions import ActionConfig, DEFAULT_CONFIG, Lexicon, PhraseTable
from .bandit import (
    ACTIONS,
    ArmStats,
    Policy,
    SampleResult,
    StopThresholds,
    make_policy,
    sample_image,
)
from .core import ActionId, BoundingBox, ImageRecord, NUM_ACTIONS
from .env import MockDetector, SceneSpec, gen_scene, stable_seed
from .model import InferenceTrace, RmWeights, run_inference
from .raster import RasterImage


@dataclass
class PreparedScene:
    """Rendered scene with its phrase table; reusable across runs and seeds."""

    spec: SceneSpec
    image: RasterImage
    gt_box: BoundingBox
    phrases: PhraseTable


def prepare_scenes(
    specs: Sequence[SceneSpec],
    lexicon: Lexicon,
    config: ActionConfig = DEFAULT_CONFIG,
) -> list[PreparedScene]:
    prepared = []
    for spec in specs:
        image, gt_box = gen_scene(spec)
        phrases = PhraseTable.compute(image, gt_box, spec.noun, lexicon, config)
        prepared.append(
            PreparedScene(spec=spec, image=image, gt_box=gt_box, phrases=phrases)
        )
    return prepared


@dataclass
class BatchSampleResult:
    records: list[ImageRecord]
    action_counts: np.ndarray  # pooled selections per action (index 1..7)


def run_sampling(
    prepared: Sequence[PreparedScene],
    lexicon: Lexicon,
    policy: Policy,
    seed: int,
    thresholds: StopThresholds = StopThresholds(),
    gt_weight: float = 0.5,
    config: ActionConfig = DEFAULT_CONFIG,
    share_stats: bool = True,
) -> BatchSampleResult:
    """Sample every prepared scene with one policy; reproducible per seed.

    Arm estimates carry across the whole batch by default, so value-based
    policies keep learning from scene to scene; transition posteriors are
    always per-image. ``share_stats=False`` restarts exploration per image.
    """
    records = []
    pooled = np.zeros(NUM_ACTIONS + 1, dtype=np.int64)
    shared = ArmStats() if share_stats else None
    for scene in prepared:
        detector = MockDetector(scene.spec, seed=seed)
        result = sample_image(
            image=scene.image,
            prompt=scene.spec.initial_prompt(),
            detector=detector,
            lexicon=lexicon,
            policy=policy,
            thresholds=thresholds,
            seed=stable_seed(seed, "policy", scene.spec.image_id),
            image_id=scene.spec.image_id,
            gt_box=scene.gt_box,
            gt_weight=gt_weight,
            roi=scene.gt_box,
            config=config,
            phrases=scene.phrases,
            stats=shared,
        )
        records.append(result.record)
        pooled += result.action_counts
    return BatchSampleResult(records=records, action_counts=pooled)


def run_sampling_by_name(
    prepared: Sequence[PreparedScene],
    lexicon: Lexicon,
    policy_name: str,
    seed: int,
    thresholds: StopThresholds = StopThresholds(),
    explore: float = 1.0,
    eps: float = 0.1,
    gt_weight: float = 0.5,
    config: ActionConfig = DEFAULT_CONFIG,
) -> BatchSampleResult:
    policy = make_policy(policy_name, explore=explore, eps=eps)
    return run_sampling(
        prepared, lexicon, policy, seed, thresholds, gt_weight, config
    )


def run_inference_batch(
    prepared: Sequence[PreparedScene],
    lexicon: Lexicon,
    weights: Optional[RmWeights],
    seed: int,
    thresholds: StopThresholds = StopThresholds(),
    mode: str = "policy",
    alpha: float = 0.5,
    gt_weight: float = 0.5,
    config: ActionConfig = DEFAULT_CONFIG,
    random_baseline: bool = False,
) -> list[InferenceTrace]:
    """Model-guided (or uniformly random, for the baseline) rollouts per scene."""
    if weights is None and not random_baseline:
        raise ValueError("weights are required unless random_baseline is set")
    traces = []
    for scene in prepared:
        detector = MockDetector(scene.spec, seed=seed)
        select = None
        rollout_weights = weights
        if random_baseline:
            rng = np.random.default_rng(stable_seed(seed, "rollout", scene.spec.image_id))
            select = lambda unit, cands: ACTIONS[int(rng.integers(NUM_ACTIONS))]  # noqa: E731
            rollout_weights = RmWeights.zeros(hidden=4)
        traces.append(
            run_inference(
                image=scene.image,
                prompt=scene.spec.initial_prompt(),
                detector=detector,
                weights=rollout_weights,
                lexicon=lexicon,
                thresholds=thresholds,
                mode=mode,
                alpha=alpha,
                image_id=scene.spec.image_id,
                gt_box=scene.gt_box,
                gt_weight=gt_weight,
                roi=scene.gt_box,
                config=config,
                phrases=scene.phrases,
                select=select,
            )
        )
    return traces


def action_sequence_rollout(
    scene: PreparedScene,
    lexicon: Lexicon,
    actions: Sequence[ActionId],
    seed: int,
    thresholds: StopThresholds = StopThresholds(),
    gt_weight: float = 0.5,
    config: ActionConfig = DEFAULT_CONFIG,
) -> InferenceTrace:
    """Roll out a fixed action sequence (used by action-set ablations)."""
    queue = list(actions)

    def fixed_select(unit, cands):
        return queue.pop(0)

    capped = StopThresholds(
        state_delta=thresholds.state_delta,
        reward_delta=thresholds.reward_delta,
        reward_eps=thresholds.reward_eps,
        posterior_eps=thresholds.posterior_eps,
        max_steps=min(thresholds.max_steps, len(queue)),
        max_episodes=thresholds.max_episodes,
    )
    detector = MockDetector(scene.spec, seed=seed)
    return run_inference(
        image=scene.image,
        prompt=scene.spec.initial_prompt(),
        detector=detector,
        weights=RmWeights.zeros(hidden=4),
        lexicon=lexicon,
        thresholds=capped,
        image_id=scene.spec.image_id,
        gt_box=scene.gt_box,
        gt_weight=gt_weight,
        roi=scene.gt_box,
        config=config,
        phrases=scene.phrases,
        select=fixed_select,
    )
