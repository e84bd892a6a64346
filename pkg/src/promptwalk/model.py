"""Dual-head reward/policy network: forward pass, loss, gradients, training, inference.

The network is a two-hidden-layer tanh MLP with a 7-way softmax policy head
and a sigmoid scalar reward head. Parameters are stored as float32; all math
runs in float64 so gradients check against finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Sequence

import numpy as np

from .actions import ActionConfig, DEFAULT_CONFIG, Lexicon, PhraseTable, apply_action
from .bandit import StopThresholds, traj_stop
from .core import (
    ActionId,
    BoundingBox,
    DetectionResult,
    FEATURE_DIM,
    ImageRecord,
    NUM_ACTIONS,
    PromptState,
    VisualContext,
    WeakUnit,
    iou,
    make_weak_unit,
)
from .env import DetectorPort, step_reward
from .raster import RasterImage

WEIGHT_MAGIC = b"OVRM"
WEIGHT_VERSION = 1
DEFAULT_HIDDEN = 64

ACTIONS = tuple(ActionId)


@dataclass
class RmWeights:
    """Affine parameters for both hidden layers and both heads (float32)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_policy: np.ndarray
    b_policy: np.ndarray
    w_reward: np.ndarray
    b_reward: np.ndarray

    def __post_init__(self) -> None:
        hidden = self.w1.shape[0]
        expected = {
            "w1": (hidden, FEATURE_DIM),
            "b1": (hidden,),
            "w2": (hidden, hidden),
            "b2": (hidden,),
            "w_policy": (NUM_ACTIONS, hidden),
            "b_policy": (NUM_ACTIONS,),
            "w_reward": (1, hidden),
            "b_reward": (1,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape} != {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            setattr(self, name, arr)

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    @classmethod
    def zeros(cls, hidden: int = DEFAULT_HIDDEN) -> "RmWeights":
        return cls(
            w1=np.zeros((hidden, FEATURE_DIM), dtype=np.float32),
            b1=np.zeros(hidden, dtype=np.float32),
            w2=np.zeros((hidden, hidden), dtype=np.float32),
            b2=np.zeros(hidden, dtype=np.float32),
            w_policy=np.zeros((NUM_ACTIONS, hidden), dtype=np.float32),
            b_policy=np.zeros(NUM_ACTIONS, dtype=np.float32),
            w_reward=np.zeros((1, hidden), dtype=np.float32),
            b_reward=np.zeros(1, dtype=np.float32),
        )

    @classmethod
    def init_random(
        cls, seed: int, hidden: int = DEFAULT_HIDDEN, scale: float = 0.1
    ) -> "RmWeights":
        rng = np.random.default_rng(seed)

        def u(*shape: int) -> np.ndarray:
            return rng.uniform(-scale, scale, size=shape).astype(np.float32)

        return cls(
            w1=u(hidden, FEATURE_DIM),
            b1=u(hidden),
            w2=u(hidden, hidden),
            b2=u(hidden),
            w_policy=u(NUM_ACTIONS, hidden),
            b_policy=u(NUM_ACTIONS),
            w_reward=u(1, hidden),
            b_reward=u(1),
        )

    def as_float64(self) -> dict[str, np.ndarray]:
        return {
            name: np.asarray(getattr(self, name), dtype=np.float64)
            for name in PARAM_NAMES
        }

    @classmethod
    def from_float64(cls, params: dict[str, np.ndarray]) -> "RmWeights":
        return cls(**{name: params[name].astype(np.float32) for name in PARAM_NAMES})


PARAM_NAMES = ("w1", "b1", "w2", "b2", "w_policy", "b_policy", "w_reward", "b_reward")


@dataclass(frozen=True)
class RmOutput:
    policy: np.ndarray  # probabilities over the 7 actions, sums to 1
    reward: float  # sigmoid-squashed scalar in [0, 1]


@dataclass(frozen=True)
class LossWeights:
    """Loss-term weights; sample weights are per-image min-max rescaled rewards."""

    beta: float = 1.0
    gamma: float = 0.1
    weight_floor: float = 0.1

    def __post_init__(self) -> None:
        if self.beta < 0.0 or self.gamma < 0.0:
            raise ValueError("beta and gamma must be >= 0")
        if not 0.0 <= self.weight_floor <= 1.0:
            raise ValueError("weight_floor must be in [0, 1]")


@dataclass(frozen=True)
class TrainingSample:
    """One flattened transition: input features, observed successor, targets."""

    features: np.ndarray  # z_t features, dim 20
    successor: int  # successor state in 1..7
    reward: float
    weight: float  # distillation weight w
    posterior_row: np.ndarray  # empirical successor distribution, dim 7

    def __post_init__(self) -> None:
        if not 1 <= self.successor <= NUM_ACTIONS:
            raise ValueError(f"successor {self.successor} must be in 1..7")
        row = np.asarray(self.posterior_row, dtype=np.float64)
        if row.shape != (NUM_ACTIONS,):
            raise ValueError(f"posterior row shape {row.shape} != (7,)")
        if np.any(row <= 0.0):
            raise ValueError("posterior rows must be strictly positive")
        object.__setattr__(self, "posterior_row", row)


def build_training_set(
    records: Sequence[ImageRecord], loss_weights: LossWeights = LossWeights()
) -> list[TrainingSample]:
    """Flatten image records into training samples.

    Distillation weights min-max rescale each image's rewards into
    [weight_floor, 1]; a constant-reward image gets weight 1 everywhere.
    """
    samples: list[TrainingSample] = []
    for record in records:
        rewards = record.step_rewards()
        if not rewards:
            continue
        lo, hi = min(rewards), max(rewards)
        span = hi - lo
        for traj in record.trajectories:
            for step in traj:
                if span > 1e-12:
                    w = loss_weights.weight_floor + (1.0 - loss_weights.weight_floor) * (
                        (step.reward - lo) / span
                    )
                else:
                    w = 1.0
                samples.append(
                    TrainingSample(
                        features=step.z_from.features,
                        successor=step.z_to.state,
                        reward=step.reward,
                        weight=w,
                        posterior_row=record.transition_posterior[
                            step.z_from.state, 1:
                        ],
                    )
                )
    return samples


def _forward_batch(
    params: dict[str, np.ndarray], x: np.ndarray
) -> dict[str, np.ndarray]:
    a1 = x @ params["w1"].T + params["b1"]
    h1 = np.tanh(a1)
    a2 = h1 @ params["w2"].T + params["b2"]
    h2 = np.tanh(a2)
    logits = h2 @ params["w_policy"].T + params["b_policy"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    pi = exp / exp.sum(axis=1, keepdims=True)
    v = (h2 @ params["w_reward"].T + params["b_reward"]).ravel()
    r_hat = 1.0 / (1.0 + np.exp(-v))
    return {"x": x, "h1": h1, "h2": h2, "pi": pi, "r_hat": r_hat}


def rm_forward(weights: RmWeights, unit: WeakUnit) -> RmOutput:
    """Policy distribution and reward estimate for one weak unit."""
    feats = np.asarray(unit.features, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite features")
    out = _forward_batch(weights.as_float64(), feats[None, :])
    return RmOutput(policy=out["pi"][0], reward=float(out["r_hat"][0]))


def _batch_arrays(
    batch: Sequence[TrainingSample],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    x = np.stack([np.asarray(s.features, dtype=np.float64) for s in batch])
    succ = np.array([s.successor - 1 for s in batch], dtype=np.int64)
    r = np.array([s.reward for s in batch], dtype=np.float64)
    w = np.array([s.weight for s in batch], dtype=np.float64)
    rows = np.stack([s.posterior_row for s in batch])
    return x, succ, r, w, rows


def _loss_terms(
    out: dict[str, np.ndarray],
    succ: np.ndarray,
    r: np.ndarray,
    w: np.ndarray,
    rows: np.ndarray,
) -> tuple[float, float, float]:
    n = len(succ)
    pi = out["pi"]
    distill = float(-(w * np.log(pi[np.arange(n), succ])).mean())
    reconstruction = float(((out["r_hat"] - r) ** 2).mean())
    kl = float((pi * (np.log(pi) - np.log(rows))).sum(axis=1).mean())
    return distill, reconstruction, kl


def rm_loss(
    weights: RmWeights,
    batch: Sequence[TrainingSample],
    loss_weights: LossWeights = LossWeights(),
) -> float:
    """Distillation + beta * reward reconstruction + gamma * KL to the posterior."""
    if not batch:
        raise ValueError("batch must be nonempty")
    x, succ, r, w, rows = _batch_arrays(batch)
    out = _forward_batch(weights.as_float64(), x)
    distill, reconstruction, kl = _loss_terms(out, succ, r, w, rows)
    return distill + loss_weights.beta * reconstruction + loss_weights.gamma * kl


def _grad_params(
    params: dict[str, np.ndarray],
    batch: Sequence[TrainingSample],
    loss_weights: LossWeights,
) -> tuple[dict[str, np.ndarray], float]:
    x, succ, r, w, rows = _batch_arrays(batch)
    n = len(succ)
    out = _forward_batch(params, x)
    pi, h1, h2, r_hat = out["pi"], out["h1"], out["h2"], out["r_hat"]

    distill, reconstruction, kl = _loss_terms(out, succ, r, w, rows)
    loss = distill + loss_weights.beta * reconstruction + loss_weights.gamma * kl

    # d loss / d logits: distillation gives w * (pi - onehot); the KL term gives
    # pi * (log(pi/q) - KL) per sample.
    onehot = np.zeros_like(pi)
    onehot[np.arange(n), succ] = 1.0
    d_logits = w[:, None] * (pi - onehot)
    if loss_weights.gamma != 0.0:
        phi = np.log(pi) - np.log(rows)
        kl_per = (pi * phi).sum(axis=1, keepdims=True)
        d_logits = d_logits + loss_weights.gamma * pi * (phi - kl_per)
    d_logits /= n

    d_v = (loss_weights.beta * 2.0 * (r_hat - r) * r_hat * (1.0 - r_hat) / n)[:, None]

    d_h2 = d_logits @ params["w_policy"] + d_v @ params["w_reward"]
    d_a2 = d_h2 * (1.0 - h2**2)
    d_h1 = d_a2 @ params["w2"]
    d_a1 = d_h1 * (1.0 - h1**2)

    grads = {
        "w_policy": d_logits.T @ h2,
        "b_policy": d_logits.sum(axis=0),
        "w_reward": d_v.T @ h2,
        "b_reward": d_v.sum(axis=0),
        "w2": d_a2.T @ h1,
        "b2": d_a2.sum(axis=0),
        "w1": d_a1.T @ x,
        "b1": d_a1.sum(axis=0),
    }
    return grads, loss


def rm_grad(
    weights: RmWeights,
    batch: Sequence[TrainingSample],
    loss_weights: LossWeights = LossWeights(),
) -> dict[str, np.ndarray]:
    """Exact analytic gradient of rm_loss with respect to every parameter."""
    if not batch:
        raise ValueError("batch must be nonempty")
    grads, _ = _grad_params(weights.as_float64(), batch, loss_weights)
    return grads


@dataclass
class TrainingResult:
    weights: RmWeights
    loss_history: list[float] = field(default_factory=list)


def train_rm(
    records: Sequence[ImageRecord],
    loss_weights: LossWeights = LossWeights(),
    epochs: int = 30,
    lr: float = 0.05,
    seed: int = 0,
    batch_size: int = 64,
    hidden: int = DEFAULT_HIDDEN,
) -> TrainingResult:
    """Mini-batch SGD on the flattened trajectory dataset.

    Weights are initialized uniformly in [-0.1, 0.1] from the seed, shuffling
    is seeded, and the recorded history is the full-dataset loss after each
    epoch. Deterministic for fixed inputs and seed.
    """
    samples = build_training_set(records, loss_weights)
    if not samples:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(seed)
    params = RmWeights.init_random(seed, hidden).as_float64()
    history: list[float] = []
    order = np.arange(len(samples))
    x_all, succ_all, r_all, w_all, rows_all = _batch_arrays(samples)
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[start : start + batch_size]]
            grads, _ = _grad_params(params, batch, loss_weights)
            for name in PARAM_NAMES:
                params[name] -= lr * grads[name]
        epoch_out = _forward_batch(params, x_all)
        d, rec, kl = _loss_terms(epoch_out, succ_all, r_all, w_all, rows_all)
        history.append(d + loss_weights.beta * rec + loss_weights.gamma * kl)
    return TrainingResult(weights=RmWeights.from_float64(params), loss_history=history)


def infer_select(
    weights: RmWeights,
    unit: WeakUnit,
    candidates: Sequence[WeakUnit],
    mode: str = "policy",
    alpha: float = 0.5,
) -> ActionId:
    """Pick the next action with the trained heads.

    policy: argmax of the policy head at the current unit. reward: argmax of
    the reward head over the 7 candidate successors. hybrid: argmax of
    alpha * log pi + (1 - alpha) * min-max normalized candidate rewards (all
    equal rewards normalize to 0.5). Ties go to the smallest action index.
    """
    if len(candidates) != NUM_ACTIONS:
        raise ValueError(f"expected {NUM_ACTIONS} candidates, got {len(candidates)}")
    if mode == "policy":
        scores = rm_forward(weights, unit).policy
    elif mode == "reward":
        scores = np.array([rm_forward(weights, c).reward for c in candidates])
    elif mode == "hybrid":
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        log_pi = np.log(rm_forward(weights, unit).policy)
        rewards = np.array([rm_forward(weights, c).reward for c in candidates])
        lo, hi = rewards.min(), rewards.max()
        if hi - lo > 1e-12:
            normed = (rewards - lo) / (hi - lo)
        else:
            normed = np.full(NUM_ACTIONS, 0.5)
        scores = alpha * log_pi + (1.0 - alpha) * normed
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ACTIONS[int(np.argmax(scores))]


@dataclass
class InferenceTrace:
    """What the agent did on one image and what it saw along the way."""

    image_id: str
    actions: list[ActionId]
    rewards: list[float]
    final_detection: DetectionResult
    final_prompt: PromptState
    initial_iou: Optional[float] = None
    final_iou: Optional[float] = None


def candidate_units(
    context: VisualContext,
    image: RasterImage,
    lexicon: Lexicon,
    detection: Optional[DetectionResult],
    thresholds: StopThresholds,
    config: ActionConfig = DEFAULT_CONFIG,
    phrases: Optional[PhraseTable] = None,
) -> list[WeakUnit]:
    """The 7 successor units reachable from the context, one per action.

    Detector statistics are carried over from the current detection; only the
    prompt-dependent features change, so no detector call is needed.
    """
    units = []
    for action in ACTIONS:
        nxt = apply_action(context, action, image, lexicon, config, phrases)
        units.append(make_weak_unit(nxt, action, detection, thresholds.max_steps))
    return units


def run_inference(
    image: RasterImage,
    prompt: PromptState,
    detector: DetectorPort,
    weights: RmWeights,
    lexicon: Lexicon,
    thresholds: StopThresholds = StopThresholds(),
    mode: str = "policy",
    alpha: float = 0.5,
    image_id: str = "image",
    gt_box: Optional[BoundingBox] = None,
    gt_weight: float = 0.5,
    roi: Optional[BoundingBox] = None,
    config: ActionConfig = DEFAULT_CONFIG,
    phrases: Optional[PhraseTable] = None,
    select: Optional[object] = None,
) -> InferenceTrace:
    """Refine the prompt step by step using the trained model.

    Stops on the same trajectory criteria as sampling. ``select`` may override
    action choice with any callable(unit, candidates) -> ActionId, which is how
    the random-rollout baseline is run. Rewards use the ground-truth blend
    when a gt_box is available, uncertainty reduction alone otherwise.
    """
    if roi is None:
        roi = BoundingBox(0.0, 0.0, float(image.width), float(image.height))
    if phrases is None:
        phrases = PhraseTable.compute(image, roi, prompt.base_noun, lexicon, config)
    context = VisualContext(image_id=image_id, roi=roi, prompt=prompt, step=0)
    detection = detector.detect(image, context.prompt)
    initial_iou = iou(detection.top_box(), gt_box) if gt_box is not None else None
    unit = make_weak_unit(context, None, detection, thresholds.max_steps)
    actions: list[ActionId] = []
    rewards: list[float] = []
    reward_prev = 0.0
    t = 0
    while t < thresholds.max_steps:
        cands = candidate_units(
            context, image, lexicon, detection, thresholds, config, phrases
        )
        if select is not None:
            action = select(unit, cands)
        else:
            action = infer_select(weights, unit, cands, mode, alpha)
        next_context = apply_action(context, action, image, lexicon, config, phrases)
        next_detection = detector.detect(image, next_context.prompt)
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
        actions.append(action)
        rewards.append(reward)
        t += 1
        stop = traj_stop(unit, next_unit, reward_prev, reward, t, thresholds)
        reward_prev = reward
        context, unit, detection = next_context, next_unit, next_detection
        if stop:
            break
    final_iou = iou(detection.top_box(), gt_box) if gt_box is not None else None
    return InferenceTrace(
        image_id=image_id,
        actions=actions,
        rewards=rewards,
        final_detection=detection,
        final_prompt=context.prompt,
        initial_iou=initial_iou,
        final_iou=final_iou,
    )


def save_weights(weights: RmWeights, fh: BinaryIO) -> None:
    """Little-endian binary: magic, version, dims, then each layer W then b."""
    fh.write(WEIGHT_MAGIC)
    fh.write(struct.pack("<I", WEIGHT_VERSION))
    fh.write(struct.pack("<III", FEATURE_DIM, weights.hidden, NUM_ACTIONS))
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(getattr(weights, name), dtype="<f4")
        fh.write(arr.tobytes())


def load_weights(fh: BinaryIO) -> RmWeights:
    magic = fh.read(4)
    if magic != WEIGHT_MAGIC:
        raise ValueError(f"bad weight-file magic {magic!r}")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != WEIGHT_VERSION:
        raise ValueError(f"unsupported weight-file version {version}")
    in_dim, hidden, n_actions = struct.unpack("<III", fh.read(12))
    if in_dim != FEATURE_DIM or n_actions != NUM_ACTIONS:
        raise ValueError(
            f"dimension mismatch: file has in={in_dim}, actions={n_actions}"
        )
    shapes = {
        "w1": (hidden, in_dim),
        "b1": (hidden,),
        "w2": (hidden, hidden),
        "b2": (hidden,),
        "w_policy": (n_actions, hidden),
        "b_policy": (n_actions,),
        "w_reward": (1, hidden),
        "b_reward": (1,),
    }
    arrays = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        count = int(np.prod(shape))
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise ValueError(f"truncated weight file while reading {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return RmWeights(**arrays)
