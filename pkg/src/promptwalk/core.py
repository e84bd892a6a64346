"""Shared domain types: boxes, prompts, contexts, and the weak-unit encoding.

Everything here is an immutable value object; the numeric feature layout used
by the rest of the package is defined once, in ``make_weak_unit``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Mapping, Optional, Sequence

import numpy as np

NUM_ACTIONS = 7
NUM_STATES = 8  # state 0 = nothing applied yet, states 1..7 = last applied action
FEATURE_DIM = 20
DEFAULT_MAX_STEPS = 7

# Feature vector layout (total 20):
#   [0:8]   one-hot of the state id
#   [8:15]  occupancy flag per prompt slot
#   [15]    max detector score of the top box
#   [16]    normalized score entropy of the top box
#   [17]    box count / 10, clamped to [0, 1]
#   [18]    step / max steps
#   [19]    constant bias 1
_ONEHOT = slice(0, 8)
_SLOTS = slice(8, 15)
_DETECTOR = slice(15, 18)
# Distance between two contexts compares slot occupancy plus detector statistics;
# the state one-hot, step counter and bias are bookkeeping, not context.
CONTEXT_FEATURES = slice(8, 18)


class ActionId(IntEnum):
    """The seven prompt-refinement operators; integer value doubles as state id."""

    DICTIONARY = 1
    COLOR = 2
    TEXTURE = 3
    BACKGROUND = 4
    GEOMETRY = 5
    LIGHTING = 6
    SPATIAL = 7


# Prompt slot touched by each action, in action order.
SLOT_ORDER = (
    "alias",
    "color",
    "texture",
    "background",
    "geometry",
    "lighting",
    "spatial",
)
SLOT_FOR_ACTION = {a: SLOT_ORDER[a - 1] for a in ActionId}


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates; fractional pixels allowed."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"reversed box coordinates: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(
            self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy
        )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; zero-area boxes contribute nothing."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def gt_reward(pred: BoundingBox, gt: BoundingBox) -> float:
    """Box-mismatch uncertainty signal: 1 - iou, so higher means less certain."""
    return 1.0 - iou(pred, gt)


@dataclass(frozen=True)
class DetectionResult:
    """Detector output: one score vector (over prompt phrases) per box."""

    boxes: tuple[BoundingBox, ...]
    scores: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.boxes) != len(self.scores):
            raise ValueError(
                f"{len(self.boxes)} boxes but {len(self.scores)} score vectors"
            )
        for vec in self.scores:
            if not vec:
                raise ValueError("empty score vector")
            if any(not (0.0 <= s <= 1.0) for s in vec):
                raise ValueError(f"score outside [0, 1]: {vec}")

    def top_index(self) -> int:
        """Index of the box with the highest single score (first on ties)."""
        if not self.boxes:
            raise ValueError("no boxes in detection result")
        best, best_score = 0, max(self.scores[0])
        for i in range(1, len(self.scores)):
            m = max(self.scores[i])
            if m > best_score:
                best, best_score = i, m
        return best

    def top_box(self) -> BoundingBox:
        return self.boxes[self.top_index()]

    def top_scores(self) -> tuple[float, ...]:
        return self.scores[self.top_index()]


@dataclass(frozen=True)
class PromptState:
    """Slot-based caption: a base noun plus one optional phrase per attribute slot."""

    base_noun: str
    slots: Mapping[str, Optional[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.base_noun:
            raise ValueError("base_noun must be nonempty")
        clean: dict[str, Optional[str]] = {name: None for name in SLOT_ORDER}
        for name, value in dict(self.slots).items():
            if name not in clean:
                raise ValueError(f"unknown slot {name!r}")
            if value is not None and not value:
                raise ValueError(f"slot {name!r} filled with empty phrase")
            clean[name] = value
        object.__setattr__(self, "slots", clean)

    def with_slot(self, name: str, value: str) -> "PromptState":
        slots = dict(self.slots)
        slots[name] = value
        return PromptState(self.base_noun, slots)

    def filled_slots(self) -> tuple[str, ...]:
        return tuple(name for name in SLOT_ORDER if self.slots[name])

    def render(self) -> str:
        """Deterministic caption: noun followed by filled slots in fixed order."""
        parts = [self.base_noun]
        parts.extend(self.slots[name] for name in SLOT_ORDER if self.slots[name])
        return ", ".join(parts)


@dataclass(frozen=True)
class VisualContext:
    """Where the agent currently stands: an ROI on an image plus the prompt."""

    image_id: str
    roi: BoundingBox
    prompt: PromptState
    step: int = 0

    def __post_init__(self) -> None:
        if self.step < 0:
            raise ValueError("step must be nonnegative")

    def advanced(self, prompt: PromptState) -> "VisualContext":
        return replace(self, prompt=prompt, step=self.step + 1)


@dataclass(frozen=True)
class WeakUnit:
    """Fused state-action unit: discrete state id plus a 20-dim feature vector."""

    state: int
    features: np.ndarray

    def __post_init__(self) -> None:
        if not 0 <= self.state < NUM_STATES:
            raise ValueError(f"state {self.state} outside [0, {NUM_STATES - 1}]")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.shape != (FEATURE_DIM,):
            raise ValueError(f"feature shape {feats.shape} != ({FEATURE_DIM},)")
        if not np.all(np.isfinite(feats)):
            raise ValueError("non-finite feature values")
        feats = feats.copy()
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)


def normalized_entropy(scores: Sequence[float]) -> float:
    """Shannon entropy of a score vector scaled to [0, 1]; 0 for single-class."""
    v = np.asarray(scores, dtype=np.float64)
    if v.size <= 1:
        return 0.0
    total = v.sum()
    if total <= 0.0:
        return 0.0
    p = v / total
    nz = p[p > 0.0]
    h = float(-(nz * np.log(nz)).sum())
    return h / math.log(v.size)


def make_weak_unit(
    context: VisualContext,
    action: Optional[ActionId] = None,
    detection: Optional[DetectionResult] = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> WeakUnit:
    """Encode a context and the action that produced it into a weak unit.

    ``action=None`` marks the initial unit (state 0). Detector statistics are
    zero when no detection is supplied.
    """
    state = 0 if action is None else int(action)
    f = np.zeros(FEATURE_DIM)
    f[state] = 1.0
    for i, name in enumerate(SLOT_ORDER):
        if context.prompt.slots[name]:
            f[8 + i] = 1.0
    if detection is not None and detection.boxes:
        top = detection.top_scores()
        f[15] = max(top)
        f[16] = normalized_entropy(top)
        f[17] = min(len(detection.boxes) / 10.0, 1.0)
    f[18] = context.step / max_steps if max_steps > 0 else 0.0
    f[19] = 1.0
    return WeakUnit(state=state, features=f)


def context_distance(a: WeakUnit, b: WeakUnit) -> float:
    """Euclidean distance between two units' context features (states masked)."""
    return float(
        np.linalg.norm(a.features[CONTEXT_FEATURES] - b.features[CONTEXT_FEATURES])
    )


@dataclass(frozen=True)
class ScoreStats:
    """Per-step detector diagnostics kept on trajectory steps."""

    max_score: float
    entropy: float
    n_boxes: int


@dataclass(frozen=True)
class TrajectoryStep:
    """One transition: unit before, action taken, unit after, scalar reward."""

    z_from: WeakUnit
    action: ActionId
    z_to: WeakUnit
    reward: float
    stats_before: Optional[ScoreStats] = None
    stats_after: Optional[ScoreStats] = None

    def __post_init__(self) -> None:
        if self.z_to.state != int(self.action):
            raise ValueError(
                f"successor state {self.z_to.state} does not match action {self.action}"
            )
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError(f"reward {self.reward} outside [0, 1]")


@dataclass(frozen=True)
class ImageRecord:
    """All trajectories sampled for one image plus its transition posterior."""

    image_id: str
    trajectories: tuple[tuple[TrajectoryStep, ...], ...]
    transition_posterior: np.ndarray
    aborted_episodes: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        post = np.asarray(self.transition_posterior, dtype=np.float64)
        if post.shape != (NUM_STATES, NUM_STATES):
            raise ValueError(f"posterior shape {post.shape} != (8, 8)")
        if np.any(post < 0.0):
            raise ValueError("negative posterior entries")
        rowsums = post.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > 1e-9):
            raise ValueError(f"posterior rows do not sum to 1: {rowsums}")
        post = post.copy()
        post.flags.writeable = False
        object.__setattr__(self, "transition_posterior", post)
        object.__setattr__(
            self, "trajectories", tuple(tuple(t) for t in self.trajectories)
        )

    @property
    def budget(self) -> int:
        """Number of sampled trajectories."""
        return len(self.trajectories)

    def step_rewards(self) -> list[float]:
        return [s.reward for traj in self.trajectories for s in traj]

    def trajectory_rewards(self) -> list[float]:
        """Mean step reward per trajectory (empty trajectories count as 0)."""
        out = []
        for traj in self.trajectories:
            if traj:
                out.append(sum(s.reward for s in traj) / len(traj))
            else:
                out.append(0.0)
        return out
