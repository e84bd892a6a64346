"""AttributeWorld: synthetic scenes plus a mock detector standing in for a real one.

Scenes plant known attribute values; the detector scores a prompt by how many
slots it got right, jittering its box less as the prompt improves. That gives
the sampling loop a reward landscape without any neural backbone.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .actions import (
    ActionConfig,
    COLOR_NAMES,
    DEFAULT_CONFIG,
    GRID_LABELS,
    LIGHTING_NAMES,
    Lexicon,
    TEXTURE_NAMES,
    act_dictionary,
    classify_geometry,
    classify_position,
)
from .core import (
    ActionId,
    BoundingBox,
    DetectionResult,
    PromptState,
    SLOT_FOR_ACTION,
    iou,
    normalized_entropy,
)
from .raster import RasterImage

DEFAULT_CANVAS = 96
DISTRACTOR_PHRASES = ("truck", "sign")

# hue/saturation per color name; the value channel is set by the lighting profile
_COLOR_HS = {
    "red": (0.0, 1.0),
    "orange": (30.0, 1.0),
    "yellow": (60.0, 1.0),
    "green": (120.0, 1.0),
    "cyan": (180.0, 1.0),
    "blue": (240.0, 1.0),
    "purple": (300.0, 1.0),
    "pink": (330.0, 1.0),
    "white": (0.0, 0.0),
    "gray": (0.0, 0.0),
    "black": (0.0, 0.0),
}

_LIGHTING_VALUE = {
    "underexposed": 0.15,
    "overexposed": 0.95,
    "well-lit": 0.55,
    "shadowed": (0.85, 0.2),  # left / right half
}

_GEOMETRY_ASPECT = {"tall": 0.5, "wide": 2.0, "square": 1.0}
_GEOMETRY_SCALE = {"tiny": 0.015, "medium": 0.1, "large": 0.45}

GEOMETRY_NAMES = tuple(
    f"{shape} {size}" for shape in ("tall", "wide", "square") for size in ("tiny", "medium", "large")
)
POSITION_NAMES = tuple(label for row in GRID_LABELS for label in row)


class DetectorPort(Protocol):
    """Anything that maps (image, prompt) to boxes with per-phrase scores."""

    def detect(self, image: RasterImage, prompt: PromptState) -> DetectionResult: ...


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene with known ground truth.

    The rendered_* fields let a scene LOOK different from its planted truth
    (a decoy): the operator then recovers the rendered value, the planted one
    never matches, and the corresponding action is unproductive on that scene.
    All default to None, meaning the scene renders exactly its true values.
    """

    image_id: str
    noun: str
    true_color: str
    true_texture: str
    true_geometry: str
    true_lighting: str
    true_position: str
    background_clutter: float
    gt_box: BoundingBox
    seed: int = 0
    width: int = DEFAULT_CANVAS
    height: int = DEFAULT_CANVAS
    true_alias: Optional[str] = None
    rendered_color: Optional[str] = None
    rendered_texture: Optional[str] = None
    rendered_lighting: Optional[str] = None
    rendered_clutter: Optional[float] = None

    def __post_init__(self) -> None:
        if self.true_color not in COLOR_NAMES:
            raise ValueError(f"unknown color {self.true_color!r}")
        if self.true_texture not in TEXTURE_NAMES:
            raise ValueError(f"unknown texture {self.true_texture!r}")
        if self.true_geometry not in GEOMETRY_NAMES:
            raise ValueError(f"unknown geometry {self.true_geometry!r}")
        if self.true_lighting not in LIGHTING_NAMES:
            raise ValueError(f"unknown lighting {self.true_lighting!r}")
        if self.true_position not in POSITION_NAMES:
            raise ValueError(f"unknown position {self.true_position!r}")
        if not 0.0 <= self.background_clutter <= 1.0:
            raise ValueError("background_clutter must be in [0, 1]")
        if self.rendered_color is not None and self.rendered_color not in COLOR_NAMES:
            raise ValueError(f"unknown rendered color {self.rendered_color!r}")
        if (
            self.rendered_texture is not None
            and self.rendered_texture not in TEXTURE_NAMES
        ):
            raise ValueError(f"unknown rendered texture {self.rendered_texture!r}")
        if (
            self.rendered_lighting is not None
            and self.rendered_lighting not in LIGHTING_NAMES
        ):
            raise ValueError(f"unknown rendered lighting {self.rendered_lighting!r}")
        if self.rendered_clutter is not None and not 0.0 <= self.rendered_clutter <= 1.0:
            raise ValueError("rendered_clutter must be in [0, 1]")
        if (
            self.gt_box.x_min < 0
            or self.gt_box.y_min < 0
            or self.gt_box.x_max > self.width
            or self.gt_box.y_max > self.height
        ):
            raise ValueError("gt_box exceeds the canvas")

    def render_values(self) -> tuple[str, str, str, float]:
        """(color, texture, lighting, clutter) actually painted on the canvas."""
        return (
            self.rendered_color or self.true_color,
            self.rendered_texture or self.true_texture,
            self.rendered_lighting or self.true_lighting,
            self.rendered_clutter
            if self.rendered_clutter is not None
            else self.background_clutter,
        )

    def expected_phrases(self) -> dict[ActionId, Optional[str]]:
        """The slot phrases a perfectly attribute-aware prompt would carry."""
        clutter_tag = (
            "cluttered"
            if self.background_clutter > DEFAULT_CONFIG.clutter_tau
            else "clean background"
        )
        return {
            ActionId.DICTIONARY: (
                f"a {self.true_alias} object" if self.true_alias else None
            ),
            ActionId.COLOR: f"{self.true_color} color",
            ActionId.TEXTURE: f"{self.true_texture} texture",
            ActionId.BACKGROUND: f"object against {clutter_tag}",
            ActionId.GEOMETRY: f"{self.true_geometry} shaped",
            ActionId.LIGHTING: f"{self.true_lighting} lighting",
            ActionId.SPATIAL: f"the {self.true_position} object",
        }

    def initial_prompt(self) -> PromptState:
        return PromptState(base_noun=self.noun)


def place_box(
    geometry: str,
    position: str,
    width: int = DEFAULT_CANVAS,
    height: int = DEFAULT_CANVAS,
) -> BoundingBox:
    """Box whose aspect/scale class matches ``geometry``, centered in the grid
    cell named by ``position`` (shifted inward when the cell cannot hold it)."""
    shape, size = geometry.split()
    aspect = _GEOMETRY_ASPECT[shape]
    scale = _GEOMETRY_SCALE[size]
    area = scale * width * height
    w = max(math.sqrt(area * aspect), 3.0)
    h = max(w / aspect, 3.0)
    w, h = min(w, float(width)), min(h, float(height))
    row = next(r for r, labels in enumerate(GRID_LABELS) if position in labels)
    col = GRID_LABELS[row].index(position)
    cx = (col + 0.5) * width / 3.0
    cy = (row + 0.5) * height / 3.0
    cx = min(max(cx, w / 2.0), width - w / 2.0)
    cy = min(max(cy, h / 2.0), height - h / 2.0)
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def make_scene_spec(
    image_id: str,
    noun: str,
    true_color: str = "red",
    true_texture: str = "smooth",
    geometry: str = "square medium",
    true_lighting: str = "well-lit",
    position: str = "center",
    background_clutter: float = 0.0,
    seed: int = 0,
    width: int = DEFAULT_CANVAS,
    height: int = DEFAULT_CANVAS,
    true_alias: Optional[str] = None,
) -> SceneSpec:
    """SceneSpec whose gt_box is derived from the requested geometry/position.

    The declared geometry and position are recomputed from the placed box so
    the spec is always self-consistent, even for infeasible requests.
    """
    box = place_box(geometry, position, width, height)
    return SceneSpec(
        image_id=image_id,
        noun=noun,
        true_color=true_color,
        true_texture=true_texture,
        true_geometry=classify_geometry(box, width, height),
        true_lighting=true_lighting,
        true_position=classify_position(box, width, height),
        background_clutter=background_clutter,
        gt_box=box,
        seed=seed,
        width=width,
        height=height,
        true_alias=true_alias,
    )


def _lighting_field(lighting: str, h: int, w: int) -> np.ndarray:
    profile = _LIGHTING_VALUE[lighting]
    if isinstance(profile, tuple):
        v = np.full((h, w), profile[1])
        v[:, : max(w // 2, 1)] = profile[0]
        return v
    return np.full((h, w), profile)


def _texture_field(
    texture: str, v: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    # Value levels keep textured objects readable as both texture AND the
    # other attributes: tops stay below the white threshold, the striped
    # half-split variance stays below the shadow threshold, and quantization
    # still separates the two tones by >= 3 gray levels for the contrast test.
    h, w = v.shape
    if texture == "smooth":
        return v
    if texture == "striped":
        out = np.full((h, w), 0.35)
        out[:, ::2] = 0.75
        return out
    if texture == "patterned":
        out = np.full((h, w), 0.8)
        out[::3, ::3] = 0.3
        return out
    if texture == "rough":
        return rng.uniform(0.3, 0.8, size=(h, w))
    raise ValueError(f"unknown texture {texture!r}")


def gen_scene(spec: SceneSpec) -> tuple[RasterImage, BoundingBox]:
    """Render the spec to pixels. Byte-identical for identical spec values."""
    rng = np.random.default_rng(spec.seed)
    color, texture, lighting, clutter = spec.render_values()
    gray = np.full((spec.height, spec.width, 3), 128, dtype=np.uint8)
    if clutter > 0.0:
        # Salt-and-pepper speckle; a coherent 1px checkerboard would cancel the
        # Sobel kernel exactly, so the clutter must be aperiodic to read as
        # edges. Each speckle makes its 3x3 neighborhood an edge, so density
        # 1 - (1 - c)^(1/9) yields an edge fraction of roughly c.
        density = 1.0 - (1.0 - min(clutter, 0.999)) ** (1.0 / 9.0)
        density = max(density, clutter * 0.02)
        mask = rng.random((spec.height, spec.width)) < density
        speckle = np.where(
            rng.random((spec.height, spec.width)) < 0.5, 255, 0
        ).astype(np.uint8)
        for c in range(3):
            gray[..., c] = np.where(mask, speckle, gray[..., c])

    x0 = int(math.floor(spec.gt_box.x_min))
    y0 = int(math.floor(spec.gt_box.y_min))
    x1 = int(math.ceil(spec.gt_box.x_max))
    y1 = int(math.ceil(spec.gt_box.y_max))
    oh, ow = y1 - y0, x1 - x0
    hue, sat = _COLOR_HS[color]
    value = _lighting_field(lighting, oh, ow)
    value = _texture_field(texture, value, rng)

    # vectorized hsv -> rgb for constant hue/saturation
    c = value * sat
    m = value - c
    hp = (hue / 60.0) % 6.0
    x = c * (1.0 - abs(hp % 2.0 - 1.0))
    sector = int(hp) % 6
    channels = [(c, x, np.zeros_like(c)), (x, c, np.zeros_like(c)),
                (np.zeros_like(c), c, x), (np.zeros_like(c), x, c),
                (x, np.zeros_like(c), c), (c, np.zeros_like(c), x)][sector]
    block = np.stack([np.round((ch + m) * 255.0) for ch in channels], axis=-1)
    gray[y0:y1, x0:x1] = block.astype(np.uint8)
    return RasterImage(gray), spec.gt_box


def stable_seed(*parts: object) -> int:
    """Platform-stable 32-bit seed derived from string-able parts."""
    text = "\x1f".join(str(p) for p in parts)
    return zlib.crc32(text.encode("utf-8"))


def mock_detect(
    image: RasterImage,
    prompt: PromptState,
    spec: SceneSpec,
    noise_seed: int,
) -> DetectionResult:
    """One box near the ground truth, jittered less as the prompt improves.

    The match fraction m counts slots equal to the planted attribute phrase.
    Jitter is Gaussian with sigma = 0.25 * diagonal * (1 - m), drawn from
    ``noise_seed``. Scores are a softmax over the target phrase (logit 2m)
    and two distractors whose seeded draws depend only on (scene, prompt),
    the way a real detector scores a fixed prompt identically every pass;
    re-submitting an unchanged prompt therefore reads as a fixpoint.
    """
    rng = np.random.default_rng(noise_seed)
    expected = spec.expected_phrases()
    matches = sum(
        1
        for action, phrase in expected.items()
        if phrase is not None and prompt.slots[SLOT_FOR_ACTION[action]] == phrase
    )
    m = matches / 7.0
    sigma = 0.25 * spec.gt_box.diagonal * (1.0 - m)
    dx, dy = rng.normal(0.0, sigma, size=2) if sigma > 0.0 else (0.0, 0.0)
    box = spec.gt_box.shifted(float(dx), float(dy))
    # shift back in-canvas so the box keeps its area
    box = box.shifted(
        max(0.0, -box.x_min) + min(0.0, spec.width - box.x_max),
        max(0.0, -box.y_min) + min(0.0, spec.height - box.y_max),
    )
    score_rng = np.random.default_rng(
        stable_seed(spec.seed, spec.image_id, prompt.render())
    )
    logits = np.array(
        [2.0 * m, *score_rng.uniform(0.0, 1.0, size=len(DISTRACTOR_PHRASES))]
    )
    exp = np.exp(logits - logits.max())
    probs = exp / exp.sum()
    return DetectionResult(boxes=(box,), scores=(tuple(float(p) for p in probs),))


@dataclass(frozen=True)
class MockDetector:
    """DetectorPort over one scene: a total, deterministic function.

    The jitter seed is derived from (detector seed, image id, prompt), so one
    (image, prompt) pair always detects identically, the way a real frozen
    backbone scores a fixed prompt. Re-submitting an unchanged prompt is a
    fixpoint that the stopping criteria can recognize.
    """

    spec: SceneSpec
    seed: int = 0

    def detect(self, image: RasterImage, prompt: PromptState) -> DetectionResult:
        noise_seed = stable_seed(self.seed, self.spec.image_id, prompt.render())
        return mock_detect(image, prompt, self.spec, noise_seed)


def uncertainty_reduction(
    scores_before: Sequence[float], scores_after: Sequence[float]
) -> float:
    """How much the top box's class distribution sharpened, mapped to [0, 1].

    0.5 means no change; entropy drop and max-score gain both push upward.
    """
    if len(scores_before) == 0 or len(scores_after) == 0:
        raise ValueError("score vectors must be nonempty")
    u_before = normalized_entropy(scores_before)
    u_after = normalized_entropy(scores_after)
    r = (
        0.5
        + 0.5 * (u_before - u_after)
        + 0.5 * (max(scores_after) - max(scores_before))
    )
    return min(max(r, 0.0), 1.0)


def step_reward(
    pred_box: BoundingBox,
    gt_box: Optional[BoundingBox],
    scores_before: Sequence[float],
    scores_after: Sequence[float],
    gt_weight: float = 0.5,
) -> float:
    """Blend of box overlap with ground truth and score sharpening.

    Without a ground-truth box the reward is the uncertainty reduction alone.
    """
    if not 0.0 <= gt_weight <= 1.0:
        raise ValueError("gt_weight must be in [0, 1]")
    ur = uncertainty_reduction(scores_before, scores_after)
    if gt_box is None:
        return ur
    return gt_weight * iou(pred_box, gt_box) + (1.0 - gt_weight) * ur


_NOUN_ALIASES = (
    ("apricot", "fruit"),
    ("bulldozer", "vehicle"),
    ("kettle", "container"),
    ("lantern", "lamp"),
    ("mango", "fruit"),
    ("canoe", "boat"),
    ("beaker", "vessel"),
    ("falcon", "bird"),
    ("satchel", "bag"),
    ("turnip", "vegetable"),
    ("anvil", "block"),
    ("gazebo", "pavilion"),
)


def _other(rng: np.random.Generator, options: Sequence[str], current: str) -> str:
    rest = [o for o in options if o != current]
    return rest[int(rng.integers(len(rest)))]


# Probability that each attribute misleads its operator (a decoy). Low-level
# photometric cues are reliable; geometric and spatial cues mislead more, so
# actions have a stable quality ordering a sampler can learn across scenes,
# while enough slots stay productive that high-coverage trajectories exist.
DEFAULT_DECOY_RATES = {
    "alias": 0.03,
    "color": 0.07,
    "texture": 0.12,
    "background": 0.3,
    "geometry": 0.45,
    "lighting": 0.35,
    "spatial": 0.5,
}


def random_scene_specs(
    n: int,
    seed: int = 0,
    clutter_levels: Sequence[float] = (0.0, 0.05, 0.5),
    lexicon: Optional[Lexicon] = None,
    decoy_rates: Optional[dict[str, float]] = None,
) -> list[SceneSpec]:
    """Seeded batch of varied scene specs for experiments and tests.

    Colors for textured objects stay achromatic so the texture remains
    readable; the alias is resolved through the lexicon when one is supplied,
    so a perfect prompt can match every productive slot. Each attribute
    independently becomes a decoy with its rate from ``decoy_rates`` (at most
    5 per scene), so scenes differ in WHICH actions pay off.
    """
    rng = np.random.default_rng(seed)
    rates = DEFAULT_DECOY_RATES if decoy_rates is None else decoy_rates
    chromatic = [c for c in COLOR_NAMES if c not in ("white", "gray", "black")]
    specs = []
    for i in range(n):
        noun, fallback_alias = _NOUN_ALIASES[rng.integers(len(_NOUN_ALIASES))]
        texture = TEXTURE_NAMES[rng.integers(len(TEXTURE_NAMES))]
        if texture == "smooth":
            color = chromatic[rng.integers(len(chromatic))]
        else:
            color = "gray"
        lighting = "well-lit"
        geometry = GEOMETRY_NAMES[rng.integers(len(GEOMETRY_NAMES))]
        position = POSITION_NAMES[rng.integers(len(POSITION_NAMES))]
        clutter = float(clutter_levels[rng.integers(len(clutter_levels))])
        alias = fallback_alias
        if lexicon is not None:
            phrase = act_dictionary(noun, lexicon)
            alias = phrase[2:-7] if phrase else None  # strip "a ... object"

        box = place_box(geometry, position)
        true_geometry = classify_geometry(box, DEFAULT_CANVAS, DEFAULT_CANVAS)
        true_position = classify_position(box, DEFAULT_CANVAS, DEFAULT_CANVAS)
        rendered_color = rendered_texture = rendered_lighting = None
        rendered_clutter = None

        decoys = [d for d in ("alias", "color", "texture", "background",
                              "geometry", "lighting", "spatial")
                  if rng.random() < rates.get(d, 0.0)][:5]
        for decoy in decoys:
            if decoy == "alias":
                alias = "decoy"
            elif decoy == "color" and texture == "smooth":
                rendered_color = _other(rng, chromatic, color)
            elif decoy == "texture":
                if texture == "smooth":
                    rendered_texture = "striped"
                else:
                    rendered_texture = _other(
                        rng, [t for t in TEXTURE_NAMES if t != "smooth"], texture
                    )
            elif decoy == "background":
                rendered_clutter = 0.5 if clutter <= DEFAULT_CONFIG.clutter_tau else 0.0
            elif decoy == "geometry":
                true_geometry = _other(rng, GEOMETRY_NAMES, true_geometry)
            elif decoy == "lighting" and texture == "smooth":
                rendered_lighting = _other(rng, LIGHTING_NAMES, lighting)
            elif decoy == "spatial":
                true_position = _other(rng, POSITION_NAMES, true_position)

        specs.append(
            SceneSpec(
                image_id=f"scene-{i:04d}",
                noun=noun,
                true_color=color,
                true_texture=texture,
                true_geometry=true_geometry,
                true_lighting=lighting,
                true_position=true_position,
                background_clutter=clutter,
                gt_box=box,
                seed=int(rng.integers(2**31)),
                true_alias=alias,
                rendered_color=rendered_color,
                rendered_texture=rendered_texture,
                rendered_lighting=rendered_lighting,
                rendered_clutter=rendered_clutter,
            )
        )
    return specs
