"""The seven prompt-refinement operators and their dispatch.

Each operator reads pixels (or the lexicon) and emits a short attribute
phrase for its slot, or ``None`` when it has nothing to say (skipped action).
All operators are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ActionId, BoundingBox, SLOT_FOR_ACTION, VisualContext
from .raster import (
    RasterImage,
    glcm_stats,
    grayscale,
    kmeans_hsv,
    lbp_uniform_fraction,
    rgb_array_to_hsv,
    sobel_magnitude,
)


@dataclass(frozen=True)
class ActionConfig:
    """Classification thresholds for the visual operators."""

    achromatic_sat: float = 0.15
    white_value: float = 0.85
    black_value: float = 0.25
    smooth_contrast: float = 0.05
    stripe_ratio: float = 3.0
    uniform_lbp: float = 0.8
    clutter_tau: float = 0.15
    edge_threshold: float = 64.0
    tall_aspect: float = 0.67
    wide_aspect: float = 1.5
    tiny_scale: float = 0.02
    large_scale: float = 0.4
    dark_mean: float = 0.25
    bright_mean: float = 0.85
    shadow_var: float = 0.05
    kmeans_k: int = 3
    kmeans_seed: int = 0


DEFAULT_CONFIG = ActionConfig()

# Hue bands resolved first-match in this order; together they tile [0, 360).
HUE_BANDS = (
    (0.0, 15.0, "red"),
    (15.0, 45.0, "orange"),
    (45.0, 75.0, "yellow"),
    (75.0, 165.0, "green"),
    (165.0, 195.0, "cyan"),
    (195.0, 285.0, "blue"),
    (285.0, 315.0, "purple"),
    (315.0, 345.0, "pink"),
    (345.0, 360.0, "red"),
)

COLOR_NAMES = (
    "red",
    "orange",
    "yellow",
    "green",
    "cyan",
    "blue",
    "purple",
    "pink",
    "white",
    "gray",
    "black",
)
TEXTURE_NAMES = ("smooth", "rough", "patterned", "striped")
LIGHTING_NAMES = ("underexposed", "overexposed", "shadowed", "well-lit")
SHAPE_NAMES = ("tall", "wide", "square")
SIZE_NAMES = ("tiny", "medium", "large")
GRID_LABELS = (
    ("top-left", "top-center", "top-right"),
    ("middle-left", "center", "middle-right"),
    ("bottom-left", "bottom-center", "bottom-right"),
)


@dataclass(frozen=True)
class LexiconEntry:
    synonyms: tuple[str, ...] = ()
    hypernyms: tuple[str, ...] = ()
    visual: tuple[bool, ...] = ()

    def candidates(self) -> tuple[str, ...]:
        return self.synonyms + self.hypernyms


@dataclass(frozen=True)
class Lexicon:
    """Offline synonym/hypernym table with a per-candidate visual flag."""

    entries: dict[str, LexiconEntry] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for term, entry in self.entries.items():
            if term != term.lower():
                raise ValueError(f"lexicon terms must be lowercase: {term!r}")
            if len(entry.visual) != len(entry.candidates()):
                raise ValueError(
                    f"visual flags for {term!r} do not align with candidates"
                )

    def lookup(self, term: str) -> Optional[LexiconEntry]:
        return self.entries.get(term.lower())


def hsv_to_color_name(h: float, s: float, v: float, config: ActionConfig = DEFAULT_CONFIG) -> str:
    if s < config.achromatic_sat:
        if v > config.white_value:
            return "white"
        if v < config.black_value:
            return "black"
        return "gray"
    h = h % 360.0
    for lo, hi, name in HUE_BANDS:
        if lo <= h < hi:
            return name
    return "red"  # h == 360 cannot occur after the modulo


def act_color(roi_pixels: np.ndarray, config: ActionConfig = DEFAULT_CONFIG) -> str:
    """Dominant-cluster color of the ROI, named from the hue-band table."""
    hsv = rgb_array_to_hsv(roi_pixels).reshape(-1, 3)
    centroids, counts = kmeans_hsv(
        hsv, k=config.kmeans_k, seed=config.kmeans_seed
    )
    dom = centroids[int(np.argmax(counts))]
    return f"{hsv_to_color_name(dom[0], dom[1], dom[2], config)} color"


def act_texture(
    roi_pixels: np.ndarray, config: ActionConfig = DEFAULT_CONFIG
) -> Optional[str]:
    """Classify ROI texture from co-occurrence contrast and LBP uniformity.

    Returns None (skipped) for regions smaller than 3x3.
    """
    px = np.asarray(roi_pixels)
    if px.shape[0] < 3 or px.shape[1] < 3:
        return None
    gray = grayscale(px)
    contrast_h, _ = glcm_stats(gray, offset=(1, 0))
    contrast_v, _ = glcm_stats(gray, offset=(0, 1))
    contrast = max(contrast_h, contrast_v)
    if contrast < config.smooth_contrast:
        return "smooth texture"
    ratio = (contrast + 1e-12) / (min(contrast_h, contrast_v) + 1e-12)
    if ratio > config.stripe_ratio:
        return "striped texture"
    if lbp_uniform_fraction(gray) > config.uniform_lbp:
        return "patterned texture"
    return "rough texture"


def act_background(
    image: RasterImage, roi: BoundingBox, config: ActionConfig = DEFAULT_CONFIG
) -> str:
    """Edge density of everything outside the ROI, tagged cluttered or clean."""
    mag = sobel_magnitude(grayscale(image.pixels))
    mask = np.ones((image.height, image.width), dtype=bool)
    x0 = min(max(int(np.floor(roi.x_min)), 0), image.width)
    y0 = min(max(int(np.floor(roi.y_min)), 0), image.height)
    x1 = min(max(int(np.ceil(roi.x_max)), 0), image.width)
    y1 = min(max(int(np.ceil(roi.y_max)), 0), image.height)
    mask[y0:y1, x0:x1] = False
    background = mag[mask]
    if background.size == 0:
        return "object against clean background"
    clutter = float((background > config.edge_threshold).mean())
    if clutter > config.clutter_tau:
        return "object against cluttered"
    return "object against clean background"


def classify_geometry(
    roi: BoundingBox,
    image_width: float,
    image_height: float,
    config: ActionConfig = DEFAULT_CONFIG,
) -> str:
    if roi.height <= 0.0 or image_width <= 0.0 or image_height <= 0.0:
        raise ValueError("degenerate roi or image dimensions")
    aspect = roi.width / roi.height
    scale = roi.area / (image_width * image_height)
    if aspect < config.tall_aspect:
        shape = "tall"
    elif aspect > config.wide_aspect:
        shape = "wide"
    else:
        shape = "square"
    if scale < config.tiny_scale:
        size = "tiny"
    elif scale > config.large_scale:
        size = "large"
    else:
        size = "medium"
    return f"{shape} {size}"


def act_geometry(
    roi: BoundingBox,
    image_width: float,
    image_height: float,
    config: ActionConfig = DEFAULT_CONFIG,
) -> str:
    return f"{classify_geometry(roi, image_width, image_height, config)} shaped"


def act_lighting(
    roi_pixels: np.ndarray, config: ActionConfig = DEFAULT_CONFIG
) -> str:
    """Exposure class from the V-channel mean and variance, checked in order."""
    v = rgb_array_to_hsv(roi_pixels)[..., 2]
    mean = float(v.mean())
    var = float(v.var())
    if mean < config.dark_mean:
        cond = "underexposed"
    elif mean > config.bright_mean:
        cond = "overexposed"
    elif var > config.shadow_var:
        cond = "shadowed"
    else:
        cond = "well-lit"
    return f"{cond} lighting"


def grid_cell(coord: float, extent: float) -> int:
    """3-way split of [0, extent]; exact boundaries fall to the lower cell."""
    u = coord * 3.0 / extent
    idx = int(np.floor(u))
    if u == idx and idx > 0:
        idx -= 1
    return min(max(idx, 0), 2)


def classify_position(
    roi: BoundingBox, image_width: float, image_height: float
) -> str:
    cx, cy = roi.center
    return GRID_LABELS[grid_cell(cy, image_height)][grid_cell(cx, image_width)]


def act_spatial(roi: BoundingBox, image_width: float, image_height: float) -> str:
    return f"the {classify_position(roi, image_width, image_height)} object"


def act_dictionary(base_noun: str, lexicon: Lexicon) -> Optional[str]:
    """Alias phrase from the lexicon, or None when the noun is unknown.

    The alias is the lexicographically smallest visual candidate that differs
    from the noun itself.
    """
    entry = lexicon.lookup(base_noun)
    if entry is None:
        return None
    candidates = sorted(
        term
        for term, visual in zip(entry.candidates(), entry.visual)
        if visual and term != base_noun.lower()
    )
    if not candidates:
        return None
    return f"a {candidates[0]} object"


class PhraseTable:
    """All seven attribute phrases for one (image, roi, noun), computed once.

    The operators are pure, so a fixed scene yields a fixed table; sampling
    loops reuse it instead of re-running pixel analysis every step.
    """

    def __init__(self, phrases: dict[ActionId, Optional[str]]):
        self.phrases = phrases

    @classmethod
    def compute(
        cls,
        image: RasterImage,
        roi: BoundingBox,
        base_noun: str,
        lexicon: Lexicon,
        config: ActionConfig = DEFAULT_CONFIG,
    ) -> "PhraseTable":
        crop = image.crop(roi)
        return cls(
            {
                ActionId.DICTIONARY: act_dictionary(base_noun, lexicon),
                ActionId.COLOR: act_color(crop, config),
                ActionId.TEXTURE: act_texture(crop, config),
                ActionId.BACKGROUND: act_background(image, roi, config),
                ActionId.GEOMETRY: act_geometry(roi, image.width, image.height, config),
                ActionId.LIGHTING: act_lighting(crop, config),
                ActionId.SPATIAL: act_spatial(roi, image.width, image.height),
            }
        )

    def get(self, action: ActionId) -> Optional[str]:
        return self.phrases[action]


def apply_action(
    context: VisualContext,
    action: ActionId,
    image: RasterImage,
    lexicon: Lexicon,
    config: ActionConfig = DEFAULT_CONFIG,
    phrases: Optional[PhraseTable] = None,
) -> VisualContext:
    """Run one operator and return the successor context.

    The step counter always advances; a skipped operator leaves the prompt
    untouched. At most one slot changes per call.
    """
    if phrases is not None:
        phrase = phrases.get(action)
    elif action == ActionId.DICTIONARY:
        phrase = act_dictionary(context.prompt.base_noun, lexicon)
    elif action == ActionId.COLOR:
        phrase = act_color(image.crop(context.roi), config)
    elif action == ActionId.TEXTURE:
        phrase = act_texture(image.crop(context.roi), config)
    elif action == ActionId.BACKGROUND:
        phrase = act_background(image, context.roi, config)
    elif action == ActionId.GEOMETRY:
        phrase = act_geometry(context.roi, image.width, image.height, config)
    elif action == ActionId.LIGHTING:
        phrase = act_lighting(image.crop(context.roi), config)
    elif action == ActionId.SPATIAL:
        phrase = act_spatial(context.roi, image.width, image.height)
    else:
        raise ValueError(f"unknown action {action!r}")
    prompt = context.prompt
    if phrase is not None:
        prompt = prompt.with_slot(SLOT_FOR_ACTION[action], phrase)
    return context.advanced(prompt)
