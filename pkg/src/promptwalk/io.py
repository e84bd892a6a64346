"""File formats: trajectory datasets (JSONL), PPM images, lexicon TSV, config files."""

from __future__ import annotations

import json
import os
from importlib import resources
from typing import Iterable, Optional, Union

import numpy as np

from .actions import Lexicon, LexiconEntry
from .core import (
    ActionId,
    BoundingBox,
    ImageRecord,
    TrajectoryStep,
    WeakUnit,
)
from .env import SceneSpec
from .raster import RasterImage

DATASET_VERSION = 1

PathLike = Union[str, os.PathLike]


class DatasetFormatError(ValueError):
    """Raised for malformed or incompatible dataset files."""


class UnsupportedFormatError(ValueError):
    """Raised when an image file is not a maxval-255 PPM."""


def _step_to_obj(step: TrajectoryStep) -> dict:
    return {
        "state_from": step.z_from.state,
        "action": int(step.action),
        "state_to": step.z_to.state,
        "features_from": [float(v) for v in step.z_from.features],
        "features_to": [float(v) for v in step.z_to.features],
        "reward": step.reward,
    }


def _step_from_obj(obj: dict) -> TrajectoryStep:
    return TrajectoryStep(
        z_from=WeakUnit(int(obj["state_from"]), np.array(obj["features_from"])),
        action=ActionId(int(obj["action"])),
        z_to=WeakUnit(int(obj["state_to"]), np.array(obj["features_to"])),
        reward=float(obj["reward"]),
    )


def record_to_json(record: ImageRecord) -> str:
    obj = {
        "version": DATASET_VERSION,
        "image_id": record.image_id,
        "trajectories": [
            [_step_to_obj(step) for step in traj] for traj in record.trajectories
        ],
        "posterior": [[float(v) for v in row] for row in record.transition_posterior],
        "aborted_episodes": list(record.aborted_episodes),
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def record_from_json(obj: dict) -> ImageRecord:
    version = obj.get("version")
    if version != DATASET_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset version {version!r} (expected {DATASET_VERSION})"
        )
    return ImageRecord(
        image_id=obj["image_id"],
        trajectories=tuple(
            tuple(_step_from_obj(s) for s in traj) for traj in obj["trajectories"]
        ),
        transition_posterior=np.array(obj["posterior"]),
        aborted_episodes=tuple(obj.get("aborted_episodes", ())),
    )


def save_dataset(records: Iterable[ImageRecord], path: PathLike) -> None:
    """One JSON object per line, records sorted by image id for stable bytes."""
    ordered = sorted(records, key=lambda r: r.image_id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in ordered:
            fh.write(record_to_json(record))
            fh.write("\n")


def load_dataset(path: PathLike) -> list[ImageRecord]:
    """Inverse of save_dataset; errors carry the 1-based line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(record_from_json(obj))
            except DatasetFormatError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return records


def _box_to_list(box: BoundingBox) -> list[float]:
    return [box.x_min, box.y_min, box.x_max, box.y_max]


def scene_to_json(spec: SceneSpec) -> str:
    obj = {
        "image_id": spec.image_id,
        "noun": spec.noun,
        "true_color": spec.true_color,
        "true_texture": spec.true_texture,
        "true_geometry": spec.true_geometry,
        "true_lighting": spec.true_lighting,
        "true_position": spec.true_position,
        "background_clutter": spec.background_clutter,
        "gt_box": _box_to_list(spec.gt_box),
        "seed": spec.seed,
        "width": spec.width,
        "height": spec.height,
        "true_alias": spec.true_alias,
        "rendered_color": spec.rendered_color,
        "rendered_texture": spec.rendered_texture,
        "rendered_lighting": spec.rendered_lighting,
        "rendered_clutter": spec.rendered_clutter,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def scene_from_json(obj: dict) -> SceneSpec:
    box = obj["gt_box"]
    clutter = obj.get("rendered_clutter")
    return SceneSpec(
        image_id=obj["image_id"],
        noun=obj["noun"],
        true_color=obj["true_color"],
        true_texture=obj["true_texture"],
        true_geometry=obj["true_geometry"],
        true_lighting=obj["true_lighting"],
        true_position=obj["true_position"],
        background_clutter=float(obj["background_clutter"]),
        gt_box=BoundingBox(*[float(v) for v in box]),
        seed=int(obj.get("seed", 0)),
        width=int(obj.get("width", 96)),
        height=int(obj.get("height", 96)),
        true_alias=obj.get("true_alias"),
        rendered_color=obj.get("rendered_color"),
        rendered_texture=obj.get("rendered_texture"),
        rendered_lighting=obj.get("rendered_lighting"),
        rendered_clutter=float(clutter) if clutter is not None else None,
    )


def save_scenes(specs: Iterable[SceneSpec], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for spec in specs:
            fh.write(scene_to_json(spec))
            fh.write("\n")


def load_scenes(path: PathLike) -> list[SceneSpec]:
    specs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                specs.append(scene_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return specs


def _ppm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read whitespace-separated header tokens, honoring # comments."""
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise UnsupportedFormatError("truncated PPM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            token = data[i:j]
            if not token.isdigit():
                raise UnsupportedFormatError(f"bad PPM header token {token!r}")
            tokens.append(int(token))
            i = j
    return tokens, i


def load_ppm(path: PathLike) -> RasterImage:
    """Read a binary (P6) or ASCII (P3) PPM with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P3", b"P6"):
        raise UnsupportedFormatError(f"not a P3/P6 PPM file (magic {magic!r})")
    (width, height, maxval), end = _ppm_tokens(data[2:], 3)
    end += 2
    if maxval != 255:
        raise UnsupportedFormatError(f"unsupported maxval {maxval} (must be 255)")
    n = width * height * 3
    if magic == b"P6":
        start = end + 1  # single whitespace byte after maxval
        raw = data[start : start + n]
        if len(raw) != n:
            raise UnsupportedFormatError("truncated P6 pixel data")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    else:
        values = data[end:].split()
        if len(values) < n:
            raise UnsupportedFormatError("truncated P3 pixel data")
        pixels = np.array([int(v) for v in values[:n]], dtype=np.int64)
        if pixels.min() < 0 or pixels.max() > 255:
            raise UnsupportedFormatError("P3 sample outside 0..255")
        pixels = pixels.astype(np.uint8).reshape(height, width, 3)
    return RasterImage(pixels)


def save_ppm(image: RasterImage, path: PathLike) -> None:
    """Write binary P6 with maxval 255."""
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image.pixels).tobytes())


def parse_lexicon(text: str) -> Lexicon:
    """TSV: term, |-separated synonyms, |-separated hypernyms, |-separated 0/1
    visual flags aligned to synonyms + hypernyms. # starts a comment."""
    entries: dict[str, LexiconEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DatasetFormatError(
                f"lexicon line {lineno}: expected 4 tab-separated columns"
            )
        term, syn_s, hyp_s, flag_s = parts
        synonyms = tuple(t for t in syn_s.split("|") if t)
        hypernyms = tuple(t for t in hyp_s.split("|") if t)
        flags = tuple(f == "1" for f in flag_s.split("|") if f)
        if len(flags) != len(synonyms) + len(hypernyms):
            raise DatasetFormatError(
                f"lexicon line {lineno}: {len(flags)} flags for "
                f"{len(synonyms) + len(hypernyms)} candidates"
            )
        entries[term.strip().lower()] = LexiconEntry(
            synonyms=synonyms, hypernyms=hypernyms, visual=flags
        )
    return Lexicon(entries=entries)


def load_lexicon(path: Optional[PathLike] = None) -> Lexicon:
    """Load a lexicon TSV; with no path, the bundled default ships with the package."""
    if path is None:
        text = (
            resources.files("promptwalk").joinpath("data/lexicon.tsv").read_text("utf-8")
        )
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return parse_lexicon(text)


def parse_config(path: PathLike) -> dict[str, str]:
    """key=value lines with # comments; later keys override earlier ones."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DatasetFormatError(f"config line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out
