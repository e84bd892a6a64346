"""Raster primitives: pixel containers, color conversion, clustering, texture stats."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoundingBox


@dataclass(frozen=True)
class RasterImage:
    """8-bit RGB image stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel array, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def crop(self, box: BoundingBox) -> np.ndarray:
        """Pixels under a (possibly fractional) box, snapped outward to the grid.

        Always at least 1x1; the box is clamped to the image bounds.
        """
        x0 = min(max(int(math.floor(box.x_min)), 0), self.width - 1)
        y0 = min(max(int(math.floor(box.y_min)), 0), self.height - 1)
        x1 = min(max(int(math.ceil(box.x_max)), x0 + 1), self.width)
        y1 = min(max(int(math.ceil(box.y_max)), y0 + 1), self.height)
        return self.pixels[y0:y1, x0:x1]


def rgb_to_hsv(r: int, g: int, b: int) -> tuple[float, float, float]:
    """Hexcone RGB -> (hue degrees in [0, 360), saturation, value)."""
    rf, gf, bf = r / 255.0, g / 255.0, b / 255.0
    mx = max(rf, gf, bf)
    mn = min(rf, gf, bf)
    delta = mx - mn
    if delta == 0.0:
        h = 0.0
    elif mx == rf:
        h = 60.0 * (((gf - bf) / delta) % 6.0)
    elif mx == gf:
        h = 60.0 * ((bf - rf) / delta + 2.0)
    else:
        h = 60.0 * ((rf - gf) / delta + 4.0)
    s = 0.0 if mx == 0.0 else delta / mx
    return (h % 360.0, s, mx)


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    """Inverse hexcone conversion, rounding to 8-bit channels."""
    h = h % 360.0
    c = v * s
    x = c * (1.0 - abs((h / 60.0) % 2.0 - 1.0))
    m = v - c
    sector = int(h // 60.0) % 6
    rgb = [(c, x, 0.0), (x, c, 0.0), (0.0, c, x), (0.0, x, c), (x, 0.0, c), (c, 0.0, x)][
        sector
    ]
    return tuple(int(round((ch + m) * 255.0)) for ch in rgb)  # type: ignore[return-value]


def rgb_array_to_hsv(pixels: np.ndarray) -> np.ndarray:
    """Vectorized rgb_to_hsv over an (..., 3) uint8 array; returns float64."""
    px = np.asarray(pixels, dtype=np.float64) / 255.0
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    mx = px.max(axis=-1)
    mn = px.min(axis=-1)
    delta = mx - mn
    h = np.zeros_like(mx)
    nz = delta > 0.0
    rmax = nz & (mx == r)
    gmax = nz & ~rmax & (mx == g)
    bmax = nz & ~rmax & ~gmax
    h[rmax] = 60.0 * (((g[rmax] - b[rmax]) / delta[rmax]) % 6.0)
    h[gmax] = 60.0 * ((b[gmax] - r[gmax]) / delta[gmax] + 2.0)
    h[bmax] = 60.0 * ((r[bmax] - g[bmax]) / delta[bmax] + 4.0)
    s = np.where(mx > 0.0, delta / np.maximum(mx, 1e-12), 0.0)
    return np.stack([h % 360.0, s, mx], axis=-1)


def _embed_hsv(hsv: np.ndarray) -> np.ndarray:
    # Hue is circular, so cluster in (s*cos h, s*sin h, v) where distances behave.
    h = np.radians(hsv[:, 0])
    s = hsv[:, 1]
    return np.stack([s * np.cos(h), s * np.sin(h), hsv[:, 2]], axis=1)


def _unembed_hsv(points: np.ndarray) -> np.ndarray:
    h = np.degrees(np.arctan2(points[:, 1], points[:, 0])) % 360.0
    s = np.clip(np.hypot(points[:, 0], points[:, 1]), 0.0, 1.0)
    v = np.clip(points[:, 2], 0.0, 1.0)
    return np.stack([h, s, v], axis=1)


def kmeans_hsv(
    hsv_pixels: np.ndarray, k: int = 3, seed: int = 0, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means over HSV pixels with seeded k-means++ initialization.

    Returns (centroids, counts): centroids are HSV rows, counts sum to the
    number of pixels. With fewer distinct pixels than k, duplicate centroids
    are possible. Deterministic for a fixed seed.
    """
    hsv = np.asarray(hsv_pixels, dtype=np.float64).reshape(-1, 3)
    if hsv.shape[0] == 0:
        raise ValueError("kmeans_hsv needs at least one pixel")
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = _embed_hsv(hsv)
    n = pts.shape[0]
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((k, 3))
    centers[0] = pts[rng.integers(n)]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 1e-18:
            centers[i:] = centers[0]
            break
        centers[i] = pts[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((pts - centers[i]) ** 2).sum(axis=1))

    assign = np.full(n, -1)
    for _ in range(max_iter):
        dists = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for i in range(k):
            members = pts[assign == i]
            if len(members):
                centers[i] = members.mean(axis=0)
    counts = np.bincount(assign, minlength=k)
    return _unembed_hsv(centers), counts


def grayscale(pixels: np.ndarray) -> np.ndarray:
    """Channel mean in [0, 255]; keeps contrast visible for saturated hues."""
    return np.asarray(pixels, dtype=np.float64).mean(axis=-1)


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude with 3x3 Sobel kernels and edge-replicated borders."""
    g = np.pad(np.asarray(gray, dtype=np.float64), 1, mode="edge")
    gx = (
        (g[:-2, 2:] + 2.0 * g[1:-1, 2:] + g[2:, 2:])
        - (g[:-2, :-2] + 2.0 * g[1:-1, :-2] + g[2:, :-2])
    )
    gy = (
        (g[2:, :-2] + 2.0 * g[2:, 1:-1] + g[2:, 2:])
        - (g[:-2, :-2] + 2.0 * g[:-2, 1:-1] + g[:-2, 2:])
    )
    return np.hypot(gx, gy)


GLCM_LEVELS = 8


def quantize_levels(gray: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    return np.minimum((np.asarray(gray) * levels / 256.0).astype(np.int64), levels - 1)


def glcm_stats(
    gray: np.ndarray, offset: tuple[int, int] = (1, 0), levels: int = GLCM_LEVELS
) -> tuple[float, float]:
    """Normalized co-occurrence (contrast, homogeneity) for one pixel offset.

    ``offset`` is (dx, dy); pairs are (p[y, x], p[y + dy, x + dx]). Contrast is
    scaled by (levels - 1)^2 so a maximally alternating image scores 1 and a
    constant image scores exactly 0.
    """
    q = quantize_levels(gray, levels)
    dx, dy = offset
    if dx < 0 or dy < 0:
        raise ValueError("offset components must be nonnegative")
    h, w = q.shape
    if h <= dy or w <= dx:
        return (0.0, 1.0)
    a = q[: h - dy, : w - dx]
    b = q[dy:, dx:]
    pair = (a * levels + b).ravel()
    counts = np.bincount(pair, minlength=levels * levels).astype(np.float64)
    p = counts / counts.sum()
    i, j = np.divmod(np.arange(levels * levels), levels)
    diff2 = (i - j) ** 2
    contrast = float((p * diff2).sum()) / float((levels - 1) ** 2)
    homogeneity = float((p / (1.0 + diff2)).sum())
    return (contrast, homogeneity)


# LBP codes with at most two circular 0-1 transitions.
_UNIFORM_CODES = np.array(
    [
        sum(((code >> i) & 1) != ((code >> ((i + 1) % 8)) & 1) for i in range(8)) <= 2
        for code in range(256)
    ]
)


def lbp_uniform_fraction(gray: np.ndarray) -> float:
    """Fraction of interior pixels whose 8-neighbor LBP code is uniform.

    Bit i of the code is 1 when the i-th ring neighbor is >= the center; the
    ring is walked circularly so transition counting is meaningful.
    """
    g = np.asarray(gray, dtype=np.float64)
    if g.shape[0] < 3 or g.shape[1] < 3:
        raise ValueError("LBP needs at least a 3x3 region")
    center = g[1:-1, 1:-1]
    ring = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    code = np.zeros(center.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(ring):
        neigh = g[1 + dy : g.shape[0] - 1 + dy, 1 + dx : g.shape[1] - 1 + dx]
        code |= (neigh >= center).astype(np.int64) << bit
    return float(_UNIFORM_CODES[code].mean())
