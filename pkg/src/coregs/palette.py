"""Background-color selection: find the RGB color most isolated from a scene.

The selected color maximizes, over a uniform candidate lattice in RGB
space, the minimum Euclidean distance to every color present in the
(downscaled, 8-bit-quantized) training images.  Its isolation distance is
reused by the floater filter as the pruning radius scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import ColorRGB
from .errors import InvalidInputError

# Relative inflation applied to KD-tree distances before exact re-scoring;
# generously above fp noise, far below any meaningful color separation.
_BALL_SLACK = 1e-9


def rgb_distance(a: ColorRGB, b: ColorRGB) -> float:
    """Euclidean distance between two colors in RGB space."""
    dr = a.r - b.r
    dg = a.g - b.g
    db = a.b - b.b
    return float(np.sqrt((dr * dr + dg * dg) + db * db))


def rgb_distances(colors: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Distances from each row of ``colors`` (N,3) to ``point`` (3,).

    Uses the same summation order as :func:`rgb_distance` so scalar and
    vector paths agree bit-for-bit.
    """
    dr = colors[:, 0] - point[0]
    dg = colors[:, 1] - point[1]
    db = colors[:, 2] - point[2]
    return np.sqrt((dr * dr + dg * dg) + db * db)


def _dist_sq(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    dr = points[:, 0] - query[0]
    dg = points[:, 1] - query[1]
    db = points[:, 2] - query[2]
    return (dr * dr + dg * dg) + db * db


@dataclass(frozen=True)
class ColorSet:
    """Deduplicated 8-bit-quantized colors, stored as floats in [0,1]."""

    quantized: np.ndarray  # (N, 3) uint8, unique rows, lexicographically sorted

    def __post_init__(self):
        q = np.asarray(self.quantized, dtype=np.uint8)
        if q.ndim != 2 or q.shape[1] != 3:
            raise InvalidInputError(f"color set must be (N, 3), got shape {q.shape}")
        object.__setattr__(self, "quantized", np.unique(q, axis=0))

    def __len__(self) -> int:
        return self.quantized.shape[0]

    def as_array(self) -> np.ndarray:
        return self.quantized.astype(np.float64) / 255.0

    def colors(self) -> list[ColorRGB]:
        return [ColorRGB(*row) for row in self.as_array()]

    @classmethod
    def from_colors(cls, colors) -> "ColorSet":
        rows = [quantize_color(c.to_array() if isinstance(c, ColorRGB) else c) for c in colors]
        if not rows:
            raise InvalidInputError("color set cannot be empty")
        return cls(np.stack(rows))

    def union(self, other: "ColorSet") -> "ColorSet":
        return ColorSet(np.concatenate([self.quantized, other.quantized]))


@dataclass(frozen=True)
class CandidatePalette:
    """Uniform n-per-axis RGB lattice over [0,1]^3, endpoints included."""

    resolution: int = 16

    def __post_init__(self):
        if self.resolution < 2:
            raise InvalidInputError("lattice resolution must be at least 2 per axis")

    def __len__(self) -> int:
        return self.resolution**3

    def as_array(self) -> np.ndarray:
        """Candidates in lexicographic (r, g, b) order, shape (n^3, 3)."""
        axis = np.linspace(0.0, 1.0, self.resolution)
        r, g, b = np.meshgrid(axis, axis, axis, indexing="ij")
        return np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1)


@dataclass(frozen=True)
class FurthestColor:
    """The selected background color and its isolation distance."""

    p_star: ColorRGB
    d_avg: float

    def __post_init__(self):
        if not 0.0 <= self.d_avg <= float(np.sqrt(3.0)) + 1e-12:
            raise InvalidInputError(f"d_avg out of range: {self.d_avg}")

    def to_dict(self) -> dict:
        return {"p_star": [self.p_star.r, self.p_star.g, self.p_star.b], "d_avg": self.d_avg}

    @classmethod
    def from_dict(cls, d: dict) -> "FurthestColor":
        return cls(p_star=ColorRGB(*d["p_star"]), d_avg=float(d["d_avg"]))


def quantize_color(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def quantize_image(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Area-average resampling weights mapping n_in samples to n_out."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            w[i, j] = (min(hi, j + 1) - max(lo, j)) / scale
    return w


def downscale_image(image: np.ndarray, factor: float) -> np.ndarray:
    """Area-average downscale to ``(floor(h*f), floor(w*f))``."""
    if not 0.0 < factor <= 1.0:
        raise InvalidInputError(f"downscale factor must be in (0, 1], got {factor}")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    h2, w2 = int(np.floor(h * factor)), int(np.floor(w * factor))
    if h2 < 1 or w2 < 1:
        raise InvalidInputError(f"downscale factor {factor} collapses a {h}x{w} image")
    if (h2, w2) == (h, w):
        return image.copy()
    wr = _box_weights(h, h2)
    wc = _box_weights(w, w2)
    return np.einsum("ih,hwc,jw->ijc", wr, image, wc)


def collect_colors(images, downscale: float = 0.5) -> ColorSet:
    """Union of unique 8-bit colors over all downscaled images."""
    images = list(images)
    if not images:
        raise InvalidInputError("need at least one image to collect colors")
    chunks = []
    for image in images:
        small = downscale_image(image, downscale)
        chunks.append(np.unique(quantize_image(small).reshape(-1, 3), axis=0))
    return ColorSet(np.concatenate(chunks))


class ColorTree:
    """Exact nearest-color queries over a :class:`ColorSet`.

    A KD-tree proposes the neighborhood; the handful of colors inside a
    slightly inflated ball are then re-scored with the package's own
    distance formula, which keeps reported distances bit-identical to a
    linear scan (same arithmetic, ties resolved to the lowest index).
    """

    def __init__(self, colors: ColorSet):
        if len(colors) == 0:
            raise InvalidInputError("color set cannot be empty")
        self._points = colors.as_array()
        self._tree = cKDTree(self._points)

    def nearest(self, query) -> tuple[int, float]:
        """Index and distance of the nearest color to ``query``."""
        query = np.asarray(query, dtype=np.float64).reshape(3)
        idx, d2 = self._nearest_many(query[None, :])
        return int(idx[0]), float(np.sqrt(d2[0]))

    def _nearest_many(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        approx, _ = self._tree.query(queries, k=1)
        radii = approx * (1.0 + _BALL_SLACK) + 1e-12
        groups = self._tree.query_ball_point(queries, radii)
        best_idx = np.empty(len(queries), dtype=np.int64)
        best_d2 = np.empty(len(queries), dtype=np.float64)
        for i, members in enumerate(groups):
            members = np.sort(np.asarray(members, dtype=np.int64))
            d2 = _dist_sq(self._points[members], queries[i])
            j = int(np.argmin(d2))
            best_idx[i] = members[j]
            best_d2[i] = d2[j]
        return best_idx, best_d2


def furthest_color(
    colors: ColorSet,
    palette: CandidatePalette | None = None,
    *,
    d_avg_mode: str = "isolation",
) -> FurthestColor:
    """Pick the candidate color with the greatest minimum distance to ``colors``.

    Ties are broken toward the lexicographically smallest (r, g, b)
    candidate.  ``d_avg_mode`` selects what the reported distance means:
    ``"isolation"`` (default) is the winning candidate's own min-distance,
    ``"mean"`` averages the min-distances of every lattice candidate.
    """
    if palette is None:
        palette = CandidatePalette()
    if len(colors) == 0:
        raise InvalidInputError("color set cannot be empty")
    if d_avg_mode not in ("isolation", "mean"):
        raise InvalidInputError(f"unknown d_avg_mode {d_avg_mode!r}")
    candidates = palette.as_array()
    tree = ColorTree(colors)
    _, min_d2 = tree._nearest_many(candidates)
    best = int(np.argmax(min_d2))  # first hit = lexicographically smallest
    p_star = ColorRGB.from_array(candidates[best])
    if d_avg_mode == "isolation":
        d_avg = float(np.sqrt(min_d2[best]))
    else:
        d_avg = float(np.mean(np.sqrt(min_d2)))
    return FurthestColor(p_star=p_star, d_avg=d_avg)
