"""Color-based floater pruning.

A splat is flagged when its view-dependent SH color (the same activated
color the renderer would composite) falls within the removal distance of
the scene's background color in at least one processed view.  Views can
be scanned by a thread pool; per-view flag bitmaps are OR-reduced, so the
result is independent of worker count and scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import CameraModel, ColorRGB, SplatScene, sh_eval_many
from .errors import InvalidInputError
from .palette import rgb_distances

DEFAULT_REMOVAL_THRESHOLD = 0.5
DEFAULT_FILTER_PERIOD = 1000


@dataclass
class FilterConfig:
    """Pruning schedule: threshold scale, cadence, and view subsampling.

    ``view_sample`` is ``"all"`` or ``"stride:k"`` (every k-th view).
    """

    t_r: float = DEFAULT_REMOVAL_THRESHOLD
    period: int = DEFAULT_FILTER_PERIOD
    view_sample: str = "all"

    def __post_init__(self):
        if self.t_r <= 0:
            raise InvalidInputError("removal threshold t_r must be positive")
        if self.period < 1:
            raise InvalidInputError("filter period must be at least 1")
        self.view_stride()  # validates the format

    def view_stride(self) -> int:
        if self.view_sample == "all":
            return 1
        if self.view_sample.startswith("stride:"):
            k = int(self.view_sample.split(":", 1)[1])
            if k < 1:
                raise InvalidInputError("view stride must be at least 1")
            return k
        raise InvalidInputError(f"unknown view_sample {self.view_sample!r}")


@dataclass
class RemovalReport:
    """Splats flagged for removal in one filter pass."""

    flagged: np.ndarray  # sorted indices into the scanned scene
    per_view_counts: list[int]
    d_remove: float
    views_processed: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.flagged = np.asarray(self.flagged, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "flagged": [int(i) for i in self.flagged],
            "flagged_count": int(self.flagged.size),
            "per_view_counts": [int(c) for c in self.per_view_counts],
            "views_processed": [int(v) for v in self.views_processed],
            "d_remove": self.d_remove,
        }


def removal_distance(d_avg: float, t_r: float = DEFAULT_REMOVAL_THRESHOLD) -> float:
    """Pruning radius around the background color."""
    if d_avg < 0:
        raise InvalidInputError("d_avg must be non-negative")
    if t_r <= 0:
        raise InvalidInputError("t_r must be positive")
    return t_r * d_avg


def _flag_one_view(scene: SplatScene, cam: CameraModel, p_star_arr, d_remove: float) -> np.ndarray:
    dirs = scene.positions.astype(np.float64) - cam.center()[None, :]
    colors = sh_eval_many(scene.sh.astype(np.float64), dirs)
    return rgb_distances(colors, p_star_arr) < d_remove


def flag_artifacts(
    scene: SplatScene,
    cams: list[CameraModel],
    p_star: ColorRGB,
    d_remove: float,
    *,
    view_sample: str = "all",
    workers: int = 1,
) -> RemovalReport:
    """Flag every splat that renders background-like in some processed view."""
    if len(scene) == 0 or not cams:
        raise InvalidInputError("scene and camera list must be non-empty")
    stride = FilterConfig(view_sample=view_sample).view_stride()
    view_ids = list(range(0, len(cams), stride))
    p_arr = p_star.to_array()

    def work(view_id: int) -> np.ndarray:
        return _flag_one_view(scene, cams[view_id], p_arr, d_remove)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_view = list(pool.map(work, view_ids))
    else:
        per_view = [work(v) for v in view_ids]

    union = np.zeros(len(scene), dtype=bool)
    for flags in per_view:
        union |= flags
    return RemovalReport(
        flagged=np.nonzero(union)[0],
        per_view_counts=[int(f.sum()) for f in per_view],
        d_remove=d_remove,
        views_processed=view_ids,
    )


def prune(scene: SplatScene, report: RemovalReport | np.ndarray) -> SplatScene:
    """Drop the flagged splats; survivors keep their relative order."""
    flagged = report.flagged if isinstance(report, RemovalReport) else np.asarray(report)
    flagged = np.asarray(flagged, dtype=np.int64)
    if flagged.size and (flagged.min() < 0 or flagged.max() >= len(scene)):
        raise InvalidInputError(
            f"flag indices out of range for a scene of {len(scene)} splats"
        )
    keep = np.ones(len(scene), dtype=bool)
    keep[flagged] = False
    return scene.subset(keep)
