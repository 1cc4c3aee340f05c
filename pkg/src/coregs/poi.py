"""Point-of-interest selection: masks, view retention, splat extraction,
and background replacement in the training targets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CameraModel, ColorRGB, SplatScene, validate_image, validate_mask
from .errors import InvalidInputError, PoiNotFoundError
from .rasterizer import DEFAULT_NEAR, _project_scene

DEFAULT_MIN_MASK_FRACTION = 1e-3


@dataclass
class PoiSelection:
    """Views retained for one semantic class, with their binary masks."""

    class_id: int
    view_indices: list[int]
    masks: list[np.ndarray]
    min_mask_fraction: float
    mask_fractions: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.view_indices)

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "retained_views": len(self.view_indices),
            "view_indices": list(map(int, self.view_indices)),
            "min_mask_fraction": self.min_mask_fraction,
            "mask_fractions": [float(f) for f in self.mask_fractions],
        }


def make_mask(segmap: np.ndarray, class_id: int) -> np.ndarray:
    """Binary mask: 1 where the segmentation id equals ``class_id``."""
    segmap = np.asarray(segmap)
    if segmap.ndim != 2:
        raise InvalidInputError(f"segmentation map must be (H, W), got shape {segmap.shape}")
    return (segmap == class_id).astype(np.uint8)


def mask_fraction(mask: np.ndarray) -> float:
    mask = validate_mask(mask)
    return float(mask.sum()) / mask.size


def select_views(
    segmaps,
    class_id: int,
    min_mask_fraction: float = DEFAULT_MIN_MASK_FRACTION,
) -> PoiSelection:
    """Retain the views whose mask covers at least ``min_mask_fraction``."""
    segmaps = list(segmaps)
    if not segmaps:
        raise InvalidInputError("need at least one view")
    if not 0.0 <= min_mask_fraction < 1.0:
        raise InvalidInputError("min_mask_fraction must be in [0, 1)")
    indices, masks, fractions = [], [], []
    for i, seg in enumerate(segmaps):
        mask = make_mask(seg, class_id)
        frac = mask_fraction(mask)
        if frac >= min_mask_fraction and frac > 0.0:
            indices.append(i)
            masks.append(mask)
            fractions.append(frac)
    if not indices:
        raise PoiNotFoundError(f"class {class_id} is not visible in any view")
    return PoiSelection(
        class_id=class_id,
        view_indices=indices,
        masks=masks,
        min_mask_fraction=min_mask_fraction,
        mask_fractions=fractions,
    )


def extract_poi(
    scene: SplatScene,
    class_id: int,
    *,
    cameras: list[CameraModel] | None = None,
    masks: list[np.ndarray] | None = None,
) -> SplatScene:
    """New scene keeping only the splats belonging to ``class_id``.

    The primary criterion is exact label equality.  When the label is
    absent from the scene and per-view masks with matching cameras are
    supplied, a geometric fallback keeps every splat whose projected
    center lands inside the mask in a strict majority of the views.
    """
    if len(scene) == 0:
        raise PoiNotFoundError(f"class {class_id}: scene is empty")
    keep = scene.labels == class_id
    if not keep.any() and cameras is not None and masks is not None:
        keep = _geometric_membership(scene, cameras, masks)
    if not keep.any():
        raise PoiNotFoundError(f"no splats found for class {class_id}")
    return scene.subset(keep)


def extract_complement(scene: SplatScene, class_id: int) -> SplatScene:
    """Every splat whose label differs from ``class_id`` (may be empty)."""
    return scene.subset(scene.labels != class_id)


def _geometric_membership(scene, cameras, masks) -> np.ndarray:
    if len(cameras) != len(masks):
        raise InvalidInputError("need one mask per camera")
    if not cameras:
        raise InvalidInputError("geometric fallback needs at least one view")
    votes = np.zeros(len(scene), dtype=np.int64)
    for cam, mask in zip(cameras, masks):
        mask = validate_mask(mask, (cam.height, cam.width))
        proj = _project_scene(scene, cam, DEFAULT_NEAR, np.float64)
        cols = np.floor(proj.mean2d[:, 0]).astype(np.int64)
        rows = np.floor(proj.mean2d[:, 1]).astype(np.int64)
        inside = (
            proj.valid
            & (cols >= 0)
            & (cols < cam.width)
            & (rows >= 0)
            & (rows < cam.height)
        )
        hit = np.zeros(len(scene), dtype=bool)
        hit[inside] = mask[rows[inside], cols[inside]] == 1
        votes += hit
    return votes * 2 > len(cameras)


def composite_target(image: np.ndarray, mask: np.ndarray, p_star: ColorRGB) -> np.ndarray:
    """Replace everything outside the mask with the background color."""
    image = validate_image(image)
    mask = validate_mask(mask, image.shape[:2])
    m = mask.astype(image.dtype)[:, :, None]
    return image * m + p_star.to_array(image.dtype)[None, None, :] * (1.0 - m)
