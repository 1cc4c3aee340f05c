"""Image-quality metrics: PSNR and SSIM, each with a mask-restricted variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ssim as ssimlib
from .core import validate_image, validate_mask
from .errors import InvalidInputError

PSNR_CAP_DB = 100.0  # reported for a zero-MSE pair; infinity is not serializable


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    masked_psnr: float | None = None
    masked_ssim: float | None = None
    pixels_total: int = 0
    pixels_masked: int | None = None

    def to_dict(self) -> dict:
        out = {"psnr": self.psnr, "ssim": self.ssim, "pixels_total": self.pixels_total}
        if self.masked_psnr is not None:
            out["masked_psnr"] = self.masked_psnr
            out["masked_ssim"] = self.masked_ssim
            out["pixels_masked"] = self.pixels_masked
        return out


def _check_pair(a, b):
    a = validate_image(a)
    b = validate_image(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64, copy=False), b.astype(np.float64, copy=False)


def psnr(a, b, mask=None) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    With a mask, the MSE runs over mask-1 pixels only (all channels).
    Capped at 100 dB.
    """
    a, b = _check_pair(a, b)
    err = (a - b) ** 2
    if mask is None:
        mse = float(np.mean(err))
    else:
        mask = validate_mask(mask, a.shape[:2])
        sel = mask.astype(bool)
        if not sel.any():
            raise InvalidInputError("mask selects no pixels")
        mse = float(np.mean(err[sel]))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def ssim(a, b, mask=None) -> float:
    """Mean structural similarity; masked variant averages the local map
    over pixels whose window center lies in the mask."""
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < ssimlib.WINDOW_SIZE:
        raise InvalidInputError(
            f"images must be at least {ssimlib.WINDOW_SIZE} pixels on each side for SSIM"
        )
    smap = ssimlib.ssim_map(a, b)
    if mask is None:
        return float(np.mean(smap))
    mask = validate_mask(mask, a.shape[:2])
    sel = mask.astype(bool)
    if not sel.any():
        raise InvalidInputError("mask selects no pixels")
    return float(np.mean(smap[sel]))


def evaluate(a, b, mask=None) -> MetricReport:
    """Full metric report for one image pair."""
    a_arr = validate_image(a)
    report = MetricReport(
        psnr=psnr(a, b),
        ssim=ssim(a, b),
        pixels_total=int(a_arr.shape[0] * a_arr.shape[1]),
    )
    if mask is not None:
        mask = validate_mask(mask, a_arr.shape[:2])
        report.masked_psnr = psnr(a, b, mask)
        report.masked_ssim = ssim(a, b, mask)
        report.pixels_masked = int(mask.sum())
    return report
