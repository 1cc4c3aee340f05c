"""Structural-similarity map, mean value, and analytic input gradient.

Shared between the photometric loss and the evaluation metrics so both
see the exact same convention: 11x11 Gaussian window (sigma 1.5),
C1 = 0.01^2, C2 = 0.03^2, computed per channel on a zero-padded
same-size map.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve1d

WINDOW_SIZE = 11
SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


_KERNEL = gaussian_window()


def _blur(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter with zero padding, same output size."""
    kernel = _KERNEL.astype(img.dtype)
    out = convolve1d(img, kernel, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, kernel, axis=1, mode="constant", cval=0.0)


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM map for two (H, W, C) images."""
    mu_a = _blur(a)
    mu_b = _blur(b)
    var_a = _blur(a * a) - mu_a * mu_a
    var_b = _blur(b * b) - mu_b * mu_b
    cov = _blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return num / den


def ssim_mean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(ssim_map(a, b)))


def ssim_mean_backward(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM and its gradient with respect to ``a``.

    The gradient chains the per-pixel map partials (w.r.t. the local mean,
    variance and covariance of ``a``) back through the Gaussian filter;
    the filter is self-adjoint under zero padding, so the same blur is
    reused for the transpose.
    """
    mu_a = _blur(a)
    mu_b = _blur(b)
    var_a = _blur(a * a) - mu_a * mu_a
    var_b = _blur(b * b) - mu_b * mu_b
    cov = _blur(a * b) - mu_a * mu_b

    a1 = 2 * mu_a * mu_b + C1
    a2 = 2 * cov + C2
    b1 = mu_a * mu_a + mu_b * mu_b + C1
    b2 = var_a + var_b + C2
    s = (a1 * a2) / (b1 * b2)
    value = float(np.mean(s))

    d_mu = 2 * (mu_b * a2 * b1 - mu_a * a1 * a2) / (b1 * b1 * b2)
    d_var = -(a1 * a2) / (b1 * b2 * b2)
    d_cov = 2 * a1 / (b1 * b2)

    grad = _blur(d_mu - 2 * mu_a * d_var - mu_b * d_cov)
    grad += 2 * a * _blur(d_var)
    grad += b * _blur(d_cov)
    grad /= s.size
    return value, grad
