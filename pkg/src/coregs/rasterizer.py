"""Deterministic CPU splat rasterizer with analytic parameter gradients.

Forward path: EWA projection of each 3D Gaussian to a screen-space
Gaussian, global front-to-back depth sort, per-pixel alpha compositing
over a configurable background color.  Backward path: hand-derived
gradients of the photometric loss through the compositing chain back to
every splat parameter (position, log-scale, quaternion, opacity logit,
SH coefficients).

Everything is a pure function of its inputs: identical scene, camera and
background bytes produce identical output bytes, and concurrent calls on
a shared scene are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ssim as ssimlib
from .core import (
    CameraModel,
    ColorRGB,
    SplatScene,
    covariances3d,
    quats_to_rotations,
    sh_basis,
    sh_basis_grad,
    sh_degree_from_count,
    sigmoid,
    validate_image,
)
from .errors import InvalidInputError

DILATION_EPS = 0.3  # px^2 low-pass dilation added to every 2D covariance
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0  # contributions below this are skipped
DEFAULT_NEAR = 0.01
_SINGULAR_DET = 1e-12


@dataclass
class Splat2D:
    """A splat after projection: screen-space mean/covariance plus shading."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: ColorRGB
    alpha_base: float


@dataclass
class RenderOutput:
    image: np.ndarray
    contributed: np.ndarray  # per-splat: touched at least one pixel
    skipped_singular: int = 0


@dataclass
class BackwardResult:
    """Loss value plus per-parameter gradients (zeros for culled splats)."""

    loss: float
    output: RenderOutput
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    mean2d: np.ndarray  # screen-space position gradients, for densify stats


class _Projected:
    __slots__ = (
        "valid",
        "p_cam",
        "depth",
        "mean2d",
        "cov2d",
        "colors",
        "raw_colors",
        "basis",
        "unit_dirs",
        "dir_norms",
        "alpha_base",
        "J",
        "M",
    )


def _project_scene(scene: SplatScene, cam: CameraModel, near: float, dtype) -> _Projected:
    R = cam.rotation.astype(dtype)
    t = cam.translation.astype(dtype)
    pos = scene.positions.astype(dtype, copy=False)
    p_cam = pos @ R.T + t
    z = p_cam[:, 2]
    valid = z > near

    out = _Projected()
    out.valid = valid
    out.p_cam = p_cam
    out.depth = z

    fx = dtype(cam.fx)
    fy = dtype(cam.fy)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(valid, 1.0 / z, 0.0).astype(dtype)
    x, y = p_cam[:, 0], p_cam[:, 1]
    mean2d = np.stack([fx * x * inv_z + dtype(cam.cx), fy * y * inv_z + dtype(cam.cy)], axis=1)
    out.mean2d = mean2d

    n = len(scene)
    J = np.zeros((n, 2, 3), dtype=dtype)
    J[:, 0, 0] = fx * inv_z
    J[:, 0, 2] = -fx * x * inv_z * inv_z
    J[:, 1, 1] = fy * inv_z
    J[:, 1, 2] = -fy * y * inv_z * inv_z
    out.J = J
    M = J @ R
    out.M = M

    sigma = covariances3d(
        np.exp(scene.log_scales.astype(dtype, copy=False)),
        scene.rotations.astype(dtype, copy=False),
    )
    cov2d = np.einsum("nab,nbc,ndc->nad", M, sigma, M)
    cov2d[:, 0, 0] += dtype(DILATION_EPS)
    cov2d[:, 1, 1] += dtype(DILATION_EPS)
    out.cov2d = cov2d

    center = cam.center().astype(dtype)
    dirs = pos - center
    norms = np.sqrt(np.sum(dirs * dirs, axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    unit = dirs / safe[:, None]
    out.unit_dirs = unit
    out.dir_norms = norms
    basis = sh_basis(unit, scene.sh_degree)
    out.basis = basis
    raw = 0.5 + np.einsum("nk,nkc->nc", basis, scene.sh.astype(dtype, copy=False))
    out.raw_colors = raw
    out.colors = np.clip(raw, 0.0, 1.0)

    out.alpha_base = sigmoid(scene.opacity_logits.astype(dtype, copy=False))
    return out


def project(g, cam: CameraModel, near: float = DEFAULT_NEAR) -> Splat2D | None:
    """Project one splat; returns ``None`` when it is culled by the near plane."""
    scene = SplatScene.from_gaussians([g], dtype=np.float64)
    proj = _project_scene(scene, cam, near, np.float64)
    if not proj.valid[0]:
        return None
    return Splat2D(
        mean2d=proj.mean2d[0].copy(),
        cov2d=proj.cov2d[0].copy(),
        depth=float(proj.depth[0]),
        color=ColorRGB.from_array(proj.colors[0]),
        alpha_base=float(proj.alpha_base[0]),
    )


def _splat_box(mean2d, cov, alpha_base, width, height):
    """Pixel-index box covering every pixel where alpha could reach ALPHA_MIN."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    if det <= _SINGULAR_DET or a <= 0 or c <= 0:
        return None, True
    if alpha_base < ALPHA_MIN:
        return None, False
    q_cut = 2.0 * np.log(alpha_base / ALPHA_MIN)
    hw_x = float(np.sqrt(q_cut * a)) + 1e-3
    hw_y = float(np.sqrt(q_cut * c)) + 1e-3
    u, v = float(mean2d[0]), float(mean2d[1])
    j0 = max(0, int(np.ceil(u - hw_x - 0.5)))
    j1 = min(width - 1, int(np.floor(u + hw_x - 0.5)))
    i0 = max(0, int(np.ceil(v - hw_y - 0.5)))
    i1 = min(height - 1, int(np.floor(v + hw_y - 0.5)))
    if j0 > j1 or i0 > i1:
        return None, False
    return (i0, i1, j0, j1), False


def _box_alpha(mean2d, cov, alpha_base, box, dtype):
    """Per-pixel alpha over the box; returns (alpha, unclamped_gaussian)."""
    i0, i1, j0, j1 = box
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    la, lb, lc = c / det, -b / det, a / det
    dx = (np.arange(j0, j1 + 1, dtype=dtype) + dtype(0.5)) - mean2d[0]
    dy = (np.arange(i0, i1 + 1, dtype=dtype) + dtype(0.5)) - mean2d[1]
    q = la * dx[None, :] ** 2 + 2.0 * lb * dy[:, None] * dx[None, :] + lc * dy[:, None] ** 2
    gauss = np.exp(-0.5 * q)
    alpha = np.minimum(alpha_base * gauss, dtype(ALPHA_MAX))
    alpha = np.where(alpha >= ALPHA_MIN, alpha, dtype(0.0))
    return alpha, gauss, (dx, dy, la, lb, lc)


def _composite(scene, proj, cam, background, dtype, keep_records):
    h, w = cam.height, cam.width
    image = np.zeros((h, w, 3), dtype=dtype)
    trans = np.ones((h, w), dtype=dtype)
    contributed = np.zeros(len(scene), dtype=bool)
    skipped = 0
    records = []

    valid_idx = np.nonzero(proj.valid)[0]
    order = valid_idx[np.argsort(proj.depth[valid_idx], kind="stable")]
    for idx in order:
        box, singular = _splat_box(proj.mean2d[idx], proj.cov2d[idx], proj.alpha_base[idx], w, h)
        if singular:
            skipped += 1
            continue
        if box is None:
            continue
        alpha, gauss, geom = _box_alpha(proj.mean2d[idx], proj.cov2d[idx], proj.alpha_base[idx], box, dtype)
        if not np.any(alpha > 0):
            continue
        i0, i1, j0, j1 = box
        sl = (slice(i0, i1 + 1), slice(j0, j1 + 1))
        t_box = trans[sl]
        weight = alpha * t_box
        image[sl] += weight[:, :, None] * proj.colors[idx]
        trans[sl] = t_box * (1.0 - alpha)
        contributed[idx] = True
        if keep_records:
            records.append((int(idx), box, alpha, gauss, geom))

    image += background.to_array(dtype)[None, None, :] * trans[:, :, None]
    return image, trans, contributed, skipped, records


def render(
    scene: SplatScene,
    cam: CameraModel,
    background: ColorRGB,
    *,
    near: float = DEFAULT_NEAR,
    dtype=None,
) -> RenderOutput:
    """Render the scene front-to-back over ``background``."""
    dtype = np.dtype(dtype or scene.dtype).type
    proj = _project_scene(scene, cam, near, dtype)
    image, _, contributed, skipped, _ = _composite(scene, proj, cam, background, dtype, False)
    return RenderOutput(image=image, contributed=contributed, skipped_singular=skipped)


def loss(rendered, target, ssim_weight: float) -> tuple[float, np.ndarray]:
    """Photometric loss ``(1-w)*L1 + w*(1-SSIM)`` and its image gradient."""
    rendered = validate_image(rendered)
    target = validate_image(target)
    if rendered.shape != target.shape:
        raise InvalidInputError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    if not 0.0 <= ssim_weight <= 1.0:
        raise InvalidInputError(f"ssim weight must be in [0, 1], got {ssim_weight}")
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - ssim_weight) * np.sign(diff) / diff.size
    value = (1.0 - ssim_weight) * l1
    if ssim_weight > 0.0:
        s_val, s_grad = ssimlib.ssim_mean_backward(rendered, target)
        value += ssim_weight * (1.0 - s_val)
        grad = grad - ssim_weight * s_grad
    return value, grad.astype(rendered.dtype, copy=False)


def backward(
    scene: SplatScene,
    cam: CameraModel,
    target,
    background: ColorRGB,
    ssim_weight: float,
    *,
    near: float = DEFAULT_NEAR,
    dtype=None,
) -> BackwardResult:
    """Gradients of the photometric loss w.r.t. every splat parameter."""
    dtype = np.dtype(dtype or scene.dtype).type
    target = validate_image(target, cam).astype(dtype, copy=False)
    proj = _project_scene(scene, cam, near, dtype)
    image, t_final, contributed, skipped, records = _composite(
        scene, proj, cam, background, dtype, True
    )
    output = RenderOutput(image=image, contributed=contributed, skipped_singular=skipped)
    loss_value, d_image = loss(image, target, ssim_weight)

    n = len(scene)
    g_color = np.zeros((n, 3), dtype=dtype)
    g_mean2d = np.zeros((n, 2), dtype=dtype)
    g_cov2d = np.zeros((n, 2, 2), dtype=dtype)
    g_ab = np.zeros(n, dtype=dtype)

    # Reverse sweep: walk splats back-to-front, rebuilding the transmittance
    # in front of each one and the composited color behind it.
    behind = background.to_array(dtype)[None, None, :] * t_final[:, :, None]
    t_cur = t_final.copy()
    for idx, box, alpha, gauss, geom in reversed(records):
        i0, i1, j0, j1 = box
        sl = (slice(i0, i1 + 1), slice(j0, j1 + 1))
        one_minus = 1.0 - alpha
        t_front = t_cur[sl] / one_minus
        d_img_box = d_image[sl]
        weight = alpha * t_front
        g_color[idx] = np.einsum("hwc,hw->c", d_img_box, weight)

        color = proj.colors[idx]
        d_alpha = np.einsum("hwc,c->hw", d_img_box, color) * t_front
        d_alpha -= np.einsum("hwc->hw", d_img_box * behind[sl]) / one_minus

        raw_alpha = proj.alpha_base[idx] * gauss
        active = (alpha > 0) & (raw_alpha < ALPHA_MAX)
        d_alpha = np.where(active, d_alpha, 0.0)

        g_ab[idx] = float(np.sum(d_alpha * gauss))
        g_q = d_alpha * (-0.5 * alpha)

        dx, dy, la, lb, lc = geom
        dxg = dx[None, :]
        dyg = dy[:, None]
        g_mean2d[idx, 0] = float(np.sum(g_q * (-2.0) * (la * dxg + lb * dyg)))
        g_mean2d[idx, 1] = float(np.sum(g_q * (-2.0) * (lb * dxg + lc * dyg)))
        sxx = float(np.sum(g_q * dxg * dxg))
        sxy = float(np.sum(g_q * dxg * dyg))
        syy = float(np.sum(g_q * dyg * dyg))
        lam = np.array([[la, lb], [lb, lc]], dtype=dtype)
        g_cov2d[idx] = -lam @ np.array([[sxx, sxy], [sxy, syy]], dtype=dtype) @ lam

        behind[sl] += (alpha * t_front)[:, :, None] * color
        t_cur[sl] = t_front

    result = BackwardResult(
        loss=loss_value,
        output=output,
        positions=np.zeros((n, 3), dtype=dtype),
        log_scales=np.zeros((n, 3), dtype=dtype),
        rotations=np.zeros((n, 4), dtype=dtype),
        opacity_logits=np.zeros(n, dtype=dtype),
        sh=np.zeros_like(scene.sh, dtype=dtype),
        mean2d=g_mean2d,
    )
    live = contributed
    if not np.any(live):
        return result

    _chain_to_parameters(scene, cam, proj, live, g_color, g_mean2d, g_cov2d, g_ab, result, dtype)
    return result


def _chain_to_parameters(scene, cam, proj, live, g_color, g_mean2d, g_cov2d, g_ab, result, dtype):
    idx = np.nonzero(live)[0]
    R = cam.rotation.astype(dtype)

    # opacity: alpha_base = sigmoid(logit)
    ab = proj.alpha_base[idx]
    result.opacity_logits[idx] = g_ab[idx] * ab * (1.0 - ab)

    # SH coefficients and view-direction coupling (clamp gates per channel)
    raw = proj.raw_colors[idx]
    inside = ((raw > 0.0) & (raw < 1.0)).astype(dtype)
    g_col_in = g_color[idx] * inside
    basis = proj.basis[idx]
    result.sh[idx] = basis[:, :, None] * g_col_in[:, None, :]
    degree = scene.sh_degree
    bgrad = sh_basis_grad(proj.unit_dirs[idx], degree)
    sh_coeffs = scene.sh.astype(dtype, copy=False)[idx]
    g_dir = np.einsum("nc,nkc,nkd->nd", g_col_in, sh_coeffs, bgrad)
    unit = proj.unit_dirs[idx]
    norms = proj.dir_norms[idx]
    g_vec = (g_dir - unit * np.sum(unit * g_dir, axis=1, keepdims=True)) / norms[:, None]

    # covariance chain: cov2d = M Sigma M^T + eps I, M = J R
    sym_gc = g_cov2d[idx]
    M = proj.M[idx]
    quats = scene.rotations.astype(dtype, copy=False)[idx]
    scales = np.exp(scene.log_scales.astype(dtype, copy=False)[idx])
    rot = quats_to_rotations(quats)
    sigma = covariances3d(scales, quats)
    g_sigma = np.einsum("nba,nbc,ncd->nad", M, sym_gc, M)
    g_m = 2.0 * np.einsum("nab,nbc,ncd->nad", sym_gc, M, sigma)
    g_j = np.einsum("nab,cb->nac", g_m, R)

    # Sigma = V V^T with V = R(q) diag(s)
    v_mat = rot * scales[:, None, :]
    g_v = 2.0 * np.einsum("nab,nbc->nac", g_sigma, v_mat)
    g_scales = np.einsum("nik,nik->nk", rot, g_v)
    result.log_scales[idx] = g_scales * scales
    g_rot = g_v * scales[:, None, :]

    # rotation: chain through the quaternion normalization
    qn = np.sqrt(np.sum(quats * quats, axis=1))
    qh = quats / qn[:, None]
    w, x, y, z = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    zero = np.zeros_like(w)
    d_rot = np.empty((len(idx), 4, 3, 3), dtype=dtype)
    d_rot[:, 0] = 2.0 * np.stack(
        [
            np.stack([zero, -z, y], axis=1),
            np.stack([z, zero, -x], axis=1),
            np.stack([-y, x, zero], axis=1),
        ],
        axis=1,
    )
    d_rot[:, 1] = 2.0 * np.stack(
        [
            np.stack([zero, y, z], axis=1),
            np.stack([y, -2 * x, -w], axis=1),
            np.stack([z, w, -2 * x], axis=1),
        ],
        axis=1,
    )
    d_rot[:, 2] = 2.0 * np.stack(
        [
            np.stack([-2 * y, x, w], axis=1),
            np.stack([x, zero, z], axis=1),
            np.stack([-w, z, -2 * y], axis=1),
        ],
        axis=1,
    )
    d_rot[:, 3] = 2.0 * np.stack(
        [
            np.stack([-2 * z, -w, x], axis=1),
            np.stack([w, -2 * z, y], axis=1),
            np.stack([x, y, zero], axis=1),
        ],
        axis=1,
    )
    g_qh = np.einsum("nkij,nij->nk", d_rot, g_rot)
    result.rotations[idx] = (g_qh - qh * np.sum(qh * g_qh, axis=1, keepdims=True)) / qn[:, None]

    # position: screen mean + Jacobian dependence + view-direction shading
    fx = dtype(cam.fx)
    fy = dtype(cam.fy)
    p_cam = proj.p_cam[idx]
    xc, yc, zc = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    inv_z = 1.0 / zc
    inv_z2 = inv_z * inv_z
    g_pcam = np.einsum("nba,nb->na", proj.J[idx], g_mean2d[idx])
    g_pcam[:, 0] += g_j[:, 0, 2] * (-fx * inv_z2)
    g_pcam[:, 1] += g_j[:, 1, 2] * (-fy * inv_z2)
    g_pcam[:, 2] += (
        g_j[:, 0, 0] * (-fx * inv_z2)
        + g_j[:, 1, 1] * (-fy * inv_z2)
        + g_j[:, 0, 2] * (2.0 * fx * xc * inv_z2 * inv_z)
        + g_j[:, 1, 2] * (2.0 * fy * yc * inv_z2 * inv_z)
    )
    result.positions[idx] = g_pcam @ R + g_vec
