"""Core splat-scene types and spherical-harmonics color evaluation.

Conventions used throughout the package:

* Images are ``(H, W, 3)`` float arrays with values in ``[0, 1]``
  ("ImageBuffer"); masks are ``(H, W)`` uint8 arrays with values in
  ``{0, 1}`` ("MaskBuffer").  Pixel ``(row i, col j)`` has its center at
  continuous coordinates ``(u, v) = (j + 0.5, i + 0.5)``.
* Cameras are pinhole models with a world-to-camera rotation ``R`` and a
  translation ``t`` expressed in the camera frame: ``p_cam = R @ p + t``.
  The camera looks down +z, with y pointing down in the image.
* Splat scale is stored as log-scale and opacity as a logit; the
  activated values are ``exp(log_scale)`` and ``sigmoid(opacity_logit)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

# Real SH basis constants, in the band ordering used by the splat
# ecosystem (dc, then -y/+z/-x for degree 1, etc.).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3


def sh_coeff_count(degree: int) -> int:
    if degree < 0 or degree > MAX_SH_DEGREE:
        raise InvalidInputError(f"sh degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    return (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    root = int(round(math.sqrt(count)))
    if root * root != count or not 1 <= root <= MAX_SH_DEGREE + 1:
        raise InvalidInputError(f"{count} is not a valid SH coefficient count")
    return root - 1


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(p):
    p = np.asarray(p)
    return np.log(p / (1.0 - p))


@dataclass(frozen=True)
class ColorRGB:
    """An RGB color with channels clamped into [0, 1] on construction."""

    r: float
    g: float
    b: float

    def __post_init__(self):
        for name in ("r", "g", "b"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InvalidInputError(f"color channel {name} is not finite")
            object.__setattr__(self, name, min(1.0, max(0.0, v)))

    def to_array(self, dtype=np.float64) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=dtype)

    @classmethod
    def from_array(cls, arr) -> "ColorRGB":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (3,):
            raise InvalidInputError(f"expected 3 channels, got shape {arr.shape}")
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix for a quaternion given as (w, x, y, z).

    The quaternion is renormalized internally; a zero-norm input is
    rejected.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have 4 components, got shape {q.shape}")
    norm = float(np.sqrt(np.dot(q, q)))
    if norm < 1e-12:
        raise InvalidInputError("zero-norm quaternion")
    return quats_to_rotations(q[None, :])[0]


def quats_to_rotations(quats: np.ndarray) -> np.ndarray:
    """Vectorized quaternion (N,4) -> rotation matrices (N,3,3)."""
    quats = np.asarray(quats)
    norms = np.sqrt(np.sum(quats * quats, axis=1, keepdims=True))
    q = quats / norms
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty(quats.shape[:1] + (3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance3d(scale, q) -> np.ndarray:
    """3D covariance ``R S S^T R^T`` from activated scales and a quaternion."""
    scale = np.asarray(scale, dtype=np.float64)
    if scale.shape != (3,):
        raise InvalidInputError(f"scale must have 3 components, got shape {scale.shape}")
    if np.any(scale <= 0):
        raise InvalidInputError("activated scales must be positive")
    return covariances3d(scale[None, :], np.asarray(q, dtype=np.float64)[None, :])[0]


def covariances3d(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """Vectorized splat covariances from activated scales (N,3) and quats (N,4)."""
    R = quats_to_rotations(quats)
    s2 = np.asarray(scales) ** 2
    return np.einsum("nik,nk,njk->nij", R, s2, R)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit directions (N,3) -> (N, (degree+1)^2)."""
    n = dirs.shape[0]
    k = sh_coeff_count(degree)
    out = np.empty((n, k), dtype=dirs.dtype)
    out[:, 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = SH_C2[0] * x * y
        out[:, 5] = SH_C2[1] * y * z
        out[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * x * z
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = SH_C3[0] * y * (3 * xx - yy)
        out[:, 10] = SH_C3[1] * x * y * z
        out[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Gradients of each basis value w.r.t. the (unit) direction: (N, K, 3)."""
    n = dirs.shape[0]
    k = sh_coeff_count(degree)
    g = np.zeros((n, k, 3), dtype=dirs.dtype)
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        g[:, 4, 0] = SH_C2[0] * y
        g[:, 4, 1] = SH_C2[0] * x
        g[:, 5, 1] = SH_C2[1] * z
        g[:, 5, 2] = SH_C2[1] * y
        g[:, 6, 0] = SH_C2[2] * (-2 * x)
        g[:, 6, 1] = SH_C2[2] * (-2 * y)
        g[:, 6, 2] = SH_C2[2] * (4 * z)
        g[:, 7, 0] = SH_C2[3] * z
        g[:, 7, 2] = SH_C2[3] * x
        g[:, 8, 0] = SH_C2[4] * (2 * x)
        g[:, 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        g[:, 9, 0] = SH_C3[0] * (6 * x * y)
        g[:, 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        g[:, 10, 0] = SH_C3[1] * y * z
        g[:, 10, 1] = SH_C3[1] * x * z
        g[:, 10, 2] = SH_C3[1] * x * y
        g[:, 11, 0] = SH_C3[2] * (-2 * x * y)
        g[:, 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        g[:, 11, 2] = SH_C3[2] * (8 * y * z)
        g[:, 12, 0] = SH_C3[3] * (-6 * x * z)
        g[:, 12, 1] = SH_C3[3] * (-6 * y * z)
        g[:, 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        g[:, 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        g[:, 13, 1] = SH_C3[4] * (-2 * x * y)
        g[:, 13, 2] = SH_C3[4] * (8 * x * z)
        g[:, 14, 0] = SH_C3[5] * (2 * x * z)
        g[:, 14, 1] = SH_C3[5] * (-2 * y * z)
        g[:, 14, 2] = SH_C3[5] * (xx - yy)
        g[:, 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        g[:, 15, 1] = SH_C3[6] * (-6 * x * y)
    return g


def sh_eval_many(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Clamped SH colors for (N, K, 3) coefficients and (N, 3) directions.

    Directions are normalized internally, so callers may pass any
    positively scaled direction vector.
    """
    sh = np.asarray(sh)
    dirs = np.asarray(dirs, dtype=sh.dtype)
    norms = np.sqrt(np.sum(dirs * dirs, axis=1, keepdims=True))
    if np.any(norms < 1e-12):
        raise InvalidInputError("zero-length view direction")
    unit = dirs / norms
    degree = sh_degree_from_count(sh.shape[1])
    basis = sh_basis(unit, degree)
    raw = 0.5 + np.einsum("nk,nkc->nc", basis, sh)
    return np.clip(raw, 0.0, 1.0)


def sh_eval(sh, degree: int, view_dir) -> ColorRGB:
    """Evaluate one splat's SH color toward ``view_dir``."""
    sh = np.asarray(sh, dtype=np.float64)
    if sh.ndim != 2 or sh.shape[1] != 3:
        raise InvalidInputError(f"sh must be (K, 3), got shape {sh.shape}")
    if sh.shape[0] != sh_coeff_count(degree):
        raise InvalidInputError(
            f"degree {degree} needs {sh_coeff_count(degree)} coefficient triplets, got {sh.shape[0]}"
        )
    color = sh_eval_many(sh[None], np.asarray(view_dir, dtype=np.float64)[None])[0]
    return ColorRGB.from_array(color)


@dataclass
class Gaussian3D:
    """A single splat.

    ``log_scale`` holds log of the per-axis extent, ``opacity_logit`` the
    pre-sigmoid opacity, ``rotation`` a (w, x, y, z) quaternion that is
    normalized on construction, ``sh`` the ``(K, 3)`` SH coefficient
    triplets and ``label`` the integer semantic/instance id.
    """

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh: np.ndarray
    label: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        norm = float(np.sqrt(np.dot(rot, rot)))
        if norm < 1e-12:
            raise InvalidInputError("zero-norm quaternion")
        self.rotation = rot / norm
        self.opacity_logit = float(self.opacity_logit)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.sh.ndim != 2 or self.sh.shape[1] != 3:
            raise InvalidInputError(f"sh must be (K, 3), got shape {self.sh.shape}")
        sh_degree_from_count(self.sh.shape[0])
        if self.label < 0:
            raise InvalidInputError("label must be non-negative")

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(np.float64(self.opacity_logit)))

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh.shape[0])


@dataclass
class SplatScene:
    """An ordered splat collection stored as struct-of-arrays.

    All float arrays share one dtype; indices are stable under every
    operation that does not prune.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions))
        dtype = self.positions.dtype if self.positions.dtype.kind == "f" else np.float64
        self.positions = self.positions.astype(dtype, copy=False)
        n = self.positions.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=dtype).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=dtype).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=dtype).reshape(n)
        self.sh = np.asarray(self.sh, dtype=dtype)
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise InvalidInputError(f"sh must be (N, K, 3), got shape {self.sh.shape}")
        sh_degree_from_count(self.sh.shape[1])
        if self.labels is None:
            self.labels = np.zeros(n, dtype=np.int32)
        else:
            self.labels = np.asarray(self.labels, dtype=np.int32).reshape(n)
        if self.positions.shape[1] != 3:
            raise InvalidInputError("positions must be (N, 3)")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            position=self.positions[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh=self.sh[i].copy(),
            label=int(self.labels[i]),
        )

    @property
    def dtype(self):
        return self.positions.dtype

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh.shape[1])

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @classmethod
    def from_gaussians(cls, gaussians, dtype=np.float32) -> "SplatScene":
        gaussians = list(gaussians)
        if not gaussians:
            raise InvalidInputError("cannot build a scene from zero splats; use SplatScene.empty")
        k = gaussians[0].sh.shape[0]
        for g in gaussians:
            if g.sh.shape[0] != k:
                raise InvalidInputError("all splats in a scene must share one SH degree")
        return cls(
            positions=np.stack([g.position for g in gaussians]).astype(dtype),
            log_scales=np.stack([g.log_scale for g in gaussians]).astype(dtype),
            rotations=np.stack([g.rotation for g in gaussians]).astype(dtype),
            opacity_logits=np.array([g.opacity_logit for g in gaussians], dtype=dtype),
            sh=np.stack([g.sh for g in gaussians]).astype(dtype),
            labels=np.array([g.label for g in gaussians], dtype=np.int32),
        )

    @classmethod
    def empty(cls, sh_degree: int = 3, dtype=np.float32) -> "SplatScene":
        k = sh_coeff_count(sh_degree)
        return cls(
            positions=np.zeros((0, 3), dtype=dtype),
            log_scales=np.zeros((0, 3), dtype=dtype),
            rotations=np.zeros((0, 4), dtype=dtype),
            opacity_logits=np.zeros(0, dtype=dtype),
            sh=np.zeros((0, k, 3), dtype=dtype),
            labels=np.zeros(0, dtype=np.int32),
        )

    def subset(self, index) -> "SplatScene":
        """New scene keeping ``index`` (bool mask or integer indices), order preserved."""
        return SplatScene(
            positions=self.positions[index].copy(),
            log_scales=self.log_scales[index].copy(),
            rotations=self.rotations[index].copy(),
            opacity_logits=self.opacity_logits[index].copy(),
            sh=self.sh[index].copy(),
            labels=self.labels[index].copy(),
        )

    def copy(self) -> "SplatScene":
        return self.subset(slice(None))

    def astype(self, dtype) -> "SplatScene":
        return SplatScene(
            positions=self.positions.astype(dtype),
            log_scales=self.log_scales.astype(dtype),
            rotations=self.rotations.astype(dtype),
            opacity_logits=self.opacity_logits.astype(dtype),
            sh=self.sh.astype(dtype),
            labels=self.labels.copy(),
        )


@dataclass
class CameraModel:
    """Pinhole camera: world-to-camera rotation/translation plus intrinsics."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("camera dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError("principal point must lie inside the image")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise InvalidInputError(f"camera rotation is not orthonormal (max error {err:.2e})")

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


def validate_image(image, cam: CameraModel | None = None) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"image must be (H, W, 3), got shape {image.shape}")
    if cam is not None and image.shape[:2] != (cam.height, cam.width):
        raise InvalidInputError(
            f"image shape {image.shape[:2]} does not match camera {cam.height}x{cam.width}"
        )
    return image


def validate_mask(mask, shape=None) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidInputError(f"mask must be (H, W), got shape {mask.shape}")
    if not np.isin(np.unique(mask), (0, 1)).all():
        raise InvalidInputError("mask values must be 0 or 1")
    if shape is not None and mask.shape != tuple(shape):
        raise InvalidInputError(f"mask shape {mask.shape} does not match expected {tuple(shape)}")
    return mask
