"""Two-stage training: optional photometric warmup on the full scene,
then focused refinement of the extracted object against targets whose
background has been replaced by the scene's most isolated color, with
periodic color-based floater pruning.

The optimizer is a first-order adaptive method with sparse semantics:
only splats that contributed at least one pixel to the sampled view have
their moments and parameters updated that step, so untouched splats stay
bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import CameraModel, ColorRGB, SplatScene, quats_to_rotations, sigmoid
from .errors import InvalidInputError, TrainingCollapsedError
from .filtering import flag_artifacts, prune, removal_distance
from .palette import FurthestColor
from .rasterizer import backward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


@dataclass
class DensifyConfig:
    enabled: bool = False
    interval: int = 100
    grad_threshold: float = 2e-4
    opacity_floor: float = 0.005
    percent_dense: float = 0.01
    split_scale_shrink: float = 1.6


@dataclass
class RefineConfig:
    """Iteration schedule, loss mix, filter settings and learning rates."""

    init_iters: int = 3000
    total_iters: int = 30000
    filter_period: int = 1000
    t_r: float = 0.5
    ssim_weight: float = 0.2
    filter_view_sample: str = "all"
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    seed: int = 0
    precision: int = 32
    workers: int = 1
    near: float = 0.01

    def __post_init__(self):
        if self.init_iters < 0 or self.total_iters <= 0:
            raise InvalidInputError("iteration counts must be positive")
        if self.init_iters >= self.total_iters:
            raise InvalidInputError(
                f"init_iters ({self.init_iters}) must be below total_iters ({self.total_iters})"
            )
        if self.filter_period < 1:
            raise InvalidInputError("filter_period must be at least 1")
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise InvalidInputError("ssim_weight must be in [0, 1]")
        if self.t_r <= 0:
            raise InvalidInputError("t_r must be positive")
        if self.precision not in (32, 64):
            raise InvalidInputError("precision must be 32 or 64")

    @property
    def refine_iters(self) -> int:
        return self.total_iters - self.init_iters

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def position_lr(self, iteration: int, horizon: int) -> float:
        """Exponential decay from lr_position to lr_position_final over ``horizon``."""
        if horizon <= 1:
            return self.lr_position
        t = min(max(iteration, 0), horizon) / horizon
        return float(self.lr_position * (self.lr_position_final / self.lr_position) ** t)


@dataclass
class FilterEvent:
    iteration: int
    flagged: int
    scene_size_after: int


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    filter_events: list[FilterEvent] = field(default_factory=list)
    phase_seconds: dict = field(default_factory=dict)
    final_metrics: dict | None = None
    # index into the input scene for every surviving splat; densified
    # splats inherit their parent's index
    survivor_indices: list[int] | None = None

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "filter_events": [
                {"iteration": e.iteration, "flagged": e.flagged, "scene_size_after": e.scene_size_after}
                for e in self.filter_events
            ],
            "phase_seconds": self.phase_seconds,
            "final_metrics": self.final_metrics,
        }


@dataclass
class TrainView:
    """One supervision view: camera plus the target image to match."""

    camera: CameraModel
    target: np.ndarray


class SparseAdam:
    """Adaptive optimizer whose moments advance only for active splats."""

    def __init__(self, scene: SplatScene):
        self._moments = {}
        self._steps = np.zeros(len(scene), dtype=np.int64)
        for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh"):
            arr = getattr(scene, name)
            self._moments[name] = (np.zeros_like(arr), np.zeros_like(arr))

    def step(self, scene: SplatScene, grads, active: np.ndarray, lrs: dict) -> None:
        if not np.any(active):
            return
        self._steps[active] += 1
        t = self._steps[active]
        for name, lr in lrs.items():
            param = getattr(scene, name)
            grad = getattr(grads, name)[active]
            m, v = self._moments[name]
            extra = (1,) * (param.ndim - 1)
            tb = t.reshape((-1,) + extra)
            m[active] = ADAM_BETA1 * m[active] + (1 - ADAM_BETA1) * grad
            v[active] = ADAM_BETA2 * v[active] + (1 - ADAM_BETA2) * grad * grad
            m_hat = m[active] / (1 - ADAM_BETA1**tb)
            v_hat = v[active] / (1 - ADAM_BETA2**tb)
            param[active] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    def keep(self, mask: np.ndarray) -> None:
        self._steps = self._steps[mask]
        for name, (m, v) in self._moments.items():
            self._moments[name] = (m[mask], v[mask])

    def extend(self, count: int) -> None:
        self._steps = np.concatenate([self._steps, np.zeros(count, dtype=np.int64)])
        for name, (m, v) in self._moments.items():
            pad_m = np.zeros((count,) + m.shape[1:], dtype=m.dtype)
            pad_v = np.zeros((count,) + v.shape[1:], dtype=v.dtype)
            self._moments[name] = (
                np.concatenate([m, pad_m]),
                np.concatenate([v, pad_v]),
            )


def _lrs_for(cfg: RefineConfig, iteration: int, horizon: int) -> dict:
    return {
        "positions": cfg.position_lr(iteration, horizon),
        "log_scales": cfg.lr_scale,
        "rotations": cfg.lr_rotation,
        "opacity_logits": cfg.lr_opacity,
        "sh": cfg.lr_sh,
    }


def _view_order(rng: np.random.Generator, n_views: int, n_iters: int) -> np.ndarray:
    """Seeded epoch shuffle: uniform without replacement inside each epoch."""
    chunks = []
    produced = 0
    while produced < n_iters:
        chunks.append(rng.permutation(n_views))
        produced += n_views
    return np.concatenate(chunks)[:n_iters]


@dataclass
class _GradStats:
    """Accumulated screen-space gradient magnitudes between densify passes."""

    sums: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "_GradStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64))

    def add(self, mean2d_grads: np.ndarray, active: np.ndarray) -> None:
        norms = np.sqrt(np.sum(mean2d_grads**2, axis=1))
        self.sums[active] += norms[active]
        self.counts[active] += 1

    def averages(self) -> np.ndarray:
        return self.sums / np.maximum(self.counts, 1)


@dataclass
class DensifyResult:
    scene: SplatScene
    kept: np.ndarray  # bool mask over the input scene
    appended_from: np.ndarray  # parent index per surviving appended splat


def densify_and_prune(
    scene: SplatScene,
    grad_stats: _GradStats,
    cfg: RefineConfig,
    rng: np.random.Generator | None = None,
) -> DensifyResult:
    """Clone/split high-gradient splats, drop near-transparent ones."""
    rng = rng or np.random.default_rng(0)
    dense = cfg.densify
    n = len(scene)
    avg = grad_stats.averages()
    high = avg >= dense.grad_threshold

    extent = 1.0
    if n > 1:
        span = scene.positions.max(axis=0) - scene.positions.min(axis=0)
        extent = max(float(np.sqrt(np.sum(span**2))), 1e-6)
    max_scale = np.exp(scene.log_scales).max(axis=1)
    small = max_scale <= dense.percent_dense * extent

    clone_ids = np.nonzero(high & small)[0]
    split_ids = np.nonzero(high & ~small)[0]

    parts = [scene]
    parents = []
    if clone_ids.size:
        parts.append(scene.subset(clone_ids))
        parents.append(clone_ids)
    if split_ids.size:
        halves = []
        for _ in range(2):
            piece = scene.subset(split_ids)
            local = rng.normal(0.0, 1.0, piece.positions.shape) * np.exp(piece.log_scales)
            rots = quats_to_rotations(piece.rotations.astype(np.float64))
            offsets = np.einsum("nij,nj->ni", rots, local)
            piece.positions = (piece.positions + offsets).astype(piece.dtype)
            piece.log_scales = (piece.log_scales - np.log(dense.split_scale_shrink)).astype(
                piece.dtype
            )
            halves.append(piece)
        parts.extend(halves)
        parents.extend([split_ids, split_ids])

    merged = parts[0]
    if len(parts) > 1:
        merged = SplatScene(
            positions=np.concatenate([p.positions for p in parts]),
            log_scales=np.concatenate([p.log_scales for p in parts]),
            rotations=np.concatenate([p.rotations for p in parts]),
            opacity_logits=np.concatenate([p.opacity_logits for p in parts]),
            sh=np.concatenate([p.sh for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
        )

    keep = np.ones(len(merged), dtype=bool)
    # split originals are replaced by their two halves
    keep[split_ids] = False
    opacity = sigmoid(merged.opacity_logits)
    keep &= opacity >= dense.opacity_floor

    appended_from = np.concatenate(parents) if parents else np.zeros(0, dtype=np.int64)
    appended_from = appended_from[keep[n:]]
    kept_input = keep[:n].copy()
    final = merged.subset(keep)
    return DensifyResult(scene=final, kept=kept_input, appended_from=appended_from)


def warmup_train(
    scene: SplatScene,
    views: list[TrainView],
    cfg: RefineConfig,
    *,
    iterations: int | None = None,
    background=None,
) -> tuple[SplatScene, TrainLog]:
    """Plain photometric training on full (unmasked) views; labels are fixed."""
    if len(scene) == 0:
        raise InvalidInputError("cannot train an empty scene")
    if not views:
        raise InvalidInputError("need at least one view")
    iterations = cfg.init_iters if iterations is None else iterations
    background = background or ColorRGB(0.0, 0.0, 0.0)
    log = TrainLog()
    if iterations == 0:
        return scene, log

    t0 = time.perf_counter()
    work = scene.astype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    order = _view_order(rng, len(views), iterations)
    opt = SparseAdam(work)
    for it in range(1, iterations + 1):
        view = views[int(order[it - 1])]
        res = backward(
            work,
            view.camera,
            view.target.astype(cfg.dtype, copy=False),
            background,
            cfg.ssim_weight,
            near=cfg.near,
            dtype=cfg.dtype,
        )
        log.losses.append(res.loss)
        opt.step(work, res, res.output.contributed, _lrs_for(cfg, it, iterations))
    log.phase_seconds["warmup"] = time.perf_counter() - t0
    return work, log


def refine(
    scene: SplatScene,
    views: list[TrainView],
    palette: FurthestColor,
    cfg: RefineConfig,
    *,
    iterations: int | None = None,
) -> tuple[SplatScene, TrainLog]:
    """Refine the extracted object against background-replaced targets.

    One view per step (seeded epoch shuffle); every ``filter_period``
    steps the scene is scanned for background-colored splats, which are
    pruned together with their optimizer state.  Raises
    :class:`TrainingCollapsedError` (log attached) if pruning empties the
    scene.
    """
    if len(scene) == 0:
        raise InvalidInputError("cannot refine an empty scene")
    if not views:
        raise InvalidInputError("need at least one retained view")
    iterations = cfg.refine_iters if iterations is None else iterations
    log = TrainLog()
    if iterations == 0:
        log.phase_seconds["refine"] = 0.0
        return scene, log

    t0 = time.perf_counter()
    work = scene.astype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    order = _view_order(rng, len(views), iterations)
    opt = SparseAdam(work)
    stats = _GradStats.zeros(len(work))
    origin = np.arange(len(work), dtype=np.int64)
    d_remove = removal_distance(palette.d_avg, cfg.t_r)
    cams = [v.camera for v in views]

    for it in range(1, iterations + 1):
        view = views[int(order[it - 1])]
        res = backward(
            work,
            view.camera,
            view.target.astype(cfg.dtype, copy=False),
            palette.p_star,
            cfg.ssim_weight,
            near=cfg.near,
            dtype=cfg.dtype,
        )
        log.losses.append(res.loss)
        active = res.output.contributed
        opt.step(work, res, active, _lrs_for(cfg, it, iterations))
        stats.add(res.mean2d, active)

        if cfg.densify.enabled and it % cfg.densify.interval == 0:
            result = densify_and_prune(work, stats, cfg, rng)
            opt.keep(result.kept)
            opt.extend(len(result.appended_from))
            origin = np.concatenate([origin[result.kept], origin[result.appended_from]])
            work = result.scene
            stats = _GradStats.zeros(len(work))

        if it % cfg.filter_period == 0:
            report = flag_artifacts(
                work,
                cams,
                palette.p_star,
                d_remove,
                view_sample=cfg.filter_view_sample,
                workers=cfg.workers,
            )
            keep = np.ones(len(work), dtype=bool)
            keep[report.flagged] = False
            work = prune(work, report)
            opt.keep(keep)
            stats = _GradStats(stats.sums[keep], stats.counts[keep])
            origin = origin[keep]
            log.filter_events.append(
                FilterEvent(iteration=it, flagged=int(report.flagged.size), scene_size_after=len(work))
            )
            if len(work) == 0:
                log.phase_seconds["refine"] = time.perf_counter() - t0
                log.survivor_indices = []
                raise TrainingCollapsedError(
                    f"color filter removed every splat at iteration {it}", log=log
                )

    log.phase_seconds["refine"] = time.perf_counter() - t0
    log.survivor_indices = [int(i) for i in origin]
    return work, log


def config_with(cfg: RefineConfig, **kwargs) -> RefineConfig:
    """Copy of ``cfg`` with selected fields replaced."""
    return replace(cfg, **kwargs)
