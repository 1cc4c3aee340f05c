"""Scratch finite-difference probe for the rasterizer backward pass."""
import numpy as np

from coregs.core import CameraModel, ColorRGB, SplatScene, inverse_sigmoid
from coregs import rasterizer as rz


def make_scene(seed=3, n=3, degree=3):
    rng = np.random.default_rng(seed)
    k = (degree + 1) ** 2
    positions = rng.normal(0, 0.25, (n, 3)) + np.array([0, 0, 4.0])
    log_scales = np.log(rng.uniform(0.5, 0.9, (n, 3)))
    rotations = rng.normal(0, 1, (n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    opacity = inverse_sigmoid(rng.uniform(0.55, 0.85, n))
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rng.uniform(-0.6, 0.6, (n, 3))
    sh[:, 1:, :] = rng.uniform(-0.08, 0.08, (n, k - 1, 3))
    return SplatScene(
        positions=positions.astype(np.float64),
        log_scales=log_scales.astype(np.float64),
        rotations=rotations.astype(np.float64),
        opacity_logits=opacity.astype(np.float64),
        sh=sh.astype(np.float64),
        labels=np.ones(n, dtype=np.int32),
    )


def make_cam(size=8):
    return CameraModel(
        width=size, height=size, fx=float(size), fy=float(size),
        cx=size / 2, cy=size / 2, rotation=np.eye(3), translation=np.zeros(3),
    )


def loss_of(scene, cam, target, bg, w):
    out = rz.render(scene, cam, bg, dtype=np.float64)
    val, _ = rz.loss(out.image, target, w)
    return val


def main():
    scene = make_scene()
    cam = make_cam()
    bg = ColorRGB(0.15, 0.25, 0.85)
    rng = np.random.default_rng(7)
    target = np.clip(rng.uniform(0.1, 0.9, (cam.height, cam.width, 3)), 0, 1)

    h = 1e-5
    for w in (0.0, 0.2):
        res = rz.backward(scene, cam, target, bg, w, dtype=np.float64)
        worst = 0.0
        worst_name = ""
        for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh"):
            arr = getattr(scene, name)
            grad = getattr(res, name)
            it = np.ndindex(arr.shape)
            for ix in it:
                orig = arr[ix]
                arr[ix] = orig + h
                lp = loss_of(scene, cam, target, bg, w)
                arr[ix] = orig - h
                lm = loss_of(scene, cam, target, bg, w)
                arr[ix] = orig
                fd = (lp - lm) / (2 * h)
                an = grad[ix]
                denom = max(abs(fd), abs(an), 1e-8)
                rel = abs(fd - an) / denom
                if rel > worst:
                    worst, worst_name = rel, f"{name}{ix} fd={fd:.6e} an={an:.6e}"
        print(f"w={w}: worst rel err {worst:.3e} at {worst_name}")


if __name__ == "__main__":
    main()
