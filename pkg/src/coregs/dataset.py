"""Dataset interchange: a cameras JSON file referencing 8-bit RGB images
and optional 16-bit single-channel segmentation maps.

Camera entries hold ``width, height, fx, fy, cx, cy``, a row-major 3x3
world-to-camera ``rotation``, a ``translation`` in the camera frame, an
``image`` filename and an optional ``segmap`` filename, both resolved
relative to the JSON file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import CameraModel
from .errors import FormatError, InvalidInputError


@dataclass
class View:
    camera: CameraModel
    image: np.ndarray | None = None
    segmap: np.ndarray | None = None
    image_name: str | None = None
    segmap_name: str | None = None


def load_image(path) -> np.ndarray:
    """8-bit RGB PNG mapped to floats in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"image file not found: {path}")
    with Image.open(path) as img:
        if img.mode != "RGB":
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float32)
    return arr / 255.0


def save_image(image: np.ndarray, path) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_segmap(path) -> np.ndarray:
    """16-bit single-channel PNG of integer ids."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"segmentation file not found: {path}")
    with Image.open(path) as img:
        if img.mode not in ("I;16", "I;16B", "I"):
            raise FormatError(
                f"{path}: segmentation maps must be 16-bit single-channel PNG, got mode {img.mode!r}"
            )
        arr = np.asarray(img)
    return arr.astype(np.int64)


def save_segmap(segmap: np.ndarray, path) -> None:
    arr = np.asarray(segmap)
    if arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max:
        raise InvalidInputError("segmentation ids must fit in uint16")
    Image.fromarray(arr.astype(np.uint16), mode="I;16").save(path)


def _camera_from_record(rec: dict, index: int) -> CameraModel:
    try:
        return CameraModel(
            width=int(rec["width"]),
            height=int(rec["height"]),
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            rotation=np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(rec["translation"], dtype=np.float64),
        )
    except KeyError as exc:
        raise FormatError(f"camera entry {index}: missing field {exc}") from exc
    except InvalidInputError as exc:
        raise FormatError(f"camera entry {index}: {exc}") from exc


def camera_to_record(cam: CameraModel, image: str | None = None, segmap: str | None = None) -> dict:
    rec = {
        "width": cam.width,
        "height": cam.height,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "rotation": [float(v) for v in cam.rotation.ravel()],
        "translation": [float(v) for v in cam.translation],
    }
    if image is not None:
        rec["image"] = image
    if segmap is not None:
        rec["segmap"] = segmap
    return rec


def load_dataset(camera_file, *, with_images: bool = True) -> list[View]:
    """Load cameras plus their referenced images and segmentation maps."""
    camera_file = Path(camera_file)
    if not camera_file.exists():
        raise FormatError(f"camera file not found: {camera_file}")
    try:
        records = json.loads(camera_file.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{camera_file}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise FormatError(f"{camera_file}: expected a JSON array of cameras")
    base = camera_file.parent
    views = []
    for i, rec in enumerate(records):
        cam = _camera_from_record(rec, i)
        view = View(camera=cam, image_name=rec.get("image"), segmap_name=rec.get("segmap"))
        if with_images and view.image_name is not None:
            view.image = load_image(base / view.image_name)
            if view.image.shape[:2] != (cam.height, cam.width):
                raise FormatError(
                    f"view {i}: image {view.image_name} is "
                    f"{view.image.shape[1]}x{view.image.shape[0]}, camera expects "
                    f"{cam.width}x{cam.height}"
                )
        if with_images and view.segmap_name is not None:
            view.segmap = load_segmap(base / view.segmap_name)
            if view.segmap.shape != (cam.height, cam.width):
                raise FormatError(
                    f"view {i}: segmentation {view.segmap_name} does not match camera size"
                )
        views.append(view)
    if not views:
        raise FormatError(f"{camera_file}: camera list is empty")
    return views


def save_dataset(directory, views: list[View], camera_file_name: str = "cameras.json") -> Path:
    """Write images, segmaps and the cameras JSON into ``directory``."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    records = []
    need_segdir = any(v.segmap is not None for v in views)
    if need_segdir:
        (directory / "segmaps").mkdir(exist_ok=True)
    for i, view in enumerate(views):
        image_name = segmap_name = None
        if view.image is not None:
            image_name = f"images/view_{i:04d}.png"
            save_image(view.image, directory / image_name)
        if view.segmap is not None:
            segmap_name = f"segmaps/view_{i:04d}.png"
            save_segmap(view.segmap, directory / segmap_name)
        records.append(camera_to_record(view.camera, image_name, segmap_name))
    out = directory / camera_file_name
    out.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    return out
