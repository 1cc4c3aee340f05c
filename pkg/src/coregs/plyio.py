"""Splat persistence as binary little-endian PLY.

Per-vertex layout: ``x y z``, ``f_dc_0..2``, ``f_rest_*`` (channel-major,
``3*((D+1)^2 - 1)`` floats), ``opacity`` (logit), ``scale_0..2`` (log),
``rot_0..3`` (w, x, y, z) — all 32-bit floats — plus an ``int`` property
``label`` appended last so viewers that ignore unknown properties still
open the file.  Files without the label column load with all labels 0.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from .core import SplatScene, sh_coeff_count, sh_degree_from_count
from .errors import FormatError

_FLOAT_NAMES = {"float", "float32"}
_INT_NAMES = {"int", "int32"}


def _field_names(sh_degree: int) -> list[str]:
    k = sh_coeff_count(sh_degree)
    names = ["x", "y", "z"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names += ["opacity"]
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def save_splats(scene: SplatScene, path) -> None:
    """Write the scene; all float fields are stored as 32-bit."""
    path = Path(path)
    n = len(scene)
    k = scene.sh.shape[1]
    names = _field_names(scene.sh_degree)

    dtype = np.dtype([(name, "<f4") for name in names] + [("label", "<i4")])
    rows = np.empty(n, dtype=dtype)
    rows["x"] = scene.positions[:, 0]
    rows["y"] = scene.positions[:, 1]
    rows["z"] = scene.positions[:, 2]
    for c in range(3):
        rows[f"f_dc_{c}"] = scene.sh[:, 0, c]
    for c in range(3):
        for j in range(k - 1):
            rows[f"f_rest_{c * (k - 1) + j}"] = scene.sh[:, j + 1, c]
    rows["opacity"] = scene.opacity_logits
    for i in range(3):
        rows[f"scale_{i}"] = scene.log_scales[:, i]
    for i in range(4):
        rows[f"rot_{i}"] = scene.rotations[:, i]
    rows["label"] = scene.labels

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header += ["property int label", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rows.tobytes())


def _parse_header(fh, path):
    lines = []
    while True:
        raw = fh.readline()
        if not raw:
            raise FormatError(f"{path}: unexpected end of file inside header")
        line = raw.decode("ascii", errors="replace").strip()
        lines.append(line)
        if line == "end_header":
            break
        if len(lines) > 10000:
            raise FormatError(f"{path}: header does not terminate")
    if lines[0] != "ply":
        raise FormatError(f"{path}: not a PLY file (line 1: {lines[0]!r})")

    n_vertices = None
    properties: list[tuple[str, str]] = []
    element = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise FormatError(
                    f"{path}:{lineno}: only binary_little_endian is supported, got {parts[1]!r}"
                )
        elif parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                n_vertices = int(parts[2])
            else:
                raise FormatError(f"{path}:{lineno}: unsupported element {element!r}")
        elif parts[0] == "property":
            if element != "vertex":
                raise FormatError(f"{path}:{lineno}: property outside vertex element")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: malformed property line {line!r}")
            properties.append((parts[1], parts[2]))
        elif parts[0] == "end_header":
            break
        else:
            raise FormatError(f"{path}:{lineno}: unrecognized header line {line!r}")
    if n_vertices is None:
        raise FormatError(f"{path}: header has no vertex element")
    return n_vertices, properties


def load_splats(path) -> SplatScene:
    """Read a splat file; bit-exact round trip with :func:`save_splats`."""
    path = Path(path)
    with open(path, "rb") as fh:
        n, properties = _parse_header(fh, path)

        has_label = ("int", "label") in properties or ("int32", "label") in properties
        float_props = [name for typ, name in properties if name != "label"]
        for typ, name in properties:
            if name == "label":
                if typ not in _INT_NAMES:
                    raise FormatError(f"{path}: label property must be int, got {typ!r}")
            elif typ not in _FLOAT_NAMES:
                raise FormatError(f"{path}: property {name!r} has unsupported type {typ!r}")

        n_rest = sum(1 for p in float_props if p.startswith("f_rest_"))
        if n_rest % 3 != 0:
            raise FormatError(f"{path}: f_rest count {n_rest} is not a multiple of 3")
        try:
            degree = sh_degree_from_count(n_rest // 3 + 1)
        except Exception as exc:
            raise FormatError(f"{path}: invalid SH layout ({exc})") from exc
        expected = _field_names(degree)
        if float_props != expected:
            unknown = [p for p in float_props if p not in expected]
            missing = [p for p in expected if p not in float_props]
            detail = []
            if unknown:
                detail.append(f"unknown properties {unknown}")
            if missing:
                detail.append(f"missing properties {missing}")
            if not detail:
                detail.append("properties out of order")
            raise FormatError(f"{path}: {'; '.join(detail)}")

        # field order follows the header, so a label column anywhere parses
        dtype = np.dtype(
            [(name, "<i4" if name == "label" else "<f4") for _, name in properties]
        )
        body = fh.read(dtype.itemsize * n)
        if len(body) != dtype.itemsize * n:
            raise FormatError(
                f"{path}: truncated body at byte {len(body)} (expected {dtype.itemsize * n})"
            )
        rows = np.frombuffer(body, dtype=dtype)

    k = sh_coeff_count(degree)
    positions = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float32)
    sh = np.zeros((n, k, 3), dtype=np.float32)
    for c in range(3):
        sh[:, 0, c] = rows[f"f_dc_{c}"]
    for c in range(3):
        for j in range(k - 1):
            sh[:, j + 1, c] = rows[f"f_rest_{c * (k - 1) + j}"]
    log_scales = np.stack([rows[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float32)
    rotations = np.stack([rows[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float32)
    opacity = rows["opacity"].astype(np.float32)
    if has_label:
        labels = rows["label"].astype(np.int32)
    else:
        warnings.warn(f"{path}: no label property; defaulting all labels to 0", stacklevel=2)
        labels = np.zeros(n, dtype=np.int32)
    return SplatScene(
        positions=positions,
        log_scales=log_scales,
        rotations=rotations,
        opacity_logits=opacity,
        sh=sh,
        labels=labels,
    )
