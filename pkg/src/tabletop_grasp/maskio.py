"""Mask files: a portable graymap plus a JSON sidecar.

A mask named ``cup.pgm`` is described by ``cup.json`` next to it::

    {"class_label": 4, "full_area": 312}

Nonzero graymap pixels belong to the mask.  Both the ASCII (P2) and binary
(P5) graymap variants are read; P5 is written.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .pose_estimation import (
    EmptyMask,
    ObjectPose,
    PixelMask,
    estimate_pose,
    mask_ratio,
)


class MaskFormatError(ValueError):
    pass


def _pgm_tokens(data: bytes):
    """Yield (token, end_offset) for the header, skipping '#' comments."""
    i, n = 0, len(data)
    while i < n:
        c = data[i:i + 1]
        if c == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = _pgm_tokens(data)
    try:
        magic, _ = next(tokens)
        if magic not in (b"P2", b"P5"):
            raise MaskFormatError(f"{path}: not a P2/P5 graymap (magic {magic!r})")
        width = int(next(tokens)[0])
        height = int(next(tokens)[0])
        maxval_tok, end = next(tokens)
        maxval = int(maxval_tok)
    except (StopIteration, ValueError) as exc:
        raise MaskFormatError(f"{path}: truncated or malformed graymap header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise MaskFormatError(f"{path}: bad graymap dimensions or maxval")
    count = width * height
    if magic == b"P2":
        try:
            values = [int(next(tokens)[0]) for _ in range(count)]
        except (StopIteration, ValueError) as exc:
            raise MaskFormatError(f"{path}: expected {count} ASCII samples") from exc
        img = np.array(values, dtype=np.int64)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[end + 1:]
        if len(raw) < count * dtype.itemsize:
            raise MaskFormatError(f"{path}: binary raster shorter than {width}x{height}")
        img = np.frombuffer(raw[: count * dtype.itemsize], dtype=dtype).astype(np.int64)
    return img.reshape(height, width)


def write_pgm(path, image: np.ndarray, binary: bool = True) -> None:
    img = np.asarray(image)
    h, w = img.shape
    out = np.where(img != 0, 255, 0).astype(np.uint8)
    path = Path(path)
    if binary:
        path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + out.tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in out)
        path.write_text(f"P2\n{w} {h}\n255\n{rows}\n")


def sidecar_path(mask_path) -> Path:
    return Path(mask_path).with_suffix(".json")


def write_mask(path, mask: PixelMask, shape: Tuple[int, int], full_area: int, binary: bool = True) -> None:
    write_pgm(path, mask.to_image(shape), binary=binary)
    sidecar_path(path).write_text(
        json.dumps({"class_label": int(mask.class_label), "full_area": int(full_area)}) + "\n"
    )


def read_mask(path) -> Tuple[PixelMask, int]:
    """Load a mask file and its sidecar; returns ``(mask, full_area)``."""
    img = read_pgm(path)
    side = sidecar_path(path)
    try:
        header = json.loads(side.read_text())
    except FileNotFoundError as exc:
        raise MaskFormatError(f"{path}: missing sidecar {side.name}") from exc
    except json.JSONDecodeError as exc:
        raise MaskFormatError(f"{side}: line {exc.lineno}: {exc.msg}") from exc
    try:
        label = int(header["class_label"])
        full_area = int(header["full_area"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MaskFormatError(f"{side}: needs integer class_label and full_area") from exc
    return PixelMask.from_image(img, label), full_area


def pose_record(class_label: int, pose: Optional[ObjectPose], ratio: float) -> dict:
    if pose is None:
        x = y = theta = math.nan
        degenerate = True
    else:
        x, y, theta, degenerate = pose.x, pose.y, pose.theta, pose.degenerate
    return {
        "class": int(class_label),
        "x": float(x),
        "y": float(y),
        "theta": float(theta),
        "ratio": float(ratio),
        "degenerate": bool(degenerate),
    }


def pose_record_for_file(path) -> dict:
    """Pose record, in pixel coordinates, for one mask file."""
    mask, full_area = read_mask(path)
    ratio = mask_ratio(mask, full_area)
    if len(mask) == 0:
        raise EmptyMask(f"{path}: mask has no pixels")
    return pose_record(mask.class_label, estimate_pose(mask), ratio)
