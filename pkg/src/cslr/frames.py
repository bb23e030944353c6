"""Frame archive: one directory per video.

The directory holds a ``header`` text file (``TFNF``, version, then
``T C H W``) and ``T`` files ``000000.raw`` ... each containing the raw
``H x W x C`` uint8 pixels of one frame.
"""

from __future__ import annotations

import os

import numpy as np

MAGIC = "TFNF"
VERSION = 1
HEADER = "header"


class FrameArchiveError(ValueError):
    pass


def frame_name(i: int) -> str:
    return f"{i:06d}.raw"


def write_frames(path, frames: np.ndarray):
    """Write a ``(T, H, W, C)`` uint8 array."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 4:
        raise FrameArchiveError(f"expected (T,H,W,C) uint8 frames, got {frames.dtype} {frames.shape}")
    T, H, W, C = frames.shape
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, HEADER), "w", encoding="ascii", newline="\n") as f:
        f.write(f"{MAGIC}\n{VERSION}\n{T} {C} {H} {W}\n")
    for i in range(T):
        with open(os.path.join(path, frame_name(i)), "wb") as f:
            f.write(np.ascontiguousarray(frames[i]).tobytes())


def read_header(path) -> tuple[int, int, int, int]:
    """Return ``(T, C, H, W)``."""
    try:
        with open(os.path.join(path, HEADER), encoding="ascii") as f:
            lines = f.read().split("\n")
    except FileNotFoundError:
        raise FrameArchiveError(f"{path}: no frame archive header") from None
    if len(lines) < 3 or lines[0] != MAGIC:
        raise FrameArchiveError(f"{path}: bad magic")
    if lines[1].strip() != str(VERSION):
        raise FrameArchiveError(f"{path}: unsupported archive version {lines[1].strip()}")
    dims = lines[2].split()
    if len(dims) != 4:
        raise FrameArchiveError(f"{path}: header needs T C H W")
    T, C, H, W = (int(d) for d in dims)
    if min(T, C, H, W) < 1:
        raise FrameArchiveError(f"{path}: non-positive dimension in header")
    return T, C, H, W


def read_frames(path) -> np.ndarray:
    """Return the ``(T, H, W, C)`` uint8 frames."""
    T, C, H, W = read_header(path)
    out = np.empty((T, H, W, C), dtype=np.uint8)
    size = H * W * C
    for i in range(T):
        with open(os.path.join(path, frame_name(i)), "rb") as f:
            raw = f.read()
        if len(raw) != size:
            raise FrameArchiveError(f"{path}/{frame_name(i)}: expected {size} bytes, got {len(raw)}")
        out[i] = np.frombuffer(raw, dtype=np.uint8).reshape(H, W, C)
    return out


def to_video(frames: np.ndarray, dtype=np.float64) -> np.ndarray:
    """uint8 ``(T,H,W,C)`` -> ``(T,C,H,W)`` in [0, 1]."""
    return (frames.astype(dtype) / 255.0).transpose(0, 3, 1, 2)
