"""Video augmentation: one crop and one flip decision per clip, plus temporal resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRETCH_RANGE = (0.8, 1.2)
FLIP_PROB = 0.5


@dataclass(frozen=True)
class AugmentParams:
    top: int
    left: int
    flip: bool
    length: int


def center_params(T: int, H: int, W: int, crop: int) -> AugmentParams:
    _check_crop(H, W, crop)
    return AugmentParams((H - crop) // 2, (W - crop) // 2, False, T)


def sample_params(rng: np.random.Generator, T: int, H: int, W: int, crop: int,
                  min_length: int = 1) -> AugmentParams:
    _check_crop(H, W, crop)
    top = int(rng.integers(0, H - crop + 1))
    left = int(rng.integers(0, W - crop + 1))
    flip = bool(rng.random() < FLIP_PROB)
    factor = rng.uniform(*STRETCH_RANGE)
    length = max(min_length, 1, int(round(factor * T)))
    return AugmentParams(top, left, flip, length)


def _check_crop(H, W, crop):
    if crop > H or crop > W:
        raise ValueError(f"crop {crop} is larger than frame {H}x{W}")


def resample_indices(T: int, length: int) -> np.ndarray:
    """Nearest-frame source index for each of ``length`` output frames."""
    j = np.arange(length)
    return np.minimum(np.floor((j + 0.5) * T / length).astype(np.int64), T - 1)


def apply(video: np.ndarray, p: AugmentParams, crop: int) -> np.ndarray:
    """``video`` is ``(T, C, H, W)``; returns ``(p.length, C, crop, crop)``."""
    T = video.shape[0]
    out = video[:, :, p.top:p.top + crop, p.left:p.left + crop]
    if p.flip:
        out = out[..., ::-1]
    if p.length != T:
        out = out[resample_indices(T, p.length)]
    return np.ascontiguousarray(out)


def augment(video: np.ndarray, mode: str, rng: np.random.Generator | None, crop: int,
            min_length: int = 1) -> np.ndarray:
    """Train mode: random crop, coin-flip mirror, +-20% temporal stretch.  Eval mode: center crop."""
    T, _, H, W = video.shape
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode augmentation needs an rng")
        params = sample_params(rng, T, H, W, crop, min_length)
    elif mode == "eval":
        params = center_params(T, H, W, crop)
    else:
        raise ValueError(f"unknown augmentation mode {mode!r}")
    return apply(video, params, crop)

