"""Temporal-mode background model and foreground extraction.

The camera is stationary, so the background at each pixel is the most
frequent value that pixel takes over time. Foreground strength is then the
per-pixel color residual against that model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EmptySequenceError
from .raster import BinaryMask, GrayImage, ImageRgb

_CHUNK = 1 << 21  # elements of (N, chunk) processed at once by the mode


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Ordered frames of identical dimensions, N >= 1."""

    frames: tuple[ImageRgb, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) == 0:
            raise EmptySequenceError("FrameSequence needs at least one frame")
        h, w = frames[0].height, frames[0].width
        for i, f in enumerate(frames):
            if f.height != h or f.width != w:
                raise DimensionMismatchError(
                    f"frame {i} is {f.width}x{f.height}, expected {w}x{h}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width


@dataclass(frozen=True, eq=False)
class BackgroundModel:
    background: ImageRgb
    frame_count: int


def _mode_columns(stack: np.ndarray) -> np.ndarray:
    """Mode of each column of a (N, M) uint8 array; ties -> smallest value."""
    s = np.sort(stack, axis=0)
    n, m = s.shape
    idx = np.arange(n, dtype=np.int32)[:, None]
    boundary = s[1:] != s[:-1]
    start = np.vstack([np.ones((1, m), dtype=bool), boundary])
    end = np.vstack([boundary, np.ones((1, m), dtype=bool)])
    last_start = np.maximum.accumulate(np.where(start, idx, -1), axis=0)
    run_len = idx - last_start + 1
    run_len_at_end = np.where(end, run_len, 0)
    # argmax takes the first maximal run; values are sorted ascending, so the
    # first maximal run is the smallest tied value
    best = np.argmax(run_len_at_end, axis=0)
    return s[best, np.arange(m)]


def estimate_background(seq: FrameSequence) -> BackgroundModel:
    """Per-pixel, per-channel temporal mode of the sequence.

    Ties between equally frequent values resolve to the smallest intensity,
    so the result is deterministic and invariant to frame order.
    """
    n = len(seq)
    stack = np.stack([f.data for f in seq.frames], axis=0)  # (N, H, W, 3)
    h, w, _ = stack.shape[1:]
    flat = stack.reshape(n, -1)
    out = np.empty(flat.shape[1], dtype=np.uint8)
    step = max(1, _CHUNK // max(n, 1))
    for lo in range(0, flat.shape[1], step):
        hi = min(lo + step, flat.shape[1])
        out[lo:hi] = _mode_columns(flat[:, lo:hi])
    return BackgroundModel(ImageRgb(out.reshape(h, w, 3)), frame_count=n)


def extract_foreground(frame: ImageRgb, bg: BackgroundModel) -> GrayImage:
    """Sum over channels of absolute residual against the background, in [0, 765]."""
    b = bg.background
    if frame.height != b.height or frame.width != b.width:
        raise DimensionMismatchError(
            f"frame {frame.width}x{frame.height} vs background {b.width}x{b.height}"
        )
    diff = np.abs(frame.data.astype(np.int16) - b.data.astype(np.int16))
    return GrayImage(diff.sum(axis=2, dtype=np.int32))


def binarize(residual: GrayImage, threshold: float) -> BinaryMask:
    """Pixel true iff residual strictly exceeds the threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return BinaryMask(residual.data > threshold)
