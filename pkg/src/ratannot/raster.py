"""Raster value types and binary-mask operations shared by every pipeline stage.

Conventions used throughout the package:

* Arrays are row-major with shape ``(height, width)``; element ``[y, x]``
  is the pixel in row ``y``, column ``x``.
* A pixel's center sits at integer coordinates, so pixel ``(x, y)`` covers
  the square ``[x - 0.5, x + 0.5] x [y - 0.5, y + 0.5]``.
* Continuous points are ``(x, y)`` pairs; raster indices are ``(row, col)``.

All values are treated as immutable once constructed: operations return new
objects and never write into their inputs, which makes them safe to share
across threads or processes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    DegeneratePolygonError,
    EmptyMaskError,
    MultipleComponentsError,
)

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_FULL = np.ones((3, 3), dtype=bool)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImageRgb:
    """8-bit RGB image, ``data`` of shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"ImageRgb expects (H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("ImageRgb needs width, height >= 1")
        object.__setattr__(self, "data", arr.astype(np.uint8, copy=False))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel raster; dtype (integer or float) is up to the producer."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage expects (H, W), got {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.int32)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean raster, ``data`` of shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"BinaryMask expects (H, W), got {arr.shape}")
        object.__setattr__(self, "data", arr.astype(bool, copy=False))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Non-negative integer labels; 0 marks unlabeled/background pixels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"LabelMap expects (H, W), got {arr.shape}")
        arr = arr.astype(np.int32, copy=False)
        if arr.size and arr.min() < 0:
            raise ValueError("LabelMap values must be >= 0")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def max_label(self) -> int:
        return int(self.data.max(initial=0))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel units, top-left origin."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("BoundingBox needs w > 0 and h > 0")

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_xywh(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True, eq=False)
class Contour:
    """Closed boundary polyline: ``points`` is (N, 2) of (x, y), N >= 3.

    The last point connects back to the first; it is not repeated.
    """

    points: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
            raise ValueError(f"Contour expects (N >= 3, 2), got {arr.shape}")
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return self.points.shape[0]

    def perimeter(self) -> float:
        d = np.diff(np.vstack([self.points, self.points[:1]]), axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


# ---------------------------------------------------------------------------
# morphology and component analysis
# ---------------------------------------------------------------------------

def connected_components(mask: BinaryMask, connectivity: int = 8) -> LabelMap:
    """Label connected regions of true pixels.

    Labels are assigned by decreasing region area; ties go to the region
    whose topmost-leftmost pixel has the smaller row-major index, so the
    output is deterministic for any input.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = _FULL if connectivity == 8 else _CROSS
    raw, n = ndimage.label(mask.data, structure=structure)
    if n == 0:
        return LabelMap(np.zeros_like(raw, dtype=np.int32))
    flat = raw.ravel()
    areas = np.bincount(flat, minlength=n + 1)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size))
    order = sorted(range(1, n + 1), key=lambda lab: (-areas[lab], first[lab]))
    lut = np.zeros(n + 1, dtype=np.int32)
    for new, old in enumerate(order, start=1):
        lut[old] = new
    return LabelMap(lut[raw])


def fill_holes(mask: BinaryMask) -> BinaryMask:
    """Fill background regions (4-connectivity) not connected to the border."""
    bg = ~mask.data
    lab, n = ndimage.label(bg, structure=_CROSS)
    if n == 0:
        return BinaryMask(mask.data.copy())
    border = np.concatenate([lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]])
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(border)] = True
    keep[0] = True
    holes = bg & ~keep[lab]
    return BinaryMask(mask.data | holes)


def disc_offsets(radius: float) -> np.ndarray:
    """Boolean disc footprint: cell true iff its center is within ``radius``."""
    r = int(np.ceil(radius))
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return (dy * dy + dx * dx) <= radius * radius


def dilate_disc(mask: BinaryMask, radius: float) -> BinaryMask:
    if radius <= 0:
        return BinaryMask(mask.data.copy())
    return BinaryMask(ndimage.binary_dilation(mask.data, structure=disc_offsets(radius)))


def erode_disc(mask: BinaryMask, radius: float) -> BinaryMask:
    if radius <= 0:
        return BinaryMask(mask.data.copy())
    return BinaryMask(ndimage.binary_erosion(mask.data, structure=disc_offsets(radius)))


def morphological_closing(mask: BinaryMask, radius: float) -> BinaryMask:
    """Dilation followed by erosion with a Euclidean disc of ``radius``.

    Computed on an implicitly infinite all-false plane, so the result is
    extensive (contains the input) even at the image border.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return BinaryMask(mask.data.copy())
    foot = disc_offsets(radius)
    pad = int(np.ceil(radius)) + 1
    padded = np.pad(mask.data, pad)
    dil = ndimage.binary_dilation(padded, structure=foot)
    ero = ndimage.binary_erosion(dil, structure=foot)
    return BinaryMask(ero[pad:-pad, pad:-pad])


def remove_small_components(mask: BinaryMask, min_area: int) -> BinaryMask:
    """Drop 8-connected true components with area strictly below ``min_area``."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    if min_area == 0:
        return BinaryMask(mask.data.copy())
    lab, n = ndimage.label(mask.data, structure=_FULL)
    if n == 0:
        return BinaryMask(mask.data.copy())
    areas = np.bincount(lab.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    return BinaryMask(keep[lab])


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull of integer points, counterclockwise."""
    pts = np.unique(points, axis=0)  # lexicographic sort on (x, y)
    if len(pts) <= 2:
        return pts

    def chain(seq):
        out: list[np.ndarray] = []
        for p in seq:
            while len(out) >= 2:
                cross = (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1]) - (
                    out[-1][1] - out[-2][1]
                ) * (p[0] - out[-2][0])
                if cross <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = chain(pts)
    upper = chain(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=np.int64)


def convex_hull_mask(mask: BinaryMask) -> BinaryMask:
    """Pixels whose centers lie inside or on the convex hull of the true pixels."""
    ys, xs = np.nonzero(mask.data)
    if len(ys) == 0:
        raise EmptyMaskError("convex hull of an empty mask")
    pts = np.stack([xs, ys], axis=1).astype(np.int64)
    hull = _convex_hull(pts)
    out = np.zeros_like(mask.data)
    x0, x1 = int(hull[:, 0].min()), int(hull[:, 0].max())
    y0, y1 = int(hull[:, 1].min()), int(hull[:, 1].max())
    gx, gy = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.int64),
                         np.arange(y0, y1 + 1, dtype=np.int64))
    if len(hull) <= 2:
        # degenerate hull: a point or a segment; membership = collinear + in bbox
        if len(hull) == 1:
            inside = np.ones_like(gx, dtype=bool)
        else:
            a, b = hull[0], hull[1]
            cross = (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])
            inside = cross == 0
    else:
        inside = np.ones_like(gx, dtype=bool)
        for i in range(len(hull)):
            a = hull[i]
            b = hull[(i + 1) % len(hull)]
            cross = (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])
            inside &= cross >= 0
    out[y0:y1 + 1, x0:x1 + 1] = inside
    return BinaryMask(out)


def solidity(mask: BinaryMask) -> float:
    """Ratio of mask area to the pixel-counted area of its convex hull.

    The hull is taken over true-pixel centers and rasterized back with the
    same center-inclusive rule, so the value is exactly 1.0 for rasterized
    convex shapes and never exceeds 1.
    """
    area = mask.area
    if area == 0:
        raise EmptyMaskError("solidity of an empty mask")
    hull_area = convex_hull_mask(mask).area
    return area / hull_area


# ---------------------------------------------------------------------------
# boundary tracing and polygon rasterization
# ---------------------------------------------------------------------------

# Moore neighborhood in clockwise screen order (y grows downward), from West.
_RING = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def trace_boundary(mask: BinaryMask) -> Contour:
    """Trace the outer boundary of a single 8-connected component.

    Moore-neighbor tracing starting at the topmost-leftmost pixel, one point
    per boundary-pixel visit (counterclockwise in standard y-up coordinates).
    Pixels on one-pixel-wide protrusions appear once per side of the walk.
    """
    data = mask.data
    if not data.any():
        raise EmptyMaskError("cannot trace an empty mask")
    _, n = ndimage.label(data, structure=_FULL)
    if n > 1:
        raise MultipleComponentsError(f"expected one component, found {n}")
    h, w = data.shape
    flat_start = int(np.argmax(data.ravel()))
    start = (flat_start // w, flat_start % w)

    def at(p):
        return 0 <= p[0] < h and 0 <= p[1] < w and data[p[0], p[1]]

    points = [start]
    prev = (start[0], start[1] - 1)  # virtual backtrack West of start
    state0 = (start, prev)
    cur = start
    max_steps = 4 * int(data.sum()) + 8
    for _ in range(max_steps):
        base = _RING.index((prev[0] - cur[0], prev[1] - cur[1]))
        found = None
        for k in range(1, 9):
            off = _RING[(base + k) % 8]
            cand = (cur[0] + off[0], cur[1] + off[1])
            if at(cand):
                before = _RING[(base + k - 1) % 8]
                prev = (cur[0] + before[0], cur[1] + before[1])
                found = cand
                break
        if found is None:
            break  # isolated pixel
        cur = found
        if (cur, prev) == state0:
            break
        points.append(cur)
    while len(points) < 3:
        points.append(points[-1])
    xy = np.array([(c, r) for r, c in points], dtype=np.float64)
    return Contour(xy)


def rasterize_polygon(contour: Contour, width: int, height: int) -> BinaryMask:
    """Scanline even-odd fill; a pixel is true iff its center is strictly inside."""
    pts = contour.points
    closed = np.vstack([pts, pts[:1]])
    x1, y1 = closed[:-1, 0], closed[:-1, 1]
    x2, y2 = closed[1:, 0], closed[1:, 1]
    area2 = np.abs(np.sum(x1 * y2 - x2 * y1)) / 2.0
    if area2 < 1.0:
        raise DegeneratePolygonError(f"polygon area {area2:.3f} px^2 < 1")
    nonflat = y1 != y2
    ex1, ey1 = x1[nonflat], y1[nonflat]
    ex2, ey2 = x2[nonflat], y2[nonflat]
    ymin = np.minimum(ey1, ey2)
    ymax = np.maximum(ey1, ey2)
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        hit = (ymin <= y) & (y < ymax)
        if not hit.any():
            continue
        t = (y - ey1[hit]) / (ey2[hit] - ey1[hit])
        xs = np.sort(ex1[hit] + t * (ex2[hit] - ex1[hit]))
        for a, b in zip(xs[0::2], xs[1::2]):
            lo = int(np.floor(a)) + 1
            hi = int(np.ceil(b)) - 1
            if hi < lo:
                continue
            out[y, max(lo, 0):min(hi, width - 1) + 1] = True
    return BinaryMask(out)


def bounding_box(mask: BinaryMask) -> BoundingBox:
    """Tight axis-aligned box around the true pixels."""
    ys, xs = np.nonzero(mask.data)
    if len(ys) == 0:
        raise EmptyMaskError("bounding box of an empty mask")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return BoundingBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


# ---------------------------------------------------------------------------
# serialization: PNG and run-length encoding
# ---------------------------------------------------------------------------

def write_image_rgb(path, image: ImageRgb) -> None:
    Image.fromarray(image.data, mode="RGB").save(path, format="PNG")


def read_image_rgb(path) -> ImageRgb:
    with Image.open(path) as im:
        return ImageRgb(np.asarray(im.convert("RGB")))


def write_gray8(path, image: GrayImage) -> None:
    arr = image.data
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("gray image values outside [0, 255]")
        arr = arr.astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_gray8(path) -> GrayImage:
    with Image.open(path) as im:
        return GrayImage(np.asarray(im.convert("L")))


def write_mask_png(path, mask: BinaryMask) -> None:
    Image.fromarray(mask.data.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def read_mask_png(path) -> BinaryMask:
    with Image.open(path) as im:
        return BinaryMask(np.asarray(im.convert("L")) > 127)


def mask_to_rle(mask: BinaryMask) -> dict:
    """Uncompressed run-length encoding, row-major, starting with a zero run."""
    flat = mask.data.ravel().astype(np.int8)
    if flat.size == 0:
        return {"size": [mask.height, mask.width], "counts": []}
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0] == 1:
        counts = [0] + counts
    return {"size": [mask.height, mask.width], "counts": counts}


def rle_to_mask(rle: dict) -> BinaryMask:
    h, w = int(rle["size"][0]), int(rle["size"][1])
    counts = list(rle["counts"])
    if sum(counts) != h * w:
        raise ValueError("RLE counts do not cover the raster")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for run in counts:
        if val:
            flat[pos:pos + run] = True
        pos += run
        val = not val
    return BinaryMask(flat.reshape(h, w))
