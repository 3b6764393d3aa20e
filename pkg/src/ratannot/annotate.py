"""Automatic annotation pipeline: from a foreground mask to three keypoints
(head, tail base, tail end) and three body-part segments (head, body, tail).

Stages: clean and gate the mask, smooth its boundary, thin it to a midline,
pick the endpoint pair with the longest skeleton geodesic, classify head vs
tail end by watershed basin area, split the midline at the median of the
distance profile to find the tail base, validate the tail-to-body ratio,
flood the three parts, and optionally snap the head keypoint to a mask
corner and trim head pixels that leak past the neck.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import interpolate, ndimage

from . import geometry, raster
from .background import BackgroundModel, binarize, extract_foreground
from .errors import (
    ContourTooShortError,
    DegeneratePolygonError,
    DisconnectedEndpointsError,
    KeypointOutsideMaskError,
    PathTooShortError,
    SplineFitError,
)
from .geometry import DistanceMap, SkeletonPath
from .raster import BinaryMask, BoundingBox, Contour, ImageRgb, LabelMap


class PartLabel(enum.IntEnum):
    HEAD = 1
    BODY = 2
    TAIL = 3


class RejectionReason(enum.Enum):
    TOO_SMALL = "too_small"
    NON_CONVEXITY_GATE = "non_convexity_gate"
    TOO_FEW_ENDPOINTS = "too_few_endpoints"
    TAIL_RATIO_INVALID = "tail_ratio_invalid"
    DEGENERATE_SKELETON = "degenerate_skeleton"


class Keypoint(NamedTuple):
    x: float
    y: float
    v: int  # 0 absent, 1 labeled-occluded, 2 labeled-visible


@dataclass(frozen=True)
class Keypoints:
    head: Keypoint
    tail_base: Keypoint
    tail_end: Keypoint

    def as_flat(self) -> list[float]:
        out: list[float] = []
        for kp in (self.head, self.tail_base, self.tail_end):
            out.extend([float(kp.x), float(kp.y), int(kp.v)])
        return out

    @staticmethod
    def from_flat(values) -> "Keypoints":
        v = list(values)
        if len(v) != 9:
            raise ValueError("flat keypoints need 9 values")
        return Keypoints(
            Keypoint(v[0], v[1], int(v[2])),
            Keypoint(v[3], v[4], int(v[5])),
            Keypoint(v[6], v[7], int(v[8])),
        )

    def visible(self) -> list[Keypoint]:
        return [kp for kp in (self.head, self.tail_base, self.tail_end) if kp.v > 0]


@dataclass(frozen=True)
class AnnotationConfig:
    """Pipeline switches and thresholds; defaults follow the best known row
    of the snap/clean/trim ablation grid (snap off, clean on, trim on)."""

    snap_head_to_corner: bool = False
    clean_mask: bool = True
    trim_protruding: bool = True
    closing_radius: float = 3.0
    min_component_area: int = 300
    solidity_bounds: tuple[float, float] = (0.35, 0.95)
    spline_degree: int = 4
    spline_smoothing: float = 0.5  # multiplied by boundary point count at fit time
    tail_ratio_bounds: tuple[float, float] = (0.5, 1.6)
    residual_threshold: float = 50.0
    corner_snap_radius: float = 15.0
    corner_arc_step: int = 5
    corner_min_turn_deg: float = 30.0

    def __post_init__(self):
        if self.solidity_bounds[0] >= self.solidity_bounds[1]:
            raise ValueError("solidity_bounds must be (min, max) with min < max")
        if self.tail_ratio_bounds[0] >= self.tail_ratio_bounds[1]:
            raise ValueError("tail_ratio_bounds must be (min, max) with min < max")
        if self.spline_degree < 2 or self.spline_degree > 5:
            raise ValueError("spline_degree must be in 2..5")


@dataclass(frozen=True, eq=False)
class InstanceAnnotation:
    """One annotated instance: mask, box, keypoints, part labels, provenance."""

    mask: BinaryMask
    bbox: BoundingBox
    keypoints: Keypoints
    parts: LabelMap
    source: str = "cv_pipeline"  # cv_pipeline | synthetic | augmented
    quality_flags: frozenset[str] = field(default_factory=frozenset)


def validate_annotation(ann: InstanceAnnotation) -> None:
    """Raise ValueError when an annotation violates its schema invariants.

    Shared by pipeline outputs, synthetic ground truth and augmented samples.
    """
    mask = ann.mask.data
    parts = ann.parts.data
    if parts.shape != mask.shape:
        raise ValueError("parts and mask dimensions differ")
    if ((parts > 0) != mask).any():
        raise ValueError("parts must be nonzero exactly on the mask")
    if not set(np.unique(parts)).issubset({0, 1, 2, 3}):
        raise ValueError("parts may only use labels 0..3")
    bbox = raster.bounding_box(ann.mask)
    if bbox != ann.bbox:
        raise ValueError(f"bbox {ann.bbox} != mask bounding box {bbox}")
    for label in (1, 2, 3):
        region = parts == label
        if region.any():
            _, n = ndimage.label(region, structure=np.ones((3, 3), bool))
            if n > 1:
                raise ValueError(f"part {label} is disconnected ({n} pieces)")
    for kp in (ann.keypoints.head, ann.keypoints.tail_base, ann.keypoints.tail_end):
        if kp.v not in (0, 1, 2):
            raise ValueError(f"keypoint visibility {kp.v} not in 0..2")
        if kp.v == 2:
            c, r = int(round(kp.x)), int(round(kp.y))
            if not (0 <= r < mask.shape[0] and 0 <= c < mask.shape[1]) or not mask[r, c]:
                raise ValueError(f"visible keypoint ({kp.x}, {kp.y}) off the mask")


# ---------------------------------------------------------------------------
# stage 1: mask hygiene and gates
# ---------------------------------------------------------------------------

def _periodic_design_matrix(u: np.ndarray, n_coef: int, degree: int) -> np.ndarray:
    """Design matrix of a uniform periodic B-spline basis on [0, 1).

    Columns of the open-spline design matrix on the extended knot vector are
    folded modulo ``n_coef`` so coefficients wrap around the closed curve.
    """
    k = degree
    knots = np.arange(-k, n_coef + k + 1, dtype=np.float64) / n_coef
    a = interpolate.BSpline.design_matrix(u, knots, k).toarray()
    folded = np.zeros((len(u), n_coef))
    for j in range(a.shape[1]):
        folded[:, j % n_coef] += a[:, j]
    return folded


def _fit_closed_spline(
    pts: np.ndarray, degree: int, residual_budget: float, n_eval: int
) -> np.ndarray:
    """Least-squares closed B-spline through boundary points.

    Control-point count grows until the squared-residual budget is met, so a
    larger budget means a smoother curve. Returns ``n_eval`` points on the
    fitted curve.
    """
    n = len(pts)
    closed = np.vstack([pts, pts[:1]])
    chord = np.hypot(*np.diff(closed, axis=0).T)
    total = chord.sum()
    if total <= 0:
        raise SplineFitError("boundary has zero length")
    u = np.concatenate([[0.0], np.cumsum(chord[:-1])]) / total
    # floor the control density near one point per 12 boundary pixels:
    # coarser fits average away head-sized lobes and thin tail tips
    floor = max(8, int(round(total / 12.0)))
    candidates = [floor] + [floor * f // 2 for f in (3, 4, 6, 8)]
    best = None
    for m in candidates:
        if m > max(n // 3, 8):
            break
        design = _periodic_design_matrix(u, m, degree)
        coef, *_ = np.linalg.lstsq(design, pts, rcond=None)
        resid = float(((design @ coef - pts) ** 2).sum())
        best = (m, coef)
        if resid <= residual_budget:
            break
    if best is None:
        raise SplineFitError(f"boundary of {n} points is too short to fit")
    m, coef = best
    u_eval = np.linspace(0.0, 1.0, n_eval, endpoint=False)
    return _periodic_design_matrix(u_eval, m, degree) @ coef


def smooth_boundary(mask: BinaryMask, cfg: AnnotationConfig) -> BinaryMask:
    """Replace the mask by the fill of a periodic least-squares B-spline
    fitted to its traced boundary.

    The squared-residual budget is ``cfg.spline_smoothing`` times the number
    of boundary points; it is halved and refit while the area drifts more
    than 15 percent, and the original mask is returned if no fit stays in
    budget.
    """
    contour = raster.trace_boundary(mask)
    pts = contour.points
    n = len(pts)
    k = cfg.spline_degree
    if n < 3 * (k + 2):
        raise SplineFitError(f"boundary of {n} points cannot support degree {k}")
    area_in = mask.area
    budget = cfg.spline_smoothing * n
    for _ in range(6):
        curve = _fit_closed_spline(pts, k, budget, n_eval=max(2 * n, 128))
        try:
            smoothed = raster.rasterize_polygon(
                Contour(curve), mask.width, mask.height
            )
        except DegeneratePolygonError as exc:
            raise SplineFitError(str(exc)) from exc
        # even-odd fill of a self-crossing curve can shed slivers; keep the
        # dominant piece and close it up
        labels = raster.connected_components(smoothed, connectivity=8)
        smoothed = raster.fill_holes(BinaryMask(labels.data == 1))
        if abs(smoothed.area - area_in) <= 0.15 * area_in:
            return smoothed
        budget *= 0.5
    return BinaryMask(mask.data.copy())


def preprocess(
    raw_mask: BinaryMask, cfg: AnnotationConfig
) -> BinaryMask | RejectionReason:
    """Clean the mask, gate it on area and solidity, and smooth its boundary.

    Gate failures come back as a :class:`RejectionReason` value instead of an
    exception so callers can log them per component.
    """
    mask = raw_mask
    if cfg.clean_mask:
        mask = raster.fill_holes(mask)
        mask = raster.morphological_closing(mask, cfg.closing_radius)
        mask = raster.remove_small_components(mask, cfg.min_component_area)
    if mask.area < cfg.min_component_area:
        return RejectionReason.TOO_SMALL
    labels = raster.connected_components(mask, connectivity=8)
    if labels.max_label > 1:
        mask = BinaryMask(labels.data == 1)
    sol = raster.solidity(mask)
    lo, hi = cfg.solidity_bounds
    if sol < lo or sol > hi:
        return RejectionReason.NON_CONVEXITY_GATE
    try:
        smoothed = smooth_boundary(mask, cfg)
    except SplineFitError:
        return RejectionReason.DEGENERATE_SKELETON
    if smoothed.area < cfg.min_component_area:
        return RejectionReason.TOO_SMALL
    return smoothed


# ---------------------------------------------------------------------------
# stage 2: keypoints along the midline
# ---------------------------------------------------------------------------

def classify_endpoints(
    dist: DistanceMap,
    mask: BinaryMask,
    q: tuple[int, int],
    r: tuple[int, int],
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Decide which of the two path endpoints is the head.

    Floods the mask from both endpoints over the negated distance map; the
    endpoint owning the larger basin is the head. Area ties fall back to the
    larger midline radius, then to (row, col) order.
    """
    if q == r:
        raise ValueError("endpoints must differ")
    markers = np.zeros(mask.data.shape, dtype=np.int32)
    markers[q[0], q[1]] = 1
    markers[r[0], r[1]] = 2
    basins = geometry.watershed(
        geometry.negated_distance_elevation(dist), LabelMap(markers), mask
    )
    areas = np.bincount(basins.data.ravel(), minlength=3)
    if areas[1] != areas[2]:
        head, tail = (q, r) if areas[1] > areas[2] else (r, q)
    else:
        rq = dist.data[q[0], q[1]]
        rr = dist.data[r[0], r[1]]
        if rq != rr:
            head, tail = (q, r) if rq > rr else (r, q)
        else:
            head, tail = (q, r) if q < r else (r, q)
    return head, tail


def median_split_index(values: np.ndarray) -> int:
    """Index that best splits ``values`` into a high head run and a low tail run.

    Uses the median as threshold and minimizes misclassified nodes: values
    strictly below the median before the split plus values strictly above it
    from the split on. Ties resolve to the smallest index.
    """
    v = np.asarray(values, dtype=np.float64)
    m = float(np.median(v))
    below = np.concatenate([[0], np.cumsum(v < m)])
    above_total = int(np.sum(v > m))
    above_before = np.concatenate([[0], np.cumsum(v > m)])
    costs = below[:-1] + (above_total - above_before[:-1])
    return int(np.argmin(costs))


def find_tail_base(path: SkeletonPath, dist: DistanceMap) -> int:
    """Index on the head-to-tail path where the midline radii drop to tail size.

    The node at the returned index is the tail-base keypoint.
    """
    if len(path) < 5:
        raise PathTooShortError(f"path of {len(path)} nodes, need >= 5")
    values = np.array([dist.data[r, c] for r, c in path.nodes])
    return median_split_index(values)


def validate_tail_ratio(
    path: SkeletonPath, tail_base_index: int, cfg: AnnotationConfig
) -> bool:
    """Check that geodesic tail length over body length is anatomically sane."""
    if not 0 <= tail_base_index < len(path):
        raise IndexError("tail_base_index outside the path")
    cum = path.cumulative_lengths()
    body = float(cum[tail_base_index])
    tail = float(cum[-1] - cum[tail_base_index])
    if body <= 0.0:
        return False
    ratio = tail / body
    lo, hi = cfg.tail_ratio_bounds
    return lo <= ratio <= hi


# ---------------------------------------------------------------------------
# stage 3: part segmentation and post-processing
# ---------------------------------------------------------------------------

def _nearest_path_node(mask: BinaryMask, path: SkeletonPath) -> np.ndarray:
    """For every mask pixel, the index of its nearest path node (ties ->
    smaller index). Full-raster int array, -1 off the mask."""
    ys, xs = np.nonzero(mask.data)
    nodes = np.asarray(path.nodes, dtype=np.float64)
    d2 = (ys[:, None] - nodes[None, :, 0]) ** 2 + (xs[:, None] - nodes[None, :, 1]) ** 2
    nearest = np.argmin(d2, axis=1)  # argmin takes the first minimum
    out = np.full(mask.data.shape, -1, dtype=np.int64)
    out[ys, xs] = nearest
    return out


def segment_parts(
    mask: BinaryMask,
    dist: DistanceMap,
    keypoints: Keypoints,
    path: SkeletonPath,
    tail_base_index: int,
) -> LabelMap:
    """Split the mask into head, body and tail.

    Head and body come from a three-marker watershed on the negated distance
    map (head keypoint, tail-base keypoint, tail-end keypoint). The
    tail/body border is then forced by midline projection: pixels whose
    nearest path node lies past the tail base are tail, the rest of the
    watershed's tail spill becomes body. The tail may come out empty on
    degenerate geometry; the result is still a partition of the mask.
    """
    markers = np.zeros(mask.data.shape, dtype=np.int32)
    for kp, label in (
        (keypoints.head, PartLabel.HEAD),
        (keypoints.tail_base, PartLabel.BODY),
        (keypoints.tail_end, PartLabel.TAIL),
    ):
        c, r = int(round(kp.x)), int(round(kp.y))
        if not (0 <= r < mask.height and 0 <= c < mask.width) or not mask.data[r, c]:
            raise KeypointOutsideMaskError(f"marker ({kp.x}, {kp.y}) off the mask")
        markers[r, c] = int(label)
    basins = geometry.watershed(
        geometry.negated_distance_elevation(dist), LabelMap(markers), mask
    ).data.copy()
    nearest = _nearest_path_node(mask, path)
    beyond = (nearest > tail_base_index) & mask.data
    basins[beyond] = int(PartLabel.TAIL)
    spill = (basins == int(PartLabel.TAIL)) & ~beyond & mask.data
    basins[spill] = int(PartLabel.BODY)
    return LabelMap(basins)


def snap_keypoint_to_corner(
    kp: Keypoint, contour: Contour, cfg: AnnotationConfig
) -> Keypoint:
    """Move a keypoint to the strongest curvature extremum within reach.

    Returns the keypoint unchanged when no extremum lies within
    ``cfg.corner_snap_radius``.
    """
    try:
        extrema = geometry.curvature_extrema(
            contour, cfg.corner_arc_step, cfg.corner_min_turn_deg
        )
    except ContourTooShortError:
        return kp
    for (x, y), _score in extrema:
        if np.hypot(x - kp.x, y - kp.y) <= cfg.corner_snap_radius:
            return Keypoint(x, y, kp.v)
    return kp


def trim_head_segment(
    parts: LabelMap, path: SkeletonPath, dist: DistanceMap
) -> LabelMap:
    """Reassign head pixels that spill past the neck to the body.

    Walking the head-to-tail midline, the neck is the first local minimum of
    the radius profile after its first local maximum. Without such a
    minimum (monotone profile) the parts are returned unchanged.
    """
    values = np.array([dist.data[r, c] for r, c in path.nodes])
    n = len(values)
    peak = None
    for i in range(n - 1):
        if values[i + 1] < values[i]:
            peak = i
            break
    if peak is None:
        return LabelMap(parts.data.copy())
    neck = None
    for i in range(peak + 1, n - 1):
        if values[i] < values[i - 1] and values[i] <= values[i + 1]:
            neck = i
            break
    if neck is None:
        return LabelMap(parts.data.copy())
    out = parts.data.copy()
    head_px = out == int(PartLabel.HEAD)
    if not head_px.any():
        return LabelMap(out)
    nearest = _nearest_path_node(BinaryMask(parts.data > 0), path)
    out[head_px & (nearest > neck)] = int(PartLabel.BODY)
    return LabelMap(out)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def _crop_with_margin(mask: BinaryMask, margin: int):
    box = raster.bounding_box(mask)
    y0 = max(box.y - margin, 0)
    x0 = max(box.x - margin, 0)
    y1 = min(box.y + box.h + margin, mask.height)
    x1 = min(box.x + box.w + margin, mask.width)
    return (y0, x0), BinaryMask(mask.data[y0:y1, x0:x1].copy())


def annotate_instance(
    raw_mask: BinaryMask, cfg: AnnotationConfig | None = None
) -> InstanceAnnotation | RejectionReason:
    """Run the full per-instance pipeline on one foreground component."""
    cfg = cfg or AnnotationConfig()
    if raw_mask.area == 0:
        return RejectionReason.TOO_SMALL
    margin = int(np.ceil(cfg.closing_radius)) + 4
    (oy, ox), crop = _crop_with_margin(raw_mask, margin)

    pre = preprocess(crop, cfg)
    if isinstance(pre, RejectionReason):
        return pre
    mask = pre
    flags = {"smoothed"}

    skeleton, dist = geometry.medial_axis(mask)
    graph = geometry.build_skeleton_graph(skeleton, dist)
    if len(graph.endpoints) < 2:
        return RejectionReason.TOO_FEW_ENDPOINTS
    try:
        path = geometry.longest_endpoint_geodesic(graph)
    except DisconnectedEndpointsError:
        return RejectionReason.DEGENERATE_SKELETON
    if len(path) < 5:
        return RejectionReason.DEGENERATE_SKELETON

    head_node, tail_node = classify_endpoints(dist, mask, path.nodes[0], path.nodes[-1])
    if path.nodes[0] != head_node:
        path = path.reversed_()
    tail_base_index = find_tail_base(path, dist)
    if not validate_tail_ratio(path, tail_base_index, cfg):
        return RejectionReason.TAIL_RATIO_INVALID

    base_r, base_c = path.nodes[tail_base_index]
    keypoints = Keypoints(
        head=Keypoint(float(head_node[1]), float(head_node[0]), 2),
        tail_base=Keypoint(float(base_c), float(base_r), 2),
        tail_end=Keypoint(float(tail_node[1]), float(tail_node[0]), 2),
    )
    parts = segment_parts(mask, dist, keypoints, path, tail_base_index)

    if cfg.trim_protruding:
        trimmed = trim_head_segment(parts, path, dist)
        if (trimmed.data != parts.data).any():
            flags.add("trimmed")
        parts = trimmed
    if cfg.snap_head_to_corner:
        contour = raster.trace_boundary(mask)
        snapped = snap_keypoint_to_corner(keypoints.head, contour, cfg)
        if snapped != keypoints.head:
            flags.add("corner_snapped")
            keypoints = replace(keypoints, head=snapped)

    # lift the cropped results back to full-frame coordinates
    full_mask = np.zeros(raw_mask.data.shape, dtype=bool)
    full_mask[oy:oy + mask.height, ox:ox + mask.width] = mask.data
    full_parts = np.zeros(raw_mask.data.shape, dtype=np.int32)
    full_parts[oy:oy + mask.height, ox:ox + mask.width] = parts.data
    shift = lambda kp: Keypoint(kp.x + ox, kp.y + oy, kp.v)  # noqa: E731
    keypoints = Keypoints(
        shift(keypoints.head), shift(keypoints.tail_base), shift(keypoints.tail_end)
    )
    out_mask = BinaryMask(full_mask)
    return InstanceAnnotation(
        mask=out_mask,
        bbox=raster.bounding_box(out_mask),
        keypoints=keypoints,
        parts=LabelMap(full_parts),
        source="cv_pipeline",
        quality_flags=frozenset(flags),
    )


def annotate_frame(
    frame: ImageRgb, bg: BackgroundModel, cfg: AnnotationConfig | None = None
) -> tuple[list[InstanceAnnotation], list[tuple[BinaryMask, RejectionReason]]]:
    """Segment the foreground of one frame and annotate each component.

    Components are processed in label order (largest first), so output order
    is deterministic.
    """
    cfg = cfg or AnnotationConfig()
    residual = extract_foreground(frame, bg)
    fg = binarize(residual, cfg.residual_threshold)
    labels = raster.connected_components(fg, connectivity=8)
    accepted: list[InstanceAnnotation] = []
    rejected: list[tuple[BinaryMask, RejectionReason]] = []
    for label in range(1, labels.max_label + 1):
        component = BinaryMask(labels.data == label)
        result = annotate_instance(component, cfg)
        if isinstance(result, RejectionReason):
            rejected.append((component, result))
        else:
            accepted.append(result)
    return accepted, rejected
