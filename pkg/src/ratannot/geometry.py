"""Geometric kernels: distance transform, thinning, skeleton graphs,
geodesics, marker-based watershed, and contour curvature.

All functions are pure; raster inputs follow the conventions of
:mod:`ratannot.raster` (row-major arrays, pixel centers on the integer
lattice). Skeleton pixels and path nodes are ``(row, col)`` tuples.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    ContourTooShortError,
    DisconnectedEndpointsError,
    EmptyMaskError,
    MarkerOutsideDomainError,
    NoMarkersError,
    TooFewEndpointsError,
)
from .raster import BinaryMask, Contour, GrayImage, LabelMap

SQRT2 = float(np.sqrt(2.0))

# 8-neighborhood in fixed row-major order; the watershed and Dijkstra loops
# must keep this order for deterministic tie handling
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_STEP_W = (SQRT2, 1.0, SQRT2, 1.0, 1.0, SQRT2, 1.0, SQRT2)


@dataclass(frozen=True, eq=False)
class DistanceMap:
    """Euclidean distance to the nearest false pixel; 0 outside the mask."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"DistanceMap expects (H, W), got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class SkeletonGraph:
    """Skeleton pixels with 8-neighbor adjacency and per-node radii.

    ``nodes`` is row-major sorted; ``adjacency[i]`` lists ``(j, weight)``
    with weight 1 for axial and sqrt(2) for diagonal steps. ``endpoints``
    are indices of degree-1 nodes.
    """

    nodes: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[tuple[int, float], ...], ...]
    endpoints: tuple[int, ...]
    radii: np.ndarray

    def node_index(self, node: tuple[int, int]) -> int:
        lo, hi = 0, len(self.nodes)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.nodes[mid] < node:
                lo = mid + 1
            else:
                hi = mid
        if lo == len(self.nodes) or self.nodes[lo] != node:
            raise KeyError(f"{node} is not a skeleton node")
        return lo

    @property
    def endpoint_nodes(self) -> tuple[tuple[int, int], ...]:
        return tuple(self.nodes[i] for i in self.endpoints)


@dataclass(frozen=True, eq=False)
class SkeletonPath:
    """Ordered walk along the skeleton between two endpoints."""

    nodes: tuple[tuple[int, int], ...]
    length: float

    def __len__(self) -> int:
        return len(self.nodes)

    def reversed_(self) -> "SkeletonPath":
        return SkeletonPath(tuple(reversed(self.nodes)), self.length)

    def cumulative_lengths(self) -> np.ndarray:
        """Geodesic distance from the first node to each node."""
        pts = np.asarray(self.nodes, dtype=np.float64)
        if len(pts) == 1:
            return np.zeros(1)
        steps = np.hypot(*(np.diff(pts, axis=0).T))
        return np.concatenate([[0.0], np.cumsum(steps)])


# ---------------------------------------------------------------------------
# distance transform and thinning
# ---------------------------------------------------------------------------

def distance_transform(mask: BinaryMask) -> DistanceMap:
    """Exact Euclidean distance transform (distance to nearest false pixel).

    Everything beyond the raster counts as false, so a mask flush with the
    array border still measures its distance to the outside.
    """
    padded = np.pad(mask.data, 1)
    d = ndimage.distance_transform_edt(padded)
    return DistanceMap(d[1:-1, 1:-1])


def _thin_step(img: np.ndarray, second: bool) -> np.ndarray:
    """One Zhang-Suen subiteration; returns pixels to delete."""
    p = np.pad(img, 1)
    c = p[1:-1, 1:-1]
    P2 = p[:-2, 1:-1]
    P3 = p[:-2, 2:]
    P4 = p[1:-1, 2:]
    P5 = p[2:, 2:]
    P6 = p[2:, 1:-1]
    P7 = p[2:, :-2]
    P8 = p[1:-1, :-2]
    P9 = p[:-2, :-2]
    ring = (P2, P3, P4, P5, P6, P7, P8, P9)
    n = sum(x.astype(np.uint8) for x in ring)
    a = sum(((~ring[i]) & ring[(i + 1) % 8]).astype(np.uint8) for i in range(8))
    if second:
        cond = (~(P2 & P4 & P8)) & (~(P2 & P6 & P8))
    else:
        cond = (~(P2 & P4 & P6)) & (~(P4 & P6 & P8))
    return c & (n >= 2) & (n <= 6) & (a == 1) & cond


def medial_axis(mask: BinaryMask) -> tuple[BinaryMask, DistanceMap]:
    """Iterative two-subfield thinning to a one-pixel skeleton, plus the
    distance transform of the input mask.

    Runs until a full iteration deletes nothing, so the returned skeleton is
    a fixpoint. If thinning would erase a connected component entirely (tiny
    blobs can vanish), its topmost-leftmost pixel is restored so component
    count is preserved.
    """
    if not mask.data.any():
        raise EmptyMaskError("cannot skeletonize an empty mask")
    img = mask.data.copy()
    while True:
        d1 = _thin_step(img, second=False)
        img &= ~d1
        d2 = _thin_step(img, second=True)
        img &= ~d2
        if not (d1.any() or d2.any()):
            break
    lab, n = ndimage.label(mask.data, structure=np.ones((3, 3), bool))
    if n:
        survivors = np.unique(lab[img])
        flat = lab.ravel()
        for missing in range(1, n + 1):
            if missing not in survivors:
                first = int(np.argmax(flat == missing))
                img[first // img.shape[1], first % img.shape[1]] = True
    return BinaryMask(img), distance_transform(mask)


# ---------------------------------------------------------------------------
# skeleton graph and geodesics
# ---------------------------------------------------------------------------

def build_skeleton_graph(skeleton: BinaryMask, dist: DistanceMap) -> SkeletonGraph:
    """Graph view of a thin skeleton: nodes, weighted 8-adjacency, endpoints."""
    ys, xs = np.nonzero(skeleton.data)
    nodes = list(zip(ys.tolist(), xs.tolist()))  # row-major sorted by nonzero
    index = {node: i for i, node in enumerate(nodes)}
    h, w = skeleton.data.shape
    adjacency: list[tuple[tuple[int, float], ...]] = []
    for (r, c) in nodes:
        nbrs = []
        for (dr, dc), wgt in zip(_NEIGHBORS, _STEP_W):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and skeleton.data[rr, cc]:
                nbrs.append((index[(rr, cc)], wgt))
        adjacency.append(tuple(nbrs))
    endpoints = tuple(i for i, nb in enumerate(adjacency) if len(nb) == 1)
    radii = dist.data[ys, xs]
    return SkeletonGraph(tuple(nodes), tuple(adjacency), endpoints, radii)


def _dijkstra(graph: SkeletonGraph, source: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(graph.nodes)
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    dist[source] = 0.0
    counter = 0
    heap = [(0.0, counter, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, _, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in graph.adjacency[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                counter += 1
                heapq.heappush(heap, (nd, counter, v))
    return dist, pred


def longest_endpoint_geodesic(graph: SkeletonGraph) -> SkeletonPath:
    """Endpoint pair with the longest shortest path along the skeleton.

    Ties resolve to the lexicographically smallest (row, col) start node,
    then end node. The returned path runs from the smaller endpoint to the
    larger one; callers reorient it as needed.
    """
    eps = list(graph.endpoints)
    if len(eps) < 2:
        raise TooFewEndpointsError(f"need >= 2 endpoints, have {len(eps)}")
    best = None  # (length, q_node, r_node, q_idx, pred)
    for qi in eps:
        dist, pred = _dijkstra(graph, qi)
        for ri in eps:
            if ri == qi:
                continue
            if not np.isfinite(dist[ri]):
                raise DisconnectedEndpointsError(
                    "skeleton endpoints span multiple components"
                )
            q_node, r_node = graph.nodes[qi], graph.nodes[ri]
            if q_node > r_node:
                continue  # each unordered pair scanned once, q < r
            cand = (dist[ri], q_node, r_node)
            if best is None or cand[0] > best[0] or (
                cand[0] == best[0] and (cand[1], cand[2]) < (best[1], best[2])
            ):
                best = (float(dist[ri]), q_node, r_node, qi, pred, ri)
    length, _, _, qi, pred, ri = best
    chain = [ri]
    while chain[-1] != qi:
        chain.append(int(pred[chain[-1]]))
    nodes = tuple(graph.nodes[i] for i in reversed(chain))
    return SkeletonPath(nodes, length)


# ---------------------------------------------------------------------------
# watershed
# ---------------------------------------------------------------------------

def watershed(elevation: GrayImage, markers: LabelMap, domain: BinaryMask) -> LabelMap:
    """Priority-flood watershed over ``domain`` seeded at ``markers``.

    Pixels are settled in order of (elevation, queue insertion); each pixel
    takes the label of the front that queued it first, marker pixels keep
    their own labels, and pixels outside the domain stay 0. Fully
    deterministic for identical inputs.
    """
    elev = elevation.data
    lab = markers.data
    dom = domain.data
    if elev.shape != lab.shape or elev.shape != dom.shape:
        raise ValueError("elevation, markers and domain must share dimensions")
    marker_pixels = lab > 0
    if not marker_pixels.any():
        raise NoMarkersError("watershed needs at least one marker")
    if (marker_pixels & ~dom).any():
        raise MarkerOutsideDomainError("marker outside the flooding domain")
    h, w = elev.shape
    out = np.zeros((h, w), dtype=np.int32)
    out[marker_pixels] = lab[marker_pixels]
    settled = np.zeros((h, w), dtype=bool)
    heap: list[tuple[float, int, int, int, int]] = []
    counter = 0
    for r, c in zip(*np.nonzero(marker_pixels)):
        heap.append((float(elev[r, c]), counter, int(r), int(c), int(lab[r, c])))
        counter += 1
    heapq.heapify(heap)  # counters are already in row-major order
    while heap:
        _, _, r, c, label = heapq.heappop(heap)
        if settled[r, c]:
            continue
        settled[r, c] = True
        if out[r, c] == 0:
            out[r, c] = label
        else:
            label = out[r, c]
        for dr, dc in _NEIGHBORS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and dom[rr, cc] and not settled[rr, cc] \
                    and out[rr, cc] == 0:
                heapq.heappush(heap, (float(elev[rr, cc]), counter, rr, cc, label))
                counter += 1
    return LabelMap(out)


def negated_distance_elevation(dist: DistanceMap) -> GrayImage:
    """Negated distance map quantized to integer millipixels.

    Integer elevations keep the watershed priority queue free of
    float-ordering surprises across platforms.
    """
    return GrayImage(np.rint(-dist.data * 1000.0).astype(np.int64))


# ---------------------------------------------------------------------------
# contour curvature
# ---------------------------------------------------------------------------

def curvature_extrema(
    contour: Contour, k: int, min_turn_deg: float = 30.0
) -> list[tuple[tuple[float, float], float]]:
    """Corner candidates by the k-cosine measure.

    For each vertex, take the vectors to the vertices k behind and k ahead
    (cyclic) and measure the turning angle (180 deg minus the angle between
    them; 0 for a straight run). Returns vertices that are local maxima of
    the turning angle and exceed ``min_turn_deg``, sorted by descending
    angle, ties by contour index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = contour.points
    n = len(pts)
    if n < 2 * k + 1:
        raise ContourTooShortError(f"need >= {2 * k + 1} points, have {n}")
    back = np.roll(pts, k, axis=0) - pts
    fwd = np.roll(pts, -k, axis=0) - pts
    nb = np.hypot(back[:, 0], back[:, 1])
    nf = np.hypot(fwd[:, 0], fwd[:, 1])
    ok = (nb > 0) & (nf > 0)
    cosang = np.zeros(n)
    dot = back[:, 0] * fwd[:, 0] + back[:, 1] * fwd[:, 1]
    cosang[ok] = np.clip(dot[ok] / (nb[ok] * nf[ok]), -1.0, 1.0)
    cosang[~ok] = -1.0  # zero-length chord: treat as straight
    turn = 180.0 - np.degrees(np.arccos(cosang))
    prev = np.roll(turn, 1)
    nxt = np.roll(turn, -1)
    is_max = (turn > prev) & (turn >= nxt) & (turn > min_turn_deg)
    idx = np.nonzero(is_max)[0]
    scored = sorted(
        ((float(turn[i]), int(i)) for i in idx), key=lambda t: (-t[0], t[1])
    )
    return [((float(pts[i, 0]), float(pts[i, 1])), s) for s, i in scored]
