"""Synthetic rodent scenes with exact ground truth.

Shapes are deliberately simple: a quadratic-Bezier spine swept with discs
whose halfwidth follows a sine profile, a round head at the nose end of the
spine, and a tapered disc sweep along a second Bezier for the tail. Part
boundaries and keypoints are known by construction, which is what makes
these scenes usable as an oracle for the vision pipeline. Realism is a
non-goal.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import coco, raster
from .annotate import InstanceAnnotation, Keypoint, Keypoints, PartLabel
from .errors import PlacementFailureError, PoseInvalidError
from .raster import BinaryMask, BoundingBox, GrayImage, ImageRgb, LabelMap


@dataclass(frozen=True, eq=False)
class RatPose:
    """Shape and placement of one synthetic rat.

    ``spine`` runs from the tail junction (index 0) to the head end; the
    tail Bezier starts at the same junction point and runs to the tail tip.
    """

    spine: np.ndarray  # (3, 2) control points, (x, y)
    body_length: float
    max_body_halfwidth: float
    head_radius: float
    tail: np.ndarray  # (3, 2) control points, (x, y)
    tail_length: float
    tail_base_halfwidth: float
    intensity: int

    def __post_init__(self):
        spine = np.asarray(self.spine, dtype=np.float64)
        tail = np.asarray(self.tail, dtype=np.float64)
        if spine.shape != (3, 2) or tail.shape != (3, 2):
            raise PoseInvalidError("spine and tail need 3 control points each")
        object.__setattr__(self, "spine", spine)
        object.__setattr__(self, "tail", tail)
        ratio = self.tail_length / self.body_length
        if not 0.7 <= ratio <= 1.3:
            raise PoseInvalidError(f"tail/body ratio {ratio:.2f} outside [0.7, 1.3]")
        if self.head_radius >= 1.5 * self.max_body_halfwidth:
            raise PoseInvalidError("head radius too large for the body")
        if not np.allclose(spine[0], tail[0]):
            raise PoseInvalidError("tail must start at the spine junction")
        if not 180 <= self.intensity <= 255:
            raise PoseInvalidError("intensity must be in [180, 255]")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 640
    height: int = 420
    rat_count: int = 2
    occlusion: str = "none"  # none | partial | mounting
    bg_level: int = 28
    bg_texture_amplitude: int = 10
    bg_texture_seed: int = 7
    noise_sigma: float = 3.0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError("canvas must be at least 64x64")
        if self.occlusion not in ("none", "partial", "mounting"):
            raise ValueError(f"unknown occlusion mode {self.occlusion!r}")
        if self.rat_count < 1:
            raise ValueError("rat_count must be >= 1")


@dataclass(frozen=True, eq=False)
class SceneSample:
    frame: ImageRgb
    instances: list[InstanceAnnotation]


@dataclass(frozen=True, eq=False)
class SequenceSample:
    frames: list[ImageRgb]
    instances: list[list[InstanceAnnotation]]
    background: ImageRgb


# ---------------------------------------------------------------------------
# Bezier helpers
# ---------------------------------------------------------------------------

def _bezier(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    t = t[:, None]
    return (1 - t) ** 2 * ctrl[0] + 2 * (1 - t) * t * ctrl[1] + t**2 * ctrl[2]


def _arc_length(ctrl: np.ndarray, samples: int = 256) -> float:
    pts = _bezier(ctrl, np.linspace(0, 1, samples))
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def _scale_to_length(ctrl: np.ndarray, target: float) -> np.ndarray:
    """Scale the control polygon about its first point to a given arc length."""
    cur = _arc_length(ctrl)
    if cur <= 0:
        raise PoseInvalidError("degenerate curve")
    f = target / cur
    return ctrl[0] + (ctrl - ctrl[0]) * f


def _paint_discs(canvas: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> None:
    h, w = canvas.shape
    for (x, y), rad in zip(centers, radii):
        r = int(np.ceil(rad))
        x0, x1 = max(int(np.floor(x)) - r, 0), min(int(np.ceil(x)) + r, w - 1)
        y0, y1 = max(int(np.floor(y)) - r, 0), min(int(np.ceil(y)) + r, h - 1)
        if x1 < x0 or y1 < y0:
            continue
        gy, gx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        canvas[y0:y1 + 1, x0:x1 + 1] |= (
            (gx - x) ** 2 + (gy - y) ** 2 <= rad * rad
        )


def _snap_to_mask(point: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """Nearest true pixel to a continuous point (ties to row-major order)."""
    x, y = point
    c, r = int(round(x)), int(round(y))
    h, w = mask.shape
    if 0 <= r < h and 0 <= c < w and mask[r, c]:
        return float(c), float(r)
    ys, xs = np.nonzero(mask)
    d2 = (ys - y) ** 2 + (xs - x) ** 2
    i = int(np.argmin(d2))
    return float(xs[i]), float(ys[i])


def _body_halfwidth(t: np.ndarray, max_halfwidth: float) -> np.ndarray:
    # asymmetric sine profile: blunt at the tail junction (t=0) so midline
    # radii step down sharply where the tail starts, narrow at the head end
    # (t=1) so the head disc forms a lobe with a neck in front of it
    return max_halfwidth * np.sin(np.pi * (0.18 + 0.72 * t))


def _check_no_self_overlap(
    centers: np.ndarray, radii: np.ndarray, arc: np.ndarray
) -> None:
    d = np.hypot(
        centers[:, None, 0] - centers[None, :, 0],
        centers[:, None, 1] - centers[None, :, 1],
    )
    clearance = radii[:, None] + radii[None, :] + 1.0
    arc_gap = np.abs(arc[:, None] - arc[None, :])
    bad = (d < clearance) & (arc_gap > 1.8 * clearance)
    if bad.any():
        raise PoseInvalidError("swept body overlaps itself")


def render_rat(
    pose: RatPose, width: int, height: int
) -> tuple[InstanceAnnotation, GrayImage]:
    """Rasterize a pose; returns exact ground truth and a grayscale sprite."""
    # the sweep stops one pixel short of the head-disc rim so the disc is a
    # clean lobe behind a width minimum (the neck) instead of being tunneled
    # by body discs
    sweep_frac = max(1.0 - (pose.head_radius - 1.0) / pose.body_length, 0.5)
    n_body = max(int(pose.body_length * 2), 32)
    tb = np.linspace(0, 1, n_body)
    body_pts = _bezier(pose.spine, tb * sweep_frac)
    body_r = _body_halfwidth(tb, pose.max_body_halfwidth)

    n_tail = max(int(pose.tail_length * 2), 32)
    tt = np.linspace(0, 1, n_tail)
    tail_pts = _bezier(pose.tail, tt)
    # concave taper: full thickness held longer, still 1 px at the tip
    tail_r = 1.0 + (pose.tail_base_halfwidth - 1.0) * (1.0 - tt) ** 1.35

    head_center = _bezier(pose.spine, np.array([1.0]))[0]
    tangent = 2 * (pose.spine[2] - pose.spine[1])
    norm = np.hypot(*tangent)
    if norm == 0:
        raise PoseInvalidError("spine has zero terminal tangent")
    tangent = tangent / norm

    # self-overlap check over the whole midline (tail tip to nose)
    all_pts = np.vstack([tail_pts[::-1], body_pts])
    all_r = np.concatenate([tail_r[::-1], body_r])
    steps = np.hypot(*np.diff(all_pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    stride = max(len(all_pts) // 160, 1)
    _check_no_self_overlap(all_pts[::stride], all_r[::stride], arc[::stride])

    body = np.zeros((height, width), dtype=bool)
    _paint_discs(body, body_pts, body_r)
    head = np.zeros((height, width), dtype=bool)
    _paint_discs(head, head_center[None, :], np.array([pose.head_radius]))
    tail = np.zeros((height, width), dtype=bool)
    _paint_discs(tail, tail_pts, tail_r)

    head_part = head & ~body
    tail_part = tail & ~body & ~head
    mask = body | head | tail
    body_part = mask & ~head_part & ~tail_part

    parts = np.zeros((height, width), dtype=np.int32)
    parts[head_part] = int(PartLabel.HEAD)
    parts[body_part] = int(PartLabel.BODY)
    parts[tail_part] = int(PartLabel.TAIL)

    nose = head_center + tangent * pose.head_radius
    nose_x, nose_y = _snap_to_mask(nose, mask)
    junc_x, junc_y = _snap_to_mask(pose.spine[0], mask)
    tip_x, tip_y = _snap_to_mask(tail_pts[-1], mask)
    keypoints = Keypoints(
        head=Keypoint(nose_x, nose_y, 2),
        tail_base=Keypoint(junc_x, junc_y, 2),
        tail_end=Keypoint(tip_x, tip_y, 2),
    )

    mask_v = BinaryMask(mask)
    sprite = np.zeros((height, width), dtype=np.uint8)
    sprite[mask] = pose.intensity
    gt = InstanceAnnotation(
        mask=mask_v,
        bbox=raster.bounding_box(mask_v),
        keypoints=keypoints,
        parts=LabelMap(parts),
        source="synthetic",
    )
    return gt, GrayImage(sprite)


# ---------------------------------------------------------------------------
# pose sampling and scene assembly
# ---------------------------------------------------------------------------

def _unit(theta: float) -> np.ndarray:
    return np.array([np.cos(theta), np.sin(theta)])


def _perp(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


def random_pose(
    rng: np.random.Generator,
    width: int,
    height: int,
    center: np.ndarray | None = None,
    heading: float | None = None,
) -> RatPose:
    """Sample a pose that fits the canvas with a small safety margin.

    ``center`` and ``heading`` pin the body midpoint and spine direction,
    which the occluded placement modes use to stage two-rat contact.
    """
    scale = min(width / 640.0, height / 420.0, 1.0)
    for _ in range(64):
        body_length = rng.uniform(95, 135) * scale
        maxw = rng.uniform(11.5, 13.5) * scale
        head_radius = rng.uniform(6.5, 7.5) * scale
        tail_length = body_length * rng.uniform(0.95, 1.25)
        tail_base_halfwidth = max(rng.uniform(2.2, 2.8) * scale, 1.4)
        intensity = int(rng.integers(180, 256))

        margin = body_length * 0.75 + 20
        if center is None:
            cx = rng.uniform(margin, width - margin) if width > 2 * margin else width / 2
            cy = rng.uniform(margin, height - margin) if height > 2 * margin else height / 2
            c = np.array([cx, cy])
        else:
            c = np.asarray(center, dtype=np.float64)
        theta = rng.uniform(0, 2 * np.pi) if heading is None else float(heading)
        d = _unit(theta)
        bend = rng.uniform(-0.16, 0.16) * body_length
        p0 = c - d * body_length / 2
        p2 = c + d * body_length / 2
        p1 = (p0 + p2) / 2 + _perp(d) * bend
        spine = _scale_to_length(np.array([p0, p1, p2]), body_length)

        tail_theta = theta + np.pi + rng.uniform(-0.55, 0.55)
        td = _unit(tail_theta)
        t0 = spine[0]
        t2 = t0 + td * tail_length
        t1 = (t0 + t2) / 2 + _perp(td) * rng.uniform(-0.18, 0.18) * tail_length
        tail = _scale_to_length(np.array([t0, t1, t2]), tail_length)

        # keep every midline sample (plus its radius) inside the canvas
        probe = np.vstack(
            [_bezier(spine, np.linspace(0, 1, 32)), _bezier(tail, np.linspace(0, 1, 32))]
        )
        reach = maxw + head_radius + 4
        if (
            probe[:, 0].min() < reach
            or probe[:, 1].min() < reach
            or probe[:, 0].max() > width - reach
            or probe[:, 1].max() > height - reach
        ):
            continue
        try:
            return RatPose(
                spine=spine,
                body_length=body_length,
                max_body_halfwidth=maxw,
                head_radius=head_radius,
                tail=tail,
                tail_length=tail_length,
                tail_base_halfwidth=tail_base_halfwidth,
                intensity=intensity,
            )
        except PoseInvalidError:
            continue
    raise PlacementFailureError("could not sample a valid pose")


def make_background(spec: SceneSpec) -> ImageRgb:
    """Static textured background; a function of the spec only."""
    rng = np.random.default_rng(spec.bg_texture_seed)
    tex = rng.integers(
        -spec.bg_texture_amplitude, spec.bg_texture_amplitude + 1,
        size=(spec.height, spec.width),
    )
    gray = np.clip(spec.bg_level + tex, 0, 255).astype(np.uint8)
    return ImageRgb(np.repeat(gray[:, :, None], 3, axis=2))


def _mask_min_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Smallest Euclidean distance from any pixel of b to mask a."""
    d = ndimage.distance_transform_edt(~a)
    return float(d[b].min()) if b.any() else np.inf


def _overlap_fraction(a: np.ndarray, b: np.ndarray) -> float:
    inter = int((a & b).sum())
    smaller = min(int(a.sum()), int(b.sum()))
    return inter / smaller if smaller else 0.0


def _compose_frame(
    spec: SceneSpec, sprites: list[GrayImage], gts: list[InstanceAnnotation],
    bg: ImageRgb, rng: np.random.Generator,
) -> ImageRgb:
    canvas = bg.data[:, :, 0].astype(np.float64)
    order = sorted(range(len(sprites)), key=lambda i: int(sprites[i].data.max()))
    for i in order:  # brightest last wins the overlap
        m = gts[i].mask.data
        canvas[m] = sprites[i].data[m]
    rgb = np.repeat(canvas[:, :, None], 3, axis=2)
    noisy = rgb + rng.normal(0.0, spec.noise_sigma, size=rgb.shape)
    return ImageRgb(np.clip(np.rint(noisy), 0, 255).astype(np.uint8))


def generate_scene(spec: SceneSpec, seed: int) -> SceneSample:
    """One frame plus exact ground truth, honoring the occlusion mode.

    none: pairwise mask distance >= 10 px. partial: overlapping boxes with
    mask overlap in (0, 30%] of the smaller rat. mounting: mask overlap
    >= 50% of the smaller rat with roughly crossed headings.
    """
    rng = np.random.default_rng(seed)
    bg = make_background(spec)
    gts: list[InstanceAnnotation] = []
    sprites: list[GrayImage] = []
    for rat_idx in range(spec.rat_count):
        placed = False
        for _ in range(1000):
            if rat_idx == 1 and spec.occlusion in ("partial", "mounting"):
                anchor = gts[0]
                a_mask = anchor.mask.data
                ys, xs = np.nonzero(a_mask)
                cidx = rng.integers(0, len(ys))
                base = np.array([float(xs[cidx]), float(ys[cidx])])
                if spec.occlusion == "mounting":
                    jitter = rng.uniform(-10, 10, size=2)
                    heading = _anchor_heading(anchor) + np.pi / 2 + rng.uniform(-0.5, 0.5)
                    if rng.random() < 0.5:
                        heading += np.pi
                else:
                    jitter = rng.uniform(-60, 60, size=2)
                    heading = None
                try:
                    pose = random_pose(
                        rng, spec.width, spec.height, center=base + jitter,
                        heading=heading,
                    )
                except PlacementFailureError:
                    continue
            else:
                pose = random_pose(rng, spec.width, spec.height)
            try:
                gt, sprite = render_rat(pose, spec.width, spec.height)
            except PoseInvalidError:
                continue
            if _placement_ok(spec, gts, gt, rat_idx):
                gts.append(gt)
                sprites.append(sprite)
                placed = True
                break
        if not placed:
            raise PlacementFailureError(
                f"no valid placement for rat {rat_idx} in mode {spec.occlusion}"
            )
    frame = _compose_frame(spec, sprites, gts, bg, rng)
    return SceneSample(frame=frame, instances=gts)


def _anchor_heading(gt: InstanceAnnotation) -> float:
    kp = gt.keypoints
    return float(np.arctan2(kp.head.y - kp.tail_base.y, kp.head.x - kp.tail_base.x))


def _placement_ok(
    spec: SceneSpec, placed: list[InstanceAnnotation],
    cand: InstanceAnnotation, rat_idx: int,
) -> bool:
    if not placed:
        return True
    cm = cand.mask.data
    if spec.occlusion == "none" or rat_idx >= 2:
        return all(_mask_min_distance(g.mask.data, cm) >= 10.0 for g in placed)
    anchor = placed[0].mask.data
    others_ok = all(
        _mask_min_distance(g.mask.data, cm) >= 10.0 for g in placed[1:]
    )
    if not others_ok:
        return False
    frac = _overlap_fraction(anchor, cm)
    boxes_overlap = _boxes_overlap(placed[0].bbox, cand.bbox)
    if spec.occlusion == "partial":
        return boxes_overlap and 0.0 < frac <= 0.30
    return frac >= 0.50


def _boxes_overlap(a: BoundingBox, b: BoundingBox) -> bool:
    return not (
        a.x + a.w <= b.x or b.x + b.w <= a.x or a.y + a.h <= b.y or b.y + b.h <= a.y
    )


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

@dataclass
class _Walker:
    """Per-rat motion state for sequence generation."""

    body_length: float
    maxw: float
    head_radius: float
    tail_length: float
    tail_base_halfwidth: float
    intensity: int
    tail_angle_offset: float
    tail_bend: float
    pos: np.ndarray
    heading: float
    target: np.ndarray
    bend_phase: float

    def pose(self) -> RatPose:
        d = _unit(self.heading)
        bend = 0.12 * np.sin(self.bend_phase) * self.body_length
        p0 = self.pos - d * self.body_length / 2
        p2 = self.pos + d * self.body_length / 2
        p1 = (p0 + p2) / 2 + _perp(d) * bend
        spine = _scale_to_length(np.array([p0, p1, p2]), self.body_length)
        td = _unit(self.heading + np.pi + self.tail_angle_offset)
        t0 = spine[0]
        t2 = t0 + td * self.tail_length
        t1 = (t0 + t2) / 2 + _perp(td) * self.tail_bend * self.tail_length
        tail = _scale_to_length(np.array([t0, t1, t2]), self.tail_length)
        return RatPose(
            spine=spine,
            body_length=self.body_length,
            max_body_halfwidth=self.maxw,
            head_radius=self.head_radius,
            tail=tail,
            tail_length=self.tail_length,
            tail_base_halfwidth=self.tail_base_halfwidth,
            intensity=self.intensity,
        )


def _new_walker(rng: np.random.Generator, spec: SceneSpec) -> _Walker:
    scale = min(spec.width / 640.0, spec.height / 420.0, 1.0)
    body_length = rng.uniform(95, 135) * scale
    margin = body_length * 0.9 + 30
    pos = np.array([
        rng.uniform(margin, spec.width - margin),
        rng.uniform(margin, spec.height - margin),
    ])
    return _Walker(
        body_length=body_length,
        maxw=rng.uniform(11.5, 13.5) * scale,
        head_radius=rng.uniform(6.5, 7.5) * scale,
        tail_length=body_length * rng.uniform(0.95, 1.25),
        tail_base_halfwidth=max(rng.uniform(2.2, 2.8) * scale, 1.4),
        intensity=int(rng.integers(180, 256)),
        tail_angle_offset=rng.uniform(-0.4, 0.4),
        tail_bend=rng.uniform(-0.15, 0.15),
        pos=pos,
        heading=rng.uniform(0, 2 * np.pi),
        target=pos.copy(),
        bend_phase=rng.uniform(0, 2 * np.pi),
    )


def _walk_step(walker: _Walker, rng: np.random.Generator, spec: SceneSpec) -> None:
    margin = walker.body_length * 0.9 + 30
    if np.hypot(*(walker.target - walker.pos)) < 20:
        walker.target = np.array([
            rng.uniform(margin, spec.width - margin),
            rng.uniform(margin, spec.height - margin),
        ])
    to_target = walker.target - walker.pos
    want = np.arctan2(to_target[1], to_target[0])
    turn = (want - walker.heading + np.pi) % (2 * np.pi) - np.pi
    walker.heading += np.clip(turn, -0.35, 0.35)
    step = min(14.0, np.hypot(*to_target))
    walker.pos = walker.pos + _unit(walker.heading) * step
    walker.bend_phase += 0.35


def generate_sequence(spec: SceneSpec, n_frames: int, seed: int) -> SequenceSample:
    """Frames of rats wandering a static background.

    The walk keeps rats apart and keeps moving, so every background pixel is
    rat-free in well over half the frames and the temporal mode recovers the
    background exactly (checked and retried with a derived seed otherwise).
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    bg = make_background(spec)
    for attempt in range(6):
        rng = np.random.default_rng(seed + 1000003 * attempt)
        walkers = [_new_walker(rng, spec) for _ in range(spec.rat_count)]
        frames: list[ImageRgb] = []
        per_frame: list[list[InstanceAnnotation]] = []
        coverage = np.zeros((spec.height, spec.width), dtype=np.int32)
        ok = True
        for _f in range(n_frames):
            gts: list[InstanceAnnotation] = []
            sprites: list[GrayImage] = []
            for wk in walkers:
                moved = False
                for _try in range(12):
                    saved = (wk.pos.copy(), wk.heading, wk.target.copy(), wk.bend_phase)
                    _walk_step(wk, rng, spec)
                    try:
                        gt, sprite = render_rat(wk.pose(), spec.width, spec.height)
                    except PoseInvalidError:
                        wk.pos, wk.heading, wk.target, wk.bend_phase = saved
                        wk.target = wk.pos + rng.uniform(-200, 200, size=2)
                        continue
                    if all(
                        _mask_min_distance(g.mask.data, gt.mask.data) >= 8.0
                        for g in gts
                    ):
                        gts.append(gt)
                        sprites.append(sprite)
                        moved = True
                        break
                    wk.pos, wk.heading, wk.target, wk.bend_phase = saved
                    wk.target = wk.pos + rng.uniform(-200, 200, size=2)
                if not moved:
                    # hold the previous pose this frame
                    gt, sprite = render_rat(wk.pose(), spec.width, spec.height)
                    gts.append(gt)
                    sprites.append(sprite)
            union = np.zeros((spec.height, spec.width), dtype=bool)
            for g in gts:
                union |= g.mask.data
            coverage += union
            frames.append(_compose_frame(spec, sprites, gts, bg, rng))
            per_frame.append(gts)
        if coverage.max() <= 0.45 * n_frames or n_frames < 8:
            return SequenceSample(frames=frames, instances=per_frame, background=bg)
    raise PlacementFailureError("walk kept covering the same pixels; giving up")


def write_sequence(
    out_dir, sample: SequenceSample, *, file_pattern: str = "frame_%06d.png"
) -> tuple[Path, Path]:
    """Write frames as PNG plus ground truth as keypoint/part JSON documents."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = []
    per_image: dict[int, list[InstanceAnnotation]] = {}
    for i, frame in enumerate(sample.frames):
        name = file_pattern % i
        raster.write_image_rgb(out / name, frame)
        images.append(coco.image_entry(i, name, frame.width, frame.height))
        per_image[i] = sample.instances[i]
    kp_doc = coco.build_keypoint_doc(images, per_image)
    part_doc = coco.build_parts_doc(images, per_image)
    kp_path = out / "annotations_keypoints.json"
    part_path = out / "annotations_parts.json"
    coco.save_json(kp_path, kp_doc)
    coco.save_json(part_path, part_doc)
    raster.write_image_rgb(out / "background.png", sample.background)
    return kp_path, part_path
