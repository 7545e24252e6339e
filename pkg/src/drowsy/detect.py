"""Face detection: multi-scale cascade scanning, low-resolution detection with
remapping, and the rotation / illumination / perspective fallback schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _scan
from .cascade import CascadeModel, pack, window_geometry
from .imgcore import (
    GrayFrame,
    Homography,
    RectF,
    bhe,
    bounding_rect,
    downsample,
    estimate_homography,
    integral,
    rotate_affine,
    rotate_points,
    warp_perspective,
)

DEFAULT_SCALE_FACTOR = 6
GROUP_IOU = 0.4
MIN_NEIGHBORS = 2
INPLANE_ANGLES = (30.0, -30.0)
OFFPLANE_ANGLE = 15.0


@dataclass
class ScanStats:
    """Work counters, accumulated across calls."""

    frames: int = 0
    windows: int = 0
    weak_evals: int = 0
    pixels: int = 0

    def reset(self) -> None:
        self.frames = self.windows = self.weak_evals = self.pixels = 0


@dataclass(frozen=True)
class Candidate:
    rect: RectF
    neighbors: int


@dataclass(frozen=True)
class Detection:
    """A face found in one frame.

    ``rect`` and ``roi`` live in the *working frame*: the searched region
    (offset ``origin`` in the full frame, size ``frame_size``) after the
    transform that made the face detectable.  ``report_rect`` is the
    axis-aligned face box in full-frame coordinates.
    """

    rect: RectF
    roi: RectF
    report_rect: RectF
    pose: str = "frontal"  # frontal | inplane | offplane
    theta: Optional[float] = None
    warp: Optional[Homography] = None
    warp_id: Optional[str] = None
    equalized: bool = False
    score: int = 0
    origin: Tuple[float, float] = (0.0, 0.0)
    frame_size: Tuple[int, int] = (0, 0)

    def shifted(self, dx: float, dy: float) -> "Detection":
        """The same detection for a search region offset by ``(dx, dy)``."""
        return replace(
            self,
            report_rect=self.report_rect.shifted(dx, dy),
            origin=(self.origin[0] + dx, self.origin[1] + dy),
        )

    def working_frame(self, frame: GrayFrame) -> GrayFrame:
        ox, oy = self.origin
        w, h = self.frame_size
        sub = frame
        if (ox, oy) != (0.0, 0.0) or (w, h) != (frame.width, frame.height):
            sub = frame.crop(RectF(ox, oy, w, h))
        if self.equalized:
            sub = bhe(sub)
        if self.pose == "inplane":
            sub = rotate_affine(sub, self.theta)
        elif self.pose == "offplane":
            sub = warp_perspective(sub, self.warp)
        return sub

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        """Map working-frame points to full-frame coordinates."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.pose == "inplane":
            pts = rotate_points(pts, self.theta, *self.frame_size)
        elif self.pose == "offplane":
            pts = self.warp.inverse().apply(pts)
        return pts + np.asarray(self.origin)

    def rect_to_frame(self, r: RectF) -> RectF:
        return bounding_rect(self.to_frame(r.corners()))


# --------------------------------------------------------------------------
# Multi-scale scanning


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def scan_windows(
    model: CascadeModel,
    frame: GrayFrame,
    scale_step: float = 1.2,
    min_size: Optional[int] = None,
    stats: Optional[ScanStats] = None,
) -> List[RectF]:
    """Raw accepted windows in (scale, y, x) scan order."""
    if scale_step <= 1:
        raise ValueError(f"scale_step must exceed 1, got {scale_step}")
    min_size = model.window_w if min_size is None else min_size
    if min_size < model.window_w:
        raise ValueError(f"min_size {min_size} is below the {model.window_w}px base window")
    ii = integral(frame).padded()
    sq = integral(frame, squared=True).padded()
    if stats is not None:
        stats.frames += 1
        stats.pixels += frame.width * frame.height
    hits: List[RectF] = []
    scale = 1.0
    while True:
        ww, wh, inner = window_geometry(model, scale)
        if ww > frame.width or wh > frame.height:
            break
        if ww >= min_size:
            step = max(1, _round(scale / 2))
            xs = np.arange(0, frame.width - ww + 1, step, dtype=np.int64)
            ys = np.arange(0, frame.height - wh + 1, step, dtype=np.int64)
            pc = pack(model, scale)
            depth, work = _scan.scan_scale(
                ii, sq, xs, ys, np.asarray(inner, dtype=np.int64),
                pc.stage_end, pc.stage_thr, pc.rects, pc.weights, pc.n_rects,
                pc.thr, pc.left, pc.right,
            )
            if stats is not None:
                stats.windows += depth.size
                stats.weak_evals += int(work.sum())
            for a, b in zip(*np.nonzero(depth == len(model.stages))):
                hits.append(RectF(float(xs[b]), float(ys[a]), float(ww), float(wh)))
        scale *= scale_step
    return hits


def group_rects(rects: Sequence[RectF], min_neighbors: int = MIN_NEIGHBORS, iou: float = GROUP_IOU) -> List[Candidate]:
    """Merge overlapping windows by coordinate averaging.

    Windows are linked when their IoU is at least ``iou``; each connected
    cluster with more than ``min_neighbors`` members yields one candidate.
    Output is ordered by ``(y, x, w)``.
    """
    n = len(rects)
    if n == 0:
        return []
    arr = np.array([r.as_tuple() for r in rects], dtype=np.float64)
    x1, y1 = arr[:, 0], arr[:, 1]
    x2, y2 = x1 + arr[:, 2], y1 + arr[:, 3]
    iw = np.clip(np.minimum(x2[:, None], x2[None]) - np.maximum(x1[:, None], x1[None]), 0, None)
    ih = np.clip(np.minimum(y2[:, None], y2[None]) - np.maximum(y1[:, None], y1[None]), 0, None)
    inter = iw * ih
    area = arr[:, 2] * arr[:, 3]
    ious = inter / (area[:, None] + area[None] - inter)
    _, labels = connected_components(csr_matrix(ious >= iou), directed=False)
    out = []
    for lab in np.unique(labels):
        members = arr[labels == lab]
        if len(members) <= min_neighbors:
            continue
        x, y, w, h = members.mean(axis=0)
        out.append(Candidate(RectF(float(x), float(y), float(w), float(h)), len(members) - 1))
    out.sort(key=lambda c: (c.rect.y, c.rect.x, c.rect.w))
    return out


def detect_candidates(
    model: CascadeModel,
    frame: GrayFrame,
    scale_step: float = 1.2,
    min_size: Optional[int] = None,
    min_neighbors: int = MIN_NEIGHBORS,
    stats: Optional[ScanStats] = None,
) -> List[Candidate]:
    return group_rects(scan_windows(model, frame, scale_step, min_size, stats), min_neighbors)


def detect_multiscale(
    model: CascadeModel,
    frame: GrayFrame,
    scale_step: float = 1.2,
    min_size: Optional[int] = None,
    min_neighbors: int = MIN_NEIGHBORS,
    stats: Optional[ScanStats] = None,
) -> List[RectF]:
    """Grouped face rectangles, ordered by ``(y, x, w)``."""
    if frame.width < model.window_w or frame.height < model.window_h:
        return []
    return [c.rect for c in detect_candidates(model, frame, scale_step, min_size, min_neighbors, stats)]


# --------------------------------------------------------------------------
# Low-resolution detection and remapping


def remap_rect(rect: RectF, k: float) -> RectF:
    """Corner remap from the k-downsampled frame: ``D = k A``, ``E = k B``."""
    return RectF(k * rect.x, k * rect.y, k * rect.w, k * rect.h)


def face_roi(rect: RectF) -> RectF:
    """Upper half of the face box: the midpoints of the side edges bound it below."""
    return RectF(rect.x, rect.y, rect.w, rect.h / 2.0)


def _largest(cands: Sequence[Candidate]) -> Candidate:
    best = cands[0]
    for c in cands[1:]:
        if c.rect.area > best.rect.area:
            best = c
    return best


def detect_face_downsampled(
    model: CascadeModel,
    frame: GrayFrame,
    k: int = DEFAULT_SCALE_FACTOR,
    scale_step: float = 1.2,
    min_neighbors: int = MIN_NEIGHBORS,
    stats: Optional[ScanStats] = None,
) -> Optional[Detection]:
    """Detect on the k-times downsampled frame, then remap the largest face."""
    low = downsample(frame, k)
    if low.width < model.window_w or low.height < model.window_h:
        return None
    cands = detect_candidates(model, low, scale_step, None, min_neighbors, stats)
    if not cands:
        return None
    best = _largest(cands)
    rect = remap_rect(best.rect, k)
    roi = face_roi(rect)
    return Detection(
        rect=rect,
        roi=roi,
        report_rect=rect,
        score=best.neighbors,
        frame_size=(frame.width, frame.height),
    )


def offplane_homography(width: int, height: int, face: RectF, axis: str, degrees: float) -> Homography:
    """Homography that turns a planar face rotated by ``degrees`` back to frontal.

    The face is modelled as a plane through ``face`` at depth equal to the
    focal length (taken as the frame width), rotated about its own vertical
    (``yaw``) or horizontal (``pitch``) axis.
    """
    f = float(width)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    frontal = face.corners()
    pts = np.column_stack([frontal[:, 0] - cx, frontal[:, 1] - cy, np.full(4, f)])
    center = np.array([face.center[0] - cx, face.center[1] - cy, f])
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    if axis == "yaw":
        rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    elif axis == "pitch":
        rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    else:
        raise ValueError(f"axis must be 'yaw' or 'pitch', got {axis!r}")
    moved = (pts - center) @ rot.T + center
    viewed = np.column_stack([f * moved[:, 0] / moved[:, 2] + cx, f * moved[:, 1] / moved[:, 2] + cy])
    return estimate_homography(viewed, frontal)


def offplane_candidates(width: int, height: int, face: Optional[RectF]) -> List[Tuple[str, Homography]]:
    if face is None:
        face = RectF(width / 4.0, height / 4.0, width / 2.0, height / 2.0)
    out = []
    for axis in ("yaw", "pitch"):
        for sign in (-1, 1):
            deg = sign * OFFPLANE_ANGLE
            out.append((f"{axis}{deg:+g}", offplane_homography(width, height, face, axis, deg)))
    return out


def detect_with_rotations(
    model: CascadeModel,
    frame: GrayFrame,
    k: int = DEFAULT_SCALE_FACTOR,
    prev_rect: Optional[RectF] = None,
    trace: Optional[list] = None,
    stats: Optional[ScanStats] = None,
    scale_step: float = 1.2,
    min_neighbors: int = MIN_NEIGHBORS,
) -> Optional[Detection]:
    """Frontal, then +/-30 deg in-plane, then equalized, then +/-15 deg off-plane.

    ``trace`` (if given) collects the name of every attempt, in order.
    ``prev_rect`` seeds the planar face model for the off-plane candidates.
    """

    def attempt(name: str, work: GrayFrame) -> Optional[Detection]:
        if trace is not None:
            trace.append(name)
        return detect_face_downsampled(model, work, k, scale_step, min_neighbors, stats)

    det = attempt("frontal", frame)
    if det is not None:
        return det

    for theta in INPLANE_ANGLES:
        det = attempt(f"inplane{theta:+g}", rotate_affine(frame, theta))
        if det is not None:
            report = bounding_rect(rotate_points(det.rect.corners(), theta, frame.width, frame.height))
            return replace(det, pose="inplane", theta=theta, report_rect=report)

    det = attempt("bhe", bhe(frame))
    if det is not None:
        return replace(det, equalized=True)

    for warp_id, h in offplane_candidates(frame.width, frame.height, prev_rect):
        det = attempt(f"offplane:{warp_id}", warp_perspective(frame, h))
        if det is not None:
            report = bounding_rect(h.inverse().apply(det.rect.corners()))
            return replace(det, pose="offplane", warp=h, warp_id=warp_id, report_rect=report)
    return None
