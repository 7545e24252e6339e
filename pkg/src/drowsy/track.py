"""Kalman tracking of the face box and the region-of-tracking (ROT) search window."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .detect import Detection
from .imgcore import GrayFrame, RectF

EPSILON = 1e4
MAX_MISSES = 5

# Process noise for average acceleration a = 0.1 and unit time step.
# Note it is not positive semidefinite; the filtered covariance stays PSD in
# practice because the initial covariance and corrections dominate.
DEFAULT_Q = np.array(
    [
        [1 / 4, 0, 0, 0, 1 / 2, 0],
        [0, 1 / 4, 0, 0, 0, 1 / 2],
        [0, 0, 1 / 4, 0, 1 / 2, 0],
        [0, 0, 0, 1 / 4, 0, 1 / 2],
        [1 / 2, 0, 1 / 2, 0, 1 / 4, 0],
        [0, 1 / 2, 0, 1 / 2, 0, 1 / 4],
    ]
) * 1e-2

MEASUREMENT_VARIANCE = 6.5**2


class TrackError(ValueError):
    pass


def constant_velocity_F() -> np.ndarray:
    """Corners advance by the velocity of the box center; velocity is kept."""
    F = np.eye(6)
    F[0, 4] = F[2, 4] = 1.0
    F[1, 5] = F[3, 5] = 1.0
    return F


@dataclass(frozen=True)
class KalmanConfig:
    F: np.ndarray = field(default_factory=constant_velocity_F)
    H: np.ndarray = field(default_factory=lambda: np.eye(4, 6))
    Q: np.ndarray = field(default_factory=lambda: DEFAULT_Q.copy())
    R: np.ndarray = field(default_factory=lambda: MEASUREMENT_VARIANCE * np.eye(4))
    epsilon: float = EPSILON
    max_misses: int = MAX_MISSES

    def __post_init__(self):
        shapes = {"F": (6, 6), "H": (4, 6), "Q": (6, 6), "R": (4, 4)}
        for name, shape in shapes.items():
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.shape != shape:
                raise TrackError(f"{name} must be {shape}, got {m.shape}")
            object.__setattr__(self, name, m)
        for name in ("Q", "R"):
            m = getattr(self, name)
            if not np.allclose(m, m.T):
                raise TrackError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise TrackError("R must be positive definite")
        if self.epsilon <= 0:
            raise TrackError("epsilon must be positive")


@dataclass(frozen=True)
class TrackState:
    x: np.ndarray  # [x1, y1, x2, y2, ux, uy]
    P: np.ndarray
    frames_since_hit: int = 0

    @property
    def rect(self) -> RectF:
        x1, y1, x2, y2 = self.x[:4]
        return RectF.from_corners(float(x1), float(y1), float(x2), float(y2))

    @property
    def valid(self) -> bool:
        return bool(self.x[2] > self.x[0] and self.x[3] > self.x[1])


def measurement(r: RectF) -> np.ndarray:
    return np.array([r.x, r.y, r.x2, r.y2], dtype=np.float64)


def kf_init(r: RectF, cfg: KalmanConfig = KalmanConfig()) -> TrackState:
    """Start a track at the first detection, with zero velocity."""
    if not (r.w > 0 and r.h > 0):
        raise TrackError(f"cannot start a track from degenerate rect {r}")
    x = np.concatenate([measurement(r), [0.0, 0.0]])
    return TrackState(x, cfg.epsilon * np.eye(6))


def kf_predict(s: TrackState, cfg: KalmanConfig = KalmanConfig()) -> TrackState:
    x = cfg.F @ s.x
    P = cfg.F @ s.P @ cfg.F.T + cfg.Q
    return TrackState(x, (P + P.T) / 2.0, s.frames_since_hit)


def kf_correct(s: TrackState, z, cfg: KalmanConfig = KalmanConfig()) -> TrackState:
    """Measurement update with ``z`` as a rect or ``[x1, y1, x2, y2]``."""
    z = measurement(z) if isinstance(z, RectF) else np.asarray(z, dtype=np.float64)
    H = cfg.H
    S = H @ s.P @ H.T + cfg.R
    try:
        K = np.linalg.solve(S, H @ s.P).T  # P H^T S^-1, S and P symmetric
    except np.linalg.LinAlgError:
        raise TrackError("innovation covariance is singular") from None
    x = s.x + K @ (z - H @ s.x)
    P = (np.eye(6) - K @ H) @ s.P
    return TrackState(x, (P + P.T) / 2.0, 0)


def rot_from_state(s: TrackState, frame_w: int, frame_h: int) -> RectF:
    """Twice the tracked box, same center, clamped to the frame."""
    box = s.rect
    cx, cy = box.center
    x0 = max(0.0, cx - box.w)
    y0 = max(0.0, cy - box.h)
    x1 = min(float(frame_w), cx + box.w)
    y1 = min(float(frame_h), cy + box.h)
    return RectF.from_corners(x0, y0, x1, y1)


Detector = Callable[[GrayFrame, Optional[RectF]], Optional[Detection]]


def track_step(
    state: Optional[TrackState],
    frame: GrayFrame,
    detector: Detector,
    cfg: KalmanConfig = KalmanConfig(),
) -> Tuple[Optional[TrackState], Optional[Detection]]:
    """Advance the tracker by one frame.

    ``detector(sub_frame, prior)`` searches ``sub_frame`` and returns a
    detection in that sub-frame's coordinates; ``prior`` is the predicted
    face box in the same coordinates (or ``None`` with no live track).  While
    a track is live the detector only ever sees the ROT crop.
    """
    if state is None:
        det = detector(frame, None)
        if det is None:
            return None, None
        return kf_init(det.report_rect, cfg), det

    pred = kf_predict(state, cfg)
    if not pred.valid:
        return None, None
    rot = rot_from_state(pred, frame.width, frame.height)
    x0, y0, x1, y1 = rot.clip_bounds(frame.width, frame.height)
    det = None
    if x1 > x0 and y1 > y0:
        sub = frame.crop(RectF(x0, y0, x1 - x0, y1 - y0))
        prior = pred.rect.shifted(-x0, -y0)
        det = detector(sub, prior)
    if det is None:
        misses = pred.frames_since_hit + 1
        if misses >= cfg.max_misses:
            return None, None
        return replace(pred, frames_since_hit=misses), None
    det = det.shifted(x0, y0)
    return kf_correct(pred, det.report_rect, cfg), det
