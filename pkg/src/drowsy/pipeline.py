"""Frame ingestion, day/night selection and the full per-frame pipeline."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .cascade import CascadeModel, load_cascade
from .detect import DEFAULT_SCALE_FACTOR, Detection, detect_with_rotations
from .eye import BLOCK_LBP, RAW_PIXELS, EigenModel, EyeHit, scan_eye_lbp, scan_eye_pca
from .imgcore import GrayFrame, ImageError, RectF, read_pgm
from .state import (
    ALARM_THRESHOLD,
    CLOSED,
    OPEN,
    UNDETECTED,
    AlarmEvent,
    EyeStateSample,
    PerclosSeries,
    PerclosWindow,
    SvmModel,
    alarm_edges,
    events_jsonl,
    perclos_csv,
    svm_predict,
)
from .track import KalmanConfig, TrackState, track_step

DAY, NIGHT, AUTO = "day", "night", "auto"
NIGHT_LEVEL = 60.0
HYSTERESIS = 10.0

RAW_MAGIC = b"LUMA"
RAW_HEADER = struct.Struct("<4sIIf")  # magic, width, height, fps


class PipelineError(ValueError):
    pass


# --------------------------------------------------------------------------
# Ingestion


def write_raw_stream(path, frames: Sequence[GrayFrame], fps: float) -> None:
    """Raw luma stream: a 16-byte header then row-major 8-bit frames."""
    if not frames:
        raise PipelineError("no frames to write")
    h, w = frames[0].shape
    with open(path, "wb") as fh:
        fh.write(RAW_HEADER.pack(RAW_MAGIC, w, h, float(fps)))
        for f in frames:
            if f.shape != (h, w):
                raise PipelineError(f"mixed frame dimensions: {f.width}x{f.height} after {w}x{h}")
            fh.write(f.pixels.tobytes())


def _read_raw(path: Path) -> Tuple[List[GrayFrame], float]:
    data = path.read_bytes()
    if len(data) < RAW_HEADER.size:
        raise PipelineError(f"{path}: too short for a raw stream header")
    magic, w, h, fps = RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise PipelineError(f"{path}: bad magic {magic!r}, expected {RAW_MAGIC!r}")
    if w == 0 or h == 0:
        raise PipelineError(f"{path}: zero frame dimension {w}x{h}")
    size = w * h
    body = len(data) - RAW_HEADER.size
    if body % size:
        raise PipelineError(f"{path}: payload of {body} bytes is not a whole number of {w}x{h} frames")
    pix = np.frombuffer(data, dtype=np.uint8, offset=RAW_HEADER.size).reshape(-1, h, w)
    return [GrayFrame(p) for p in pix], float(fps)


def ingest(path, fps: float = 30.0) -> List[GrayFrame]:
    """Frames of a PGM directory (lexicographic order) or a raw luma stream.

    Frames get timestamps ``index / fps``; a raw stream's header rate takes
    precedence over ``fps`` when it is positive.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
        if not files:
            raise PipelineError(f"{path}: no .pgm frames")
        frames = []
        for p in files:
            try:
                frames.append(read_pgm(p))
            except (OSError, ImageError) as exc:
                raise PipelineError(f"{p}: {exc}") from None
    elif path.is_file():
        frames, stream_fps = _read_raw(path)
        if not frames:
            raise PipelineError(f"{path}: stream holds no frames")
        if stream_fps > 0:
            fps = stream_fps
    else:
        raise PipelineError(f"{path}: no such file or directory")
    if fps <= 0:
        raise PipelineError("fps must be positive")
    shape = frames[0].shape
    out = []
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise PipelineError(f"frame {i}: mixed dimensions {f.width}x{f.height} vs {shape[1]}x{shape[0]}")
        out.append(f if f.timestamp is not None else f.with_timestamp(i / fps))
    return out


# --------------------------------------------------------------------------
# Mode selection


@dataclass
class ModeSelector:
    """Night below ``level`` mean intensity, with a dead band of +/- ``band``.

    The first frame is classified against ``level`` alone; after that the
    mode only changes when the mean leaves the band on the other side.
    """

    level: float = NIGHT_LEVEL
    band: float = HYSTERESIS
    mode: Optional[str] = None

    def __call__(self, frame: GrayFrame) -> str:
        m = float(frame.pixels.mean())
        if self.mode is None:
            self.mode = NIGHT if m < self.level else DAY
        elif self.mode == DAY and m < self.level - self.band:
            self.mode = NIGHT
        elif self.mode == NIGHT and m > self.level + self.band:
            self.mode = DAY
        return self.mode


def select_mode(frame: GrayFrame, selector: ModeSelector) -> str:
    return selector(frame)


# --------------------------------------------------------------------------
# Configuration and models


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = AUTO
    k: int = DEFAULT_SCALE_FACTOR
    cascade_path: Optional[str] = None
    eye_model_path: Optional[str] = None
    lbp_model_path: Optional[str] = None
    lbp_threshold: Optional[float] = None
    svm_model_path: Optional[str] = None  # day
    lbp_svm_model_path: Optional[str] = None  # night; falls back to svm_model_path
    alarm_threshold: float = ALARM_THRESHOLD
    fps: float = 30.0

    def __post_init__(self):
        if self.mode not in (DAY, NIGHT, AUTO):
            raise PipelineError(f"mode must be day, night or auto, got {self.mode!r}")
        if not 0 < self.alarm_threshold < 1:
            raise PipelineError("alarm threshold must lie in (0, 1)")
        if int(self.k) != self.k or self.k < 1:
            raise PipelineError("scale factor must be an integer >= 1")
        if self.fps <= 0:
            raise PipelineError("fps must be positive")


@dataclass
class Models:
    cascade: Optional[CascadeModel] = None
    eye: Optional[EigenModel] = None
    lbp: Optional[EigenModel] = None
    lbp_threshold: Optional[float] = None
    svm_day: Optional[SvmModel] = None
    svm_night: Optional[SvmModel] = None


def _check_pair(eye: EigenModel, svm: Optional[SvmModel], mode: str) -> None:
    if svm is None:
        return
    if svm.feature_kind != eye.feature_kind:
        raise PipelineError(f"{mode}: SVM was trained on {svm.feature_kind} features but the eye model is {eye.feature_kind}")
    if svm.k != eye.k:
        raise PipelineError(f"{mode}: SVM expects {svm.k} weights but the eye model has K={eye.k}")


def load_models(cfg: PipelineConfig, eyes: bool = True) -> Models:
    """Load and cross-check every model the configured modes need.

    With ``eyes=False`` only the face cascade is loaded.
    """
    from .datasets import load_stock_cascade

    def need(path, what):
        if path is None:
            raise PipelineError(f"{what} is required for mode {cfg.mode}")
        if not Path(path).is_file():
            raise PipelineError(f"{what} {path} does not exist")
        return path

    def guarded(loader, path):
        try:
            return loader(path)
        except (OSError, ValueError) as exc:
            raise PipelineError(f"{path}: {exc}") from None

    m = Models()
    m.cascade = load_stock_cascade() if cfg.cascade_path is None else guarded(load_cascade, need(cfg.cascade_path, "cascade"))
    if not eyes:
        return m
    if cfg.mode in (DAY, AUTO):
        m.eye = guarded(EigenModel.load, need(cfg.eye_model_path, "eye model"))
        if m.eye.feature_kind != RAW_PIXELS:
            raise PipelineError(f"{cfg.eye_model_path}: day eye model must be raw_pixels, got {m.eye.feature_kind}")
        if cfg.svm_model_path is not None:
            m.svm_day = guarded(SvmModel.load, need(cfg.svm_model_path, "SVM model"))
        _check_pair(m.eye, m.svm_day, DAY)
    if cfg.mode in (NIGHT, AUTO):
        m.lbp = guarded(EigenModel.load, need(cfg.lbp_model_path, "LBP model"))
        if m.lbp.feature_kind != BLOCK_LBP:
            raise PipelineError(f"{cfg.lbp_model_path}: night model must be block_lbp, got {m.lbp.feature_kind}")
        m.lbp_threshold = cfg.lbp_threshold if cfg.lbp_threshold is not None else m.lbp.threshold
        if m.lbp_threshold is None:
            raise PipelineError("night mode needs an LBP threshold (in the model file or the config)")
        path = cfg.lbp_svm_model_path or cfg.svm_model_path
        if path is not None:
            m.svm_night = guarded(SvmModel.load, need(path, "SVM model"))
        _check_pair(m.lbp, m.svm_night, NIGHT)
    return m


# --------------------------------------------------------------------------
# Per-frame processing


def _rect_json(r: Optional[RectF]):
    if r is None:
        return None
    return {"x": round(r.x, 4), "y": round(r.y, 4), "w": round(r.w, 4), "h": round(r.h, 4)}


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    t: float
    mode: str
    face: Optional[RectF] = None
    pose: Optional[str] = None
    eye: Optional[RectF] = None
    eye_error: Optional[float] = None
    eye_state: str = UNDETECTED
    tracker: str = "searching"  # tracked | searching

    def __post_init__(self):
        if self.eye is not None and self.face is None:
            raise PipelineError("an eye without a face")
        if self.eye_state != UNDETECTED and self.eye is None:
            raise PipelineError("an eye state without an eye")

    def to_json(self) -> str:
        return json.dumps(
            {
                "frame": self.frame,
                "t": round(self.t, 6),
                "mode": self.mode,
                "face": _rect_json(self.face),
                "pose": self.pose,
                "eye": _rect_json(self.eye),
                "eye_error": None if self.eye_error is None else round(self.eye_error, 6),
                "eye_state": self.eye_state,
                "tracker": self.tracker,
            }
        )


# Seams: detector(sub_frame, prior) -> Detection?, eye_scanner(mode, roi_frame)
# -> EyeHit?, classifier(mode, weights) -> "open" | "closed".
EyeScanner = Callable[[str, GrayFrame], Optional[EyeHit]]
Classifier = Callable[[str, np.ndarray], str]


@dataclass
class PipelineResult:
    records: List[FrameRecord]
    windows: List[PerclosWindow]
    events: List[AlarmEvent]

    def records_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def perclos_csv(self) -> str:
        return perclos_csv(self.windows)

    def events_jsonl(self) -> str:
        return events_jsonl(self.events)

    def write(self, records_path=None, perclos_path=None, events_path=None) -> None:
        for path, text in ((records_path, self.records_jsonl()), (perclos_path, self.perclos_csv()), (events_path, self.events_jsonl())):
            if path is not None:
                with open(path, "w", newline="") as fh:
                    fh.write(text)


def _default_parts(cfg: PipelineConfig, models: Models):
    def detector(sub, prior):
        return detect_with_rotations(models.cascade, sub, cfg.k, prev_rect=prior)

    def eye_scanner(mode, roi):
        if mode == DAY:
            return scan_eye_pca(models.eye, roi)
        return scan_eye_lbp(models.lbp, roi, models.lbp_threshold)

    def classifier(mode, weights):
        svm = models.svm_day if mode == DAY else models.svm_night
        if svm is None:
            return UNDETECTED
        return svm_predict(svm, weights)

    return detector, eye_scanner, classifier


def _eye_in_frame(det: Detection, roi_origin: Tuple[int, int], hit: EyeHit) -> RectF:
    local = hit.rect.shifted(*roi_origin)
    return det.rect_to_frame(local)


def process(
    cfg: PipelineConfig,
    frames: Iterable[GrayFrame],
    detector=None,
    eye_scanner: Optional[EyeScanner] = None,
    classifier: Optional[Classifier] = None,
    kalman: KalmanConfig = KalmanConfig(),
    models: Optional[Models] = None,
) -> PipelineResult:
    """Run the whole chain frame by frame.

    Any of ``detector``, ``eye_scanner`` and ``classifier`` may be replaced;
    models are only loaded when a default part is needed.  Reported face
    boxes are the Kalman-filtered track, eye boxes are in frame coordinates.
    """
    if detector is None or eye_scanner is None or classifier is None:
        models = models or load_models(cfg, eyes=eye_scanner is None or classifier is None)
        d, e, c = _default_parts(cfg, models)
        detector, eye_scanner, classifier = detector or d, eye_scanner or e, classifier or c
    selector = ModeSelector() if cfg.mode == AUTO else None
    series = PerclosSeries(threshold=cfg.alarm_threshold)
    track: Optional[TrackState] = None
    records = []
    for i, frame in enumerate(frames):
        t = frame.timestamp if frame.timestamp is not None else i / cfg.fps
        mode = selector(frame) if selector else cfg.mode
        track, det = track_step(track, frame, detector, kalman)
        face = eye = err = pose = None
        state = UNDETECTED
        if det is not None:
            face = track.rect
            pose = det.pose
            work = det.working_frame(frame)
            x0, y0, x1, y1 = det.roi.clip_bounds(work.width, work.height)
            if x1 > x0 and y1 > y0:
                hit = eye_scanner(mode, work.crop(RectF(x0, y0, x1 - x0, y1 - y0)))
                if hit is not None:
                    eye = _eye_in_frame(det, (x0, y0), hit)
                    err = hit.error
                    state = classifier(mode, hit.weights)
                    if state not in (OPEN, CLOSED, UNDETECTED):
                        raise PipelineError(f"classifier returned {state!r}")
        rec = FrameRecord(i, float(t), mode, face, pose, eye, err, state, "tracked" if track is not None else "searching")
        records.append(rec)
        series.update(EyeStateSample(rec.t, state))
    windows = list(series.emitted)
    return PipelineResult(records, windows, alarm_edges(windows))
