"""Eye-state classification and windowed PERCLOS with alarm events."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

OPEN, CLOSED, UNDETECTED = "open", "closed", "undetected"
EYE_STATES = (OPEN, CLOSED, UNDETECTED)

WINDOW_SECONDS = 180.0
STEP_SECONDS = 60.0
ALARM_THRESHOLD = 0.15
VALID_FRACTION = 0.5
SVM_VERSION = 1


class StateError(ValueError):
    pass


# --------------------------------------------------------------------------
# Linear SVM


@dataclass(frozen=True)
class SvmModel:
    """``w . x + b >= 0`` means open, negative means closed."""

    w: np.ndarray
    b: float
    feature_kind: str = "raw_pixels"
    loss: float = float("nan")

    @property
    def k(self) -> int:
        return self.w.shape[0]

    def decision(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.shape[0] != self.k:
            raise StateError(f"feature length {x.shape[0]} does not match SVM dimension {self.k}")
        return float(self.w @ x + self.b)

    def to_json(self) -> str:
        return json.dumps(
            {"version": SVM_VERSION, "feature_kind": self.feature_kind, "K": self.k, "w": self.w.tolist(), "b": self.b}
        )

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        try:
            d = json.loads(text)
            if d.get("version") != SVM_VERSION:
                raise StateError(f"unsupported SVM model version {d.get('version')!r}")
            w = np.asarray(d["w"], dtype=np.float64)
            if w.shape != (int(d["K"]),):
                raise StateError("SVM weight length does not match K")
            return cls(w, float(d["b"]), d["feature_kind"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, StateError):
                raise
            raise StateError(f"malformed SVM model: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def svm_objective(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float) -> float:
    """``lam/2 |w|^2 + mean(max(0, 1 - y (X w + b)))``; the bias is not regularized."""
    margins = 1.0 - y * (X @ w + b)
    return 0.5 * lam * float(w @ w) + float(np.maximum(margins, 0.0).mean())


def svm_train(
    samples: Sequence[Tuple[Sequence[float], int]],
    lam: float = 0.01,
    iterations: int = 2000,
    feature_kind: str = "raw_pixels",
    normalize: bool = True,
) -> SvmModel:
    """Full-batch subgradient descent on the regularized hinge loss.

    Step size ``1 / (lam (t + 1))``; the iterate is projected onto the ball of
    radius ``1 / sqrt(lam)`` that contains the optimum, and the best iterate
    seen is returned.  No randomness: identical inputs give identical models.

    With ``normalize`` the features are first divided by the largest sample
    norm so the data sits in the unit ball (PCA weights of raw pixels run
    into the hundreds, where these steps never leave zero).  The objective
    is then the one on the scaled data; the returned ``w`` is mapped back to
    the original units and ``loss`` reports the scaled objective.
    """
    if not samples:
        raise StateError("no training samples")
    X = np.array([np.asarray(s[0], dtype=np.float64).ravel() for s in samples])
    y = np.array([float(s[1]) for s in samples])
    if X.ndim != 2:
        raise StateError("inconsistent feature lengths")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise StateError("labels must be +1 (open) or -1 (closed)")
    if np.all(y == 1) or np.all(y == -1):
        raise StateError("training data holds a single class")
    if lam <= 0:
        raise StateError("lam must be positive")
    scale = 1.0
    if normalize:
        scale = float(np.linalg.norm(X, axis=1).max())
        if not scale > 0:
            raise StateError("all feature vectors are zero")
        X = X / scale
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    best = (svm_objective(X, y, w, b, lam), w.copy(), b)
    radius = 1.0 / np.sqrt(lam)
    for t in range(1, iterations + 1):
        active = y * (X @ w + b) < 1.0
        gw = lam * w - (y[active, None] * X[active]).sum(axis=0) / n
        gb = -y[active].sum() / n
        eta = 1.0 / (lam * (t + 1))
        w = w - eta * gw
        b = b - eta * gb
        norm = np.linalg.norm(w)
        if norm > radius:
            w = w * (radius / norm)
        obj = svm_objective(X, y, w, b, lam)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    loss, w, b = best
    if not np.linalg.norm(w) > 0:
        raise StateError("training produced a zero weight vector")
    return SvmModel(w / scale, float(b), feature_kind, loss)


def svm_predict(model: SvmModel, weights) -> str:
    """Open when ``w . x + b >= 0`` (the boundary counts as open), else closed."""
    return OPEN if model.decision(weights) >= 0 else CLOSED


# --------------------------------------------------------------------------
# PERCLOS


@dataclass(frozen=True)
class EyeStateSample:
    timestamp: float
    state: str

    def __post_init__(self):
        if self.state not in EYE_STATES:
            raise StateError(f"unknown eye state {self.state!r}")


@dataclass(frozen=True)
class PerclosWindow:
    t_start: float
    t_end: float
    e_c: int
    e_t: int
    n: int
    threshold: float = ALARM_THRESHOLD

    @property
    def p(self) -> float:
        return self.e_c / self.e_t if self.e_t else 0.0

    @property
    def valid(self) -> bool:
        return self.n > 0 and self.e_t >= VALID_FRACTION * self.n

    @property
    def drowsy(self) -> bool:
        return self.valid and self.p > self.threshold

    def csv_row(self) -> List[str]:
        return [
            f"{self.t_start:.6f}",
            f"{self.t_end:.6f}",
            str(self.e_c),
            str(self.e_t),
            f"{self.p:.6f}",
            str(int(self.valid)),
            str(int(self.drowsy)),
        ]


PERCLOS_HEADER = ["t_start", "t_end", "e_c", "e_t", "p", "valid", "drowsy"]


@dataclass
class PerclosSeries:
    """Streaming PERCLOS over 180 s windows starting every 60 s.

    Windows are anchored at the first sample's timestamp.  A window is
    emitted once a sample at or after its end arrives; the trailing partial
    windows are never emitted.
    """

    threshold: float = ALARM_THRESHOLD
    window: float = WINDOW_SECONDS
    step: float = STEP_SECONDS
    t0: Optional[float] = None
    last_t: Optional[float] = None
    next_m: int = 0
    open_windows: Dict[int, List[int]] = field(default_factory=dict)  # m -> [e_c, e_t, n]
    emitted: List[PerclosWindow] = field(default_factory=list)

    def _bounds(self, m: int) -> Tuple[float, float]:
        start = self.t0 + self.step * m
        return start, start + self.window

    def update(self, sample: EyeStateSample) -> List[PerclosWindow]:
        t = float(sample.timestamp)
        if self.last_t is not None and not t > self.last_t:
            raise StateError(f"timestamps must increase strictly: {t} after {self.last_t}")
        self.last_t = t
        if self.t0 is None:
            self.t0 = t
        while self._bounds(self.next_m)[0] <= t:
            self.open_windows[self.next_m] = [0, 0, 0]
            self.next_m += 1
        done = []
        for m in sorted(self.open_windows):
            start, end = self._bounds(m)
            if end <= t:
                e_c, e_t, n = self.open_windows.pop(m)
                done.append(PerclosWindow(start, end, e_c, e_t, n, self.threshold))
        for m, counts in self.open_windows.items():
            counts[2] += 1
            if sample.state != UNDETECTED:
                counts[1] += 1
                if sample.state == CLOSED:
                    counts[0] += 1
        self.emitted.extend(done)
        return done


def perclos_update(series: PerclosSeries, sample: EyeStateSample) -> List[PerclosWindow]:
    return series.update(sample)


def perclos_windows(samples: Iterable[EyeStateSample], threshold: float = ALARM_THRESHOLD) -> List[PerclosWindow]:
    series = PerclosSeries(threshold=threshold)
    out = []
    for s in samples:
        out.extend(series.update(s))
    return out


@dataclass(frozen=True)
class AlarmEvent:
    t: float
    kind: str  # alarm | clear
    p: float

    def to_json(self) -> str:
        return json.dumps({"t": round(self.t, 6), "kind": self.kind, "p": round(self.p, 6)})


def alarm_edges(windows: Iterable[PerclosWindow]) -> List[AlarmEvent]:
    """Alarm on each not-drowsy -> drowsy transition, clear on the reverse.

    Invalid windows hold the previous state.  Events carry the window end
    time, which is when the window becomes known.
    """
    events = []
    drowsy = False
    for w in windows:
        if not w.valid:
            continue
        if w.drowsy and not drowsy:
            events.append(AlarmEvent(w.t_end, "alarm", w.p))
        elif drowsy and not w.drowsy:
            events.append(AlarmEvent(w.t_end, "clear", w.p))
        drowsy = w.drowsy
    return events


def perclos_csv(windows: Iterable[PerclosWindow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PERCLOS_HEADER)
    for w in windows:
        writer.writerow(w.csv_row())
    return buf.getvalue()


def events_jsonl(events: Iterable[AlarmEvent]) -> str:
    return "".join(e.to_json() + "\n" for e in events)
