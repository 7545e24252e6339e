"""Accuracy bookkeeping: ground-truth files, confusion counts, ROC/AUC and the
scale-factor sweep."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .cascade import CascadeModel
from .detect import detect_face_downsampled
from .imgcore import GrayFrame, RectF
from .state import CLOSED, OPEN, UNDETECTED, EyeStateSample, perclos_windows

TRUTH_HEADER = ["frame", "face_present", "fx", "fy", "fw", "fh", "ex", "ey", "ew", "eh", "eye_state"]
HIT_IOU = 0.5


class EvalError(ValueError):
    pass


# --------------------------------------------------------------------------
# Files


def _fmt(v: float) -> str:
    return f"{v:g}"


def write_truth_csv(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRUTH_HEADER)
        for r in rows:
            face, eye = r.get("face"), r.get("eye")
            writer.writerow(
                [r["frame"], r["face_present"]]
                + ([_fmt(v) for v in face.as_tuple()] if face else ["", "", "", ""])
                + ([_fmt(v) for v in eye.as_tuple()] if eye else ["", "", "", ""])
                + [r.get("eye_state") or ""]
            )


def _rect(row: dict, keys: Sequence[str], where: str) -> Optional[RectF]:
    vals = [row.get(k, "") for k in keys]
    if all(v in ("", None) for v in vals):
        return None
    try:
        return RectF(*(float(v) for v in vals))
    except (TypeError, ValueError) as exc:
        raise EvalError(f"{where}: bad rectangle {vals}: {exc}") from None


def read_truth_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRUTH_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise EvalError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for line, r in enumerate(reader, start=2):
            where = f"{path}:{line}"
            try:
                idx = int(r["frame"])
                present = int(r["face_present"])
            except ValueError as exc:
                raise EvalError(f"{where}: {exc}") from None
            state = (r.get("eye_state") or "").strip() or None
            if state not in (None, OPEN, CLOSED, UNDETECTED):
                raise EvalError(f"{where}: unknown eye_state {state!r}")
            rows.append(
                {
                    "frame": idx,
                    "face_present": present,
                    "face": _rect(r, ("fx", "fy", "fw", "fh"), where),
                    "eye": _rect(r, ("ex", "ey", "ew", "eh"), where),
                    "eye_state": state,
                }
            )
    idx = [r["frame"] for r in rows]
    if idx != sorted(set(idx)):
        raise EvalError(f"{path}: frame indices must be unique and sorted")
    return rows


def read_records(path) -> List[dict]:
    out = []
    with open(path) as fh:
        for line, text in enumerate(fh, start=1):
            if text.strip():
                try:
                    out.append(json.loads(text))
                except json.JSONDecodeError as exc:
                    raise EvalError(f"{path}:{line}: {exc}") from None
    return out


def _record_rect(rec: dict, key: str) -> Optional[RectF]:
    d = rec.get(key)
    if not d:
        return None
    return RectF(d["x"], d["y"], d["w"], d["h"])


# --------------------------------------------------------------------------
# Confusion counts


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, truth: bool, predicted: bool) -> None:
        if truth and predicted:
            self.tp += 1
        elif truth:
            self.fn += 1
        elif predicted:
            self.fp += 1
        else:
            self.tn += 1

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else float("nan")

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else float("nan")

    def as_dict(self) -> dict:
        rate = lambda v: None if v != v else v  # NaN is not valid JSON
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "tpr": rate(self.tpr), "fpr": rate(self.fpr)}


def evaluate(records: Sequence[dict], truth: Sequence[dict], iou: float = HIT_IOU) -> dict:
    """Face, eye and eye-state confusion plus per-window PERCLOS error.

    A face (eye) counts as found only when the recorded box overlaps the
    annotated one with IoU >= ``iou``.  Eye-state counts use open as the
    positive class and only frames where both sides determined a state.
    """
    by_frame = {r["frame"]: r for r in records}
    if sorted(by_frame) != [t["frame"] for t in truth]:
        raise EvalError("record and truth frame indices differ")
    face, eye, state = Confusion(), Confusion(), Confusion()
    true_samples, est_samples = [], []
    for t in truth:
        rec = by_frame[t["frame"]]
        rf = _record_rect(rec, "face")
        if t["face_present"]:
            face.add(True, rf is not None and t["face"] is not None and rf.iou(t["face"]) >= iou)
        else:
            face.add(False, rf is not None)
        re = _record_rect(rec, "eye")
        if t["eye"] is not None:
            eye.add(True, re is not None and re.iou(t["eye"]) >= iou)
        elif not t["face_present"]:
            eye.add(False, re is not None)
        ts, es = t["eye_state"] or UNDETECTED, rec.get("eye_state", UNDETECTED)
        if ts != UNDETECTED and es != UNDETECTED:
            state.add(ts == OPEN, es == OPEN)
        stamp = rec["t"]
        true_samples.append(EyeStateSample(stamp, ts))
        est_samples.append(EyeStateSample(stamp, es))
    errors = []
    for wt, we in zip(perclos_windows(true_samples), perclos_windows(est_samples)):
        if wt.valid and we.valid:
            errors.append({"t_start": wt.t_start, "p_true": wt.p, "p_est": we.p, "error": abs(we.p - wt.p)})
    return {
        "frames": len(truth),
        "face": face.as_dict(),
        "eye": eye.as_dict(),
        "eye_state": state.as_dict(),
        "perclos": {
            "windows": errors,
            "mean_error": float(np.mean([e["error"] for e in errors])) if errors else None,
        },
    }


# --------------------------------------------------------------------------
# ROC


def roc_auc(scores: Sequence[Tuple[float, int]]) -> Tuple[List[Tuple[float, float]], float]:
    """ROC points (fpr, tpr) from a threshold sweep, and the trapezoidal AUC.

    Thresholds run over the distinct scores from high to low, so tied
    scores enter the curve together.
    """
    arr = np.array([(float(s), int(l)) for s, l in scores], dtype=np.float64).reshape(-1, 2)
    pos = int(np.sum(arr[:, 1] == 1))
    neg = int(np.sum(arr[:, 1] != 1))
    if pos == 0 or neg == 0:
        raise EvalError("ROC needs both positive and negative labels")
    points = [(0.0, 0.0)]
    tp = fp = 0
    for thr in np.unique(arr[:, 0])[::-1]:
        at = arr[arr[:, 0] == thr]
        tp += int(np.sum(at[:, 1] == 1))
        fp += int(np.sum(at[:, 1] != 1))
        points.append((fp / neg, tp / pos))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


# --------------------------------------------------------------------------
# Scale-factor sweep


@dataclass(frozen=True)
class SweepRow:
    k: int
    ms_per_frame: float
    tpr: float
    fpr: float
    auc: float

    def as_dict(self) -> dict:
        return {"k": self.k, "ms_per_frame": self.ms_per_frame, "tpr": self.tpr, "fpr": self.fpr, "auc": self.auc}


def sweep_sf(
    model: CascadeModel,
    frames: Sequence[GrayFrame],
    truth: Sequence[dict],
    k_values: Sequence[int] = (1, 2, 4, 6, 8, 10),
    repeats: int = 1,
    iou: float = HIT_IOU,
) -> List[SweepRow]:
    """Detection-only timing and accuracy for each scale factor.

    Per-frame time is the fastest of ``repeats`` passes.  The ROC score of a
    frame is the neighbor support of its chosen detection plus one (0 when
    nothing is found); labels come from ``face_present``.
    """
    if len(frames) != len(truth):
        raise EvalError("frame and truth counts differ")
    rows = []
    for k in k_values:
        best = float("inf")
        dets = None
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            found = [detect_face_downsampled(model, f, k) for f in frames]
            best = min(best, time.perf_counter() - t0)
            dets = found
        conf = Confusion()
        scored = []
        for d, t in zip(dets, truth):
            if t["face_present"]:
                conf.add(True, d is not None and t["face"] is not None and d.rect.iou(t["face"]) >= iou)
            else:
                conf.add(False, d is not None)
            scored.append((0 if d is None else d.score + 1, int(t["face_present"])))
        _, auc = roc_auc(scored)
        rows.append(SweepRow(int(k), 1000.0 * best / len(frames), conf.tpr, conf.fpr, auc))
    return rows
