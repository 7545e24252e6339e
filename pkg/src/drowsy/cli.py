"""Command-line entry points."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import eye as eyemod
from .cascade import load_cascade
from .evaluation import evaluate, read_records, read_truth_csv, sweep_sf
from .imgcore import read_pgm, write_pgm
from .pipeline import PipelineConfig, PipelineError, ingest, process
from .state import CLOSED, OPEN, SvmModel, svm_train

KINDS = {"pca": eyemod.RAW_PIXELS, "lbp": eyemod.BLOCK_LBP}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _patch_files(directory) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{d}: not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise CliError(f"{d}: no .pgm patches")
    return files


def _read_patches(directory):
    out = []
    for p in _patch_files(directory):
        try:
            out.append(read_pgm(p))
        except ValueError as exc:
            raise CliError(f"{p}: {exc}") from None
    return out


def _parse_label(text: str, where: str) -> int:
    t = text.strip().lower()
    if t in (OPEN, "+1", "1"):
        return 1
    if t in (CLOSED, "-1"):
        return -1
    raise CliError(f"{where}: label must be open/closed or +1/-1, got {text!r}")


def read_labels(path) -> List[int]:
    """One label per line, or a CSV with a ``label`` column."""
    lines = Path(path).read_text().splitlines()
    if lines and "," in lines[0]:
        rows = list(csv.DictReader(lines))
        if not rows or "label" not in rows[0]:
            raise CliError(f"{path}: CSV labels need a 'label' column")
        return [_parse_label(r["label"], f"{path}:{i + 2}") for i, r in enumerate(rows)]
    return [_parse_label(s, f"{path}:{i + 1}") for i, s in enumerate(lines) if s.strip()]


def read_features(path) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        x = np.load(p)
    else:
        x = np.loadtxt(p, delimiter=",", ndmin=2)
    if x.ndim != 2:
        raise CliError(f"{p}: features must be a 2-D table")
    return x.astype(np.float64)


# --------------------------------------------------------------------------
# Subcommands


def cmd_process(a) -> None:
    cfg = PipelineConfig(
        mode=a.mode,
        k=a.scale_factor,
        cascade_path=a.cascade,
        eye_model_path=a.eye_model,
        lbp_model_path=a.lbp_model,
        lbp_threshold=a.lbp_threshold,
        svm_model_path=a.svm_model,
        lbp_svm_model_path=a.lbp_svm_model,
        alarm_threshold=a.alarm_threshold,
        fps=a.fps,
    )
    result = process(cfg, ingest(a.input, a.fps))
    result.write(a.out, a.perclos, a.events)
    n_face = sum(r.face is not None for r in result.records)
    print(f"{len(result.records)} frames, {n_face} with a face, {len(result.windows)} windows, {len(result.events)} events")


def cmd_train_eyes(a) -> None:
    patches = _read_patches(a.patches)
    if a.kind == "pca":
        model = eyemod.pca_train(patches, a.k)
    else:
        model = eyemod.lbp_train(patches, a.k)
        thr = eyemod.calibrate_threshold(model, patches, a.percentile)
        model = eyemod.EigenModel(model.mean, model.basis, model.feature_kind, model.patch_w, model.patch_h, model.eigenvalues, thr)
    model.save(a.out)
    print(f"{model.feature_kind} model, K={model.k}, dim={model.dim}, {len(patches)} patches -> {a.out}")


def cmd_extract_features(a) -> None:
    model = eyemod.EigenModel.load(a.model)
    rows = [eyemod.patch_features(model, p) for p in _read_patches(a.patches)]
    np.savetxt(a.out, np.array(rows), delimiter=",", fmt="%.17g")
    print(f"{len(rows)} x {model.k} features -> {a.out}")


def cmd_train_svm(a) -> None:
    x = read_features(a.features)
    y = read_labels(a.labels)
    if len(y) != x.shape[0]:
        raise CliError(f"{len(y)} labels for {x.shape[0]} feature rows")
    model = svm_train(list(zip(x, y)), lam=a.lam, iterations=a.iterations, feature_kind=KINDS[a.kind])
    model.save(a.out)
    errors = sum((model.decision(xi) >= 0) != (yi > 0) for xi, yi in zip(x, y))
    print(f"K={model.k}, objective {model.loss:.6g}, training errors {errors}/{len(y)} -> {a.out}")


def cmd_eval(a) -> None:
    report = evaluate(read_records(a.records), read_truth_csv(a.truth), a.iou)
    text = json.dumps(report, indent=2)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(text)


def cmd_sweep_sf(a) -> None:
    from .datasets import load_stock_cascade

    try:
        ks = [int(v) for v in a.k.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--k must be a comma-separated list of integers, got {a.k!r}") from None
    if not ks or min(ks) < 1:
        raise CliError("--k values must be integers >= 1")
    model = load_stock_cascade() if a.cascade is None else load_cascade(a.cascade)
    frames = ingest(a.input)
    rows = sweep_sf(model, frames, read_truth_csv(a.truth), ks, a.repeats, a.iou)
    lines = ["k,ms_per_frame,tpr,fpr,auc"] + [f"{r.k},{r.ms_per_frame:.3f},{r.tpr:.4f},{r.fpr:.4f},{r.auc:.4f}" for r in rows]
    if a.out:
        Path(a.out).write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_sample_data(a) -> None:
    from .datasets import synthetic_eye_set, write_bundled_sequence

    out = Path(a.out)
    truth = write_bundled_sequence(out / "sequence")
    eyes = out / "eyes"
    eyes.mkdir(parents=True, exist_ok=True)
    patches, labels = synthetic_eye_set(a.eyes, a.eyes, seed=a.seed)
    with open(eyes / "labels.csv", "w", newline="") as fh:
        fh.write("file,label\n")
        for i, (p, y) in enumerate(zip(patches, labels)):
            name = f"e{i:04d}.pgm"
            write_pgm(eyes / name, p)
            fh.write(f"{name},{OPEN if y > 0 else CLOSED}\n")
    print(f"sequence -> {truth.parent}, {len(patches)} eye patches -> {eyes}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drowsy", description="Driver drowsiness pipeline: face, eyes, eye state, PERCLOS.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("process", help="run the full pipeline over a frame directory or raw stream")
    s.add_argument("--input", required=True)
    s.add_argument("--mode", choices=("day", "night", "auto"), default="auto")
    s.add_argument("--cascade")
    s.add_argument("--eye-model")
    s.add_argument("--lbp-model")
    s.add_argument("--lbp-threshold", type=float)
    s.add_argument("--svm-model")
    s.add_argument("--lbp-svm-model")
    s.add_argument("--scale-factor", type=int, default=6)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--alarm-threshold", type=float, default=0.15)
    s.add_argument("--out", default="records.jsonl")
    s.add_argument("--perclos", default="perclos.csv")
    s.add_argument("--events", default="events.jsonl")
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("train-eyes", help="fit an eigen-eye (pca) or block-LBP (lbp) model")
    s.add_argument("--kind", choices=tuple(KINDS), required=True)
    s.add_argument("--patches", required=True)
    s.add_argument("--k", type=int, default=eyemod.DEFAULT_K)
    s.add_argument("--percentile", type=float, default=95.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_eyes)

    s = sub.add_parser("extract-features", help="subspace weights of patches under an eye model")
    s.add_argument("--model", required=True)
    s.add_argument("--patches", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract_features)

    s = sub.add_parser("train-svm", help="train the open/closed linear SVM")
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--kind", choices=tuple(KINDS), default="pca")
    s.add_argument("--lam", type=float, default=0.01)
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_svm)

    s = sub.add_parser("eval", help="score records against ground truth")
    s.add_argument("--records", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-sf", help="detection speed/accuracy per scale factor")
    s.add_argument("--input", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--k", default="1,2,4,6,8,10")
    s.add_argument("--cascade")
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep_sf)

    s = sub.add_parser("sample-data", help="write the bundled sequence and synthetic eye patches")
    s.add_argument("--out", required=True)
    s.add_argument("--eyes", type=int, default=60, help="patches per class")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (CliError, PipelineError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0
