"""Bundled data: the stock face cascade, an annotated portrait, a short
annotated frame sequence built from it, and procedurally drawn eye patches."""
from __future__ import annotations

import functools
from importlib import resources
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .cascade import CascadeModel, parse_cascade
from .imgcore import GrayFrame, RectF, load_pgm, write_pgm

CASCADE_FILE = "haarcascade_frontalface_alt.xml"
PORTRAIT_FILE = "portrait.pgm"

# Hand-annotated face box on the bundled 640x480 portrait (brow to chin).
PORTRAIT_FACE = RectF(190.0, 170.0, 250.0, 250.0)
# Eye centers on the portrait, image-left first.
PORTRAIT_EYES = ((257.0, 253.0), (367.0, 258.0))

# (dx, dy, gain) for the face frames of the bundled sequence
_SHIFTS = [(0, 0, 1.0), (24, -12, 0.95), (-30, 10, 1.05), (16, 20, 0.9), (-20, -16, 1.1), (36, 6, 1.0), (-8, 24, 0.97), (10, -20, 1.03)]


def _data(name: str) -> bytes:
    return resources.files("drowsy").joinpath("data", name).read_bytes()


def stock_cascade_path() -> Path:
    return Path(str(resources.files("drowsy").joinpath("data", CASCADE_FILE)))


@functools.lru_cache(maxsize=1)
def load_stock_cascade() -> CascadeModel:
    return parse_cascade(_data(CASCADE_FILE))


def load_portrait() -> GrayFrame:
    return load_pgm(_data(PORTRAIT_FILE))


def shift_frame(frame: GrayFrame, dx: int, dy: int) -> GrayFrame:
    """Translate content by ``(dx, dy)`` pixels, replicating the edges."""
    h, w = frame.shape
    pad = max(abs(dx), abs(dy))
    big = np.pad(frame.pixels, pad, mode="edge")
    return GrayFrame(big[pad - dy:pad - dy + h, pad - dx:pad - dx + w], frame.timestamp)


def _box_blur(a: np.ndarray, r: int) -> np.ndarray:
    k = np.ones(2 * r + 1) / (2 * r + 1)
    a = np.apply_along_axis(lambda v: np.convolve(np.pad(v, r, mode="edge"), k, "valid"), 0, a)
    return np.apply_along_axis(lambda v: np.convolve(np.pad(v, r, mode="edge"), k, "valid"), 1, a)


def _negatives(w: int, h: int, rng: np.random.Generator, portrait: GrayFrame) -> List[np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w]
    background = portrait.pixels[10:130, 480:640].astype(np.float64)  # plain studio backdrop
    backdrop = np.kron(background, np.ones((4, 4)))[:h, :w]
    return [
        np.full((h, w), 128.0),
        xs * 255.0 / (w - 1),
        ys * 255.0 / (h - 1),
        rng.integers(0, 256, (h, w)).astype(np.float64),
        _box_blur(rng.integers(0, 256, (h, w)).astype(np.float64), 3),
        np.where(((xs // 16) + (ys // 16)) % 2 == 0, 60.0, 190.0),
        backdrop,
        128 + 90 * np.sin(xs / 9.0) * np.cos(ys / 13.0),
    ]


def bundled_sequence(seed: int = 7) -> Tuple[List[GrayFrame], List[dict]]:
    """Sixteen annotated 640x480 frames: 8 with the portrait face, 8 without.

    Face frames are shifted, gain-adjusted copies of the portrait with mild
    sensor noise; the truth rows carry the shifted face box.  Frames have no
    timestamps (callers synthesize them from a frame rate).
    """
    rng = np.random.default_rng(seed)
    portrait = load_portrait()
    h, w = portrait.shape
    faces = []
    for dx, dy, gain in _SHIFTS:
        moved = shift_frame(portrait, dx, dy).pixels.astype(np.float64) * gain
        moved += rng.normal(0.0, 2.0, moved.shape)
        faces.append((moved, PORTRAIT_FACE.shifted(dx, dy)))
    negs = _negatives(w, h, rng, portrait)
    frames, truth = [], []
    # interleave so positives and negatives alternate
    for i in range(len(faces)):
        for pixels, face in ((faces[i][0], faces[i][1]), (negs[i], None)):
            idx = len(frames)
            frames.append(GrayFrame(np.clip(np.floor(pixels + 0.5), 0, 255).astype(np.uint8)))
            row = {"frame": idx, "face_present": int(face is not None), "face": face, "eye": None, "eye_state": None}
            if face is not None:
                row["eye_state"] = "open"
            truth.append(row)
    return frames, truth


def write_bundled_sequence(directory, seed: int = 7) -> Path:
    """Write the bundled sequence as ``fNNN.pgm`` plus ``truth.csv``; returns the truth path."""
    from .evaluation import write_truth_csv

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    frames, truth = bundled_sequence(seed)
    for i, f in enumerate(frames):
        write_pgm(out / f"f{i:03d}.pgm", f)
    path = out / "truth.csv"
    write_truth_csv(path, truth)
    return path


# --------------------------------------------------------------------------
# Synthetic eye patches


def synthetic_eye_patch(closed: bool, rng: np.random.Generator, w: int = 50, h: int = 40) -> GrayFrame:
    """A drawn 50x40 eye: almond with iris and pupil if open, a lid crease if closed."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    skin = rng.uniform(110, 190)
    img = skin + rng.uniform(-15, 15) * (ys / h - 0.5)
    cx = w / 2 + rng.uniform(-4, 4)
    cy = h / 2 + rng.uniform(-3, 3)
    brow_y = cy - rng.uniform(11, 15)
    img -= 45 * np.exp(-((ys - brow_y) ** 2) / 6.0) * (np.abs(xs - cx) < w * 0.42)
    a = rng.uniform(15, 20)
    if closed:
        sag = rng.uniform(0.004, 0.012)
        lid = cy + 2 + sag * (xs - cx) ** 2
        dark = np.exp(-((ys - lid) ** 2) / rng.uniform(1.0, 2.5)) * (np.abs(xs - cx) < a)
        img -= rng.uniform(60, 95) * dark
    else:
        b = rng.uniform(6.5, 9.5)
        inside = ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0
        img = np.where(inside, np.minimum(skin + 45, 240), img)
        ix = cx + rng.uniform(-3, 3)
        r = rng.uniform(5.5, 7.5)
        iris = ((xs - ix) ** 2 + (ys - cy) ** 2 <= r * r) & inside
        img = np.where(iris, rng.uniform(40, 90), img)
        pupil = ((xs - ix) ** 2 + (ys - cy) ** 2 <= (0.45 * r) ** 2) & inside
        img = np.where(pupil, 15.0, img)
        rim = np.abs(((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 - 1.0) < 0.18
        img = np.where(rim & (ys < cy), img - 60, img)
    img = _box_blur(img, 1) + rng.normal(0, 3.0, img.shape)
    return GrayFrame(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))


def synthetic_eye_set(n_open: int, n_closed: int, seed: int = 0) -> Tuple[List[GrayFrame], List[int]]:
    """Deterministic labelled patches; label +1 is open, -1 is closed."""
    rng = np.random.default_rng(seed)
    patches, labels = [], []
    for i in range(n_open + n_closed):
        closed = i % 2 == 1 if i < 2 * min(n_open, n_closed) else n_closed > n_open
        patches.append(synthetic_eye_patch(closed, rng))
        labels.append(-1 if closed else 1)
    return patches, labels
