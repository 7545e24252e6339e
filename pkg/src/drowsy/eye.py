"""Eye localization inside the face ROI.

Day mode scores 50x40 windows by their reconstruction error in an eigen-eye
subspace.  Night mode does the same on block LBP histograms, which tolerate
the uneven contrast of NIR illumination.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .imgcore import GrayFrame, RectF, resize_bicubic

PATCH_W, PATCH_H = 50, 40
ROI_W, ROI_H = 200, 70
STEP_X, STEP_Y = 45, 36  # 90% of the window: 10% overlap
BLOCK_W, BLOCK_H = 5, 4
LBP_BINS = 16
DEFAULT_K = 40
MODEL_VERSION = 1

RAW_PIXELS = "raw_pixels"
BLOCK_LBP = "block_lbp"


class EyeModelError(ValueError):
    pass


@dataclass(frozen=True)
class EigenModel:
    """Mean vector and orthonormal basis (rows of ``basis``) of a PCA subspace."""

    mean: np.ndarray
    basis: np.ndarray  # (K, dim)
    feature_kind: str = RAW_PIXELS
    patch_w: int = PATCH_W
    patch_h: int = PATCH_H
    eigenvalues: Optional[np.ndarray] = None
    threshold: Optional[float] = None  # residual acceptance bound (night mode)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    def to_json(self) -> str:
        d = {
            "version": MODEL_VERSION,
            "feature_kind": self.feature_kind,
            "patch_w": self.patch_w,
            "patch_h": self.patch_h,
            "dim": self.dim,
            "K": self.k,
            "mean": self.mean.tolist(),
            "basis": self.basis.tolist(),
        }
        if self.threshold is not None:
            d["threshold"] = self.threshold
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "EigenModel":
        try:
            d = json.loads(text)
            if d.get("version") != MODEL_VERSION:
                raise EyeModelError(f"unsupported eye model version {d.get('version')!r}")
            mean = np.asarray(d["mean"], dtype=np.float64)
            basis = np.asarray(d["basis"], dtype=np.float64).reshape(int(d["K"]), int(d["dim"]))
            kind = d["feature_kind"]
            pw, ph = int(d["patch_w"]), int(d["patch_h"])
            thr = None if d.get("threshold") is None else float(d["threshold"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, EyeModelError):
                raise
            raise EyeModelError(f"malformed eye model: {exc}") from None
        if mean.shape[0] != int(d["dim"]):
            raise EyeModelError("eye model mean length does not match dim")
        if kind not in (RAW_PIXELS, BLOCK_LBP):
            raise EyeModelError(f"unknown feature_kind {kind!r}")
        return cls(mean, basis, kind, pw, ph, threshold=thr)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "EigenModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class EyeHit:
    rect: RectF  # ROI coordinates
    error: float
    weights: np.ndarray


# --------------------------------------------------------------------------
# PCA


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def pca_fit(vectors: np.ndarray, k: int, feature_kind: str = RAW_PIXELS, patch_w: int = PATCH_W, patch_h: int = PATCH_H) -> EigenModel:
    """Eigen-decomposition through the small ``A^T A`` Gram matrix.

    ``vectors`` holds one training vector per row.  The eigenvectors ``v`` of
    the ``P x P`` Gram matrix are lifted to the data space as ``A v`` and
    normalized.
    """
    data = np.asarray(vectors, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise EyeModelError("need at least 2 training vectors")
    p = data.shape[0]
    if not 1 <= k <= p - 1:
        raise EyeModelError(f"K must lie in [1, {p - 1}] for {p} training vectors, got {k}")
    mean = data.mean(axis=0)
    A = (data - mean).T  # (dim, P)
    gram = A.T @ A
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = evals[0]
    if top <= 1e-9 * max(1.0, float(np.abs(A).max()) ** 2):
        raise EyeModelError("degenerate training set: all training vectors are identical")
    rank = int(np.sum(evals > top * 1e-10))
    if k > rank:
        raise EyeModelError(f"degenerate training set: only {rank} non-zero components, K={k} requested")
    basis = np.empty((k, A.shape[0]))
    for i in range(k):
        u = A @ evecs[:, i]
        basis[i] = _fix_sign(u / np.linalg.norm(u))
    return EigenModel(mean, basis, feature_kind, patch_w, patch_h, evals[:k].copy())


def _patch_vector(p: GrayFrame, w: int, h: int) -> np.ndarray:
    if p.width != w or p.height != h:
        raise EyeModelError(f"training patches must be {w}x{h}, got {p.width}x{p.height}")
    return p.pixels.astype(np.float64).ravel()


def pca_train(patches: Sequence[GrayFrame], k: int = DEFAULT_K, patch_w: int = PATCH_W, patch_h: int = PATCH_H) -> EigenModel:
    """Eigen-eye model from raw patch pixels (row-major vectors)."""
    vecs = np.array([_patch_vector(p, patch_w, patch_h) for p in patches])
    return pca_fit(vecs, k, RAW_PIXELS, patch_w, patch_h)


def project_error(model: EigenModel, vec) -> Tuple[np.ndarray, float]:
    """Subspace weights of ``vec`` and the norm of what they fail to explain."""
    v = np.asarray(vec, dtype=np.float64).ravel()
    if v.shape[0] != model.dim:
        raise EyeModelError(f"vector length {v.shape[0]} does not match model dim {model.dim}")
    phi = v - model.mean
    w = model.basis @ phi
    resid = phi - model.basis.T @ w
    return w, float(np.linalg.norm(resid))


# --------------------------------------------------------------------------
# LBP


# (row, col) offsets of neighbors 0..7: clockwise starting at the left-middle
LBP_OFFSETS = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def lbp_code(neigh) -> int:
    """8-bit LBP code of a 3x3 neighborhood (bit n set iff neighbor n >= center)."""
    a = np.asarray(neigh).reshape(3, 3).astype(np.int64)
    c = a[1, 1]
    code = 0
    for n, (dr, dc) in enumerate(LBP_OFFSETS):
        if a[1 + dr, 1 + dc] >= c:
            code |= 1 << n
    return code


def lbp_image(px: np.ndarray) -> np.ndarray:
    """LBP code of every pixel, with edge replication at the border."""
    a = np.asarray(px).astype(np.int16)
    pad = np.pad(a, 1, mode="edge")
    h, w = a.shape
    codes = np.zeros((h, w), dtype=np.uint8)
    for n, (dr, dc) in enumerate(LBP_OFFSETS):
        nb = pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        codes |= (nb >= a).astype(np.uint8) << n
    return codes


def block_lbp_descriptor(patch: GrayFrame) -> np.ndarray:
    """Concatenated 16-bin LBP histograms of the 5x4-pixel blocks, row-major."""
    if patch.width != PATCH_W or patch.height != PATCH_H:
        raise EyeModelError(f"LBP patches must be {PATCH_W}x{PATCH_H}, got {patch.width}x{patch.height}")
    return _block_hist(lbp_image(patch.pixels))


def _block_hist(codes: np.ndarray) -> np.ndarray:
    h, w = codes.shape
    nby, nbx = h // BLOCK_H, w // BLOCK_W
    rows = np.arange(h)[:, None] // BLOCK_H
    cols = np.arange(w)[None, :] // BLOCK_W
    block = rows * nbx + cols
    idx = block * LBP_BINS + codes.astype(np.int64) // (256 // LBP_BINS)
    return np.bincount(idx.ravel(), minlength=nby * nbx * LBP_BINS).astype(np.int64)


def lbp_train(patches: Sequence[GrayFrame], k: int = DEFAULT_K) -> EigenModel:
    """PCA on block LBP descriptors."""
    vecs = np.array([block_lbp_descriptor(p) for p in patches], dtype=np.float64)
    return pca_fit(vecs, k, BLOCK_LBP)


# --------------------------------------------------------------------------
# Window scanning


def _positions(size: int, win: int, step: int) -> List[int]:
    out = list(range(0, size - win + 1, step))
    if out[-1] != size - win:
        out.append(size - win)
    return out


def window_positions() -> List[Tuple[int, int]]:
    """Top-left corners of the scan windows on the resized ROI, in scan order."""
    return [(x, y) for y in _positions(ROI_H, PATCH_H, STEP_Y) for x in _positions(ROI_W, PATCH_W, STEP_X)]


def _scan(model: EigenModel, roi: GrayFrame, featurize) -> EyeHit:
    resized = resize_bicubic(roi, ROI_W, ROI_H)
    sx, sy = roi.width / ROI_W, roi.height / ROI_H
    best = None
    for x, y in window_positions():
        win = resized.pixels[y:y + PATCH_H, x:x + PATCH_W]
        w, err = project_error(model, featurize(win))
        if best is None or err < best[0]:
            best = (err, x, y, w)
    err, x, y, w = best
    rect = RectF(x * sx, y * sy, PATCH_W * sx, PATCH_H * sy)
    return EyeHit(rect, err, w)


def scan_eye_pca(model: EigenModel, roi: GrayFrame) -> EyeHit:
    """Minimum-residual eigen-eye window; rect in the ROI's own coordinates."""
    if model.feature_kind != RAW_PIXELS:
        raise EyeModelError("scan_eye_pca needs a raw_pixels model")
    return _scan(model, roi, lambda win: win.astype(np.float64).ravel())


def scan_eye_lbp(model: EigenModel, roi: GrayFrame, threshold: float) -> Optional[EyeHit]:
    """Minimum-residual block-LBP window, kept only if its error is below ``threshold``."""
    if model.feature_kind != BLOCK_LBP:
        raise EyeModelError("scan_eye_lbp needs a block_lbp model")
    hit = _scan(model, roi, lambda win: _block_hist(lbp_image(win)).astype(np.float64))
    return hit if hit.error < threshold else None


def calibrate_threshold(model: EigenModel, patches: Iterable[GrayFrame], percentile: float = 95.0) -> float:
    """Residual percentile over (typically training) patches."""
    errs = []
    for p in patches:
        vec = block_lbp_descriptor(p) if model.feature_kind == BLOCK_LBP else p.pixels.ravel()
        errs.append(project_error(model, vec)[1])
    return float(np.percentile(errs, percentile))


def patch_features(model: EigenModel, patch: GrayFrame) -> np.ndarray:
    """Subspace weights of a training-size patch, for SVM training."""
    vec = block_lbp_descriptor(patch) if model.feature_kind == BLOCK_LBP else _patch_vector(patch, model.patch_w, model.patch_h)
    return project_error(model, vec)[0]
