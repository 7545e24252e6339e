"""Grayscale frames and the pixel-level transforms used by the pipeline.

Frames are 8-bit single-channel images backed by a ``(height, width)``
``uint8`` array.  Every transform here is a pure function: inputs are never
modified and no module state is kept.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np


class ImageError(ValueError):
    """Raised for malformed image data or invalid transform arguments."""


@dataclass(frozen=True)
class GrayFrame:
    """8-bit grayscale image with an optional timestamp in seconds."""

    pixels: np.ndarray
    timestamp: Optional[float] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError(f"frame must be a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.floating) and not np.all(np.isfinite(px)):
                raise ImageError("frame contains non-finite values")
            if px.min() < 0 or px.max() > 255:
                raise ImageError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def with_timestamp(self, timestamp: Optional[float]) -> "GrayFrame":
        return GrayFrame(self.pixels, timestamp)

    def crop(self, rect: "RectF") -> "GrayFrame":
        """Integer crop covering ``rect``, clipped to the frame."""
        x0, y0, x1, y1 = rect.clip_bounds(self.width, self.height)
        if x1 <= x0 or y1 <= y0:
            raise ImageError(f"crop {rect} does not intersect the {self.width}x{self.height} frame")
        return GrayFrame(self.pixels[y0:y1, x0:x1], self.timestamp)


@dataclass(frozen=True)
class RectF:
    """Axis-aligned rectangle; ``x``, ``y`` is the top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ImageError(f"rectangle needs positive size, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "RectF":
        return cls(x1, y1, x2 - x1, y2 - y1)

    def corners(self) -> np.ndarray:
        """The four corners, clockwise from top-left, as a (4, 2) array."""
        return np.array(
            [[self.x, self.y], [self.x2, self.y], [self.x2, self.y2], [self.x, self.y2]],
            dtype=np.float64,
        )

    def scaled(self, k: float) -> "RectF":
        return RectF(self.x * k, self.y * k, self.w * k, self.h * k)

    def shifted(self, dx: float, dy: float) -> "RectF":
        return RectF(self.x + dx, self.y + dy, self.w, self.h)

    def upper_half(self) -> "RectF":
        return RectF(self.x, self.y, self.w, self.h / 2.0)

    def iou(self, other: "RectF") -> float:
        ix = min(self.x2, other.x2) - max(self.x, other.x)
        iy = min(self.y2, other.y2) - max(self.y, other.y)
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        # x2 - x can exceed w by an ulp, so clamp
        return min(1.0, inter / (self.area + other.area - inter))

    def contains(self, other: "RectF", tol: float = 1e-9) -> bool:
        return (
            other.x >= self.x - tol
            and other.y >= self.y - tol
            and other.x2 <= self.x2 + tol
            and other.y2 <= self.y2 + tol
        )

    def clip_bounds(self, width: int, height: int) -> Tuple[int, int, int, int]:
        """Integer pixel bounds ``(x0, y0, x1, y1)`` covering the rect, clipped."""
        x0 = max(0, int(math.floor(self.x)))
        y0 = max(0, int(math.floor(self.y)))
        x1 = min(width, int(math.ceil(self.x2)))
        y1 = min(height, int(math.ceil(self.y2)))
        return x0, y0, x1, y1

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def bounding_rect(points: np.ndarray) -> RectF:
    pts = np.asarray(points, dtype=np.float64)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return RectF.from_corners(float(x0), float(y0), float(x1), float(y1))


# --------------------------------------------------------------------------
# PGM I/O

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def load_pgm(data: bytes) -> GrayFrame:
    """Decode a binary ``P5`` PGM with ``maxval <= 255``."""
    if not data:
        raise ImageError("PGM parse error at offset 0: empty input")
    tokens = []
    pos = 0
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ImageError(f"PGM parse error at offset {pos}: truncated header")
        tokens.append((m.group(1), m.start(1)))
        pos = m.end()
    magic, _ = tokens[0]
    if magic != b"P5":
        raise ImageError(f"PGM parse error at offset 0: expected magic 'P5', got {magic[:8]!r}")
    values = []
    for tok, off in tokens[1:]:
        if not tok.isdigit():
            raise ImageError(f"PGM parse error at offset {off}: expected an integer, got {tok[:16]!r}")
        values.append(int(tok))
    width, height, maxval = values
    if width <= 0 or height <= 0:
        raise ImageError(f"PGM parse error at offset {tokens[1][1]}: zero dimension {width}x{height}")
    if maxval <= 0 or maxval > 255:
        raise ImageError(f"PGM parse error at offset {tokens[3][1]}: unsupported maxval {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageError(f"PGM parse error at offset {pos}: missing whitespace after header")
    pos += 1
    need = width * height
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise ImageError(
            f"PGM parse error at offset {pos + len(payload)}: truncated payload, "
            f"expected {need} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if pixels.max(initial=0) > maxval:
        raise ImageError(f"PGM parse error at offset {pos}: sample exceeds maxval {maxval}")
    return GrayFrame(pixels.copy())


def save_pgm(frame: GrayFrame) -> bytes:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.pixels.tobytes()


def read_pgm(path) -> GrayFrame:
    with open(path, "rb") as fh:
        return load_pgm(fh.read())


def write_pgm(path, frame: GrayFrame) -> None:
    with open(path, "wb") as fh:
        fh.write(save_pgm(frame))


# --------------------------------------------------------------------------
# Integral images


@dataclass(frozen=True)
class IntegralImage:
    """Inclusive prefix sums: ``sums[y, x]`` is the total over ``[0..y] x [0..x]``."""

    sums: np.ndarray

    @property
    def width(self) -> int:
        return self.sums.shape[1]

    @property
    def height(self) -> int:
        return self.sums.shape[0]

    def padded(self) -> np.ndarray:
        """Sums with a leading zero row and column, shape ``(h + 1, w + 1)``."""
        out = np.zeros((self.height + 1, self.width + 1), dtype=self.sums.dtype)
        out[1:, 1:] = self.sums
        return out


def integral(frame: GrayFrame, squared: bool = False) -> IntegralImage:
    """Integral image of ``frame`` (or of its squared intensities)."""
    px = frame.pixels.astype(np.int64)
    if squared:
        px = px * px
    return IntegralImage(px.cumsum(axis=0).cumsum(axis=1))


def rect_sum(ii: IntegralImage, r: RectF) -> int:
    """Exact pixel total inside an integer-aligned ``r``."""
    vals = (r.x, r.y, r.w, r.h)
    if any(float(v) != int(v) for v in vals):
        raise ImageError(f"rect_sum needs integer coordinates, got {r}")
    x, y, w, h = (int(v) for v in vals)
    if x < 0 or y < 0 or x + w > ii.width or y + h > ii.height:
        raise ImageError(f"rect {r} lies outside the {ii.width}x{ii.height} integral image")
    s = ii.sums
    total = int(s[y + h - 1, x + w - 1])
    if x > 0:
        total -= int(s[y + h - 1, x - 1])
    if y > 0:
        total -= int(s[y - 1, x + w - 1])
    if x > 0 and y > 0:
        total += int(s[y - 1, x - 1])
    return total


# --------------------------------------------------------------------------
# Resampling


def _round_to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def cubic_weight(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _cubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    # row i holds the weights mapping the input axis onto output sample i
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(np.int64)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for off in (-1, 0, 1, 2):
        idx = base + off
        w = cubic_weight(centers - idx)
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), w)
    return mat


def resize_bicubic(frame: GrayFrame, out_w: int, out_h: int) -> GrayFrame:
    """Catmull-Rom bicubic resize with clamped borders."""
    if out_w < 1 or out_h < 1:
        raise ImageError(f"output size must be positive, got {out_w}x{out_h}")
    if (out_w, out_h) == (frame.width, frame.height):
        return frame
    wy = _cubic_matrix(frame.height, out_h)
    wx = _cubic_matrix(frame.width, out_w)
    out = wy @ frame.pixels.astype(np.float64) @ wx.T
    return GrayFrame(_round_to_u8(out), frame.timestamp)


def downsample(frame: GrayFrame, k: int) -> GrayFrame:
    """Shrink by an integer factor to ``floor(w / k) x floor(h / k)``."""
    if k < 1 or int(k) != k:
        raise ImageError(f"scale factor must be a positive integer, got {k}")
    k = int(k)
    if k == 1:
        return frame
    return resize_bicubic(frame, max(1, frame.width // k), max(1, frame.height // k))


def _bilinear(src: np.ndarray, xs: np.ndarray, ys: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Sample ``src`` at float coordinates; points outside the image give 0."""
    h, w = src.shape
    inside = (xs >= -tol) & (xs <= w - 1 + tol) & (ys >= -tol) & (ys <= h - 1 + tol)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    img = src.astype(np.float64)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.where(inside, out, 0.0)


# --------------------------------------------------------------------------
# Bi-histogram equalization


def bhe(frame: GrayFrame) -> GrayFrame:
    """Mean-preserving bi-histogram equalization.

    Pixels at or below the mean are equalized onto ``[min, floor(mean)]`` and
    the rest onto ``[floor(mean) + 1, max]``, each with its own cumulative
    histogram.
    """
    px = frame.pixels
    lo, hi = int(px.min()), int(px.max())
    if lo == hi:
        return frame
    mean = float(px.mean())
    split = int(math.floor(mean))
    hist = np.bincount(px.ravel(), minlength=256).astype(np.float64)
    lut = np.arange(256, dtype=np.float64)

    lower = hist[: split + 1]
    if lower.sum() > 0:
        cdf = np.cumsum(lower) / lower.sum()
        lut[: split + 1] = lo + (split - lo) * cdf
    upper = hist[split + 1:]
    if upper.sum() > 0:
        cdf = np.cumsum(upper) / upper.sum()
        start = split + 1
        lut[split + 1:] = start + (hi - start) * cdf

    lut_u8 = _round_to_u8(lut)
    return GrayFrame(lut_u8[px], frame.timestamp)


# --------------------------------------------------------------------------
# Geometric warps


def rotation_matrix(theta: float) -> np.ndarray:
    t = math.radians(theta)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def rotate_points(points: np.ndarray, theta: float, width: int, height: int) -> np.ndarray:
    """Map output-frame points of ``rotate_affine`` back into source coordinates."""
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    pts = np.asarray(points, dtype=np.float64)
    return (pts - center) @ rotation_matrix(theta).T + center


def rotate_affine(frame: GrayFrame, theta: float) -> GrayFrame:
    """Rotate about the image center by ``theta`` degrees.

    Each output pixel ``B`` samples the source at ``A = R(theta) B``
    (coordinates relative to the center), bilinearly, with zero fill.
    """
    if abs(theta) > 90:
        raise ImageError(f"rotation angle must satisfy |theta| <= 90, got {theta}")
    if theta == 0:
        return frame
    h, w = frame.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = rotate_points(np.stack([xs.ravel(), ys.ravel()], axis=1), theta, w, h)
    out = _bilinear(frame.pixels, pts[:, 0], pts[:, 1]).reshape(h, w)
    return GrayFrame(_round_to_u8(out), frame.timestamp)


@dataclass(frozen=True)
class Homography:
    """Projective map ``x' = (a0 x + a1 y + a2) / (a3 x + a4 y + 1)``,
    ``y' = (a5 x + a6 y + a7) / (a3 x + a4 y + 1)``."""

    coeffs: Tuple[float, ...] = field(default=(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0))

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if len(c) != 8:
            raise ImageError(f"homography needs 8 coefficients, got {len(c)}")
        object.__setattr__(self, "coeffs", c)
        if abs(np.linalg.det(self.matrix)) <= 1e-12:
            raise ImageError("homography is singular")

    @property
    def matrix(self) -> np.ndarray:
        a0, a1, a2, a3, a4, a5, a6, a7 = self.coeffs
        return np.array([[a0, a1, a2], [a5, a6, a7], [a3, a4, 1.0]])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Homography":
        m = np.asarray(m, dtype=np.float64)
        if abs(m[2, 2]) < 1e-15:
            raise ImageError("homography matrix cannot be normalized (m[2, 2] == 0)")
        m = m / m[2, 2]
        return cls((m[0, 0], m[0, 1], m[0, 2], m[2, 0], m[2, 1], m[1, 0], m[1, 1], m[1, 2]))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        return cls((1.0, 0.0, dx, 0.0, 0.0, 0.0, 1.0, dy))

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.matrix))

    def compose(self, other: "Homography") -> "Homography":
        """``self`` applied after ``other``."""
        return Homography.from_matrix(self.matrix @ other.matrix)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        hom = np.column_stack([pts, np.ones(len(pts))]) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]


def estimate_homography(src: Sequence, dst: Sequence) -> Homography:
    """Linear 8-unknown solve for the map taking ``src`` points onto ``dst``.

    Exact for four correspondences, least squares for more.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ImageError(f"point arrays must both be (n, 2), got {src.shape} and {dst.shape}")
    n = len(src)
    if n < 4:
        raise ImageError(f"need at least 4 correspondences, got {n}")
    if n == 4:
        for i in range(4):
            a, b, c = (src[j] for j in range(4) if j != i)
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            scale = max(np.ptp(src[:, 0]), np.ptp(src[:, 1]), 1.0) ** 2
            if abs(cross) <= 1e-12 * scale:
                raise ImageError("degenerate configuration: three source points are collinear")
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    zero, one = np.zeros(n), np.ones(n)
    # unknown order: a0..a7
    rows_u = np.column_stack([x, y, one, -x * u, -y * u, zero, zero, zero])
    rows_v = np.column_stack([zero, zero, zero, -x * v, -y * v, x, y, one])
    a = np.vstack([rows_u, rows_v])
    b = np.concatenate([u, v])
    coeffs, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < 8 or sv[-1] <= 1e-12 * sv[0]:
        raise ImageError("degenerate configuration: singular homography system")
    return Homography(tuple(coeffs))


def warp_perspective(frame: GrayFrame, h: Homography) -> GrayFrame:
    """Warp so that ``out(h(p)) = frame(p)``; bilinear, zero fill."""
    hh, ww = frame.shape
    ys, xs = np.mgrid[0:hh, 0:ww].astype(np.float64)
    src = h.inverse().apply(np.stack([xs.ravel(), ys.ravel()], axis=1))
    out = _bilinear(frame.pixels, src[:, 0], src[:, 1]).reshape(hh, ww)
    return GrayFrame(_round_to_u8(out), frame.timestamp)
