"""Compiled window scanner for one cascade scale."""
import math
import os

import numpy as np
from numba import config, njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # probing TBB first warns on older installs; OpenMP is also thread-safe
    config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


@njit(cache=True, inline="always")
def _box(ii, x, y, w, h):
    return ii[y + h, x + w] - ii[y, x + w] - ii[y + h, x] + ii[y, x]


@njit(cache=True, parallel=True)
def scan_scale(
    ii, sq, xs, ys, inner,
    stage_end, stage_thr, rects, weights, n_rects, thr, left, right,
):
    """Stage depth reached by every window at top-left ``(xs[j], ys[i])``.

    ``ii``/``sq`` are zero-padded integral images.  A depth equal to the
    number of stages means the window passed the whole cascade.  Also returns
    the per-window count of weak classifiers evaluated.
    """
    ny, nx = ys.shape[0], xs.shape[0]
    n_stages = stage_end.shape[0]
    depth = np.zeros((ny, nx), dtype=np.int64)
    work = np.zeros((ny, nx), dtype=np.int64)
    ix, iy, iw, ih = inner[0], inner[1], inner[2], inner[3]
    area = float(iw * ih)
    for a in prange(ny):
        y = ys[a]
        for b in range(nx):
            x = xs[b]
            s = float(_box(ii, x + ix, y + iy, iw, ih))
            q = float(_box(sq, x + ix, y + iy, iw, ih))
            var = q / area - (s / area) * (s / area)
            sigma = math.sqrt(var) if var > 1.0 else 1.0
            inv = 1.0 / (area * sigma)
            start = 0
            d = n_stages
            used = 0
            for st in range(n_stages):
                total = 0.0
                for k in range(start, stage_end[st]):
                    raw = 0.0
                    for r in range(n_rects[k]):
                        raw += weights[k, r] * _box(
                            ii, x + rects[k, r, 0], y + rects[k, r, 1], rects[k, r, 2], rects[k, r, 3]
                        )
                    if raw * inv < thr[k]:
                        total += left[k]
                    else:
                        total += right[k]
                used += stage_end[st] - start
                start = stage_end[st]
                if total < stage_thr[st]:
                    d = st
                    break
            depth[a, b] = d
            work[a, b] = used
    return depth, work
