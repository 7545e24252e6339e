"""
Kalman tracking of the face box
===============================

A face box drifting at constant velocity is observed with pixel noise.  The
constant-velocity filter smooths the corners, and once a track is live the
detector only searches the region of tracking (twice the predicted box).
"""

import numpy as np

from drowsy.datasets import PORTRAIT_FACE, load_portrait, load_stock_cascade, shift_frame
from drowsy.detect import detect_face_downsampled
from drowsy.imgcore import RectF
from drowsy.track import KalmanConfig, kf_correct, kf_init, kf_predict, rot_from_state, track_step

rng = np.random.default_rng(0)
cfg = KalmanConfig()

# %%
# Synthetic measurements: the box moves 2 px right and 1 px down per frame.

truth = [RectF(100 + 2 * i, 80 + i, 120, 120) for i in range(60)]
meas = [RectF(r.x + rng.normal(0, 3), r.y + rng.normal(0, 3), r.w + rng.normal(0, 3), r.h + rng.normal(0, 3)) for r in truth]

s = kf_init(meas[0], cfg)
raw_err, kf_err = [], []
for z, t in zip(meas[1:], truth[1:]):
    s = kf_correct(kf_predict(s, cfg), z, cfg)
    raw_err.append(abs(z.x - t.x))
    kf_err.append(abs(s.rect.x - t.x))
print(f"mean |x error| raw {np.mean(raw_err[20:]):.2f} px, filtered {np.mean(kf_err[20:]):.2f} px")

# %%
# The region of tracking around the predicted box.

pred = kf_predict(s, cfg)
print("predicted:", pred.rect)
print("ROT:", rot_from_state(pred, 640, 480))

# %%
# The real detector inside the tracking loop on a portrait that shifts
# between frames.


def detector(sub, prior):
    return detect_face_downsampled(model, sub, 6)


model = load_stock_cascade()
portrait = load_portrait()
state = None
x0 = None
for dx in (0, 4, 8, 12, 16):
    state, det = track_step(state, shift_frame(portrait, dx, 0), detector, cfg)
    x0 = state.rect.x if x0 is None else x0
    print(f"shift {dx:2d}: track moved {state.rect.x - x0:5.1f} px, detector box x={det.report_rect.x:.1f}")
print("final IoU with the labelled face:", round(state.rect.iou(PORTRAIT_FACE.shifted(16, 0)), 3))
