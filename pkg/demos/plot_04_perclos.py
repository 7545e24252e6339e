"""
PERCLOS and the drowsiness alarm
================================

A 10 minute stream of eye states at 30 fps is summarized over 3 minute
windows that advance by 1 minute.  A window whose closed fraction exceeds
0.15 raises the alarm; windows with too few detected frames hold the state.
"""

import numpy as np

from drowsy.state import CLOSED, OPEN, UNDETECTED, EyeStateSample, alarm_edges, events_jsonl, perclos_csv, perclos_windows

rng = np.random.default_rng(3)
fps = 30.0
n = int(10 * 60 * fps)
t = np.arange(n) / fps

# %%
# Alert for the first 4 minutes (about 5% closed), then drowsy (about 30%
# closed), with a minute of missing face around t = 7 min.

p_closed = np.where(t < 240, 0.05, 0.30)
states = np.where(rng.random(n) < p_closed, CLOSED, OPEN).astype(object)
states[(t >= 400) & (t < 460)] = UNDETECTED
samples = [EyeStateSample(float(ti), s) for ti, s in zip(t, states)]

windows = perclos_windows(samples)
print(perclos_csv(windows))

# %%
# Alarm transitions as JSON lines.

print(events_jsonl(alarm_edges(windows)))
