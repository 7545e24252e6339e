"""
Scale factor sweep and evaluation
=================================

Detection-only timing and accuracy across downsampling factors on the
bundled labelled sequence, then a full pipeline run scored against the
ground truth.
"""

import json

from drowsy.datasets import bundled_sequence, load_stock_cascade
from drowsy.evaluation import evaluate, sweep_sf
from drowsy.pipeline import PipelineConfig, process
from drowsy.state import OPEN

model = load_stock_cascade()
frames, truth = bundled_sequence()
print(f"{len(frames)} frames, {sum(t['face_present'] for t in truth)} with a face")

# %%
# Larger k shrinks the search roughly quadratically.

for row in sweep_sf(model, frames, truth, k_values=(2, 4, 6, 10)):
    print(f"k={row.k:2d}  {row.ms_per_frame:7.1f} ms/frame  TPR {row.tpr:.2f}  FPR {row.fpr:.2f}  AUC {row.auc:.2f}")

# %%
# Face-level scoring of a pipeline run.  Eye parts are stubbed so no eye
# model is needed.

res = process(PipelineConfig(mode="day"), frames, eye_scanner=lambda m, r: None, classifier=lambda m, w: OPEN)
records = [json.loads(r.to_json()) for r in res.records]
report = evaluate(records, truth)
print("face:", report["face"])
