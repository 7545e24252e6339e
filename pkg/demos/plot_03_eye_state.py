"""
Eye localization and open/closed classification
===============================================

Eigen-eye models (raw pixels for day, block LBP histograms for night) are
trained on synthetic 50x40 eye patches.  The eye is the window with the
smallest reconstruction error, and a linear SVM on the projection weights
decides whether it is open.
"""

import numpy as np

from drowsy import eye
from drowsy.datasets import synthetic_eye_set
from drowsy.imgcore import GrayFrame
from drowsy.state import svm_predict, svm_train

train, labels = synthetic_eye_set(40, 40, seed=1)
test, test_labels = synthetic_eye_set(20, 20, seed=2)

# %%
# Day model: PCA on pixels.  The basis is orthonormal.

pca = eye.pca_train(train, 20)
print("basis orthonormal:", np.allclose(pca.basis @ pca.basis.T, np.eye(20)))

# %%
# Localize a known patch pasted into a 200x70 search region.

rng = np.random.default_rng(5)
roi = rng.integers(60, 200, (70, 200)).astype(np.uint8)
roi[30:70, 90:140] = test[0].pixels
hit = eye.scan_eye_pca(pca, GrayFrame(roi))
print(f"best window at ({hit.rect.x:.0f}, {hit.rect.y:.0f}), error {hit.error:.1f}")

# %%
# SVM on the projection weights.  Labels are +1 open and -1 closed.

feats = [eye.patch_features(pca, p) for p in train]
svm = svm_train(list(zip(feats, [1 if lab == 1 else -1 for lab in labels])))
pred = [svm_predict(svm, eye.patch_features(pca, p)) for p in test]
truth = ["open" if lab == 1 else "closed" for lab in test_labels]
print(f"day held-out accuracy: {np.mean([a == b for a, b in zip(pred, truth)]):.3f}")

# %%
# Night model: the same pipeline on block LBP descriptors, with a
# reconstruction-error gate calibrated on the training patches.

lbp = eye.lbp_train(train, 20)
thr = eye.calibrate_threshold(lbp, train)
feats = [eye.patch_features(lbp, p) for p in train]
svm = svm_train(list(zip(feats, [1 if lab == 1 else -1 for lab in labels])), feature_kind=eye.BLOCK_LBP)
pred = [svm_predict(svm, eye.patch_features(lbp, p)) for p in test]
print(f"night gate {thr:.1f}, held-out accuracy: {np.mean([a == b for a, b in zip(pred, truth)]):.3f}")
