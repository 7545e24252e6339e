import numpy as np
import pytest

from drowsy import eye
from drowsy.datasets import bundled_sequence, load_portrait, load_stock_cascade, synthetic_eye_set
from drowsy.state import svm_train


@pytest.fixture(scope="session")
def cascade():
    return load_stock_cascade()


@pytest.fixture(scope="session")
def portrait():
    return load_portrait()


@pytest.fixture(scope="session")
def sequence():
    return bundled_sequence()


@pytest.fixture(scope="session")
def eye_patches():
    return synthetic_eye_set(30, 30, seed=3)


@pytest.fixture(scope="session")
def model_files(tmp_path_factory, eye_patches):
    """Day and night eye models plus matching SVMs, written to disk."""
    patches, labels = eye_patches
    d = tmp_path_factory.mktemp("models")
    pca = eye.pca_train(patches, 20)
    lbp = eye.lbp_train(patches, 20)
    lbp = eye.EigenModel(lbp.mean, lbp.basis, lbp.feature_kind, threshold=eye.calibrate_threshold(lbp, patches))
    paths = {}
    for name, m in (("eye", pca), ("lbp", lbp)):
        m.save(d / f"{name}.json")
        paths[name] = str(d / f"{name}.json")
        feats = [eye.patch_features(m, p) for p in patches]
        svm = svm_train(list(zip(feats, labels)), iterations=500, feature_kind=m.feature_kind)
        svm.save(d / f"{name}_svm.json")
        paths[f"{name}_svm"] = str(d / f"{name}_svm.json")
    return paths


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sweep_rows(cascade, sequence):
    import time

    from drowsy.evaluation import sweep_sf

    frames, truth = sequence
    t0 = time.perf_counter()
    rows = sweep_sf(cascade, frames, truth, (1, 2, 4, 6, 8, 10), repeats=2)
    return rows, time.perf_counter() - t0


def _acceptance_log(config):
    if not hasattr(config, "_acceptance_lines"):
        config._acceptance_lines = []
    return config._acceptance_lines


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` prints and remembers a criterion verdict."""
    lines = _acceptance_log(request.config)

    def record(n, ok, detail=""):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
