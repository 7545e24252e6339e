import json

import numpy as np
import pytest

from drowsy import eye
from drowsy.datasets import PORTRAIT_FACE
from drowsy.imgcore import GrayFrame, RectF, write_pgm
from drowsy.pipeline import (
    RAW_HEADER,
    FrameRecord,
    ModeSelector,
    PipelineConfig,
    PipelineError,
    ingest,
    load_models,
    process,
    write_raw_stream,
)
from drowsy.state import CLOSED, OPEN, UNDETECTED, SvmModel


def _const(v, shape=(48, 64)):
    return GrayFrame(np.full(shape, v, np.uint8))


def test_ingest_pgm_directory(tmp_path):
    for i in (2, 0, 1):
        write_pgm(tmp_path / f"f{i:03d}.pgm", _const(10 * i))
    (tmp_path / "notes.txt").write_text("ignored")
    frames = ingest(tmp_path, fps=30)
    assert [f.timestamp for f in frames] == [0, 1 / 30, 2 / 30]
    assert [int(f.pixels[0, 0]) for f in frames] == [0, 10, 20]


def test_ingest_errors(tmp_path):
    with pytest.raises(PipelineError, match="no .pgm"):
        ingest(tmp_path)
    write_pgm(tmp_path / "a.pgm", _const(1))
    write_pgm(tmp_path / "b.pgm", _const(1, (10, 10)))
    with pytest.raises(PipelineError, match="mixed"):
        ingest(tmp_path)
    (tmp_path / "b.pgm").write_bytes(b"P5\n4 4\n255\n")
    with pytest.raises(PipelineError, match="b.pgm"):
        ingest(tmp_path)
    with pytest.raises(PipelineError, match="no such"):
        ingest(tmp_path / "missing")


def test_raw_stream(tmp_path):
    rng = np.random.default_rng(0)
    frames = [GrayFrame(rng.integers(0, 256, (480, 640)).astype(np.uint8)) for _ in range(10)]
    path = tmp_path / "clip.luma"
    write_raw_stream(path, frames, 25.0)
    assert path.stat().st_size == RAW_HEADER.size + 10 * 640 * 480
    back = ingest(path, fps=30)
    assert len(back) == 10 and back[3].timestamp == 3 / 25
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(frames, back))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(PipelineError, match="whole number"):
        ingest(path)
    path.write_bytes(b"JUNK" + bytes(40))
    with pytest.raises(PipelineError, match="magic"):
        ingest(path)


def test_mode_selector_basics():
    assert ModeSelector()(_const(200)) == "day"
    assert ModeSelector()(_const(20)) == "night"


def test_mode_ramp_switches_once():
    sel = ModeSelector()
    # a noisy descending ramp through the threshold
    rng = np.random.default_rng(1)
    levels = np.clip(np.linspace(120, 10, 200) + rng.normal(0, 4, 200), 0, 255)
    modes = [sel(_const(int(v))) for v in levels]
    switches = sum(a != b for a, b in zip(modes, modes[1:]))
    assert modes[0] == "day" and modes[-1] == "night" and switches == 1


def test_config_validation():
    with pytest.raises(PipelineError):
        PipelineConfig(mode="dusk")
    with pytest.raises(PipelineError):
        PipelineConfig(alarm_threshold=1.0)
    with pytest.raises(PipelineError):
        PipelineConfig(k=0)


def test_record_invariants():
    with pytest.raises(PipelineError):
        FrameRecord(0, 0.0, "day", face=None, eye=RectF(0, 0, 1, 1))
    with pytest.raises(PipelineError):
        FrameRecord(0, 0.0, "day", face=RectF(0, 0, 1, 1), eye_state=OPEN)
    line = json.loads(FrameRecord(3, 0.1, "night").to_json())
    assert line == {
        "frame": 3, "t": 0.1, "mode": "night", "face": None, "pose": None,
        "eye": None, "eye_error": None, "eye_state": UNDETECTED, "tracker": "searching",
    }


def test_no_faces_stream():
    n = 30 * 60 * 4
    frames = (_const(128).with_timestamp(i / 30) for i in range(n))
    res = process(PipelineConfig(mode="day"), frames, lambda s, p: None, lambda m, r: None, lambda m, w: OPEN)
    assert len(res.records) == n and all(r.face is None and r.tracker == "searching" for r in res.records)
    assert res.windows and not any(w.valid for w in res.windows) and res.events == []


def test_blank_frames_through_real_detector(model_files):
    cfg = PipelineConfig(mode="day", eye_model_path=model_files["eye"], svm_model_path=model_files["eye_svm"])
    res = process(cfg, [_const(90, (120, 160))] * 3)
    assert [r.face for r in res.records] == [None] * 3 and [r.t for r in res.records] == [0, 1 / 30, 2 / 30]


def test_model_mismatch_is_a_startup_error(model_files, tmp_path):
    with pytest.raises(PipelineError, match="block_lbp"):
        load_models(PipelineConfig(mode="day", eye_model_path=model_files["eye"], svm_model_path=model_files["lbp_svm"]))
    short = SvmModel(np.ones(3), 0.0, eye.RAW_PIXELS)
    short.save(tmp_path / "short.json")
    with pytest.raises(PipelineError, match="K="):
        load_models(PipelineConfig(mode="day", eye_model_path=model_files["eye"], svm_model_path=str(tmp_path / "short.json")))
    with pytest.raises(PipelineError, match="required"):
        load_models(PipelineConfig(mode="night"))
    with pytest.raises(PipelineError, match="must be block_lbp"):
        load_models(PipelineConfig(mode="night", lbp_model_path=model_files["eye"]))
    m = load_models(
        PipelineConfig(
            mode="auto",
            eye_model_path=model_files["eye"],
            svm_model_path=model_files["eye_svm"],
            lbp_model_path=model_files["lbp"],
            lbp_svm_model_path=model_files["lbp_svm"],
        )
    )
    assert m.lbp_threshold == eye.EigenModel.load(model_files["lbp"]).threshold


def test_portrait_track_is_stable(portrait):
    res = process(PipelineConfig(mode="day"), [portrait] * 100, eye_scanner=lambda m, r: None, classifier=lambda m, w: OPEN)
    corners = np.array([[r.face.x, r.face.y, r.face.x2, r.face.y2] for r in res.records])
    assert all(r.tracker == "tracked" for r in res.records)
    jitter = corners[10:].max(axis=0) - corners[10:].min(axis=0)
    assert jitter.max() <= 2.0
    assert res.records[-1].face.iou(PORTRAIT_FACE) > 0.8


def test_full_chain_on_portrait(portrait, model_files):
    cfg = PipelineConfig(mode="day", eye_model_path=model_files["eye"], svm_model_path=model_files["eye_svm"])
    res = process(cfg, [portrait, portrait])
    for r in res.records:
        assert r.face is not None and r.eye is not None and r.eye_state in (OPEN, CLOSED)
        # the eye is reported inside the upper half of the face
        roi = RectF(r.face.x - 5, r.face.y - 5, r.face.w + 10, r.face.h / 2 + 10)
        assert roi.contains(r.eye)


def test_night_mode_on_dark_portrait(portrait, model_files):
    dark = GrayFrame((portrait.pixels.astype(np.float64) * 0.35).astype(np.uint8))
    cfg = PipelineConfig(
        mode="auto",
        eye_model_path=model_files["eye"],
        svm_model_path=model_files["eye_svm"],
        lbp_model_path=model_files["lbp"],
        lbp_svm_model_path=model_files["lbp_svm"],
        lbp_threshold=1e9,
    )
    res = process(cfg, [dark])
    (r,) = res.records
    assert r.mode == "night" and r.face is not None and r.eye is not None
