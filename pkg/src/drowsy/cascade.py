"""Boosted Haar cascades: XML parsing, serialization and per-window evaluation.

Two dialects of the cascade XML interchange format are read.  The old-style
dialect is the primary one; the elements consumed are::

    <opencv_storage>
      <NAME type_id="opencv-haar-classifier">
        <size>W H</size>
        <stages>
          <_>                                  one per stage
            <trees>
              <_>                              one per weak classifier
                <_>                            the (single) stump node
                  <feature>
                    <rects><_>x y w h weight</_> ... </rects>
                    <tilted>0</tilted>
                  </feature>
                  <threshold>t</threshold>
                  <left_val>l</left_val>
                  <right_val>r</right_val>
                </_>
              </_>
            </trees>
            <stage_threshold>s</stage_threshold>
          </_>
        </stages>
      </NAME>
    </opencv_storage>

``parent``/``next`` stage links are ignored (stages are a linear chain).  The
newer ``<cascade>`` dialect (``stageThreshold``/``weakClassifiers``/
``internalNodes``/``leafValues`` with a shared ``<features>`` table) is also
accepted for stump-based HAAR cascades.
"""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .imgcore import IntegralImage, RectF, rect_sum


class CascadeError(ValueError):
    """Cascade file failed to parse or validate."""


@dataclass(frozen=True)
class HaarFeature:
    rects: Tuple[Tuple[int, int, int, int, float], ...]
    tilted: bool = False

    def __post_init__(self):
        if not 1 <= len(self.rects) <= 3:
            raise CascadeError(f"a Haar feature carries 1-3 rectangles, got {len(self.rects)}")
        if any(r[4] == 0 for r in self.rects):
            raise CascadeError("Haar feature rectangle weights must be nonzero")


@dataclass(frozen=True)
class WeakClassifier:
    feature: HaarFeature
    threshold: float
    left_val: float
    right_val: float


@dataclass(frozen=True)
class Stage:
    weak: Tuple[WeakClassifier, ...]
    threshold: float


@dataclass(frozen=True)
class CascadeModel:
    window_w: int
    window_h: int
    stages: Tuple[Stage, ...]
    name: str = "cascade"

    @property
    def n_weak(self) -> int:
        return sum(len(s.weak) for s in self.stages)


# --------------------------------------------------------------------------
# Parsing


def _floats(text: Optional[str], path: str) -> List[float]:
    if text is None or not text.strip():
        raise CascadeError(f"{path}: missing numeric content")
    try:
        return [float(t) for t in text.split()]
    except ValueError as exc:
        raise CascadeError(f"{path}: {exc}") from None


def _child(node: ET.Element, tag: str, path: str) -> ET.Element:
    found = node.find(tag)
    if found is None:
        raise CascadeError(f"{path}: missing <{tag}>")
    return found


def _scalar(node: ET.Element, tag: str, path: str) -> float:
    vals = _floats(_child(node, tag, path).text, f"{path}/{tag}")
    if len(vals) != 1:
        raise CascadeError(f"{path}/{tag}: expected one value, got {len(vals)}")
    return vals[0]


def _parse_rects(rects_node: ET.Element, path: str) -> Tuple[Tuple[int, int, int, int, float], ...]:
    rects = []
    for i, r in enumerate(rects_node.findall("_")):
        p = f"{path}/rects/_[{i}]"
        vals = _floats(r.text, p)
        if len(vals) != 5:
            raise CascadeError(f"{p}: expected 'x y w h weight', got {len(vals)} values")
        x, y, w, h, weight = vals
        if any(v != int(v) for v in (x, y, w, h)):
            raise CascadeError(f"{p}: rectangle coordinates must be integers")
        rects.append((int(x), int(y), int(w), int(h), weight))
    if not 2 <= len(rects) <= 3:
        raise CascadeError(f"{path}/rects: expected 2-3 rectangles, got {len(rects)}")
    return tuple(rects)


def _feature(rects, tilted: bool, win: Tuple[int, int], path: str) -> HaarFeature:
    if tilted:
        raise CascadeError(f"{path}: tilted features are not supported")
    for x, y, w, h, weight in rects:
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > win[0] or y + h > win[1]:
            raise CascadeError(f"{path}: rectangle {x} {y} {w} {h} lies outside the {win[0]}x{win[1]} window")
        if weight == 0:
            raise CascadeError(f"{path}: zero rectangle weight")
    return HaarFeature(rects, False)


def _tilted(node: Optional[ET.Element], path: str) -> bool:
    if node is None or node.text is None:
        return False
    return _floats(node.text, path)[0] != 0


def _parse_old(root: ET.Element) -> CascadeModel:
    base = root.tag
    size = _floats(_child(root, "size", base).text, f"{base}/size")
    if len(size) != 2 or size[0] <= 0 or size[1] <= 0:
        raise CascadeError(f"{base}/size: expected two positive integers")
    win = (int(size[0]), int(size[1]))
    stages = []
    for si, st in enumerate(_child(root, "stages", base).findall("_")):
        sp = f"{base}/stages/_[{si}]"
        weak = []
        for ti, tree in enumerate(_child(st, "trees", sp).findall("_")):
            tp = f"{sp}/trees/_[{ti}]"
            nodes = tree.findall("_")
            if len(nodes) != 1:
                raise CascadeError(f"{tp}: only single-node (stump) trees are supported, got {len(nodes)} nodes")
            node = nodes[0]
            np_ = f"{tp}/_[0]"
            feat = _child(node, "feature", np_)
            rects = _parse_rects(_child(feat, "rects", f"{np_}/feature"), f"{np_}/feature")
            tilted = _tilted(feat.find("tilted"), f"{np_}/feature/tilted")
            if node.find("left_val") is None or node.find("right_val") is None:
                raise CascadeError(f"{np_}: only leaf values are supported (left_node/right_node found)")
            weak.append(
                WeakClassifier(
                    _feature(rects, tilted, win, f"{np_}/feature"),
                    _scalar(node, "threshold", np_),
                    _scalar(node, "left_val", np_),
                    _scalar(node, "right_val", np_),
                )
            )
        if not weak:
            raise CascadeError(f"{sp}/trees: stage has no weak classifiers")
        stages.append(Stage(tuple(weak), _scalar(st, "stage_threshold", sp)))
    if not stages:
        raise CascadeError(f"{base}/stages: no stages")
    return CascadeModel(win[0], win[1], tuple(stages), name=base)


def _parse_new(root: ET.Element) -> CascadeModel:
    base = root.tag
    for tag, want in (("stageType", "BOOST"), ("featureType", "HAAR")):
        node = root.find(tag)
        if node is not None and (node.text or "").strip() != want:
            raise CascadeError(f"{base}/{tag}: only {want} cascades are supported")
    win = (int(_scalar(root, "width", base)), int(_scalar(root, "height", base)))
    features = []
    for fi, f in enumerate(_child(root, "features", base).findall("_")):
        fp = f"{base}/features/_[{fi}]"
        rects = _parse_rects(_child(f, "rects", fp), fp)
        features.append(_feature(rects, _tilted(f.find("tilted"), f"{fp}/tilted"), win, fp))
    stages = []
    for si, st in enumerate(_child(root, "stages", base).findall("_")):
        sp = f"{base}/stages/_[{si}]"
        weak = []
        for wi, wc in enumerate(_child(st, "weakClassifiers", sp).findall("_")):
            wp = f"{sp}/weakClassifiers/_[{wi}]"
            nodes = _floats(_child(wc, "internalNodes", wp).text, f"{wp}/internalNodes")
            leaves = _floats(_child(wc, "leafValues", wp).text, f"{wp}/leafValues")
            if len(nodes) != 4 or len(leaves) != 2:
                raise CascadeError(f"{wp}: only stump weak classifiers are supported")
            idx = int(nodes[2])
            if not 0 <= idx < len(features):
                raise CascadeError(f"{wp}/internalNodes: feature index {idx} out of range")
            weak.append(WeakClassifier(features[idx], nodes[3], leaves[0], leaves[1]))
        if not weak:
            raise CascadeError(f"{sp}/weakClassifiers: stage has no weak classifiers")
        stages.append(Stage(tuple(weak), _scalar(st, "stageThreshold", sp)))
    if not stages:
        raise CascadeError(f"{base}/stages: no stages")
    return CascadeModel(win[0], win[1], tuple(stages), name=base)


def parse_cascade(data: bytes) -> CascadeModel:
    """Parse and validate a cascade XML document."""
    if not data or not data.strip():
        raise CascadeError("cascade: empty file")
    try:
        doc = ET.fromstring(data)
    except ET.ParseError as exc:
        raise CascadeError(f"cascade: malformed XML ({exc})") from None
    if doc.tag != "opencv_storage":
        raise CascadeError(f"{doc.tag}: expected <opencv_storage> root")
    children = list(doc)
    if not children:
        raise CascadeError("opencv_storage: no cascade element")
    root = children[0]
    if root.find("stageThreshold") is None and root.find("size") is not None:
        return _parse_old(root)
    if root.find("stageType") is not None or root.find("features") is not None:
        return _parse_new(root)
    raise CascadeError(f"opencv_storage/{root.tag}: unrecognized cascade layout")


def load_cascade(path) -> CascadeModel:
    with open(path, "rb") as fh:
        return parse_cascade(fh.read())


def cascade_to_xml(model: CascadeModel, name: Optional[str] = None, comment: str = "") -> bytes:
    """Serialize to the old-style dialect; ``parse_cascade`` reads it back exactly."""
    name = name or model.name
    out = ['<?xml version="1.0"?>']
    if comment:
        out.append(f"<!--{comment}-->")
    out.append("<opencv_storage>")
    out.append(f'<{name} type_id="opencv-haar-classifier">')
    out.append(f"  <size>{model.window_w} {model.window_h}</size>")
    out.append("  <stages>")
    for si, stage in enumerate(model.stages):
        out.append(f"    <_>\n      <!-- stage {si} -->\n      <trees>")
        for wc in stage.weak:
            out.append("        <_>\n          <_>\n            <feature>\n              <rects>")
            for x, y, w, h, weight in wc.feature.rects:
                out.append(f"                <_>{x} {y} {w} {h} {weight!r}</_>")
            out.append("              </rects>\n              <tilted>0</tilted>\n            </feature>")
            out.append(f"            <threshold>{wc.threshold!r}</threshold>")
            out.append(f"            <left_val>{wc.left_val!r}</left_val>")
            out.append(f"            <right_val>{wc.right_val!r}</right_val>")
            out.append("          </_>\n        </_>")
        out.append("      </trees>")
        out.append(f"      <stage_threshold>{stage.threshold!r}</stage_threshold>")
        out.append(f"      <parent>{si - 1}</parent>\n      <next>-1</next>\n    </_>")
    out.append("  </stages>")
    out.append(f"</{name}>")
    out.append("</opencv_storage>")
    return ("\n".join(out) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Scaling and per-window evaluation


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def scaled_feature(f: HaarFeature, scale: float) -> Tuple[List[Tuple[int, int, int, int]], List[float]]:
    """Feature rectangles scaled to a window ``scale`` times the base size.

    Rectangle corners are rounded to whole pixels.  For multi-rectangle
    features the first weight is re-derived so the weighted areas still
    cancel after rounding, which keeps the response to a flat patch at zero.
    """
    rects, weights = [], []
    for x, y, w, h, weight in f.rects:
        rects.append((_round(x * scale), _round(y * scale), _round(w * scale), _round(h * scale)))
        weights.append(float(weight))
    if len(rects) > 1:
        area0 = rects[0][2] * rects[0][3]
        rest = sum(wt * r[2] * r[3] for wt, r in zip(weights[1:], rects[1:]))
        weights[0] = -rest / area0
    return rects, weights


def window_geometry(model: CascadeModel, scale: float) -> Tuple[int, int, Tuple[int, int, int, int]]:
    """Window size at ``scale`` and the inner rectangle used for normalization.

    The normalization rectangle excludes a one-base-pixel border, as the stock
    cascades were trained that way.
    """
    ww, wh = _round(model.window_w * scale), _round(model.window_h * scale)
    off = _round(scale)
    inner = (off, off, _round((model.window_w - 2) * scale), _round((model.window_h - 2) * scale))
    return ww, wh, inner


def window_norm(ii: IntegralImage, sq_ii: IntegralImage, inner: RectF) -> float:
    """``area * sigma`` over ``inner``; ``sigma`` is floored at one gray level."""
    area = inner.w * inner.h
    s = rect_sum(ii, inner)
    sq = rect_sum(sq_ii, inner)
    var = sq / area - (s / area) * (s / area)
    sigma = math.sqrt(var) if var > 1.0 else 1.0
    return area * sigma


def eval_feature(
    f: HaarFeature,
    ii: IntegralImage,
    win: RectF,
    inv_area_std: float,
    base_w: Optional[int] = None,
    scale: Optional[float] = None,
) -> float:
    """Normalized response of ``f`` over window ``win``.

    ``inv_area_std`` is ``1 / (area * sigma)`` of the window's normalization
    rectangle.  The feature scale is ``scale`` if given, else the window width
    over ``base_w`` (the cascade's base width; default: scale 1).
    """
    if scale is None:
        scale = win.w / (base_w or win.w)
    rects, weights = scaled_feature(f, scale)
    raw = 0.0
    for (x, y, w, h), wt in zip(rects, weights):
        raw += wt * rect_sum(ii, RectF(win.x + x, win.y + y, w, h))
    return raw * inv_area_std


def run_cascade_window(model: CascadeModel, ii: IntegralImage, sq_ii: IntegralImage, win: RectF) -> bool:
    """Evaluate every stage on one window; fail at the first stage below threshold."""
    return cascade_depth(model, ii, sq_ii, win) == len(model.stages)


def cascade_depth(model: CascadeModel, ii: IntegralImage, sq_ii: IntegralImage, win: RectF, scale: Optional[float] = None) -> int:
    """Number of stages passed before rejection (``len(stages)`` means accepted).

    ``scale`` defaults to the window width over the base width; the scanner
    passes its own (geometric) scale, which rounding can make differ.
    """
    if scale is None:
        scale = win.w / model.window_w
    _, _, (ix, iy, iw, ih) = window_geometry(model, scale)
    norm = window_norm(ii, sq_ii, RectF(win.x + ix, win.y + iy, iw, ih))
    inv = 1.0 / norm
    for depth, stage in enumerate(model.stages):
        total = 0.0
        for wc in stage.weak:
            value = eval_feature(wc.feature, ii, win, inv, scale=scale)
            total += wc.left_val if value < wc.threshold else wc.right_val
        if total < stage.threshold:
            return depth
    return len(model.stages)


@dataclass
class PackedCascade:
    """Flat arrays for the compiled scanner, scaled to one window size."""

    stage_end: np.ndarray  # (n_stages,) exclusive end index into weak arrays
    stage_thr: np.ndarray
    rects: np.ndarray  # (n_weak, 3, 4) int64 x, y, w, h
    weights: np.ndarray  # (n_weak, 3) float64, zero for unused slots
    n_rects: np.ndarray  # (n_weak,)
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray


def pack(model: CascadeModel, scale: float) -> PackedCascade:
    n = model.n_weak
    rects = np.zeros((n, 3, 4), dtype=np.int64)
    weights = np.zeros((n, 3), dtype=np.float64)
    n_rects = np.zeros(n, dtype=np.int64)
    thr = np.empty(n)
    left = np.empty(n)
    right = np.empty(n)
    stage_end = np.empty(len(model.stages), dtype=np.int64)
    stage_thr = np.empty(len(model.stages))
    i = 0
    for si, stage in enumerate(model.stages):
        for wc in stage.weak:
            rs, ws = scaled_feature(wc.feature, scale)
            n_rects[i] = len(rs)
            for j, (r, w) in enumerate(zip(rs, ws)):
                rects[i, j] = r
                weights[i, j] = w
            thr[i], left[i], right[i] = wc.threshold, wc.left_val, wc.right_val
            i += 1
        stage_end[si] = i
        stage_thr[si] = stage.threshold
    return PackedCascade(stage_end, stage_thr, rects, weights, n_rects, thr, left, right)
