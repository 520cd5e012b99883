"""Online-ink input: InkML and label-graph parsing, resampling, normalization."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .labels import LabelError, LabelGraph, POSITIONAL_RELATIONS, SAME_SYMBOL


class InkError(Exception):
    pass


class Point(NamedTuple):
    x: float
    y: float


@dataclass
class Stroke:
    """One pen-down trace: raw points in capture order."""

    points: np.ndarray
    index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise InkError(f"stroke {self.index}: points must be (m, 2) with m >= 1")
        if not np.all(np.isfinite(pts)):
            raise InkError(f"stroke {self.index}: non-finite coordinates")
        self.points = pts

    @property
    def num_points(self):
        return self.points.shape[0]

    def bbox_diagonal(self):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.hypot(*(hi - lo)))


@dataclass
class InkExpression:
    """A handwritten expression: strokes in writing order plus optional markup."""

    id: str
    strokes: list
    annotation: str = ""

    def __post_init__(self):
        if not self.strokes:
            raise InkError(f"expression {self.id!r}: no strokes")
        for want, s in enumerate(self.strokes):
            if s.index != want:
                raise InkError(f"expression {self.id!r}: stroke indices must be 0..n-1 in order")

    @property
    def num_strokes(self):
        return len(self.strokes)


@dataclass
class ResampledStroke:
    """Fixed-length stroke: coords shape (2, d), equal spacing between samples."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != 2 or c.shape[1] < 2:
            raise InkError(f"resampled stroke: coords must be (2, d>=2), got {c.shape}")
        self.coords = c

    @property
    def num_samples(self):
        return self.coords.shape[1]

    def centroid(self):
        return self.coords.mean(axis=1)


# ---------------------------------------------------------------------------
# InkML


def _byte_offset(payload: bytes, line: int, column: int) -> int:
    lines = payload.split(b"\n")
    return sum(len(l) + 1 for l in lines[: line - 1]) + column


def parse_inkml(data) -> InkExpression:
    """Parse the trace subset of InkML: <trace> points 'x y [t]' separated by commas.

    Accepts bytes or str. Time stamps are dropped. Raises InkError with a byte
    offset on malformed XML, and names the offending trace for empty traces.
    """
    if isinstance(data, str):
        payload = data.encode("utf-8")
    else:
        payload = bytes(data)
    try:
        root = ET.fromstring(payload)
    except ET.ParseError as exc:
        line, col = exc.position
        raise InkError(
            f"InkML parse error at byte {_byte_offset(payload, line, col)}: {exc.msg}"
        ) from None

    def local(tag):
        return tag.rsplit("}", 1)[-1]

    expr_id = ""
    annotation = ""
    for node in root.iter():
        if local(node.tag) == "annotation":
            kind = node.get("type", "")
            text = (node.text or "").strip()
            if kind == "UI":
                expr_id = text
            elif kind == "truth" and not annotation:
                annotation = text

    strokes = []
    for node in root.iter():
        if local(node.tag) != "trace":
            continue
        raw = (node.text or "").strip()
        trace_id = node.get("id", str(len(strokes)))
        if not raw:
            raise InkError(f"trace {trace_id!r}: empty trace")
        pts = []
        for chunk in raw.split(","):
            fields = chunk.split()
            if not fields:
                continue
            if len(fields) < 2:
                raise InkError(f"trace {trace_id!r}: malformed point {chunk.strip()!r}")
            try:
                pts.append((float(fields[0]), float(fields[1])))
            except ValueError:
                raise InkError(f"trace {trace_id!r}: malformed point {chunk.strip()!r}") from None
        if not pts:
            raise InkError(f"trace {trace_id!r}: empty trace")
        strokes.append(Stroke(points=np.array(pts), index=len(strokes)))
    if not strokes:
        raise InkError("InkML document contains no traces")
    return InkExpression(id=expr_id, strokes=strokes, annotation=annotation)


# ---------------------------------------------------------------------------
# label-graph text format


def parse_lg(text) -> LabelGraph:
    """Parse 'N, id, label, w' / 'E, id1, id2, label, w' lines; '#' starts a comment.

    Stroke ids map to 0-based writing order by N-line order. Unknown line tags,
    edges naming undeclared strokes, duplicate ids and bad relation labels all
    raise with the line number.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    ids = {}
    node_labels = []
    pending_edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        tag = parts[0]
        if tag == "N":
            if len(parts) != 4:
                raise InkError(f"line {lineno}: N lines take 'N, id, label, weight'")
            _, sid, label, _w = parts
            if sid in ids:
                raise InkError(f"line {lineno}: duplicate stroke id {sid!r}")
            ids[sid] = len(node_labels)
            node_labels.append(label)
        elif tag == "E":
            if len(parts) != 5:
                raise InkError(f"line {lineno}: E lines take 'E, id1, id2, label, weight'")
            _, a, b, label, _w = parts
            pending_edges.append((lineno, a, b, label))
        else:
            raise InkError(f"line {lineno}: unknown line tag {tag!r}")
    edges = set()
    for lineno, a, b, label in pending_edges:
        if a not in ids or b not in ids:
            missing = a if a not in ids else b
            raise InkError(f"line {lineno}: edge references undeclared stroke {missing!r}")
        if label != SAME_SYMBOL and label not in POSITIONAL_RELATIONS:
            raise InkError(f"line {lineno}: unknown relation label {label!r}")
        edges.add((ids[a], ids[b], label))
    try:
        return LabelGraph(node_labels=node_labels, edges=edges)
    except LabelError as exc:
        raise InkError(str(exc)) from None


# ---------------------------------------------------------------------------
# resampling


def _arc_positions(pts):
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _resample_once(pts, d):
    cum = _arc_positions(pts)
    total = cum[-1]
    if total <= 0:
        return np.repeat(pts[:1], d, axis=0)
    target = np.linspace(0.0, total, d)
    x = np.interp(target, cum, pts[:, 0])
    y = np.interp(target, cum, pts[:, 1])
    return np.stack([x, y], axis=1)


def resample_stroke(stroke, d) -> ResampledStroke:
    """Resample to d points with equal spacing along the trace.

    Zero-length input replicates the point. The reparameterization is iterated
    to its fixed point so the output polyline has equal chords, which makes
    resampling idempotent.
    """
    d = int(d)
    if d < 2:
        raise InkError(f"resample: d must be >= 2, got {d}")
    if isinstance(stroke, Stroke):
        pts = stroke.points
    elif isinstance(stroke, ResampledStroke):
        pts = stroke.coords.T
    else:
        pts = np.asarray(stroke, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InkError(f"resample: raw points must be (m, 2), got {pts.shape}")
    out = _resample_once(pts, d)
    for _ in range(512):
        seg = np.hypot(*np.diff(out, axis=0).T)
        m = seg.mean()
        if m <= 0 or (seg.max() - seg.min()) <= 1e-9 * m:
            break
        out = _resample_once(out, d)
    return ResampledStroke(coords=out.T)


# ---------------------------------------------------------------------------
# normalization


def normalize_expression(expression) -> InkExpression:
    """Center the expression at its point centroid and set the mean stroke
    bounding-box diagonal to 1 (dots count as diagonal 0; all-dots scale is 1)."""
    all_pts = np.concatenate([s.points for s in expression.strokes], axis=0)
    center = all_pts.mean(axis=0)
    diags = [s.bbox_diagonal() for s in expression.strokes]
    mean_diag = float(np.mean(diags))
    scl = mean_diag if mean_diag > 0 else 1.0
    strokes = [
        Stroke(points=(s.points - center) / scl, index=s.index)
        for s in expression.strokes
    ]
    return InkExpression(id=expression.id, strokes=strokes, annotation=expression.annotation)
