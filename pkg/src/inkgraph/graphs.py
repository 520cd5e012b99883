"""Stroke graphs: visibility adjacency, directional edge features, splitting.

Strokes become nodes. Adjacency is line-of-sight visibility between convex
hulls, symmetrized, plus temporal edges between consecutive strokes. Edge
features are fuzzy directional memberships and distances from the source
stroke's centroid to downsampled points of the target stroke.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .ink import InkError, ResampledStroke, normalize_expression, resample_stroke


class GraphError(Exception):
    pass


@dataclass
class GraphConfig:
    """Graph-construction knobs: sample counts, chunk size, master node, FC ablation."""

    d_n: int = 150
    d_e: int = 10
    n_max: int = 16
    global_graph: bool = True
    full_connect: bool = False

    def __post_init__(self):
        if self.d_n < 2:
            raise GraphError(f"d_n must be >= 2, got {self.d_n}")
        if self.d_e < 1:
            raise GraphError(f"d_e must be >= 1, got {self.d_e}")
        if self.n_max < 2:
            raise GraphError(f"n_max must be >= 2, got {self.n_max}")

    @property
    def edge_dim(self):
        return 5 * self.d_e

    def to_dict(self):
        return {"d_n": self.d_n, "d_e": self.d_e, "n_max": self.n_max,
                "global_graph": self.global_graph, "full_connect": self.full_connect}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModeledGraph:
    """Attributed stroke graph. Masks gate the loss, not message passing."""

    adjacency: np.ndarray
    node_features: np.ndarray
    edge_features: np.ndarray
    node_mask: np.ndarray
    edge_mask: np.ndarray
    has_master: bool = False

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.int8)
        self.node_features = np.asarray(self.node_features, dtype=np.float32)
        self.edge_features = np.asarray(self.edge_features, dtype=np.float32)
        self.node_mask = np.asarray(self.node_mask, dtype=np.float32)
        self.edge_mask = np.asarray(self.edge_mask, dtype=np.float32)
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise GraphError("adjacency must be square")
        if np.any(np.diag(self.adjacency) != 0):
            raise GraphError("adjacency diagonal must be zero")
        if np.any(self.adjacency != self.adjacency.T):
            raise GraphError("adjacency must be symmetric")
        if self.has_master:
            off = self.adjacency[0].copy()
            off[0] = 1
            if not np.all(off == 1):
                raise GraphError("master row must link to every node")
        if self.node_features.shape[0] != n or self.edge_features.shape[:2] != (n, n):
            raise GraphError("feature shapes disagree with adjacency")
        if self.node_mask.shape != (n,) or self.edge_mask.shape != (n, n):
            raise GraphError("mask shapes disagree with adjacency")
        nonedges = self.adjacency == 0
        if np.any(self.edge_features[nonedges] != 0):
            raise GraphError("edge features must be zero off the adjacency support")

    @property
    def num_nodes(self):
        return self.adjacency.shape[0]

    @property
    def num_strokes(self):
        return self.num_nodes - 1 if self.has_master else self.num_nodes


# ---------------------------------------------------------------------------
# convex hulls and visibility


def convex_hull(points):
    """Andrew monotone chain; returns hull vertices counter-clockwise.

    Degenerate inputs give 1 (point) or 2 (segment) vertices.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if pts.shape[0] == 1:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] == 0:
        # all points collinear: keep the two extremes
        hull = np.array([pts[0], pts[-1]])
    return hull


def _polygon_area_centroid(hull):
    x = hull[:, 0]
    y = hull[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    w = x * yn - xn * y
    area = w.sum() / 2.0
    if abs(area) < 1e-12:
        return hull.mean(axis=0)
    cx = ((x + xn) * w).sum() / (6.0 * area)
    cy = ((y + yn) * w).sum() / (6.0 * area)
    return np.array([cx, cy])


def hull_centroid(hull):
    if hull.shape[0] < 3:
        return hull.mean(axis=0)
    return _polygon_area_centroid(hull)


def _segment_blocked_by_hull(p, q, hull, eps=1e-9):
    """Does segment pq pass through hull's interior (or properly cross it when
    the hull is a degenerate point/segment)?"""
    d = q - p
    seg_len = float(np.hypot(*d))
    if seg_len <= eps:
        return False
    if hull.shape[0] >= 3:
        # clip the segment parameter interval against each hull edge half-plane
        t0, t1 = 0.0, 1.0
        m = hull.shape[0]
        for k in range(m):
            a = hull[k]
            b = hull[(k + 1) % m]
            # inside is to the left of a->b (hull is CCW)
            nx, ny = b[1] - a[1], a[0] - b[0]  # outward normal
            denom = nx * d[0] + ny * d[1]
            num = nx * (a[0] - p[0]) + ny * (a[1] - p[1])
            if abs(denom) < 1e-15:
                if num < 0:
                    return False  # parallel and fully outside this edge
                continue
            t = num / denom
            if denom > 0:
                t1 = min(t1, t)
            else:
                t0 = max(t0, t)
            if t0 >= t1:
                return False
        return (t1 - t0) * seg_len > eps
    if hull.shape[0] == 2:
        a, b = hull
        e = b - a
        cross_pa = d[0] * (a[1] - p[1]) - d[1] * (a[0] - p[0])
        cross_pb = d[0] * (b[1] - p[1]) - d[1] * (b[0] - p[0])
        cross_ap = e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])
        cross_aq = e[0] * (q[1] - a[1]) - e[1] * (q[0] - a[0])
        if cross_pa * cross_pb < -eps and cross_ap * cross_aq < -eps:
            return True  # proper transversal crossing
        # collinear overlap of positive length
        hull_len = float(np.hypot(*e))
        if hull_len <= eps:
            return False
        if abs(cross_ap) <= eps * hull_len and abs(cross_aq) <= eps * hull_len:
            ta = np.dot(p - a, e) / (hull_len * hull_len)
            tb = np.dot(q - a, e) / (hull_len * hull_len)
            lo, hi = min(ta, tb), max(ta, tb)
            return min(hi, 1.0) - max(lo, 0.0) > eps
        return False
    return False  # a point blocks nothing


def line_of_sight(strokes):
    """Visibility adjacency: i sees j when some ray from hull(i)'s centroid to a
    vertex of hull(j) clears every other stroke's hull. Symmetrized by OR."""
    n = len(strokes)
    hulls = [convex_hull(s.coords.T) for s in strokes]
    centers = [hull_centroid(h) for h in hulls]
    vis = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if vis[j, i]:
                vis[i, j] = 1
                continue
            occluders = [hulls[k] for k in range(n) if k != i and k != j]
            seen = False
            for vtx in hulls[j]:
                if not any(_segment_blocked_by_hull(centers[i], vtx, h) for h in occluders):
                    seen = True
                    break
            if seen:
                vis[i, j] = 1
    out = np.maximum(vis, vis.T)
    np.fill_diagonal(out, 0)
    return out


def add_temporal_edges(adjacency):
    """Link consecutive strokes (writing order); idempotent."""
    a = np.array(adjacency, dtype=np.int8, copy=True)
    n = a.shape[0]
    idx = np.arange(n - 1)
    a[idx, idx + 1] = 1
    a[idx + 1, idx] = 1
    np.fill_diagonal(a, 0)
    return a


# ---------------------------------------------------------------------------
# fuzzy directional edge features

_DIRECTIONS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def directional_features(src, dst, d_e):
    """Membership of target samples in four half-plane directions, plus distances.

    From the source centroid O to d_e samples P_k of the target:
    theta = max(0, 1 - (2/pi) * angle(OP_k, direction)), directions right,
    left, up, down; layout [right.., left.., up.., down.., distances..].
    """
    if not isinstance(src, ResampledStroke) or not isinstance(dst, ResampledStroke):
        raise GraphError("directional_features expects resampled strokes")
    d_e = int(d_e)
    origin = src.centroid()
    idx = np.rint(np.linspace(0, dst.num_samples - 1, d_e)).astype(int)
    pts = dst.coords.T[idx]
    vec = pts - origin
    dist = np.hypot(vec[:, 0], vec[:, 1])
    safe = np.where(dist > 0, dist, 1.0)
    cosang = (vec @ _DIRECTIONS.T) / safe[:, None]
    cosang = np.clip(cosang, -1.0, 1.0)
    theta = np.maximum(0.0, 1.0 - (2.0 / np.pi) * np.arccos(cosang))
    theta[dist == 0] = 0.0
    return np.concatenate([theta.T.reshape(-1), dist]).astype(np.float32)


# ---------------------------------------------------------------------------
# graph assembly


def preprocess_expression(expression, config):
    """Normalize then resample every stroke; returns list[ResampledStroke]."""
    normed = normalize_expression(expression)
    return [resample_stroke(s, config.d_n) for s in normed.strokes]


def build_local_graph(expression, config):
    """Full pipeline for one expression: preprocess, visibility + temporal
    adjacency (or FC), directional edge features on the support."""
    strokes = preprocess_expression(expression, config)
    n = len(strokes)
    if config.full_connect:
        adj = np.ones((n, n), dtype=np.int8)
        np.fill_diagonal(adj, 0)
    else:
        adj = add_temporal_edges(line_of_sight(strokes))
    node_features = np.stack([s.coords for s in strokes]).astype(np.float32)
    edge_features = np.zeros((n, n, config.edge_dim), dtype=np.float32)
    for i in range(n):
        for j in range(n):
            if i != j and adj[i, j]:
                edge_features[i, j] = directional_features(strokes[i], strokes[j], config.d_e)
    return ModeledGraph(
        adjacency=adj,
        node_features=node_features,
        edge_features=edge_features,
        node_mask=np.ones(n, dtype=np.float32),
        edge_mask=np.ones((n, n), dtype=np.float32),
        has_master=False,
    )


def augment_global(graph):
    """Prepend a master node at index 0: linked to every stroke, feature = sum
    of node features, zero edge features, excluded from the loss masks."""
    if graph.has_master:
        raise GraphError("graph already has a master node")
    n = graph.num_nodes
    adj = np.zeros((n + 1, n + 1), dtype=np.int8)
    adj[1:, 1:] = graph.adjacency
    adj[0, 1:] = 1
    adj[1:, 0] = 1
    node_features = np.concatenate(
        [graph.node_features.sum(axis=0, keepdims=True), graph.node_features], axis=0)
    edge_features = np.zeros((n + 1, n + 1) + graph.edge_features.shape[2:], dtype=np.float32)
    edge_features[1:, 1:] = graph.edge_features
    node_mask = np.concatenate([[0.0], graph.node_mask]).astype(np.float32)
    edge_mask = np.zeros((n + 1, n + 1), dtype=np.float32)
    edge_mask[1:, 1:] = graph.edge_mask
    return ModeledGraph(adjacency=adj, node_features=node_features,
                        edge_features=edge_features, node_mask=node_mask,
                        edge_mask=edge_mask, has_master=True)


def split_subexpressions(graph, aligned, config):
    """Cut a local graph into consecutive chunks of n_max strokes, zero-padded.

    Padding gets mask 0 everywhere. A stroke whose same-symbol partner falls
    outside its chunk keeps its features but is dropped from the loss (node and
    incident edges). Master augmentation happens per chunk afterwards when the
    config asks for a global graph. Returns list of (graph, aligned) chunks.
    """
    if graph.has_master:
        raise GraphError("split before augmenting, not after")
    from .labels import AlignedLabels  # local import to avoid a cycle at module load

    n = graph.num_nodes
    n_max = config.n_max
    chunks = []
    for lo in range(0, n, n_max):
        hi = min(lo + n_max, n)
        size = hi - lo
        sl = slice(lo, hi)

        adj = np.zeros((n_max, n_max), dtype=np.int8)
        adj[:size, :size] = graph.adjacency[sl, sl]
        node_features = np.zeros((n_max,) + graph.node_features.shape[1:], dtype=np.float32)
        node_features[:size] = graph.node_features[sl]
        edge_features = np.zeros((n_max, n_max) + graph.edge_features.shape[2:], dtype=np.float32)
        edge_features[:size, :size] = graph.edge_features[sl, sl]

        node_mask = np.zeros(n_max, dtype=np.float32)
        node_mask[:size] = graph.node_mask[sl]
        broken = _strokes_with_partner_outside(aligned, lo, hi)
        for b in broken:
            node_mask[b - lo] = 0.0
        edge_mask = np.zeros((n_max, n_max), dtype=np.float32)
        edge_mask[:size, :size] = graph.edge_mask[sl, sl]
        for b in broken:
            edge_mask[b - lo, :] = 0.0
            edge_mask[:, b - lo] = 0.0

        node_ids = np.zeros(n_max, dtype=np.int64)
        node_ids[:size] = aligned.node_ids[sl]
        support = np.zeros((n_max, n_max), dtype=np.int8)
        support[:size, :size] = aligned.order_adj[sl, sl]
        edge_ids = np.full((n_max, n_max), -1, dtype=np.int64)
        edge_ids[:size, :size] = np.where(aligned.order_adj[sl, sl] == 1,
                                          aligned.edge_ids[sl, sl], -1)

        chunk_graph = ModeledGraph(adjacency=adj, node_features=node_features,
                                   edge_features=edge_features, node_mask=node_mask,
                                   edge_mask=edge_mask, has_master=False)
        if config.global_graph:
            chunk_graph = augment_global(chunk_graph)
        chunk_labels = AlignedLabels(node_ids=node_ids, edge_ids=edge_ids,
                                     order_adj=support, dropped=0)
        chunks.append((chunk_graph, chunk_labels))
    return chunks


def _strokes_with_partner_outside(aligned, lo, hi):
    """Strokes in [lo, hi) sharing a '*' edge with a stroke outside the window."""
    from .labels import POSITIONAL_RELATIONS

    broken = set()
    star_id = 2 * len(POSITIONAL_RELATIONS)
    for i, j in zip(*np.nonzero(aligned.order_adj)):
        if aligned.edge_ids[i, j] != star_id:
            continue
        ii, jj = int(i), int(j)
        in_i = lo <= ii < hi
        in_j = lo <= jj < hi
        if in_i != in_j:
            broken.add(ii if in_i else jj)
    return broken


# ---------------------------------------------------------------------------
# serialization


def graph_to_json(graph):
    """Self-contained JSON dump: shapes, row-major adjacency/masks, base64
    little-endian float32 feature blobs."""

    def blob(arr):
        return base64.b64encode(
            np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")

    doc = {
        "n": graph.num_nodes,
        "has_master": graph.has_master,
        "adjacency": [int(v) for v in graph.adjacency.reshape(-1)],
        "node_mask": [float(v) for v in graph.node_mask],
        "edge_mask": [float(v) for v in graph.edge_mask.reshape(-1)],
        "node_feature_shape": list(graph.node_features.shape),
        "edge_feature_shape": list(graph.edge_features.shape),
        "node_features": blob(graph.node_features),
        "edge_features": blob(graph.edge_features),
    }
    return json.dumps(doc, sort_keys=True)


def graph_from_json(text):
    doc = json.loads(text)

    def unblob(b64, shape):
        raw = base64.b64decode(b64)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)

    n = doc["n"]
    return ModeledGraph(
        adjacency=np.array(doc["adjacency"], dtype=np.int8).reshape(n, n),
        node_features=unblob(doc["node_features"], doc["node_feature_shape"]),
        edge_features=unblob(doc["edge_features"], doc["edge_feature_shape"]),
        node_mask=np.array(doc["node_mask"], dtype=np.float32),
        edge_mask=np.array(doc["edge_mask"], dtype=np.float32).reshape(n, n),
        has_master=doc["has_master"],
    )
