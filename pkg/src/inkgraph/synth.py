"""Synthetic handwritten-expression fixtures.

Composes polyline stroke templates for a small alphabet (digits, +, -, =, x,
fraction bar) into randomly laid-out expressions with Right / Sup / Sub /
Above / Below relations, and emits the matching stroke-level LabelGraph.
Everything is driven by a single seeded generator, so regeneration with the
same seed reproduces the corpus exactly.
"""

from __future__ import annotations

import numpy as np

from .ink import InkExpression, Stroke
from .labels import SAME_SYMBOL, LabelGraph


def _pts(*xy):
    return np.array(xy, dtype=np.float64)


def _ellipse(cx, cy, rx, ry, n=12):
    t = np.linspace(0.0, 2.0 * np.pi, n + 1)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


# Stroke templates in a unit box, y up, one tuple entry per pen-down stroke.
# '4', '=' and 'x' are the multi-stroke classes; '+' is drawn in one stroke
# with a retrace through the center so three-symbol rows keep thin hulls.
TEMPLATES = {
    "0": (_ellipse(0.5, 0.5, 0.42, 0.5),),
    "1": (_pts((0.45, 1.0), (0.55, 0.0)),),
    "2": (_pts((0.10, 0.78), (0.30, 0.98), (0.62, 1.00), (0.88, 0.82),
               (0.86, 0.55), (0.45, 0.28), (0.10, 0.00), (0.55, 0.03),
               (0.92, 0.05)),),
    "3": (_pts((0.12, 0.92), (0.50, 1.00), (0.85, 0.80), (0.50, 0.55),
               (0.88, 0.30), (0.50, 0.00), (0.12, 0.10)),),
    "4": (_pts((0.55, 1.00), (0.12, 0.40), (0.92, 0.40)),
          _pts((0.68, 0.75), (0.68, 0.00))),
    "5": (_pts((0.85, 1.00), (0.20, 1.00), (0.15, 0.60), (0.55, 0.62),
               (0.90, 0.40), (0.60, 0.02), (0.15, 0.10)),),
    "6": (_pts((0.80, 0.95), (0.40, 0.75), (0.15, 0.40), (0.30, 0.05),
               (0.70, 0.02), (0.85, 0.30), (0.50, 0.45), (0.20, 0.35)),),
    "7": (_pts((0.10, 1.00), (0.90, 0.97), (0.45, 0.00)),),
    "8": (_pts((0.50, 1.00), (0.20, 0.80), (0.50, 0.55), (0.82, 0.30),
               (0.50, 0.00), (0.18, 0.28), (0.50, 0.55), (0.80, 0.82),
               (0.50, 1.00)),),
    "9": (_pts((0.82, 0.90), (0.45, 1.00), (0.15, 0.75), (0.45, 0.52),
               (0.82, 0.68), (0.78, 0.30), (0.60, 0.00)),),
    "+": (_pts((0.00, 0.5), (1.00, 0.5), (0.50, 0.5), (0.50, 1.0),
               (0.50, 0.0)),),
    "-": (_pts((0.00, 0.5), (1.00, 0.5)),),
    "=": (_pts((0.00, 0.68), (1.00, 0.68)), _pts((0.00, 0.32), (1.00, 0.32))),
    "x": (_pts((0.08, 0.95), (0.92, 0.05)), _pts((0.92, 0.95), (0.08, 0.05))),
}

# label -> (width, height) of the placed box at unit scale, centered on the
# line's vertical midpoint. Operators stay short so neighbors see past them.
_METRICS = {
    "+": (0.50, 0.44), "-": (0.50, 0.0), "=": (0.50, 0.36), "x": (0.55, 0.60),
}
for _d in "0123456789":
    _METRICS[_d] = (0.62, 1.0)

_DIGITS = tuple(str(d) for d in range(10))
_OPERATORS = ("+", "-", "x", "=")
_TERM_GAP = 0.30
_CHAIN_GAP = 0.18
_SCRIPT_SCALE = 0.6
_FRAC_SCALE = 0.6


def _place(label, x0, y0, scale, width=None):
    """Instantiate a template with its box's left-bottom corner at (x0, y0)."""
    w, h = _METRICS[label]
    w = width if width is not None else w * scale
    h *= scale
    yc = y0 + 0.5 * scale
    out = []
    for t in TEMPLATES[label]:
        p = t.copy()
        p[:, 0] = x0 + p[:, 0] * w
        p[:, 1] = (yc - 0.5 * h) + p[:, 1] * h
        out.append(p)
    return out, w


class _Builder:
    def __init__(self):
        self.strokes = []
        self.symbol_labels = []
        self.symbol_strokes = []
        self.relations = []

    def add_symbol(self, label, arrays):
        ids = []
        for p in arrays:
            ids.append(len(self.strokes))
            self.strokes.append(p)
        self.symbol_labels.append(label)
        self.symbol_strokes.append(ids)
        return len(self.symbol_labels) - 1


def _chain(builder, labels, x, y0, scale):
    """Lay out symbols left to right with Right relations; returns (ids, width)."""
    ids = []
    cur = x
    for k, lbl in enumerate(labels):
        arrays, w = _place(lbl, cur, y0, scale)
        ids.append(builder.add_symbol(lbl, arrays))
        cur += w
        if k + 1 < len(labels):
            cur += _CHAIN_GAP * scale
    for a, b in zip(ids, ids[1:]):
        builder.relations.append((a, b, "Right"))
    return ids, cur - x


def _row_width(labels, scale):
    w = sum(_METRICS[l][0] * scale for l in labels)
    return w + _CHAIN_GAP * scale * (len(labels) - 1)


def compose(terms, expr_id="synthetic", rng=None, jitter=0.0):
    """Build one (InkExpression, LabelGraph) from a list of term descriptors.

    Terms: ("sym", label) | ("sup", base, script) | ("sub", base, script)
    | ("frac", [numerator labels], [denominator labels]). Fractions are
    written numerator first, then the bar, then the denominator, so the
    bar's Above relation points backwards in writing order.
    """
    b = _Builder()
    x = 0.0
    prev_anchor = None
    for term in terms:
        kind = term[0]
        if kind == "sym":
            arrays, w = _place(term[1], x, 0.0, 1.0)
            entry = anchor = b.add_symbol(term[1], arrays)
            x += w
        elif kind in ("sup", "sub"):
            base, script = term[1], term[2]
            arrays, w = _place(base, x, 0.0, 1.0)
            entry = anchor = b.add_symbol(base, arrays)
            x += w + 0.08
            y0 = 0.55 if kind == "sup" else -0.25
            arrays, w = _place(script, x, y0, _SCRIPT_SCALE)
            script_id = b.add_symbol(script, arrays)
            b.relations.append((anchor, script_id,
                                "Sup" if kind == "sup" else "Sub"))
            x += w
        elif kind == "frac":
            num, den = term[1], term[2]
            s = _FRAC_SCALE
            num_w = _row_width(num, s)
            den_w = _row_width(den, s)
            bar_w = max(num_w, den_w) + 0.24
            num_ids, _ = _chain(b, num, x + 0.5 * (bar_w - num_w), 0.62, s)
            arrays, _ = _place("-", x, 0.0, 1.0, width=bar_w)
            bar_id = b.add_symbol("-", arrays)
            den_ids, _ = _chain(b, den, x + 0.5 * (bar_w - den_w), -0.72, s)
            b.relations.append((bar_id, num_ids[0], "Above"))
            b.relations.append((bar_id, den_ids[0], "Below"))
            entry = anchor = bar_id
            x += bar_w
        else:
            raise ValueError(f"unknown term kind {kind!r}")
        if prev_anchor is not None:
            b.relations.append((prev_anchor, entry, "Right"))
        prev_anchor = anchor
        x += _TERM_GAP

    arrays = [p.copy() for p in b.strokes]
    if rng is not None:
        if jitter > 0.0:
            for p in arrays:
                p += rng.normal(0.0, jitter, p.shape)
        scale = rng.uniform(0.8, 1.3)
        offset = rng.uniform(-2.0, 2.0, 2)
        arrays = [p * scale + offset for p in arrays]

    node_labels = [None] * len(arrays)
    edges = set()
    for label, ids in zip(b.symbol_labels, b.symbol_strokes):
        for i in ids:
            node_labels[i] = label
        for ai in range(len(ids)):
            for bi in range(ai + 1, len(ids)):
                edges.add((ids[ai], ids[bi], SAME_SYMBOL))
    for sa, sb, rel in b.relations:
        for i in b.symbol_strokes[sa]:
            for j in b.symbol_strokes[sb]:
                edges.add((i, j, rel))

    expr = InkExpression(id=expr_id,
                         strokes=[Stroke(p, index=k) for k, p in enumerate(arrays)],
                         annotation=render_terms(terms))
    return expr, LabelGraph(node_labels=node_labels, edges=edges)


def render_terms(terms):
    """Readable one-line transcript of a term list."""
    parts = []
    for term in terms:
        if term[0] == "sym":
            parts.append(term[1])
        elif term[0] == "sup":
            parts.append(f"{term[1]}^{{{term[2]}}}")
        elif term[0] == "sub":
            parts.append(f"{term[1]}_{{{term[2]}}}")
        else:
            parts.append("\\frac{%s}{%s}" % ("".join(term[1]), "".join(term[2])))
    return " ".join(parts)


def _random_operand(rng, remaining):
    kinds = ["sym"]
    if remaining >= 2:
        kinds += ["sup", "sub"]
    if remaining >= 3:
        kinds += ["frac"]
    kind = kinds[int(rng.integers(0, len(kinds)))]
    digit = lambda: _DIGITS[int(rng.integers(0, 10))]
    if kind == "sym":
        return ("sym", digit()), 1
    if kind in ("sup", "sub"):
        return (kind, digit(), digit()), 2
    spare = remaining - 3
    num_n = 1 + int(rng.integers(0, 2)) if spare >= 1 else 1
    spare -= num_n - 1
    den_n = 1 + int(rng.integers(0, 2)) if spare >= 1 else 1
    num = [digit() for _ in range(num_n)]
    den = [digit() for _ in range(den_n)]
    return ("frac", num, den), 1 + num_n + den_n


def _random_terms(rng, max_symbols):
    budget = int(rng.integers(1, max_symbols + 1))
    terms = []
    remaining = budget
    while remaining > 0:
        term, cost = _random_operand(rng, remaining)
        terms.append(term)
        remaining -= cost
        # operator needs a following operand; sometimes stop on the operand
        if remaining < 2 or rng.random() < 0.35:
            break
        op = _OPERATORS[int(rng.integers(0, len(_OPERATORS)))]
        terms.append(("sym", op))
        remaining -= 1
    return terms


def generate_synthetic(seed, count, max_symbols=8):
    """Deterministic corpus of (InkExpression, LabelGraph) pairs.

    max_symbols=1 degenerates to single-symbol expressions with no relation
    edges. Layouts get mild coordinate jitter plus a random global scale and
    offset, all drawn from one generator seeded with `seed`.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if max_symbols < 1:
        raise ValueError("max_symbols must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        terms = _random_terms(rng, max_symbols)
        expr, lg = compose(terms, expr_id=f"synth{seed}-{k:04d}", rng=rng,
                           jitter=0.01)
        out.append((expr, lg))
    return out
