"""Independent reference implementations the tests check the library against.

Everything here is written from first principles (loops, sampling, brute
force) rather than reusing library code, so agreement is evidence.
"""

import itertools

import numpy as np


def finite_diff_grad(f, x, eps=1e-6):
    """Central finite differences of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def naive_conv1d(x, w, stride=1, padding=0, groups=1):
    """Nested-loop 1-D convolution (cross-correlation), grouped."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bsz, cin, length = x.shape
    cout, cper, k = w.shape
    xp = np.zeros((bsz, cin, length + 2 * padding))
    xp[:, :, padding:padding + length] = x
    lout = (length + 2 * padding - k) // stride + 1
    out = np.zeros((bsz, cout, lout))
    og = cout // groups
    for bi in range(bsz):
        for oc in range(cout):
            gi = oc // og
            for t in range(lout):
                acc = 0.0
                for ic in range(cper):
                    for kk in range(k):
                        acc += xp[bi, gi * cper + ic, t * stride + kk] * w[oc, ic, kk]
                out[bi, oc, t] = acc
    return out


# ---------------------------------------------------------------------------
# geometry


def _hull_of(points):
    """Monotone chain, rewritten here: returns CCW vertices (1 or 2 for
    degenerate inputs)."""
    pts = sorted({(float(x), float(y)) for x, y in points})
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2:
        return np.array(hull)
    return np.array(hull)


def _boundary_samples(hull, count):
    """Points spread uniformly along the hull's perimeter."""
    if hull.shape[0] == 1:
        return np.repeat(hull, count, axis=0)
    closed = np.vstack([hull, hull[:1]]) if hull.shape[0] > 2 else hull
    seg = np.diff(closed, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    total = lens.sum()
    if total == 0:
        return np.repeat(hull[:1], count, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    targets = np.linspace(0.0, total, count, endpoint=False)
    out = np.empty((count, 2))
    for idx, t in enumerate(targets):
        s = np.searchsorted(cum, t, side="right") - 1
        s = min(s, len(seg) - 1)
        u = (t - cum[s]) / lens[s] if lens[s] > 0 else 0.0
        out[idx] = closed[s] + u * seg[s]
    return out


def _crossing_number_inside(pts, hull):
    """Even-odd interior test for pts (..., 2); boundary points unspecified."""
    a = hull
    b = np.roll(hull, -1, axis=0)
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    dy = b[:, 1] - a[:, 1]
    straddles = (a[:, 1] > y) != (b[:, 1] > y)
    xint = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / np.where(dy == 0, 1.0, dy)
    return (np.sum(straddles & (x < xint), axis=-1) % 2) == 1


def _near_boundary(pts, hull, shrink=1e-9):
    """Points of pts (..., 2) within `shrink` of any hull edge."""
    a = hull
    b = np.roll(hull, -1, axis=0)
    d = b - a
    ln2 = (d * d).sum(axis=1)
    rel = pts[..., None, :] - a
    t = (rel * d).sum(axis=-1) / np.where(ln2 == 0, 1.0, ln2)
    proj = a + t[..., None] * d
    dist = np.linalg.norm(pts[..., None, :] - proj, axis=-1)
    return ((ln2 > 0) & (t >= 0.0) & (t <= 1.0) & (dist < shrink)).any(axis=-1)


def _points_in_polygon(pts, hull, shrink=1e-9):
    """Strict interior test (crossing number) for pts (..., 2); points within
    `shrink` of the boundary do not count. Degenerate hulls have no interior."""
    pts = np.asarray(pts, dtype=np.float64)
    if hull.shape[0] < 3:
        return np.zeros(pts.shape[:-1], dtype=bool)
    inside = _crossing_number_inside(pts, hull)
    if inside.any():
        sel = inside.nonzero()
        inside[sel] &= ~_near_boundary(pts[sel], hull, shrink)
    return inside


def _proper_cross(P, Q, a, b, eps=1e-12):
    """Do open segments P[r]->Q[r] cross segment ab at interior points?"""

    def orient(ox, oy, ux, uy, vx, vy):
        return (ux - ox) * (vy - oy) - (uy - oy) * (vx - ox)

    px, py = P[:, 0], P[:, 1]
    qx, qy = Q[:, 0], Q[:, 1]
    d1 = orient(a[0], a[1], b[0], b[1], px, py)
    d2 = orient(a[0], a[1], b[0], b[1], qx, qy)
    d3 = orient(px, py, qx, qy, np.full_like(px, a[0]), np.full_like(py, a[1]))
    d4 = orient(px, py, qx, qy, np.full_like(px, b[0]), np.full_like(py, b[1]))
    proper = (((d1 > eps) & (d2 < -eps)) | ((d1 < -eps) & (d2 > eps))) & \
             (((d3 > eps) & (d4 < -eps)) | ((d3 < -eps) & (d4 > eps)))
    # collinear overlap with positive length also blocks a ray
    collinear = (np.abs(d1) <= eps) & (np.abs(d2) <= eps) & \
                (np.abs(d3) <= eps) & (np.abs(d4) <= eps)
    axis = 0 if abs(b[0] - a[0]) >= abs(b[1] - a[1]) else 1
    lo1 = np.minimum(P[:, axis], Q[:, axis])
    hi1 = np.maximum(P[:, axis], Q[:, axis])
    lo2, hi2 = sorted((a[axis], b[axis]))
    overlap = np.minimum(hi1, hi2) - np.maximum(lo1, lo2) > eps
    return proper | (collinear & overlap)


_PROBE_TS = np.linspace(0.02, 0.98, 100)


def _rays_blocked(P, Q, hull, ts=None, interior_samples=None):
    """Which segments P[r]->Q[r] does this hull block?

    A ray is blocked when some probe point along it lies strictly inside the
    hull. The crossing-number test runs on every probe; the boundary-proximity
    exclusion only needs to run until one strictly interior probe is found per
    ray, so it is evaluated lazily (first candidate, then the rest of the ray
    only if that candidate sat on the boundary)."""
    if hull.shape[0] >= 3:
        if ts is None:
            ts = (_PROBE_TS if interior_samples is None
                  else np.linspace(0.02, 0.98, interior_samples))
        probes = P[:, None, :] + ts[None, :, None] * (Q - P)[:, None, :]
        inside = _crossing_number_inside(probes, hull)
        blocked = inside.any(axis=1)
        hit = blocked.nonzero()[0]
        if hit.size:
            first = inside[hit].argmax(axis=1)
            excluded = _near_boundary(probes[hit, first], hull)
            for r in hit[excluded]:
                blocked[r] = _points_in_polygon(probes[r], hull).any()
        return blocked
    if hull.shape[0] == 2:
        return _proper_cross(P, Q, hull[0], hull[1])
    return np.zeros(P.shape[0], dtype=bool)


def _rays_blocked_staged(P, Q, hull):
    """Same predicate as _rays_blocked with the full probe grid, evaluated as a
    coarse pass (every 10th probe) plus a fine pass on the survivors."""
    if hull.shape[0] < 3:
        return _rays_blocked(P, Q, hull)
    coarse = _PROBE_TS[::10]
    fine = np.concatenate([_PROBE_TS[k::10] for k in range(1, 10)])
    blocked = _rays_blocked(P, Q, hull, ts=coarse)
    alive = ~blocked
    if alive.any():
        blocked[alive] = _rays_blocked(P[alive], Q[alive], hull, ts=fine)
    return blocked


def _fan_centroid(hull):
    """Area centroid by fan triangulation (degenerate hulls: vertex mean)."""
    if hull.shape[0] < 3:
        return hull.mean(axis=0)
    a = hull[0]
    centers, weights = [], []
    for k in range(1, hull.shape[0] - 1):
        b, c = hull[k], hull[k + 1]
        w = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) / 2.0
        centers.append((a + b + c) / 3.0)
        weights.append(w)
    weights = np.array(weights)
    if weights.sum() == 0:
        return hull.mean(axis=0)
    return np.average(np.array(centers), axis=0, weights=weights)


def brute_force_visibility(stroke_coords, rays_per_pair=10000):
    """Sampled-ray visibility oracle over convex hulls of the given strokes.

    stroke_coords: list of (m, 2) arrays. For each ordered pair, casts rays
    from the source hull's area centroid to `rays_per_pair` points spread
    uniformly along the target hull's boundary; a ray is blocked when an
    interior probe lands strictly inside any other hull (degenerate hulls
    block by proper segment crossing). Symmetrized by OR.
    """
    hulls = [_hull_of(c) for c in stroke_coords]
    centers = [_fan_centroid(h) for h in hulls]
    targets = []
    for h in hulls:
        t = _boundary_samples(h, rays_per_pair)
        # stride-ordered so early chunks already cover the whole perimeter
        order = np.concatenate([np.arange(k, t.shape[0], 20) for k in range(20)])
        targets.append(t[order])
    n = len(hulls)
    vis = np.zeros((n, n), dtype=np.int8)
    chunk = max(1, rays_per_pair // 20)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if vis[j, i]:
                vis[i, j] = 1
                continue
            others = [hulls[k] for k in range(n) if k != i and k != j]
            others.sort(key=lambda h: h.shape[0])  # cheap segment tests first
            seen = False
            full = targets[j]
            for s in range(0, full.shape[0], chunk):
                Q = full[s:s + chunk]
                clear = np.ones(Q.shape[0], dtype=bool)
                P = np.broadcast_to(centers[i], Q.shape)
                for h in others:
                    if not clear.any():
                        break
                    clear[clear] &= ~_rays_blocked_staged(P[clear], Q[clear], h)
                if clear.any():
                    seen = True
                    break
            vis[i, j] = 1 if seen else 0
    out = np.maximum(vis, vis.T)
    np.fill_diagonal(out, 0)
    return out


# ---------------------------------------------------------------------------
# expression-level metric oracle


def _segments_brute(lg):
    """Same-symbol partition by exhaustive closure (no union-find)."""
    n = lg.num_strokes
    groups = [{i} for i in range(n)]
    star = [(a, b) for a, b, r in lg.edges if r == "*"]
    changed = True
    while changed:
        changed = False
        for a, b in star:
            ga = next(g for g in groups if a in g)
            gb = next(g for g in groups if b in g)
            if ga is not gb:
                groups.remove(ga)
                groups.remove(gb)
                groups.append(ga | gb)
                changed = True
    return [frozenset(g) for g in groups]


def brute_force_expression_metrics(pred, gold):
    """Seg/Sym/Rel/Exp/Stru via explicit segment-correspondence enumeration."""
    pseg = _segments_brute(pred)
    gseg = _segments_brute(gold)

    def correspondences():
        """All bijections mapping each gold segment to an identical pred stroke set."""
        if len(pseg) != len(gseg):
            return
        for perm in itertools.permutations(range(len(pseg))):
            if all(gseg[k] == pseg[perm[k]] for k in range(len(gseg))):
                yield perm

    seg = any(True for _ in correspondences())

    def seg_label(lg, segs, k):
        return lg.node_labels[min(segs[k])]

    sym = False
    if seg:
        for perm in correspondences():
            if all(seg_label(gold, gseg, k) == seg_label(pred, pseg, perm[k])
                   for k in range(len(gseg))):
                sym = True
                break

    def triples(lg, segs):
        where = {}
        for k, s in enumerate(segs):
            for i in s:
                where[i] = k
        out = set()
        for a, b, r in lg.edges:
            if r == "*":
                continue
            if where[a] != where[b]:
                out.add((segs[where[a]], segs[where[b]], r))
        return out

    rel = triples(pred, pseg) == triples(gold, gseg)
    stru = seg and rel
    exp = sym and rel
    return {"seg": seg, "sym": sym, "rel": rel, "exp": exp, "stru": stru}
