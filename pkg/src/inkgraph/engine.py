"""Dense tensors with reverse-mode autodiff, plus optimizer, scheduler and checkpoints.

Everything is numpy underneath. A Tape records ops in execution order during a
forward pass; backward() replays the records in reverse, visiting each op once.
Ops are plain functions so the gradient-check suite can enumerate them.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"INKGRPH1"
CHECKPOINT_VERSION = 1


class EngineError(Exception):
    pass


class ShapeError(EngineError):
    pass


class NonFiniteError(EngineError):
    pass


_ACTIVE_TAPE = None


class Tensor:
    """Dense float array with an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


class Tape:
    """Execution-ordered op record for one forward pass. Single-threaded by design."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise EngineError("a tape is already active; one training step = one tape")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._nodes)


def active_tape():
    return _ACTIVE_TAPE


def _as_tensor(x, like_dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like_dtype))


def _check_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: produced non-finite values")


def _record(op, out_data, inputs, backfn):
    _check_finite(op, out_data)
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._nodes.append((out, inputs, backfn))
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    # reduce a gradient back to the pre-broadcast shape
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like_dtype=a.dtype)
    out = a.data + b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record("add", out, (a, b), back)


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like_dtype=a.dtype)
    out = a.data - b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record("sub", out, (a, b), back)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like_dtype=a.dtype)
    out = a.data * b.data

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record("mul", out, (a, b), back)


def neg(a):
    a = _as_tensor(a)

    def back(g):
        _accum(a, -g)

    return _record("neg", -a.data, (a,), back)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def back(g):
        _accum(a, g * c)

    return _record("scale", a.data * c, (a,), back)


def add_const(a, c):
    a = _as_tensor(a)
    c = float(c)

    def back(g):
        _accum(a, g)

    return _record("add_const", a.data + c, (a,), back)


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like_dtype=a.dtype)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record("matmul", out, (a, b), back)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def back(g):
        _accum(a, g.reshape(a.data.shape))

    return _record("reshape", out, (a,), back)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        _accum(a, g.transpose(inv))

    return _record("transpose", a.data.transpose(axes), (a,), back)


def broadcast_to(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape).copy()

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return _record("broadcast_to", out, (a,), back)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _record("concat", out, tuple(tensors), back)


def gather_rows(a, indices):
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: indices must be 1-D, got shape {idx.shape}")
    out = a.data[idx]

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return _record("gather_rows", out, (a,), back)


def scatter_rows(a, indices, num_rows):
    """Rows of `a` placed at `indices` of a zero tensor with num_rows rows (add on collision)."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ShapeError(f"scatter_rows: need one index per row, got {idx.shape} for {a.shape}")
    out = np.zeros((num_rows,) + a.data.shape[1:], dtype=a.data.dtype)
    np.add.at(out, idx, a.data)

    def back(g):
        _accum(a, g[idx])

    return _record("scatter_rows", out, (a,), back)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            _accum(a, np.full_like(a.data, g))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _record("sum", out, (a,), back)


def tmean(a, axis=None):
    a = _as_tensor(a)
    out = a.data.mean(axis=axis)
    cnt = a.data.size if axis is None else a.data.shape[axis]

    def back(g):
        if axis is None:
            _accum(a, np.full_like(a.data, g / cnt))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape) / cnt)

    return _record("mean", out, (a,), back)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def back(g):
        _accum(a, g * (a.data > 0))

    return _record("relu", out, (a,), back)


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    slope = float(slope)
    out = np.where(a.data > 0, a.data, a.data * slope)

    def back(g):
        _accum(a, g * np.where(a.data > 0, 1.0, slope))

    return _record("leaky_relu", out, (a,), back)


def texp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)

    def back(g):
        _accum(a, g * out)

    return _record("exp", out, (a,), back)


def tlog(a):
    a = _as_tensor(a)
    out = np.log(a.data)

    def back(g):
        _accum(a, g / a.data)

    return _record("log", out, (a,), back)


def pow_scalar(a, p):
    """a ** p for a >= 0 and p >= 0 (focal-weight use); subgradient 0 at a == 0."""
    a = _as_tensor(a)
    p = float(p)
    if p < 0:
        raise EngineError("pow_scalar: exponent must be >= 0")
    out = np.power(a.data, p)

    def back(g):
        if p == 0.0:
            grad = np.zeros_like(a.data)
        elif p == 1.0:
            grad = np.ones_like(a.data)
        else:
            base = np.where(a.data > 0, a.data, 1.0)
            grad = np.where(a.data > 0, p * np.power(base, p - 1.0), 0.0)
        _accum(a, g * grad)

    return _record("pow_scalar", out, (a,), back)


# ---------------------------------------------------------------------------
# convolution family


def conv1d(x, w, stride=1, padding=0, groups=1):
    """x: (B, Cin, L), w: (Cout, Cin/groups, K) -> (B, Cout, Lout)."""
    x = _as_tensor(x)
    w = _as_tensor(w, like_dtype=x.dtype)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: expects (B,C,L) and (O,C/g,K), got {x.shape}, {w.shape}")
    bsz, cin, length = x.shape
    cout, cper, k = w.shape
    if cin % groups or cout % groups or cper != cin // groups:
        raise ShapeError(f"conv1d: group mismatch, x={x.shape} w={w.shape} groups={groups}")
    lout = (length + 2 * padding - k) // stride + 1
    if lout <= 0:
        raise ShapeError(f"conv1d: kernel {k} too large for length {length} (pad {padding})")

    if groups == 1 and k == 1 and stride == 1 and padding == 0:
        # pointwise: one batched matmul
        w2 = w.data[:, :, 0]
        out = np.matmul(w2[None], x.data)

        def back(g):
            _accum(w, np.tensordot(g, x.data, axes=([0, 2], [0, 2]))[:, :, None])
            _accum(x, np.matmul(w2.T[None], g))

        return _record("conv1d", out, (x, w), back)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    cg, og = cin // groups, cout // groups
    wing = np.ascontiguousarray(win.reshape(bsz, groups, cg, lout, k))
    wg = w.data.reshape(groups, og, cg, k)
    out = np.einsum("bgclk,gock->bgol", wing, wg, optimize=True)
    out = out.reshape(bsz, cout, lout).astype(x.dtype, copy=False)

    def back(g):
        gg = g.reshape(bsz, groups, og, lout)
        gw = np.einsum("bgclk,bgol->gock", wing, gg, optimize=True).reshape(w.shape)
        gxp = np.zeros_like(xp)
        gxg = gxp.reshape(bsz, groups, cg, xp.shape[2])
        for kk in range(k):
            contrib = np.einsum("bgol,goc->bgcl", gg, wg[:, :, :, kk], optimize=True)
            gxg[:, :, :, kk:kk + stride * lout:stride] += contrib
        gx = gxp if padding == 0 else gxp[:, :, padding:-padding]
        _accum(x, gx)
        _accum(w, gw.astype(w.dtype, copy=False))

    return _record("conv1d", out, (x, w), back)


def avg_pool1d(x, kernel, stride):
    """x: (B, C, L) -> (B, C, Lout) with mean over non-padded windows."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"avg_pool1d: expects (B,C,L), got {x.shape}")
    length = x.shape[2]
    lout = (length - kernel) // stride + 1
    if lout <= 0:
        raise ShapeError(f"avg_pool1d: kernel {kernel} too large for length {length}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride]
    out = win.mean(axis=3)

    def back(g):
        gx = np.zeros_like(x.data)
        for kk in range(kernel):
            gx[:, :, kk:kk + stride * lout:stride] += g / kernel
        _accum(x, gx)

    return _record("avg_pool1d", out, (x,), back)


# ---------------------------------------------------------------------------
# stochastic / masked ops


def dropout(x, rate, rng):
    """Inverted-scaling dropout; rng may be a seed or a numpy Generator."""
    x = _as_tensor(x)
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise EngineError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        def back0(g):
            _accum(x, g)
        return _record("dropout", x.data.copy(), (x,), back0)
    gen = np.random.default_rng(rng)
    keep = (gen.random(x.data.shape) >= rate).astype(x.dtype)
    factor = 1.0 / (1.0 - rate)
    out = x.data * keep * factor

    def back(g):
        _accum(x, g * keep * factor)

    return _record("dropout", out, (x,), back)


def masked_softmax(logits, mask, axis):
    """Softmax over entries where mask != 0; masked entries 0; fully-masked slices all 0."""
    logits = _as_tensor(logits)
    m = np.broadcast_to(np.asarray(mask) != 0, logits.data.shape)
    shifted_max = np.where(m, logits.data, -np.inf).max(axis=axis, keepdims=True)
    shifted_max = np.where(np.isfinite(shifted_max), shifted_max, 0.0)
    # mask before exp so discarded entries cannot overflow
    e = np.exp(np.where(m, logits.data - shifted_max, -np.inf))
    denom = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(logits, out * (g - dot))

    return _record("masked_softmax", out, (logits,), back)


def log_softmax(logits, axis):
    logits = _as_tensor(logits)
    mx = logits.data.max(axis=axis, keepdims=True)
    shifted = logits.data - mx
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        _accum(logits, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _record("log_softmax", out, (logits,), back)


# ---------------------------------------------------------------------------
# backward


def backward(tape, loss, params=None):
    """Accumulate gradients for one recorded forward pass.

    Visits ops in reverse execution order exactly once. Returns a dict of
    gradient arrays when `params` (name -> Tensor) is given; parameters the
    loss never touched get zeros.
    """
    if not isinstance(tape, Tape):
        raise EngineError("backward: first argument must be a Tape")
    if loss.data.size != 1:
        raise EngineError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if params is not None:
        for p in params.values():
            p.grad = None
    for out, inputs, _ in tape._nodes:
        out.grad = None
        for t in inputs:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backfn in reversed(tape._nodes):
        if out.grad is None:
            continue
        backfn(out.grad)
    if params is not None:
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()
        }
    return None


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Adam with bias correction. Zero gradient from a fresh state is a fixed point."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)


class PlateauScheduler:
    """Cut the learning rate by `factor` after `patience` epochs without improvement."""

    def __init__(self, lr, factor=0.1, patience=20):
        self.lr = float(lr)
        self.factor = float(factor)
        self.patience = int(patience)
        self.best = np.inf
        self.stale = 0

    def update(self, loss):
        loss = float(loss)
        if loss < self.best:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(path, params, vocabulary=None, model_config=None,
                    train_config=None, graph_config=None):
    """Write a self-describing container: magic, header length, JSON header, raw buffers.

    Buffers are little-endian, C order, in header entry order; round-trips bit-exactly.
    """
    entries = []
    blobs = []
    for name, p in params.items():
        arr = p.data if isinstance(p, Tensor) else np.asarray(p)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(le.tobytes(order="C"))
    header = {
        "format_version": CHECKPOINT_VERSION,
        "vocabulary": vocabulary,
        "model_config": model_config,
        "train_config": train_config,
        "graph_config": graph_config,
        "tensors": entries,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns the header dict plus 'params' (name -> ndarray)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise EngineError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise EngineError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        params = {}
        for ent in header["tensors"]:
            dt = np.dtype(ent["dtype"]).newbyteorder("<")
            count = int(np.prod(ent["shape"])) if ent["shape"] else 1
            buf = fh.read(count * dt.itemsize)
            arr = np.frombuffer(buf, dtype=dt).reshape(ent["shape"])
            params[ent["name"]] = arr.astype(np.dtype(ent["dtype"]), copy=True)
    header["params"] = params
    return header
