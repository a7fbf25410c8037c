"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Ops are plain functions on `Tensor`s. While a `Tape` is active (used as a
context manager) every op whose inputs participate in grad registers a
backward closure on it; with no active tape the same ops run as pure
inference-mode numpy. One tape per training step, consumed by a single
backward pass.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    NumericsError,
    ShapeError,
    TapeError,
    TrainingError,
    ValidationError,
)

PROB_EPS = 1e-12  # clamp applied to probabilities before logs


class Tensor:
    """An n-d float64 value with optional gradient participation.

    `data` is row-major float64; `grad` is a same-shape buffer allocated
    lazily during backward and only for tensors with requires_grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None  # tape that produced this tensor, if any

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, requires_grad={self.requires_grad})"


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Append-only record of backward rules for one forward pass.

    Construction order is execution order, so the node list is already
    topologically sorted; backward walks it once in reverse. A tape is
    consumed by backward and cannot be replayed.
    """

    def __init__(self):
        self._nodes = []  # (output tensor, backward closure)
        self._consumed = False

    def __enter__(self):
        if _ACTIVE_TAPES:
            raise TapeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def _record(self, out, backward_fn):
        out.requires_grad = True
        out._tape = self
        self._nodes.append((out, backward_fn))

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Populate .grad of every participating tensor reachable from loss."""
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if not isinstance(loss, Tensor) or loss.data.shape != ():
            shape = getattr(loss, "shape", None)
            raise ShapeError(f"backward needs a scalar loss, got shape {shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        self._consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


def _tape_for(*tensors):
    if _ACTIVE_TAPES and any(t.requires_grad for t in tensors):
        return _ACTIVE_TAPES[-1]
    return None


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product. Accepts (m,k)x(k,n), (m,k)x(k,) and (k,)x(k,n)."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul needs 1-d or 2-d operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} vs {bd.shape}")
    out_data = ad @ bd
    _finite(out_data, "matmul")
    out = Tensor(out_data)
    tape = _tape_for(a, b)
    if tape is not None:
        def bw(g):
            A = ad if ad.ndim == 2 else ad[None, :]
            B = bd if bd.ndim == 2 else bd[:, None]
            G = g.reshape(A.shape[0], B.shape[1])
            _accum(a, (G @ B.T).reshape(ad.shape))
            _accum(b, (A.T @ G).reshape(bd.shape))
        tape._record(out, bw)
    return out


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got shape {x.data.shape}")
    out = Tensor(x.data.T.copy())
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, g.T))
    return out


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.data.shape} into {shape}")
    out = Tensor(x.data.reshape(shape).copy())
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, g.reshape(x.data.shape)))
    return out


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op} needs equal shapes, got {a.data.shape} and {b.data.shape}")


def add(a, b):
    _same_shape(a, b, "add")
    out_data = a.data + b.data
    _finite(out_data, "add")
    out = Tensor(out_data)
    tape = _tape_for(a, b)
    if tape is not None:
        def bw(g):
            _accum(a, g)
            _accum(b, g)
        tape._record(out, bw)
    return out


def add_row(m, v):
    """Add a length-d row vector to every row of a (k,d) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_row needs (k,d) and (d,), got {m.data.shape} and {v.data.shape}")
    out_data = m.data + v.data[None, :]
    _finite(out_data, "add_row")
    out = Tensor(out_data)
    tape = _tape_for(m, v)
    if tape is not None:
        def bw(g):
            _accum(m, g)
            _accum(v, g.sum(axis=0))
        tape._record(out, bw)
    return out


def mul(a, b):
    _same_shape(a, b, "mul")
    out_data = a.data * b.data
    _finite(out_data, "mul")
    out = Tensor(out_data)
    tape = _tape_for(a, b)
    if tape is not None:
        def bw(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)
        tape._record(out, bw)
    return out


def scale(x, c):
    c = float(c)
    if not math.isfinite(c):
        raise ValidationError(f"scale factor must be finite, got {c}")
    out = Tensor(x.data * c)
    _finite(out.data, "scale")
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, g * c))
    return out


def tanh(x):
    out_data = np.tanh(x.data)
    out = Tensor(out_data)
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, g * (1.0 - out_data * out_data)))
    return out


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    out_data = _sigmoid_np(x.data)
    out = Tensor(out_data)
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, g * out_data * (1.0 - out_data)))
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, g * (x.data > 0.0)))
    return out


def softmax(x):
    """Probability simplex over a 1-d tensor, computed with max-subtraction."""
    if x.data.ndim != 1 or x.data.shape[0] < 1:
        raise ShapeError(f"softmax needs a non-empty 1-d tensor, got shape {x.data.shape}")
    z = x.data - x.data.max()
    e = np.exp(z)
    out_data = e / e.sum()
    _finite(out_data, "softmax")
    out = Tensor(out_data)
    tape = _tape_for(x)
    if tape is not None:
        def bw(g):
            _accum(x, out_data * (g - np.dot(g, out_data)))
        tape._record(out, bw)
    return out


def concat(parts):
    """Concatenate 1-d tensors."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat needs 1-d tensors, got shape {p.data.shape}")
    out = Tensor(np.concatenate([p.data for p in parts]))
    tape = _tape_for(*parts)
    if tape is not None:
        sizes = [p.data.shape[0] for p in parts]
        def bw(g):
            i = 0
            for p, n in zip(parts, sizes):
                _accum(p, g[i:i + n])
                i += n
        tape._record(out, bw)
    return out


def vstack(parts):
    """Stack 2-d tensors with equal column counts along rows."""
    parts = list(parts)
    if not parts:
        raise ShapeError("vstack of zero tensors")
    cols = parts[0].data.shape[1] if parts[0].data.ndim == 2 else None
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != cols:
            raise ShapeError(f"vstack needs 2-d tensors with {cols} columns, got {p.data.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    tape = _tape_for(*parts)
    if tape is not None:
        rows = [p.data.shape[0] for p in parts]
        def bw(g):
            i = 0
            for p, n in zip(parts, rows):
                _accum(p, g[i:i + n])
                i += n
        tape._record(out, bw)
    return out


def mean_pool(x):
    """Mean over the rows of a (k,d) tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"mean_pool needs a 2-d tensor, got shape {x.data.shape}")
    k = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0))
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, np.broadcast_to(g / k, x.data.shape)))
    return out


def max_pool2d(x):
    """2x2 non-overlapping spatial max pooling on a (c,h,w) tensor."""
    xd = x.data
    if xd.ndim != 3 or xd.shape[1] % 2 or xd.shape[2] % 2:
        raise ShapeError(f"max_pool2d needs (c, even h, even w), got shape {xd.shape}")
    c, h, w = xd.shape
    win = xd.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = win.argmax(axis=3)
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=3)[..., 0])
    tape = _tape_for(x)
    if tape is not None:
        def bw(g):
            dwin = np.zeros_like(win)
            np.put_along_axis(dwin, idx[..., None], g[..., None], axis=3)
            dx = dwin.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
            _accum(x, dx)
        tape._record(out, bw)
    return out


def conv2d(x, w, b):
    """Same-padding stride-1 convolution of (cin,h,w) with (cout,cin,kh,kw)."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 3 or wd.ndim != 4 or bd.ndim != 1:
        raise ShapeError(f"conv2d needs (cin,h,w), (cout,cin,kh,kw), (cout,), got {xd.shape}, {wd.shape}, {bd.shape}")
    cin, h, width = xd.shape
    cout, cin2, kh, kw = wd.shape
    if cin2 != cin or bd.shape[0] != cout:
        raise ShapeError(f"conv2d channel mismatch: input {xd.shape}, kernel {wd.shape}, bias {bd.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d supports odd kernels only, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (cin, h, w, kh, kw)
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h * width, cin * kh * kw)
    wmat = wd.reshape(cout, cin * kh * kw)
    out_mat = cols @ wmat.T + bd
    _finite(out_mat, "conv2d")
    out = Tensor(out_mat.T.reshape(cout, h, width))
    tape = _tape_for(x, w, b)
    if tape is not None:
        def bw(g):
            gm = g.reshape(cout, h * width).T  # (h*w, cout)
            _accum(b, gm.sum(axis=0))
            _accum(w, (gm.T @ cols).reshape(wd.shape))
            if x.requires_grad:
                dcols = (gm @ wmat).reshape(h, width, cin, kh, kw)
                dxp = np.zeros_like(xp)
                for di in range(kh):
                    for dj in range(kw):
                        dxp[:, di:di + h, dj:dj + width] += dcols[:, :, :, di, dj].transpose(2, 0, 1)
                _accum(x, dxp[:, ph:ph + h, pw:pw + width])
        tape._record(out, bw)
    return out


def embedding_lookup(table, index):
    """Select row `index` of a (v,d) embedding table."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup needs a 2-d table, got shape {table.data.shape}")
    index = int(index)
    v = table.data.shape[0]
    if not 0 <= index < v:
        raise ValidationError(f"embedding index {index} out of range for table of {v} rows")
    out = Tensor(table.data[index].copy())
    tape = _tape_for(table)
    if tape is not None:
        def bw(g):
            d = np.zeros_like(table.data)
            d[index] = g
            _accum(table, d)
        tape._record(out, bw)
    return out


def tensor_sum(x):
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(x.data.sum())
    _finite(out.data, "sum")
    tape = _tape_for(x)
    if tape is not None:
        tape._record(out, lambda g: _accum(x, np.broadcast_to(g, x.data.shape).copy()))
    return out


# ---------------------------------------------------------------------------
# losses


def bce_loss(pred, target):
    """Summed binary cross entropy; predictions clamped to [1e-12, 1-1e-12]."""
    _same_shape(pred, target, "bce_loss")
    t = target.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValidationError("bce_loss targets must be exactly 0 or 1")
    p = np.clip(pred.data, PROB_EPS, 1.0 - PROB_EPS)
    out = Tensor(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum())
    _finite(out.data, "bce_loss")
    tape = _tape_for(pred)
    if tape is not None:
        def bw(g):
            _accum(pred, g * (-(t / p) + (1.0 - t) / (1.0 - p)))
        tape._record(out, bw)
    return out


def mse_loss(a, b):
    """Summed squared difference (no mean)."""
    _same_shape(a, b, "mse_loss")
    d = a.data - b.data
    out = Tensor((d * d).sum())
    _finite(out.data, "mse_loss")
    tape = _tape_for(a, b)
    if tape is not None:
        def bw(g):
            _accum(a, 2.0 * d * g)
            _accum(b, -2.0 * d * g)
        tape._record(out, bw)
    return out


def cross_entropy(logits, target_index):
    """-log softmax(logits)[target_index], computed with log-sum-exp."""
    if logits.data.ndim != 1 or logits.data.shape[0] < 1:
        raise ShapeError(f"cross_entropy needs a non-empty 1-d tensor, got shape {logits.data.shape}")
    target_index = int(target_index)
    v = logits.data.shape[0]
    if not 0 <= target_index < v:
        raise ValidationError(f"cross_entropy target {target_index} out of range for {v} classes")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    out = Tensor(lse - z[target_index])
    _finite(out.data, "cross_entropy")
    tape = _tape_for(logits)
    if tape is not None:
        def bw(g):
            soft = np.exp(z)
            soft /= soft.sum()
            soft[target_index] -= 1.0
            _accum(logits, g * soft)
        tape._record(out, bw)
    return out


# ---------------------------------------------------------------------------
# optimizers and parameter utilities


def _check_grad_finite(name, grad):
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient for parameter '{name}'")


def sgd_step(params, lr):
    """In-place SGD over a {name: Tensor} dict; tensors without grads are skipped."""
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        if p.grad is None:
            continue
        _check_grad_finite(name, p.grad)
        p.data -= lr * p.grad


class Adam:
    """Adam optimizer with per-parameter moment state, serializable into checkpoints."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            _check_grad_finite(name, p.grad)
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def zero_grads(params):
    for p in params.values():
        p.grad = None


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def seeded_uniform(name, shape, fan_in, seed, requires_grad=True):
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, seeded per tensor name.

    Keyed by (seed, sha256(name)) so initialization does not depend on
    creation order or on which other tensors a configuration instantiates.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), key))))
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)
