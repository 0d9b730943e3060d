"""Dense tensors with reverse-mode automatic differentiation.

Values are contiguous row-major numpy arrays (float32 for training,
float64 for verification). Every operation that participates in
differentiation records its parents and a backward closure on the output
node; the recorded graph is the tape. ``backward`` walks it once in
reverse topological order and accumulates gradients additively.

Layout convention is channel-first [B, C, H, W] for image-shaped data.
Broadcasting is supported over leading batch axes only; anything fancier
is a shape error by design.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the operation's contract."""


class NumericsError(FloatingPointError):
    """A forward op produced NaN/Inf from finite inputs."""


# Finite-output checking on every op result. Cheap relative to the ops
# themselves; can be disabled for benchmarking.
_CHECK_FINITE = True


def set_finite_checks(enabled):
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


_node_ids = itertools.count()


class Tensor:
    """A numpy array plus optional gradient bookkeeping.

    ``_parents`` and ``_backward_fn`` form the tape entry for the op that
    produced this node. Node ids increase monotonically with creation, so
    descending id order is a valid reverse-topological order by
    construction (an op's output is always created after its inputs).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_id")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._id = next(_node_ids)

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._item_err()

    def _item_err(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    # -- backward ----------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        nodes = _reachable(self)
        self.grad = np.ones_like(self.data)
        # Descending creation id == reverse topological order.
        for node in sorted(nodes, key=lambda n: n._id, reverse=True):
            if node._backward_fn is None or node.grad is None:
                continue
            node._backward_fn(node.grad)


def _reachable(root):
    """All requires_grad nodes reachable from root, iteratively (deep graphs)."""
    seen = {id(root): root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if id(p) not in seen:
                seen[id(p)] = p
                stack.append(p)
    return list(seen.values())


def gradients(loss, params):
    """Gradients of a scalar loss w.r.t. the given leaves.

    Leaves with no path to the loss get zeros. Existing .grad buffers on
    the leaves are replaced, not accumulated into.
    """
    for p in params:
        p.grad = None
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# -- op plumbing -------------------------------------------------------------


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    """Create an op output node, recording the tape entry if needed."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericsError("operation produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data if data.flags["C_CONTIGUOUS"] else np.ascontiguousarray(data)
    out.grad = None
    out._id = next(_node_ids)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True) if g.dtype != t.dtype else g.copy()
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting over leading axes)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else _as_tensor(a, b.dtype)
    b = b if isinstance(b, Tensor) else _as_tensor(b, a.dtype)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not conform") from None

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward_fn)


def neg(a):
    def backward_fn(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward_fn)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _as_tensor(a, b.dtype)
    b = b if isinstance(b, Tensor) else _as_tensor(b, a.dtype)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not conform") from None

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward_fn)


def exp(a):
    data = np.exp(a.data)

    def backward_fn(g):
        _accum(a, g * data)

    return _make(data, (a,), backward_fn)


def _sigmoid_raw(x):
    # Overflow-free logistic: exp is only ever taken of a non-positive value.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a):
    data = _sigmoid_raw(a.data)

    def backward_fn(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward_fn)


def silu(a):
    """x * sigmoid(x)."""
    s = _sigmoid_raw(a.data)
    data = a.data * s

    def backward_fn(g):
        _accum(a, g * (s + data * (1.0 - s)))

    return _make(data, (a,), backward_fn)


def softplus(a):
    """log(1 + exp(x)), computed without overflow."""
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def backward_fn(g):
        _accum(a, g * _sigmoid_raw(a.data))

    return _make(data, (a,), backward_fn)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            gx = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gx, a.shape))

    return _make(np.asarray(data), (a,), backward_fn)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def global_avg_pool(a):
    """[B, C, H, W] -> [B, C] spatial mean."""
    if a.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [B,C,H,W], got {a.shape}")
    B, C, H, W = a.shape
    data = a.data.mean(axis=(2, 3))

    def backward_fn(g):
        _accum(a, np.broadcast_to(g[:, :, None, None] / (H * W), a.shape))

    return _make(data, (a,), backward_fn)


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape):
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward_fn(g):
        _accum(a, g.reshape(a.shape))

    return _make(data, (a,), backward_fn)


def permute(a, axes):
    axes = tuple(axes)
    inv = np.argsort(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))

    def backward_fn(g):
        _accum(a, np.ascontiguousarray(g.transpose(inv)))

    return _make(data, (a,), backward_fn)


def flip(a, axis):
    data = np.ascontiguousarray(np.flip(a.data, axis=axis))

    def backward_fn(g):
        _accum(a, np.ascontiguousarray(np.flip(g, axis=axis)))

    return _make(data, (a,), backward_fn)


def concat(tensors, axis=1):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(f"concat: shape {t.shape} does not match {tensors[0].shape} off axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, np.ascontiguousarray(g[tuple(idx)]))

    return _make(data, tuple(tensors), backward_fn)


def split(a, sizes, axis=1):
    """Inverse of concat: split along `axis` into chunks of the given sizes."""
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {sizes} do not sum to axis extent {a.shape[axis]}")
    outs = []
    lo = 0
    for size in sizes:
        hi = lo + size
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        idx = tuple(idx)
        piece = np.ascontiguousarray(a.data[idx])

        def backward_fn(g, idx=idx):
            buf = np.zeros(a.shape, dtype=g.dtype)
            buf[idx] = g
            _accum(a, buf)

        outs.append(_make(piece, (a,), backward_fn))
        lo = hi
    return tuple(outs)


def permute_index(a, perm, axis=1):
    """Reorder along `axis` by a bijective index array (exact, its own inverse op)."""
    perm = np.asarray(perm)
    if perm.ndim != 1 or perm.shape[0] != a.shape[axis]:
        raise ShapeError(f"permute_index: perm of length {perm.shape} vs axis extent {a.shape[axis]}")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    data = np.ascontiguousarray(np.take(a.data, perm, axis=axis))

    def backward_fn(g):
        _accum(a, np.ascontiguousarray(np.take(g, inv, axis=axis)))

    return _make(data, (a,), backward_fn)


# -- linear algebra ------------------------------------------------------------


def linear(x, weight, bias=None):
    """x @ weight.T + bias, applied over the last axis of x.

    weight is [out, in]; bias, when given, is [out].
    """
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight in-dim {weight.shape[1]}")
    data = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} vs out-dim {weight.shape[0]}")
        data = data + bias.data

    def backward_fn(g):
        _accum(x, g @ weight.data)
        gflat = g.reshape(-1, g.shape[-1])
        xflat = x.data.reshape(-1, x.shape[-1])
        _accum(weight, gflat.T @ xflat)
        if bias is not None:
            _accum(bias, gflat.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, backward_fn)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"layer_norm: gamma/beta must be [{C}], got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward_fn(g):
        gg = g * gamma.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        _accum(x, (gg - m1 - xhat * m2) * inv)
        red = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xhat).sum(axis=red))
        _accum(beta, g.sum(axis=red))

    return _make(data, (x, gamma, beta), backward_fn)


# -- convolution and resizing ---------------------------------------------------


def conv2d(x, kernel, stride=1, padding=0, bias=None):
    """2D cross-correlation over [B, C_in, H, W] with kernel [C_out, C_in, kh, kw]."""
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: need 4D input and kernel, got {x.shape} and {kernel.shape}")
    B, Cin, H, W = x.shape
    Cout, Ckin, kh, kw = kernel.shape
    if Ckin != Cin:
        raise ShapeError(f"conv2d: input has {Cin} channels but kernel expects {Ckin}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # im2col via strided view: [B, Cin, kh, kw, Ho, Wo]
    sB, sC, sH, sW = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, Cin, kh, kw, Ho, Wo),
        strides=(sB, sC, sH, sW, sH * stride, sW * stride),
        writeable=False,
    )
    cols = win.reshape(B, Cin * kh * kw, Ho * Wo)
    wmat = kernel.data.reshape(Cout, Cin * kh * kw)
    data = (wmat @ cols).reshape(B, Cout, Ho, Wo)
    if bias is not None:
        if bias.shape != (Cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} vs {Cout} output channels")
        data = data + bias.data[None, :, None, None]

    def backward_fn(g):
        gmat = np.ascontiguousarray(g.reshape(B, Cout, Ho * Wo))
        gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
        _accum(kernel, gw.reshape(kernel.shape))
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gmat).reshape(B, Cin, kh, kw, Ho, Wo)
            gx = np.zeros((B, Cin, Hp, Wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + Ho * stride : stride, j : j + Wo * stride : stride] += gcols[:, :, i, j]
            if padding:
                gx = gx[:, :, padding:-padding, padding:-padding]
            _accum(x, np.ascontiguousarray(gx))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(data, parents, backward_fn)


def dwconv1d(x, kernel, bias=None):
    """Depthwise width-k convolution along the sequence axis of [B, L, D].

    kernel is [D, k]; padding is centred ('same'), so the output length
    equals the input length.
    """
    if x.ndim != 3 or kernel.ndim != 2:
        raise ShapeError(f"dwconv1d: need [B,L,D] input and [D,k] kernel, got {x.shape}, {kernel.shape}")
    B, L, D = x.shape
    Dk, k = kernel.shape
    if Dk != D:
        raise ShapeError(f"dwconv1d: {D} channels vs kernel for {Dk}")
    pl = (k - 1) // 2
    pr = k - 1 - pl
    xp = np.pad(x.data, ((0, 0), (pl, pr), (0, 0)))
    data = np.zeros_like(x.data)
    for j in range(k):
        data += xp[:, j : j + L, :] * kernel.data[:, j]
    if bias is not None:
        data = data + bias.data

    def backward_fn(g):
        gk = np.empty_like(kernel.data)
        for j in range(k):
            gk[:, j] = (g * xp[:, j : j + L, :]).sum(axis=(0, 1))
        _accum(kernel, gk)
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 1)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + L, :] += g * kernel.data[:, j]
            _accum(x, np.ascontiguousarray(gxp[:, pl : pl + L, :]))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(data, parents, backward_fn)


def _resize_weights(n_in, n_out):
    """Source indices and lerp weights for one axis, align-corners=false."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    hi = np.clip(lo + 1, 0, n_in - 1)
    lo = np.clip(lo, 0, n_in - 1)
    return lo, hi, frac


def bilinear_resize(x, out_h, out_w):
    """Bilinear interpolation of [B, C, H, W] to [B, C, out_h, out_w].

    Fixed convention: align-corners=false with edge-clamped sampling.
    """
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize expects [B,C,H,W], got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output size {out_h}x{out_w} must be >= 1")
    B, C, H, W = x.shape
    if (out_h, out_w) == (H, W):
        return reshape(x, x.shape)  # identity, but keeps the graph uniform

    y0, y1, fy = _resize_weights(H, out_h)
    x0, x1, fx = _resize_weights(W, out_w)
    fy = fy.astype(x.dtype)[:, None]
    fx = fx.astype(x.dtype)[None, :]

    top = x.data[:, :, y0, :][:, :, :, x0] * (1 - fx) + x.data[:, :, y0, :][:, :, :, x1] * fx
    bot = x.data[:, :, y1, :][:, :, :, x0] * (1 - fx) + x.data[:, :, y1, :][:, :, :, x1] * fx
    data = top * (1 - fy) + bot * fy

    def backward_fn(g):
        gx = np.zeros((B, C, H, W), dtype=g.dtype)
        gtop = g * (1 - fy)
        gbot = g * fy
        for rows, gpart in ((y0, gtop), (y1, gbot)):
            left = gpart * (1 - fx)
            right = gpart * fx
            np.add.at(gx, (slice(None), slice(None), rows[:, None], x0[None, :]), left)
            np.add.at(gx, (slice(None), slice(None), rows[:, None], x1[None, :]), right)
        _accum(x, gx)

    return _make(data, (x,), backward_fn)


# -- losses ---------------------------------------------------------------------


def bce_with_logits(logits, target):
    """Mean binary cross-entropy from logits, in log-sum-exp stable form.

    target values must lie in [0, 1] (soft labels allowed).
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs target {t.shape}")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError("bce_with_logits: target values must lie in [0, 1]")
    z = logits.data
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = per.size
    data = np.asarray(per.sum() / n)

    def backward_fn(g):
        _accum(logits, g * (_sigmoid_raw(z) - t) / n)

    return _make(data, (logits,), backward_fn)


# -- gradient checking ------------------------------------------------------------


@dataclass
class GradcheckReport:
    max_abs_err: float
    max_rel_err: float
    tol: float
    checked: int
    passed: bool

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        return (
            f"{flag}: max_abs_err={self.max_abs_err:.3e} max_rel_err={self.max_rel_err:.3e} "
            f"(tol={self.tol:.1e}, {self.checked} coords)"
        )


def gradcheck(op, inputs, eps=1e-5, tol=1e-4, max_coords_per_input=None, seed=0):
    """Compare reverse-mode gradients of `op` against central differences.

    `op` maps the given Tensors to one Tensor; a fixed random projection
    reduces its output to a scalar so arbitrary output shapes are
    supported. Inputs should be float64 for the documented tolerances.
    When an input is large, `max_coords_per_input` limits the number of
    finite-difference probes (chosen deterministically from `seed`).
    Relative error uses max(1, |analytic|, |numeric|) as denominator, so
    tiny gradients are compared absolutely.
    """
    if eps <= 0:
        raise ValueError("gradcheck: eps must be positive")
    rng = np.random.default_rng(seed)
    probe = None

    def scalar_loss():
        nonlocal probe
        out = op(*inputs)
        if probe is None:
            probe = rng.standard_normal(out.shape).astype(out.dtype)
        return tsum(mul(out, Tensor(probe)))

    loss = scalar_loss()
    analytic = gradients(loss, list(inputs))

    max_abs = 0.0
    max_rel = 0.0
    checked = 0
    for inp, grad in zip(inputs, analytic):
        flat = inp.data.reshape(-1)
        n = flat.size
        if max_coords_per_input is not None and n > max_coords_per_input:
            coords = rng.choice(n, size=max_coords_per_input, replace=False)
        else:
            coords = range(n)
        gflat = grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar_loss().item()
            flat[i] = orig - eps
            fm = scalar_loss().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = float(gflat[i])
            err = abs(a - numeric)
            rel = err / max(1.0, abs(a), abs(numeric))
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, rel)
            checked += 1

    return GradcheckReport(max_abs, max_rel, tol, checked, max_rel < tol)
