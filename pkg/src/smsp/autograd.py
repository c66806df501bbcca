"""Reverse-mode automatic differentiation over dense numpy arrays.

The graph is recorded eagerly: each op returns a Tensor that keeps its
parents and a closure that routes the upstream gradient back to them.
Storage dtype is float32 unless a caller asks for float64; reductions
(matmul, conv sums, softmax normalizers) run in float64 and are cast
back to the storage dtype. Gradients are held in float64 throughout.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Parameter",
    "no_grad",
    "backward",
    "zero_grad",
    "add",
    "scale",
    "mul",
    "matmul",
    "add_bias",
    "relu",
    "conv2d",
    "avg_pool2",
    "reshape",
    "take_columns",
    "channel_scale",
    "col_scale",
    "absolute",
    "tsum",
    "cross_entropy",
    "stable_softmax",
    "check_finite",
]


class NonFiniteError(ArithmeticError):
    """Raised when a checked forward value contains NaN or Inf."""


_GRAD_ENABLED = True


class no_grad:
    """Disable graph recording inside a with-block (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def _f64(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float64, copy=False)


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {name}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent")

    def __init__(self, data, parents=(), requires_grad=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        if requires_grad is None:
            requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = None
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A leaf tensor with a persistent gradient buffer and a trainable flag."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable=True, dtype=None):
        super().__init__(data, requires_grad=bool(trainable), dtype=dtype)
        self.trainable = bool(trainable)
        self.grad = np.zeros(self.data.shape, np.float64)

    def set_trainable(self, flag: bool) -> None:
        self.trainable = bool(flag)
        self.requires_grad = self.trainable


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, np.float64)
    t.grad += g


def zero_grad(params) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros(p.data.shape, np.float64)
        else:
            p.grad.fill(0.0)


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into every reachable grad-requiring leaf."""
    if loss.data.shape != ():
        raise ValueError("backward expects a scalar loss")
    if loss._spent:
        raise RuntimeError("backward was already called on this graph")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones((), np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._spent = True


# ---------------------------------------------------------------- basic ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bk(g):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g)
        out._backward = _bk
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * x.data.dtype.type(c), (x,))
    if out.requires_grad:
        def _bk(g):
            if x.requires_grad:
                _accum(x, g * c)
        out._backward = _bk
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, (a, b))
    if out.requires_grad:
        ad, bd = a.data, b.data
        def _bk(g):
            if a.requires_grad:
                _accum(a, g * _f64(bd))
            if b.requires_grad:
                _accum(b, g * _f64(ad))
        out._backward = _bk
    return out


def matmul(x: Tensor, w: Tensor) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {x.data.shape} @ {w.data.shape}")
    out64 = _f64(x.data) @ _f64(w.data)
    out = Tensor(out64.astype(x.data.dtype), (x, w))
    if out.requires_grad:
        xd, wd = x.data, w.data
        def _bk(g):
            if x.requires_grad:
                _accum(x, g @ _f64(wd).T)
            if w.requires_grad:
                _accum(w, _f64(xd).T @ g)
        out._backward = _bk
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"add_bias shape mismatch: {x.data.shape} + {b.data.shape}")
    out = Tensor(x.data + b.data[None, :], (x, b))
    if out.requires_grad:
        def _bk(g):
            if x.requires_grad:
                _accum(x, g)
            if b.requires_grad:
                _accum(b, g.sum(axis=0))
        out._backward = _bk
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, x.data.dtype.type(0)), (x,))
    if out.requires_grad:
        mask = x.data > 0
        def _bk(g):
            if x.requires_grad:
                _accum(x, g * mask)
        out._backward = _bk
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), (x,))
    if out.requires_grad:
        orig = x.data.shape
        def _bk(g):
            if x.requires_grad:
                _accum(x, g.reshape(orig))
        out._backward = _bk
    return out


def take_columns(x: Tensor, cols) -> Tensor:
    """Select columns of a 2-D tensor; cols must be unique indices."""
    idx = np.asarray(cols, dtype=np.int64)
    if x.data.ndim != 2:
        raise ValueError("take_columns expects a 2-D tensor")
    if idx.ndim != 1 or len(np.unique(idx)) != len(idx):
        raise ValueError("take_columns needs a 1-D list of unique column indices")
    if idx.min() < 0 or idx.max() >= x.data.shape[1]:
        raise ValueError("take_columns index out of range")
    out = Tensor(x.data[:, idx], (x,))
    if out.requires_grad:
        ncols = x.data.shape[1]
        def _bk(g):
            if x.requires_grad:
                full = np.zeros((g.shape[0], ncols), np.float64)
                full[:, idx] = g
                _accum(x, full)
        out._backward = _bk
    return out


def absolute(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data), (x,))
    if out.requires_grad:
        sg = np.sign(x.data)
        def _bk(g):
            if x.requires_grad:
                _accum(x, g * sg)
        out._backward = _bk
    return out


def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(_f64(x.data).sum(), dtype=np.float64), (x,))
    if out.requires_grad:
        shape = x.data.shape
        def _bk(g):
            if x.requires_grad:
                _accum(x, np.full(shape, float(g), np.float64))
        out._backward = _bk
    return out


# ---------------------------------------------------------- structured ops


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NCHW activations against (F, C, k, k) filters.

    Lowered to im2col plus one matmul so both directions run as dense
    BLAS calls.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    if xd.shape[1] != wd.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {xd.shape[1]}, weight {wd.shape[1]}")
    if wd.shape[2] != wd.shape[3]:
        raise ValueError("conv2d supports square kernels only")
    nb, nc, h, wdt = xd.shape
    nf, _, k, _ = wd.shape
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - k) // s + 1
    wo = (wdt + 2 * p - k) // s + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d output would be empty")
    xp = np.pad(_f64(xd), ((0, 0), (0, 0), (p, p), (p, p))) if p else _f64(xd)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    # (B, C, Ho, Wo, k, k) -> contiguous (B*Ho*Wo, C*k*k)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(nb * ho * wo, nc * k * k)
    w64 = _f64(wd)
    w2d = w64.reshape(nf, nc * k * k).T
    out64 = (cols @ w2d).reshape(nb, ho, wo, nf).transpose(0, 3, 1, 2)
    if b is not None:
        if b.data.shape != (nf,):
            raise ValueError(f"conv2d bias shape mismatch: {b.data.shape}")
        out64 = out64 + _f64(b.data).reshape(1, nf, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(out64.astype(xd.dtype), parents)
    if out.requires_grad:
        def _bk(g):
            if b is not None and b.requires_grad:
                _accum(b, g.sum(axis=(0, 2, 3)))
            need_w = w.requires_grad
            need_x = x.requires_grad
            if not (need_w or need_x):
                return
            gt = g.transpose(0, 2, 3, 1).reshape(nb * ho * wo, nf)
            if need_w:
                _accum(w, (cols.T @ gt).T.reshape(nf, nc, k, k))
            if need_x:
                if s == 1 and k - 1 - p >= 0:
                    # input grad as a full correlation with the flipped kernel
                    q = k - 1 - p
                    gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q)))
                    gw = np.lib.stride_tricks.sliding_window_view(gp, (k, k), axis=(2, 3))
                    gcols = gw.transpose(0, 2, 3, 1, 4, 5).reshape(nb * h * wdt, nf * k * k)
                    wr = w64[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(nc, nf * k * k)
                    _accum(x, (gcols @ wr.T).reshape(nb, h, wdt, nc).transpose(0, 3, 1, 2))
                else:
                    dcols = (gt @ w2d.T).reshape(nb, ho, wo, nc, k, k).transpose(0, 3, 1, 2, 4, 5)
                    dxp = np.zeros_like(xp)
                    for a in range(k):
                        for c in range(k):
                            dxp[:, :, a : a + s * ho : s, c : c + s * wo : s] += dcols[:, :, :, :, a, c]
                    _accum(x, dxp[:, :, p : p + h, p : p + wdt] if p else dxp)
        out._backward = _bk
    return out


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; spatial dims must be even."""
    xd = x.data
    if xd.ndim != 4:
        raise ValueError("avg_pool2 expects a 4-D tensor")
    nb, nc, h, w = xd.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    out64 = _f64(xd).reshape(nb, nc, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(out64.astype(xd.dtype), (x,))
    if out.requires_grad:
        def _bk(g):
            if x.requires_grad:
                _accum(x, np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)
        out._backward = _bk
    return out


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each channel of an NCHW tensor by a per-channel scalar."""
    if x.data.ndim != 4 or s.data.ndim != 1 or x.data.shape[1] != s.data.shape[0]:
        raise ValueError(f"channel_scale shape mismatch: {x.data.shape} * {s.data.shape}")
    out = Tensor(x.data * s.data[None, :, None, None], (x, s))
    if out.requires_grad:
        xd, sd = x.data, s.data
        def _bk(g):
            if x.requires_grad:
                _accum(x, g * _f64(sd)[None, :, None, None])
            if s.requires_grad:
                _accum(s, np.einsum("bchw,bchw->c", g, _f64(xd)))
        out._backward = _bk
    return out


def col_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each column of a 2-D tensor by a per-column scalar."""
    if x.data.ndim != 2 or s.data.ndim != 1 or x.data.shape[1] != s.data.shape[0]:
        raise ValueError(f"col_scale shape mismatch: {x.data.shape} * {s.data.shape}")
    out = Tensor(x.data * s.data[None, :], (x, s))
    if out.requires_grad:
        xd, sd = x.data, s.data
        def _bk(g):
            if x.requires_grad:
                _accum(x, g * _f64(sd)[None, :])
            if s.requires_grad:
                _accum(s, np.einsum("bn,bn->n", g, _f64(xd)))
        out._backward = _bk
    return out


# ------------------------------------------------------------------- loss


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64 with max subtraction."""
    z = _f64(logits)
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class."""
    lab = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError("cross_entropy expects 2-D logits")
    nb, nk = logits.data.shape
    if lab.ndim != 1 or lab.shape[0] != nb:
        raise ValueError("cross_entropy labels must be 1-D, one per row")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValueError("cross_entropy labels must be integers")
    if lab.min() < 0 or lab.max() >= nk:
        raise ValueError(f"label out of range [0, {nk})")
    z = _f64(logits.data)
    check_finite("logits", z)
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(sez)
    rows = np.arange(nb)
    loss_val = -logp[rows, lab].mean()
    out = Tensor(np.asarray(loss_val, np.float64), (logits,))
    check_finite("loss", out.data)
    if out.requires_grad:
        sm = ez / sez
        def _bk(g):
            if logits.requires_grad:
                d = sm.copy()
                d[rows, lab] -= 1.0
                _accum(logits, d * (float(g) / nb))
        out._backward = _bk
    return out
