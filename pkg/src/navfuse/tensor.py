"""Dense float64 tensors with reverse-mode gradients.

The tape is define-by-run: every op that touches a gradient-requiring
tensor records a backward closure on its output node. ``backward`` on a
scalar walks the graph once in reverse topological order, accumulates
``+=`` into ``grad`` slots, then frees the tape.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- grad plumbing -------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar; accumulates into grad slots and clears the tape."""
        if self.data.shape != ():
            raise ContractError(f"backward requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones((), dtype=np.float64))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
            # free the tape; leaf grads stay
            node._backward_fn = None
            node._parents = ()
            if not node.requires_grad and node is not self:
                node.grad = None

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, powc(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _on_tape(*ts: Tensor) -> bool:
    return any(t.requires_grad or t._backward_fn is not None for t in ts)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g back to the pre-broadcast shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data)
    if _on_tape(a, b):
        def bwd(g):
            a._accumulate(_unbroadcast(g, a.data.shape))
            b._accumulate(_unbroadcast(g, b.data.shape))
        out._parents = (a, b)
        out._backward_fn = bwd
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data)
    if _on_tape(a, b):
        def bwd(g):
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        out._parents = (a, b)
        out._backward_fn = bwd
    return out


def powc(a, p: float) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data ** p)
    if _on_tape(a):
        def bwd(g):
            a._accumulate(g * p * a.data ** (p - 1.0))
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def relu(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.maximum(a.data, 0.0))
    if _on_tape(a):
        mask = (a.data > 0.0).astype(np.float64)
        def bwd(g):
            a._accumulate(g * mask)
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    if _on_tape(a):
        def bwd(g):
            a._accumulate(g * (1.0 - y * y))
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)
    if _on_tape(a):
        def bwd(g):
            a._accumulate(g * y * (1.0 - y))
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.data)
    out = Tensor(y)
    if _on_tape(a):
        def bwd(g):
            a._accumulate(g * y)
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def log(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.log(a.data))
    if _on_tape(a):
        def bwd(g):
            a._accumulate(g / a.data)
        out._parents = (a,)
        out._backward_fn = bwd
    return out


# -- reductions / shaping ---------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    if _on_tape(a):
        def bwd(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.data.shape).copy())
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.reshape(shape))
    if _on_tape(a):
        def bwd(g):
            a._accumulate(g.reshape(a.data.shape))
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def transpose(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.T.copy())
    if _on_tape(a):
        def bwd(g):
            a._accumulate(g.T)
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def take(a, idx) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data[idx].copy())
    if _on_tape(a):
        def bwd(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)
        out._parents = (a,)
        out._backward_fn = bwd
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _on_tape(*tensors):
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                t._accumulate(piece)
        out._parents = tuple(tensors)
        out._backward_fn = bwd
    return out


# -- matmul / softmax --------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data)
    if _on_tape(a, b):
        def bwd(g):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)
        out._parents = (a, b)
        out._backward_fn = bwd
    return out


def softmax(a, axis=-1) -> Tensor:
    a = _wrap(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax received non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if _on_tape(a):
        def bwd(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))
        out._parents = (a,)
        out._backward_fn = bwd
    return out


# -- conv2d ------------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """x: C x H x W -> (C*k*k, Ho*Wo) columns plus output spatial dims."""
    c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, k, k, ho, wo),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
        writeable=False,
    )
    return windows.reshape(c * k * k, ho * wo), ho, wo


def _col2im(cols: np.ndarray, c: int, h: int, w: int, k: int, stride: int, pad: int):
    """Scatter-add columns back into a C x H x W image (adjoint of _im2col)."""
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    x = np.zeros((c, hp, wp), dtype=np.float64)
    cols = cols.reshape(c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            x[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += cols[:, ki, kj]
    if pad:
        x = x[:, pad:-pad, pad:-pad]
    return x


def conv2d(x, kernels, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a C x H x W input with F x C x k x k kernels."""
    x, kernels = _wrap(x), _wrap(kernels)
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError("conv2d expects CxHxW input and FxCxkxk kernels")
    f, ck, kh, kw = kernels.data.shape
    c, h, w = x.data.shape
    if ck != c:
        raise DimensionError(f"kernel channels {ck} != input channels {c}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError("conv2d requires odd square kernels")
    k = kh
    if (h + 2 * pad - k) % stride != 0 or (w + 2 * pad - k) % stride != 0:
        raise DimensionError(
            f"non-integral conv output for input {h}x{w}, k={k}, stride={stride}, pad={pad}")
    cols, ho, wo = _im2col(x.data, k, stride, pad)
    w2d = kernels.data.reshape(f, c * k * k)
    out = Tensor((w2d @ cols).reshape(f, ho, wo))
    if _on_tape(x, kernels):
        def bwd(g):
            g2d = g.reshape(f, ho * wo)
            kernels._accumulate((g2d @ cols.T).reshape(kernels.data.shape))
            gcols = w2d.T @ g2d
            x._accumulate(_col2im(gcols, c, h, w, k, stride, pad))
        out._parents = (x, kernels)
        out._backward_fn = bwd
    return out


# -- batch norm / dropout ---------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool) -> Tensor:
    """Normalize N x C over the batch axis; running stats updated in place in train mode."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.data.ndim != 2:
        raise DimensionError("batch_norm expects an N x C input")
    n = x.data.shape[0]
    if training:
        if n < 2:
            raise DimensionError("batch_norm train mode needs N >= 2")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)  # biased
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mean) * inv_std
    out = Tensor(xhat * gamma.data + beta.data)
    if _on_tape(x, gamma, beta):
        def bwd(g):
            gamma._accumulate((g * xhat).sum(axis=0))
            beta._accumulate(g.sum(axis=0))
            gx = g * gamma.data
            if training:
                dxhat = gx
                gx_in = inv_std / n * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
                x._accumulate(gx_in)
            else:
                x._accumulate(gx * inv_std)
        out._parents = (x, gamma, beta)
        out._backward_fn = bwd
    return out


def dropout(x, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout; mask drawn from the caller's PRNG and reused in backward."""
    from .errors import ConfigError

    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = _wrap(x)
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate).astype(np.float64) / (1.0 - rate)
    out = Tensor(x.data * mask)
    if _on_tape(x):
        def bwd(g):
            x._accumulate(g * mask)
        out._parents = (x,)
        out._backward_fn = bwd
    return out


def assert_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {what}")
    return t
