"""Dense float64 tensors with reverse-mode automatic differentiation.

The operation graph is dynamic: every differentiable op links its output to
its inputs together with a closure that routes gradients backward, and
`backward` replays those closures in reverse topological order. A fresh graph
is built on every forward pass; distinct graphs share no state.

Conventions:
  * float64 everywhere, no implicit down-casting
  * conv2d uses the cross-correlation convention (no kernel flip)
  * broadcasting is restricted to python scalars and a single-channel
    (1, h, w) map paired with a (c, h, w) tensor
  * tensors are treated as immutable once created; only `.grad` is written,
    and only during a backward pass
"""

from __future__ import annotations

from numbers import Real
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

Array = np.ndarray


def _as_array(data) -> Array:
    arr = np.asarray(data, dtype=np.float64)
    if arr.size == 0:
        raise ShapeError(f"empty tensors are not supported, got shape {arr.shape}")
    return arr


class Tensor:
    """A dense float64 array plus an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scalar_mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def zeros_like(t: Tensor, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros_like(t.data), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# graph machinery


def _result(data: Array, parents: tuple[Tensor, ...], rule) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = rule
    return out


def _accum(local: dict, t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    prev = local.get(key)
    local[key] = g if prev is None else prev + g


def _toposort(root: Tensor) -> list[Tensor]:
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return topo


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every tensor the scalar `loss` depends on.

    Gradients accumulate: calling backward twice without clearing grads
    doubles them. Each node's rule fires exactly once per call, after all of
    its consumers have contributed.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo = _toposort(loss)
    local: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = local.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is not None:
            node._backward(g, local)


# ---------------------------------------------------------------------------
# elementwise ops


def _check_elementwise(a: Array, b: Array, op: str) -> None:
    if a.shape == b.shape:
        return
    # single-channel gate against a c-channel tensor, optionally batched:
    # (1,h,w) vs (c,h,w) or (n,1,h,w) vs (n,c,h,w)
    if (
        a.ndim == b.ndim
        and a.ndim in (3, 4)
        and a.shape[:-3] == b.shape[:-3]
        and a.shape[-2:] == b.shape[-2:]
        and (a.shape[-3] == 1 or b.shape[-3] == 1)
    ):
        return
    raise ShapeError(
        f"{op}: shapes {a.shape} and {b.shape} are incompatible "
        "(need equal shapes, or a single-channel map against a c-channel tensor)"
    )


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    return g.sum(axis=-3, keepdims=True)


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_elementwise(a.data, b.data, "add")

        def rule(g, local):
            _accum(local, a, _unbroadcast(g, a.data.shape))
            _accum(local, b, _unbroadcast(g, b.data.shape))

        return _result(a.data + b.data, (a, b), rule)
    if isinstance(b, Real):
        s = float(b)

        def rule(g, local):
            _accum(local, a, g)

        return _result(a.data + s, (a,), rule)
    raise UsageError(f"add: unsupported operand type {type(b).__name__}")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_elementwise(a.data, b.data, "sub")

        def rule(g, local):
            _accum(local, a, _unbroadcast(g, a.data.shape))
            _accum(local, b, _unbroadcast(-g, b.data.shape))

        return _result(a.data - b.data, (a, b), rule)
    return add(a, -float(b))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; also accepts a python scalar for b."""
    if isinstance(b, Tensor):
        _check_elementwise(a.data, b.data, "mul")
        ad, bd = a.data, b.data

        def rule(g, local):
            _accum(local, a, _unbroadcast(g * bd, ad.shape))
            _accum(local, b, _unbroadcast(g * ad, bd.shape))

        return _result(ad * bd, (a, b), rule)
    if isinstance(b, Real):
        return scalar_mul(a, b)
    raise UsageError(f"mul: unsupported operand type {type(b).__name__}")


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def rule(g, local):
        _accum(local, a, g * s)

    return _result(a.data * s, (a,), rule)


# ---------------------------------------------------------------------------
# linear algebra and layout


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul needs 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.data.shape} vs {b.data.shape}"
        )
    ad, bd = a.data, b.data

    def rule(g, local):
        _accum(local, a, g @ bd.T)
        _accum(local, b, ad.T @ g)

    return _result(ad @ bd, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {a.data.shape}")

    def rule(g, local):
        _accum(local, a, g.T)

    return _result(a.data.T, (a,), rule)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.data.shape} to {shape}")
    old = a.data.shape

    def rule(g, local):
        _accum(local, a, g.reshape(old))

    return _result(a.data.reshape(shape), (a,), rule)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ConfigError("concat of an empty tensor list")
    first = tensors[0].data
    for t in tensors[1:]:
        if t.data.ndim != first.ndim:
            raise ShapeError(
                f"concat: rank mismatch {first.shape} vs {t.data.shape}"
            )
        for ax in range(first.ndim):
            if ax != axis and t.data.shape[ax] != first.shape[ax]:
                raise ShapeError(
                    f"concat along axis {axis}: shapes {first.shape} and "
                    f"{t.data.shape} disagree on axis {ax}"
                )
    parents = tuple(tensors)

    def rule(g, local):
        start = 0
        for t in parents:
            size = t.data.shape[axis]
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            _accum(local, t, g[tuple(sl)])
            start += size

    return _result(np.concatenate([t.data for t in tensors], axis=axis), parents, rule)


def pick(a: Tensor, index: int) -> Tensor:
    """Select one element of a 1-d tensor as a scalar."""
    if a.data.ndim != 1:
        raise UsageError(f"pick needs a 1-d tensor, got shape {a.data.shape}")
    if not 0 <= index < a.data.size:
        raise UsageError(f"pick index {index} out of range for size {a.data.size}")

    def rule(g, local):
        gx = np.zeros_like(a.data)
        gx[index] = float(g)
        _accum(local, a, gx)

    return _result(np.asarray(a.data[index]), (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def rule(g, local):
        _accum(local, a, np.full(shape, float(g)))

    return _result(np.asarray(a.data.sum()), (a,), rule)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    """Mean of a 2-d tensor along one axis, returning a 1-d tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_axis needs a 2-d tensor, got {a.data.shape}")
    if axis not in (0, 1):
        raise UsageError(f"mean_axis: axis must be 0 or 1, got {axis}")
    m, d = a.data.shape

    def rule(g, local):
        if axis == 0:
            _accum(local, a, np.repeat((g / m)[None, :], m, axis=0))
        else:
            _accum(local, a, np.repeat((g / d)[:, None], d, axis=1))

    return _result(a.data.mean(axis=axis), (a,), rule)


# ---------------------------------------------------------------------------
# convolution and pooling


def _im2col(xp: Array, kh: int, kw: int) -> Array:
    """(b,cin,hp,wp) -> (cin*kh*kw, b*oh*ow) patch matrix."""
    b, cin, hp, wp = xp.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(cin, kh, kw, b, oh, ow), strides=(s1, s2, s3, s0, s2, s3)
    )
    return win.reshape(cin * kh * kw, b * oh * ow)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """2-d cross-correlation with a (cout,cin,k,k) kernel.

    The input is one (cin,h,w) map or a batch (b,cin,h,w); frames of a
    sequence batch along the leading axis and are convolved independently.
    Same-padding pads (k-1)/2 zeros per side so the spatial dims are
    preserved; valid padding uses no zeros. Odd k is required for same.
    """
    xd, kd = x.data, kernel.data
    if xd.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be (cin,h,w) or (b,cin,h,w), got {xd.shape}")
    batched = xd.ndim == 4
    if kd.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (cout,cin,k,k), got {kd.shape}")
    cout, cin, kh, kw = kd.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernels must be square, got {kh}x{kw}")
    if xd.shape[-3] != cin:
        raise ShapeError(
            f"conv2d: input has {xd.shape[-3]} channels but kernel expects {cin}"
        )
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.data.shape}")
    if padding == "same":
        if kh % 2 == 0:
            raise ConfigError(f"same padding requires an odd kernel size, got {kh}")
        pad = (kh - 1) // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ConfigError(f"unknown padding mode {padding!r}")

    x4 = xd if batched else xd[None]
    b, _, h, w = x4.shape
    if pad:
        xp = np.zeros((b, cin, h + 2 * pad, w + 2 * pad))
        xp[:, :, pad:-pad, pad:-pad] = x4
    else:
        xp = x4
    hp, wp = xp.shape[2], xp.shape[3]
    oh, ow = hp - kh + 1, wp - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    cols = _im2col(xp, kh, kw)  # saved for the backward pass
    wm = kd.reshape(cout, cin * kh * kw)
    out = (
        (wm @ cols + bias.data[:, None])
        .reshape(cout, b, oh, ow)
        .transpose(1, 0, 2, 3)
    )

    def rule(g, local):
        g4 = g if batched else g[None]
        g2 = g4.transpose(1, 0, 2, 3).reshape(cout, b * oh * ow)
        if kernel.requires_grad:
            _accum(local, kernel, (g2 @ cols.T).reshape(kd.shape))
        if bias.requires_grad:
            _accum(local, bias, g2.sum(axis=1))
        if x.requires_grad:
            # input grad is the full-padded correlation of g with the
            # flipped, channel-swapped kernel; one GEMM, no scatter loop
            full = kh - 1
            gp = np.zeros((b, cout, oh + 2 * full, ow + 2 * full))
            gp[:, :, full : full + oh, full : full + ow] = g4
            wflip = kd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * kh * kw)
            gxp = (
                (wflip @ _im2col(gp, kh, kw))
                .reshape(cin, b, oh + full, ow + full)
                .transpose(1, 0, 2, 3)
            )
            if pad:
                gxp = gxp[:, :, pad : pad + h, pad : pad + w]
            _accum(local, x, gxp if batched else gxp[0])

    return _result(out if batched else out[0], (x, kernel, bias), rule)


def channel_max_pool(x: Tensor) -> Tensor:
    """Per-position max over the channel axis: (...,c,h,w) -> (...,1,h,w)."""
    xd = x.data
    if xd.ndim not in (3, 4):
        raise ShapeError(f"channel_max_pool needs (c,h,w) or (b,c,h,w), got {xd.shape}")
    idx = np.argmax(xd, axis=-3)  # first index wins ties
    out = np.take_along_axis(xd, np.expand_dims(idx, -3), axis=-3)

    def rule(g, local):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, np.expand_dims(idx, -3), g, axis=-3)
        _accum(local, x, gx)

    return _result(out, (x,), rule)


def channel_avg_pool(x: Tensor) -> Tensor:
    """Per-position mean over the channel axis: (...,c,h,w) -> (...,1,h,w)."""
    xd = x.data
    if xd.ndim not in (3, 4):
        raise ShapeError(f"channel_avg_pool needs (c,h,w) or (b,c,h,w), got {xd.shape}")
    c = xd.shape[-3]

    def rule(g, local):
        _accum(local, x, np.repeat(g / c, c, axis=-3))

    return _result(xd.mean(axis=-3, keepdims=True), (x,), rule)


def avg_pool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 average downsample on the trailing two axes."""
    xd = x.data
    if xd.ndim not in (3, 4) or xd.shape[-2] % 2 or xd.shape[-1] % 2:
        raise ShapeError(f"avg_pool2x2 needs even trailing dims, got {xd.shape}")
    h, w = xd.shape[-2], xd.shape[-1]
    lead = xd.shape[:-2]
    out = xd.reshape(lead + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))

    def rule(g, local):
        _accum(local, x, np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25)

    return _result(out, (x,), rule)


def frames_to_rows(x: Tensor) -> Tensor:
    """Flatten a (n,c,h,w) stack to (n*h*w, c) rows.

    Row order is frame-major, then row-major within a frame, matching
    `attention.flatten_sequence`: position (t,y,x) lands on row
    t*h*w + y*w + x.
    """
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"frames_to_rows needs (n,c,h,w), got {xd.shape}")
    n, c, h, w = xd.shape
    out = xd.transpose(0, 2, 3, 1).reshape(n * h * w, c)

    def rule(g, local):
        _accum(local, x, g.reshape(n, h, w, c).transpose(0, 3, 1, 2))

    return _result(out, (x,), rule)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def rule(g, local):
        _accum(local, x, g * out * (1.0 - out))

    return _result(out, (x,), rule)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0

    def rule(g, local):
        _accum(local, x, g * mask)

    return _result(np.where(mask, xd, 0.0), (x,), rule)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, stabilized by row-max subtraction."""
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-d tensor, got {xd.shape}")
    shifted = xd - xd.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def rule(g, local):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accum(local, x, out * (g - dot))

    return _result(out, (x,), rule)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax of a 1-d tensor via the log-sum-exp stabilization."""
    xd = x.data
    if xd.ndim != 1:
        raise ShapeError(f"log_softmax needs a 1-d tensor, got {xd.shape}")
    m = xd.max()
    lse = m + np.log(np.exp(xd - m).sum())
    out = xd - lse

    def rule(g, local):
        _accum(local, x, g - np.exp(out) * g.sum())

    return _result(out, (x,), rule)
