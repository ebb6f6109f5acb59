"""Dense tensors with a tape-based reverse-mode autodiff.

Every differentiable op in the engine lives here. Ops are plain functions
taking and returning :class:`Tensor`; when a :class:`Tape` is active and at
least one input requires a gradient, the op records a node holding its
backward closure. Outside a tape nothing is recorded (inference mode).

Layout is NCHW throughout. Only float32 and float64 are supported.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError, ShapeError, TapeError

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _DTYPES:
            if dtype is None and arr.dtype.kind in "iub":
                arr = arr.astype(np.float32)
            else:
                raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            bad = int(np.count_nonzero(~np.isfinite(self.data)))
            raise NumericalError(f"{what}: {bad} non-finite value(s)")
        return self

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records differentiable ops executed inside its ``with`` block.

    Nodes are appended in execution order, which is already a topological
    order. A tape supports exactly one :meth:`backward`.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def apply_op(
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Wrap ``out_data`` and record a node if a tape is listening.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input, in order.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        if tape.consumed:
            raise TapeError("cannot record on a tape that already ran backward")
        out.requires_grad = True
        node = _Node(out, tuple(inputs), backward_fn)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf tensor that requires a gradient.

    Gradients accumulate into existing ``.grad`` buffers. Leaves that are on
    the tape but do not influence ``loss`` receive a zero gradient.
    """
    if tape.consumed:
        raise TapeError("tape already consumed; run a new forward pass before backward")
    if loss.data.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    if loss._node is None or not any(n is loss._node for n in reversed(tape.nodes)):
        raise TapeError("loss was not produced on this tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.requires_grad and t._node is None:
                leaves[id(t)] = t
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        in_grads = node.backward(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(t.data)
        g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
    tape.nodes.clear()


# --------------------------------------------------------------------------
# convolution and linear maps
# --------------------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, d: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i * d : i * d + ho, j * d : j * d + wo].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Stride-1 2-D cross-correlation with zero padding and dilation."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if dilation < 1:
        raise ValueError(f"conv2d: dilation must be >= 1, got {dilation}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    k, d, p = kh, dilation, padding
    ho = h + 2 * p - d * (k - 1)
    wo = w + 2 * p - d * (k - 1)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: empty output for input {x.shape}, kernel {k}, dilation {d}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, k, d, ho, wo)
    w2 = weight.data.reshape(cout, -1)
    out = (w2 @ cols).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def _backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(cin, k, k, n, ho, wo)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i * d : i * d + ho, j * d : j * d + wo] += gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op(out, inputs, _backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map along axis 1 (the channel axis), independently per location.

    ``out = x @ weight.T + bias`` for every spatial position.
    """
    if weight.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-D, got {weight.shape}")
    cout, cin = weight.shape
    if x.ndim < 2 or x.shape[1] != cin:
        raise ShapeError(f"linear: input {x.shape} does not have {cin} channels on axis 1")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match {cout}")
    xm = np.moveaxis(x.data, 1, 0)
    rest = xm.shape[1:]
    x2 = xm.reshape(cin, -1)
    y = weight.data @ x2
    if bias is not None:
        y = y + bias.data[:, None]
    out = np.ascontiguousarray(np.moveaxis(y.reshape((cout,) + rest), 0, 1))

    def _backward(g):
        g2 = np.moveaxis(g, 1, 0).reshape(cout, -1)
        gx = np.moveaxis((weight.data.T @ g2).reshape((cin,) + rest), 0, 1) if x.requires_grad else None
        gw = g2 @ x2.T if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op(out, inputs, _backward)


# --------------------------------------------------------------------------
# element-wise
# --------------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * x.dtype.type(slope))
    # derivative at exactly 0 is the negative slope
    return apply_op(out, (x,), lambda g: (np.where(pos, g, g * x.dtype.type(slope)),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return apply_op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (np.where(pos, g, 0).astype(g.dtype),))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return apply_op(s, (x,), lambda g: (g * s * (1 - s),))


def activation(x: Tensor, kind: str, slope: float = 0.1) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def _gate_axes(big: tuple, small: tuple) -> bool:
    return len(big) == 4 and len(small) == 4 and small[:2] == big[:2] and small[2:] == (1, 1)


def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> int:
    """0 = same shape, 1 = ``a`` is an [N,C,1,1] gate, 2 = ``b`` is the gate."""
    if a.shape == b.shape:
        return 0
    if _gate_axes(b.shape, a.shape):
        return 1
    if _gate_axes(a.shape, b.shape):
        return 2
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_gate(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=(2, 3), keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    kind = _broadcast_kind(a, b, "add")

    def _backward(g):
        ga = _reduce_gate(g) if kind == 1 else g
        gb = _reduce_gate(g) if kind == 2 else g
        return ga, gb

    return apply_op(a.data + b.data, (a, b), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    kind = _broadcast_kind(a, b, "mul")

    def _backward(g):
        ga = g * b.data if a.requires_grad else None
        gb = g * a.data if b.requires_grad else None
        if kind == 1 and ga is not None:
            ga = _reduce_gate(ga)
        if kind == 2 and gb is not None:
            gb = _reduce_gate(gb)
        return ga, gb

    return apply_op(a.data * b.data, (a, b), _backward)


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.dtype.type(factor)
    return apply_op(x.data * f, (x,), lambda g: (g * f,))


# --------------------------------------------------------------------------
# reductions, reshaping, regularisation
# --------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h * w == 0:
        raise ShapeError("global_avg_pool: empty spatial extent")
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = x.dtype.type(1.0 / (h * w))
    return apply_op(out, (x,), lambda g: (np.broadcast_to(g * inv, x.shape).copy(),))


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a [1,1,1,1] tensor."""
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(1, 1, 1, 1)
    return apply_op(out, (x,), lambda g: (np.full(x.shape, g.reshape(()), dtype=x.dtype),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return apply_op(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout. Identity when not training or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return apply_op(x.data * mask, (x,), lambda g: (g * mask,))
