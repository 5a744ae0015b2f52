"""Small reverse-mode autodiff over numpy arrays.

Only the operators needed by the denoiser and the HAR classifier are
provided. Sequence tensors are laid out as ``[batch, channels, length]``.

Every differentiable op executed while gradients are enabled is appended
to the thread's current :class:`Tape`. :func:`backward` walks that tape in
reverse execution order and then consumes it, so a second backward on the
same graph raises :class:`BackwardError`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are incompatible with the operator."""


class NonFiniteError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


class BackwardError(RuntimeError):
    """Invalid use of :func:`backward`."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    """Dense float array with an optional gradient buffer.

    Leaves created with ``requires_grad=True`` carry a zero-initialised
    ``grad`` of the same shape. Results of taped ops receive their ``grad``
    during :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.ascontiguousarray(data, dtype=dtype or DEFAULT_DTYPE)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _Node:
    name: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    tape: "Tape"


@dataclass(eq=False)
class Tape:
    """Ordered record of executed differentiable operations."""

    nodes: list[_Node] = field(default_factory=list)
    consumed: bool = False

    def __len__(self) -> int:
        return len(self.nodes)


_state = threading.local()


def current_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed:
        tape = _state.tape = Tape()
    return tape


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _result(name: str, data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    _check_finite(data, name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out.requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape = current_tape()
        node = _Node(name, out, inputs, grad_fn, tape)
        tape.nodes.append(node)
        out._node = node
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise BackwardError("loss was not produced by a taped operation")
    tape = node.tape
    if tape.consumed:
        raise BackwardError("backward already ran on this graph; run a new forward pass first")
    tape.consumed = True

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    stop = tape.nodes.index(node)
    for n in reversed(tape.nodes[: stop + 1]):
        g = pending.pop(id(n.out), None)
        if g is None:
            continue
        n.out.grad = g
        for inp, gi in zip(n.inputs, n.grad_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            _check_finite(gi, f"backward of {n.name}")
            if inp._node is None:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi.astype(inp.data.dtype, copy=False)
            elif id(inp) in pending:
                pending[id(inp)] = pending[id(inp)] + gi
            else:
                pending[id(inp)] = gi
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# convolution kernels on raw arrays
# ---------------------------------------------------------------------------


def _windows(x: np.ndarray, k: int, stride: int, n_out: int) -> np.ndarray:
    """View ``[B, C, n_out, k]`` of the strided length-``k`` windows of ``x``."""
    return sliding_window_view(x, k, axis=2)[:, :, ::stride][:, :, :n_out]


def _correlate(x: np.ndarray, w: np.ndarray, stride: int, n_out: int):
    cols = _windows(x, w.shape[2], stride, n_out)
    out = np.tensordot(cols, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    return np.ascontiguousarray(out), cols


def _scatter(g: np.ndarray, w: np.ndarray, stride: int, length: int) -> np.ndarray:
    """Adjoint of :func:`_correlate` w.r.t. its input; ``w`` is ``[O, C, K]``."""
    b, _, n = g.shape
    k = w.shape[2]
    # [B, n, C, K] tap products in one GEMM, then overlap-add per tap
    taps = np.tensordot(g.transpose(0, 2, 1), w, axes=([2], [0]))
    out = np.zeros((b, w.shape[1], length), dtype=taps.dtype)
    span = stride * (n - 1) + 1
    for j in range(k):
        out[:, :, j : j + span : stride] += taps[:, :, :, j].transpose(0, 2, 1)
    return out


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``[B, Cin, L]`` with ``[Cout, Cin, K]`` plus bias."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    b, cin, length = x.shape
    cout, wcin, k = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv1d channel axis mismatch: input Cin={cin}, weight Cin={wcin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv1d bias axis mismatch: expected ({cout},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv1d needs stride >= 1 and padding >= 0")
    padded = length + 2 * padding
    if k > padded:
        raise ShapeError(f"conv1d length axis: kernel {k} exceeds padded length {padded}")
    n_out = (padded - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    out, cols = _correlate(xp, weight.data, stride, n_out)
    out += bias.data[None, :, None]

    def grad_fn(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = _scatter(g, weight.data, stride, padded)[:, :, padding : padding + length]
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    return _result("conv1d", out, (x, weight, bias), grad_fn)


def deconv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution with weight ``[Cin, Cout, K]``.

    Output length is ``(L - 1) * stride + K - 2 * padding``; ``padding``
    crops that many positions from each end of the full output.
    """
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(f"deconv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    b, cin, length = x.shape
    wcin, cout, k = weight.shape
    if wcin != cin:
        raise ShapeError(f"deconv1d channel axis mismatch: input Cin={cin}, weight Cin={wcin}")
    if bias.shape != (cout,):
        raise ShapeError(f"deconv1d bias axis mismatch: expected ({cout},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("deconv1d needs stride >= 1 and padding >= 0")
    full = (length - 1) * stride + k
    if full - 2 * padding < 1:
        raise ShapeError(f"deconv1d length axis: padding {padding} leaves no output")

    # weight viewed as a [Cin, Cout, K] correlation kernel from Cout to Cin
    out = _scatter(x.data, weight.data, stride, full)
    if padding:
        out = out[:, :, padding : full - padding]
    out = np.ascontiguousarray(out) + bias.data[None, :, None]

    def grad_fn(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
        gx = gw = gb = None
        if x.requires_grad:
            gx, _ = _correlate(gfull, weight.data, stride, length)
        if weight.requires_grad:
            cols = _windows(gfull, k, stride, length)
            gw = np.tensordot(x.data, cols, axes=([0, 2], [0, 2]))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    return _result("deconv1d", out, (x, weight, bias), grad_fn)


def maxpool1d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Windowed maximum; ties go to the earliest position in the window."""
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool1d expects [B, C, L], got {x.shape}")
    b, c, length = x.shape
    if length < k:
        raise ShapeError(f"maxpool1d length axis: L={length} is shorter than kernel {k}")
    n_out = (length - k) // stride + 1
    win = _windows(x.data, k, stride, n_out)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    pos = arg + stride * np.arange(n_out)[None, None, :]

    def grad_fn(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        if stride >= k:
            np.put_along_axis(gx, pos, g, axis=2)
        else:
            bi, ci, _ = np.indices(pos.shape)
            np.add.at(gx, (bi, ci, pos), g)
        return (gx,)

    result = _result("maxpool1d", np.ascontiguousarray(out), (x,), grad_fn)
    return result


def maxpool1d_argmax(x: np.ndarray, k: int = 2, stride: int = 2) -> np.ndarray:
    """Absolute argmax positions chosen by :func:`maxpool1d`."""
    n_out = (x.shape[2] - k) // stride + 1
    arg = _windows(x, k, stride, n_out).argmax(axis=3)
    return arg + stride * np.arange(n_out)[None, None, :]


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if x.data.ndim != 3:
        raise ShapeError(f"upsample_nearest expects [B, C, L], got {x.shape}")
    b, c, length = x.shape
    out = np.repeat(x.data, factor, axis=2)

    def grad_fn(g):
        return (g.reshape(b, c, length, factor).sum(axis=3),)

    return _result("upsample_nearest", out, (x,), grad_fn)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape ``[B, N]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"dense expects 2-d input and weight, got {x.shape} and {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"dense inner axis mismatch: input N={x.shape[1]}, weight N={weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense bias axis mismatch: expected ({weight.shape[0]},), got {bias.shape}")
    out = x.data @ weight.data.T + bias.data

    def grad_fn(g):
        return (
            g @ weight.data if x.requires_grad else None,
            g.T @ x.data if weight.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return _result("dense", out, (x, weight, bias), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may have length 1 on the last axis of ``[B, C, L]``."""
    if a.shape == b.shape:
        return _result("add", a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 3 and b.shape == (a.shape[0], a.shape[1], 1):
        return _result("add", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=2, keepdims=True)))
    raise ShapeError(f"add cannot combine {a.shape} and {b.shape}")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat along axis {axis}: {exc}") from None
    cuts = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result("concat", out, tuple(tensors), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _result("reshape", out, (x,), lambda g: (g.reshape(src),))


def softmax_xent(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_xent expects logits [B, C] and labels [B], got {logits.shape} and {labels.shape}")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(labels.size)
    loss = -logp[rows, labels].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return ((p * (float(g) / labels.size)).astype(logits.dtype),)

    return _result("softmax_xent", np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn)


def mae(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over every element."""
    if pred.shape != target.shape:
        raise ShapeError(f"mae operands differ in shape: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data
    n = diff.size
    loss = np.abs(diff).sum() / n
    dtype = np.result_type(pred.data, target.data)

    def grad_fn(g):
        s = (np.sign(diff) * (float(g) / n)).astype(dtype)
        return (s if pred.requires_grad else None, -s if target.requires_grad else None)

    return _result("mae", np.asarray(loss, dtype=dtype), (pred, target), grad_fn)


def probe(x: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(x * weights)`` for a constant ``weights``; used by :func:`gradcheck`."""
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ShapeError(f"probe weights {weights.shape} do not match {x.shape}")
    out = np.asarray((x.data.astype(np.float64) * weights).sum(), dtype=x.dtype)
    return _result("probe", out, (x,), lambda g: (weights * g,))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(loss_fn: Callable[[], Tensor], x: Tensor, h: float) -> np.ndarray:
    """Central finite differences of the scalar ``loss_fn()`` w.r.t. ``x.data``."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2 * h)
    return grad


def gradcheck(
    loss_fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3
) -> list[float]:
    """Relative error between analytic and central-difference gradients, per input."""
    for t in inputs:
        t.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = [t.grad.astype(np.float64) for t in inputs]
    return [relative_error(a, numeric_grad(loss_fn, t, h)) for a, t in zip(analytic, inputs)]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam: grad {g.shape} / moment {m.shape} vs param {p.shape}")
        _check_finite(g, "adam gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


class Adam:
    """Adam over a fixed list of leaf tensors, reading their ``grad`` buffers."""

    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
