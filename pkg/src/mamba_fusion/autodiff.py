"""Dense tensor arithmetic with reverse-mode differentiation on a tape.

Every computation in this package flows through the ``Tensor`` primitives
defined here. Forward calls record closures on the active ``Tape``;
``backward`` replays them in reverse order and accumulates (+=) gradients,
which makes parameter sharing correct by construction. A central
finite-difference oracle (``finite_difference_check``) is the independent
route used to validate all analytic gradients.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "no_grad",
    "backward",
    "forward_primitive",
    "finite_difference_check",
    "unique_parameters",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "softplus",
    "sigmoid", "silu", "relu", "softmax_lastdim", "l2_normalize_lastdim",
    "layer_norm", "flip_time", "concat", "concat_time", "sum_", "mean_",
    "max_over_time", "slicer", "reshape", "transpose",
]

# Multiply counter for instrumented FLOPs validation (see bench module).
# When not None, every multiplying primitive adds its multiply count here.
_mac_counter = None


class MacCounter:
    """Counts scalar multiplies performed by primitives while active."""

    def __init__(self):
        self.macs = 0

    def __enter__(self):
        global _mac_counter
        self._prev = _mac_counter
        _mac_counter = self
        return self

    def __exit__(self, *exc):
        global _mac_counter
        _mac_counter = self._prev
        return False


def _count_macs(n):
    if _mac_counter is not None:
        _mac_counter.macs += int(n)


class Tape:
    """Ordered record of primitive operations, replayed in reverse by backward().

    Usable as a context manager; entering makes it the active tape.
    """

    def __init__(self):
        self.records = []  # (output, inputs, backward_fn)
        self.consumed = False

    def append(self, out, inputs, backward_fn):
        self.records.append((out, inputs, backward_fn))

    def __enter__(self):
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._prev
        return False


_active_tape: Tape | None = None


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _active_tape
        self._prev = _active_tape
        _active_tape = None
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._prev
        return False


def _record(out, inputs, backward_fn):
    if _active_tape is not None:
        _active_tape.append(out, inputs, backward_fn)


class Tensor:
    """A dense n-dimensional array node in the computation graph."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # Operator sugar; scalars and arrays are lifted to constant Tensors.
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    def __rmul__(self, other):
        return mul(_lift(other, self), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable Tensor whose gradient persists across tapes until zeroed."""

    __slots__ = ("trainable", "name")

    def __init__(self, data, trainable=True, name="", dtype=np.float64):
        super().__init__(data, dtype=dtype)
        self.trainable = trainable
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.shape})"


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def unique_parameters(params):
    """Deduplicate parameters by identity (shared storage counted once)."""
    seen = set()
    out = []
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out


def _check_finite(op_kind, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"{op_kind}: non-finite values encountered")


def _unbroadcast(g, shape):
    """Sum gradient g down to the given input shape after numpy broadcasting."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b):
    out = Tensor(a.data + b.data)
    _check_finite("add", out.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    _record(out, (a, b), bwd)
    return out


def sub(a, b):
    out = Tensor(a.data - b.data)
    _check_finite("sub", out.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    _record(out, (a, b), bwd)
    return out


def neg(a):
    out = Tensor(-a.data)

    def bwd(g):
        return (-g,)

    _record(out, (a,), bwd)
    return out


def mul(a, b):
    out = Tensor(a.data * b.data)
    _check_finite("mul", out.data)
    _count_macs(out.size)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    _record(out, (a, b), bwd)
    return out


def div(a, b):
    if np.any(b.data == 0):
        raise FloatingPointError("div: division by zero")
    out = Tensor(a.data / b.data)
    _check_finite("div", out.data)
    _count_macs(out.size)

    def bwd(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    _record(out, (a, b), bwd)
    return out


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    _check_finite("matmul", out.data)
    _count_macs(a.shape[0] * a.shape[1] * b.shape[1])

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    _record(out, (a, b), bwd)
    return out


def exp(a):
    out = Tensor(np.exp(a.data))
    _check_finite("exp", out.data)

    def bwd(g):
        return (g * out.data,)

    _record(out, (a,), bwd)
    return out


def softplus(a):
    # log(1 + e^x) computed stably
    out = Tensor(np.logaddexp(0.0, a.data))

    def bwd(g):
        return (g * _sigmoid_np(a.data),)

    _record(out, (a,), bwd)
    return out


def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    out = Tensor(_sigmoid_np(a.data))

    def bwd(g):
        return (g * out.data * (1.0 - out.data),)

    _record(out, (a,), bwd)
    return out


def silu(a):
    s = _sigmoid_np(a.data)
    out = Tensor(a.data * s)
    _count_macs(out.size)

    def bwd(g):
        return (g * (s * (1.0 + a.data * (1.0 - s))),)

    _record(out, (a,), bwd)
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0))

    def bwd(g):
        return (g * (a.data > 0.0),)

    _record(out, (a,), bwd)
    return out


def softmax_lastdim(a):
    # Max-subtraction keeps the exponentials bounded.
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    _record(out, (a,), bwd)
    return out


def l2_normalize_lastdim(a, eps=1e-12):
    norm = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True))
    if np.any(norm < eps):
        raise FloatingPointError("l2_normalize_lastdim: zero-norm row")
    y = a.data / norm
    out = Tensor(y)
    _count_macs(out.size)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / norm,)

    _record(out, (a,), bwd)
    return out


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)
    _count_macs(2 * out.size)

    def bwd(g):
        d = x.shape[-1]
        dxhat = g * gamma.data
        dx = inv / d * (d * dxhat
                        - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        return dx, dgamma.reshape(gamma.shape), dbeta.reshape(beta.shape)

    _record(out, (x, gamma, beta), bwd)
    return out


def flip_time(a):
    out = Tensor(np.flip(a.data, axis=0).copy())

    def bwd(g):
        return (np.flip(g, axis=0),)

    _record(out, (a,), bwd)
    return out


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))

    _record(out, tuple(tensors), bwd)
    return out


def concat_time(tensors):
    return concat(tensors, axis=0)


def sum_(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    _record(out, (a,), bwd)
    return out


def mean_(a, axis=None, keepdims=False):
    count = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def max_over_time(a):
    """Per-feature maximum over axis 0; gradient routes to the first argmax."""
    idx = a.data.argmax(axis=0)
    out = Tensor(a.data.max(axis=0))

    def bwd(g):
        ga = np.zeros_like(a.data)
        rest = np.indices(idx.shape)
        ga[(idx,) + tuple(rest)] = g
        return (ga,)

    _record(out, (a,), bwd)
    return out


def slicer(a, key):
    out = Tensor(a.data[key].copy())

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    _record(out, (a,), bwd)
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape).copy())

    def bwd(g):
        return (g.reshape(a.shape),)

    _record(out, (a,), bwd)
    return out


def transpose(a, axes=None):
    out = Tensor(a.data.transpose(axes).copy())
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inv),)

    _record(out, (a,), bwd)
    return out


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "exp": exp,
    "softplus": softplus,
    "silu": silu,
    "relu": relu,
    "softmax_lastdim": softmax_lastdim,
    "l2_normalize_lastdim": l2_normalize_lastdim,
    "layer_norm": layer_norm,
    "flip_time": flip_time,
    "concat_time": concat_time,
    "mean": mean_,
    "max_over_time": max_over_time,
    "slice": slicer,
    "reshape": reshape,
}


def forward_primitive(op_kind, *inputs, **kwargs):
    """Dispatch a primitive by name. Inputs must be Tensors (or lists thereof)."""
    if op_kind not in _PRIMITIVES:
        raise ValueError(f"unknown primitive {op_kind!r}; "
                         f"valid kinds: {sorted(_PRIMITIVES)}")
    for x in inputs:
        arrays = x if isinstance(x, (list, tuple)) else (x,)
        for t in arrays:
            _check_finite(op_kind, t.data)
    return _PRIMITIVES[op_kind](*inputs, **kwargs)


def backward(loss):
    """Accumulate d(loss)/d(input) into every tensor on the active tape."""
    tape = _active_tape
    if tape is None:
        raise RuntimeError("backward: no active tape")
    if tape.consumed:
        raise RuntimeError("backward: tape already consumed; re-record the graph")
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, inputs, bwd in reversed(tape.records):
        if out.grad is None:
            continue
        grads = bwd(out.grad)
        for t, g in zip(inputs, grads):
            t.accumulate_grad(g)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def finite_difference_check(f, params, eps=1e-5, per_coordinate=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a nullary function returning a scalar Tensor built from the
    given parameters. The analytic gradient is computed once via the tape;
    each coordinate of each parameter is then perturbed by +/- eps with
    recording disabled. ``per_coordinate`` limits the number of checked
    coordinates per parameter (all when None).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = unique_parameters(params)
    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
        backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            if per_coordinate is None or per_coordinate >= flat.size:
                coords = range(flat.size)
            else:
                coords = np.unique(np.linspace(
                    0, flat.size - 1, per_coordinate).astype(int))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f().data)
                flat[i] = orig - eps
                lo = float(f().data)
                flat[i] = orig
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise FloatingPointError(
                        "finite_difference_check: non-finite loss at perturbed point")
                fd = (hi - lo) / (2.0 * eps)
                err = abs(an.reshape(-1)[i] - fd) / max(1.0, abs(fd))
                worst = max(worst, err)
    return worst
