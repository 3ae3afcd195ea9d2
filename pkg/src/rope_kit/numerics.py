"""Dense tensors with a reverse-mode gradient tape.

Storage is a numpy array (float32 or float64); gradients are recorded
micrograd-style, as per-op backward closures over whole tensors, and
replayed in reverse topological order. Every op checks its output for
NaN/Inf and raises ``NumericError`` instead of letting bad values
propagate. Verification code runs in float64; training may use float32.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError

__all__ = [
    "Rng",
    "Tensor",
    "Parameter",
    "tape_op",
    "matmul",
    "transpose",
    "permute",
    "reshape",
    "tensor_sum",
    "mean",
    "gelu",
    "exp",
    "elu_plus_one",
    "softmax_rows",
    "cross_entropy",
    "rmsnorm",
    "take_rows",
    "grad_check",
]


# ---------------------------------------------------------------------------
# Seeded RNG
# ---------------------------------------------------------------------------

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    """splitmix64 output function (Steele, Lea & Flood 2014)."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


class Rng:
    """splitmix64 pseudo-random stream.

    The algorithm is fixed: the same seed yields a bit-identical sample
    stream on every platform and in every future version. Normal draws
    use Box-Muller on two fresh uniforms (the sine partner is discarded,
    so the stream position is a pure function of the number of calls).
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        u1 = 1.0 - self.uniform()  # (0, 1]: log is always finite
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bias is < n / 2**64."""
        if n <= 0:
            raise ConfigurationError(f"randint upper bound must be positive, got {n}")
        return self.next_u64() % n

    def normal_array(self, shape, scale: float = 1.0, dtype=np.float64) -> np.ndarray:
        size = int(np.prod(shape)) if shape else 1
        flat = np.empty(size, dtype=np.float64)
        for i in range(size):
            flat[i] = self.normal()
        return (scale * flat).reshape(shape).astype(dtype)

    def spawn(self, stream: int) -> "Rng":
        """Derive an independent child stream; depends only on the seed."""
        return Rng(_mix64((self.seed + (stream + 1) * _GAMMA) & _MASK64))

    @property
    def state(self) -> int:
        return self._state

    @state.setter
    def state(self, value: int) -> None:
        self._state = value & _MASK64


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")
    return arr


class Tensor:
    """Immutable-by-convention dense array plus tape bookkeeping.

    ``data`` is the value, ``grad`` accumulates d(loss)/d(self) after
    ``backward()``. Ops outside this module extend the tape through
    :func:`tape_op`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; broadcasting follows numpy, gradients un-broadcast.
    def __add__(self, other):
        return _add(self, _as_tensor(other))

    def __radd__(self, other):
        return _add(_as_tensor(other), self)

    def __sub__(self, other):
        return _add(self, _scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return _add(_as_tensor(other), _scale(self, -1.0))

    def __neg__(self):
        return _scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _scale(self, float(other))
        return _mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                raise NumericError("division by zero scalar")
            return _scale(self, 1.0 / float(other))
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_array(x) -> np.ndarray:
    """Unwrap a Tensor (or pass an array-like through) as float64."""
    if isinstance(x, Tensor):
        return np.asarray(x.data, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def tape_op(data: np.ndarray, parents: tuple, grad_fn, name: str = "op") -> Tensor:
    """Wire a raw numpy result into the tape.

    ``grad_fn(out_grad)`` must return one gradient array per parent
    (``None`` to skip a parent). Gradient accumulation, requires_grad
    propagation and finiteness checking are handled here so fused ops in
    other modules only supply the math.
    """
    _check_finite(np.asarray(data), name)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = ()
    out._backward = None
    if out.requires_grad:

        def _backward(out_grad):
            grads = grad_fn(out_grad)
            for parent, g in zip(parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise DimensionError(
                        f"{name}: gradient shape {g.shape} != value shape {parent.data.shape}"
                    )
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
            return None

        out._parents = parents
        out._backward = _backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast during the forward."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return tape_op(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        name="add",
    )


def _mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return tape_op(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
        name="mul",
    )


def _scale(a: Tensor, s: float) -> Tensor:
    return tape_op(a.data * s, (a,), lambda g: (g * s,), name="scale")


# ---------------------------------------------------------------------------
# Core ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-d operands, got {a.data.ndim}-d and {b.data.ndim}-d"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return tape_op(data, (a, b), grad_fn, name="matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    data = np.swapaxes(a.data, -1, -2)
    return tape_op(data, (a,), lambda g: (np.swapaxes(g, -1, -2),), name="transpose")


def permute(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return tape_op(
        a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), name="permute"
    )


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.data.shape
    return tape_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), name="reshape")


def tensor_sum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())
    return tape_op(data, (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),), name="sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean())
    return tape_op(
        data, (a,), lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),), name="mean"
    )


def gelu(a: Tensor) -> Tensor:
    """Gaussian-error linear unit (tanh approximation); smooth everywhere."""
    x = a.data
    c = math.sqrt(2.0 / math.pi)
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def grad_fn(g):
        dinner = c * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return tape_op(data, (a,), grad_fn, name="gelu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow becomes NumericError in tape_op
        data = np.exp(a.data)

    def grad_fn(g):
        return (g * data,)

    return tape_op(data, (a,), grad_fn, name="exp")


def elu_plus_one(a: Tensor) -> Tensor:
    """elu(x) + 1 with alpha = 1: strictly positive, C1-smooth."""
    x = a.data
    neg = np.exp(np.minimum(x, 0.0))
    data = np.where(x > 0, x + 1.0, neg)

    def grad_fn(g):
        return (g * np.where(x > 0, 1.0, neg),)

    return tape_op(data, (a,), grad_fn, name="elu_plus_one")


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability.

    ``mask`` (broadcastable bool, True = keep) excludes entries, which is
    equivalent to substituting -inf scores before the softmax; the
    substitution stays internal so only finite tensors escape. A row
    with nothing kept is an error.
    """
    x = _as_tensor(x)
    logits = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        if not mask.any(axis=-1).all():
            raise NumericError("softmax row has every entry masked")
        shifted = np.where(mask, logits, -np.inf)
        row_max = shifted.max(axis=-1, keepdims=True)
        weights = np.exp(shifted - row_max)
    else:
        row_max = logits.max(axis=-1, keepdims=True)
        weights = np.exp(logits - row_max)
    weights = weights / weights.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * weights).sum(axis=-1, keepdims=True)
        return (weights * (g - dot),)

    return tape_op(weights, (x,), grad_fn, name="softmax_rows")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects (batch, vocab), got {logits.shape}")
    ids = np.asarray(targets, dtype=np.int64)
    n, vocab = logits.data.shape
    if ids.shape != (n,):
        raise DimensionError(f"target count {ids.shape} != batch size {n}")
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= vocab:
        raise IndexError(f"target outside [0, {vocab})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(n), ids]
    data = np.asarray((log_norm - picked).mean())

    def grad_fn(g):
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), ids] -= 1.0
        return (probs * (g / n),)

    return tape_op(data, (logits,), grad_fn, name="cross_entropy")


def rmsnorm(x: Tensor, gain: Tensor, eps: float = 1e-5) -> Tensor:
    """Scale each last-axis row to unit RMS, then apply a learned gain."""
    x, gain = _as_tensor(x), _as_tensor(gain)
    d = x.data.shape[-1]
    if gain.data.shape != (d,):
        raise DimensionError(f"gain shape {gain.data.shape} != ({d},)")
    scale = 1.0 / np.sqrt((x.data**2).mean(axis=-1, keepdims=True) + eps)
    normed = x.data * scale
    data = normed * gain.data

    def grad_fn(g):
        g_normed = g * gain.data
        dot = (g_normed * x.data).sum(axis=-1, keepdims=True)
        gx = scale * (g_normed - (scale**2 / d) * x.data * dot)
        ggain = (g * normed).reshape(-1, d).sum(axis=0)
        return gx, ggain

    return tape_op(data, (x, gain), grad_fn, name="rmsnorm")


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a (rows, d) table by an integer index array."""
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-d table, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    rows, d = table.data.shape
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= rows:
        raise IndexError(f"row index outside [0, {rows})")
    data = table.data[ids]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return tape_op(data, (table,), grad_fn, name="take_rows")


# ---------------------------------------------------------------------------
# Parameters and gradient checking
# ---------------------------------------------------------------------------


class Parameter:
    """Named trainable tensor; its gradient lives on the wrapped Tensor."""

    def __init__(self, name: str, data, dtype=None):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True, dtype=dtype)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def gradient(self) -> np.ndarray:
        if self.tensor.grad is None:
            return np.zeros_like(self.tensor.data)
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def grad_check(f, params: list[Parameter], rng: Rng, samples: int = 25) -> float:
    """Compare tape gradients against central finite differences.

    ``f()`` must rebuild the scalar loss from the current parameter
    values. For ``samples`` randomly chosen entries the reverse-mode
    gradient is compared to (f(w+h) - f(w-h)) / 2h with h = 1e-5; the
    returned figure is max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    Parameters must be float64: the tolerance is meaningless in float32.
    """
    for p in params:
        if p.tensor.data.dtype != np.float64:
            raise ConfigurationError(f"grad_check needs float64 parameters ({p.name})")
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    grads = [p.gradient.copy() for p in params]

    sizes = [p.tensor.data.size for p in params]
    total = sum(sizes)
    h = 1e-5
    worst = 0.0
    for _ in range(samples):
        flat = rng.randint(total)
        for p, g, size in zip(params, grads, sizes):
            if flat < size:
                break
            flat -= size
        idx = np.unravel_index(flat, p.tensor.data.shape)
        original = p.tensor.data[idx]
        p.tensor.data[idx] = original + h
        up = f().item()
        p.tensor.data[idx] = original - h
        down = f().item()
        p.tensor.data[idx] = original
        fd = (up - down) / (2.0 * h)
        ad = float(g[idx])
        err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
        worst = max(worst, err)
    return worst
