"""Dense tensors with reverse-mode automatic differentiation.

Storage is a row-major numpy array (float32 for training, float64 for
gradient-check mode; the dtype of a model's parameters decides the dtype of
everything downstream). Differentiable ops executed inside ``record(tape)``
append an entry to the tape; ``backward`` replays the tape in exact reverse
execution order, accumulating into ``.grad``. Gradients add; callers zero
them explicitly, which is what makes shared-storage parameters accumulate
contributions from every alias for free.

Also here: the ``Parameter``/``ParameterStore`` naming layer used for weight
sharing and checkpoints, a bias-corrected Adam that updates each unique
storage exactly once, and the central-finite-difference gradient checker.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    ConfigError,
    ContractError,
    IndexRangeError,
    NumericError,
    ShapeError,
)

DTYPES = {"float32": np.float32, "float64": np.float64}

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


# ---------------------------------------------------------------------------
# tape machinery

class Tape:
    """Ordered record of executed differentiable operations."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def _append(self, out: "Tensor", backward_fn) -> None:
        self._entries.append((out, backward_fn))


_tape_stack: list[Tape | None] = []


def _active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


@contextmanager
def record(tape: Tape):
    """Route differentiable ops executed in this block onto ``tape``."""
    _tape_stack.append(tape)
    try:
        yield tape
    finally:
        _tape_stack.pop()


@contextmanager
def no_grad():
    """Disable taping; ops run as plain numpy with no graph bookkeeping."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


class Tensor:
    """Dense row-major array, optionally tracking a gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # convenience operators; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype)))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype)))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # own buffer at the data's dtype; g may be a view, a broadcast, or a
        # wider dtype from a float64 constant
        t.grad = np.array(g, dtype=t.data.dtype)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _make(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._tape = None
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._append(out, backward_fn)
    else:
        out.requires_grad = False
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor the loss depends on.

    Accumulates (adds) into existing grads; callers zero grads between steps.
    Consumes the tape: the recorded graph is released afterwards, so each
    tape supports one backward pass.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    if tape is None:
        return
    entries = tape._entries
    for out, backward_fn in reversed(entries):
        if out.grad is not None:
            backward_fn(out.grad)
    # Outputs point at the tape and the tape points back at them, so a spent
    # graph only dies in a cyclic gc pass; over thousands of steps those
    # pending activations add up to gigabytes.  Break the cycle here so the
    # arrays are refcount-freed as soon as the step drops them.
    for out, _ in entries:
        out._tape = None
    entries.clear()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * a.data.dtype.type(c)

    def bwd(g):
        _accum(a, g * a.data.dtype.type(c))

    return _make(out, (a,), bwd)


def mul_const(a: Tensor, arr: np.ndarray) -> Tensor:
    """Multiply by a non-differentiable constant array (dropout-style masks)."""
    const = np.asarray(arr, dtype=a.dtype)
    out = a.data * const

    def bwd(g):
        _accum(a, _unbroadcast(g * const, a.data.shape))

    return _make(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    in_shape = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(in_shape))

    return _make(out, (a,), bwd)


def transpose_last(a: Tensor) -> Tensor:
    out = a.data.swapaxes(-1, -2)

    def bwd(g):
        _accum(a, g.swapaxes(-1, -2))

    return _make(out, (a,), bwd)


def swap_axes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = np.ascontiguousarray(a.data.swapaxes(ax1, ax2))

    def bwd(g):
        _accum(a, g.swapaxes(ax1, ax2))

    return _make(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accum(t, piece)

    return _make(out, tuple(tensors), bwd)


def select_time(x: Tensor, idx: int) -> Tensor:
    """Pick one position along axis 1 of a [B, L, d] tensor: out[b] = x[b, idx]."""
    out = np.ascontiguousarray(x.data[:, idx])

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, idx] = g
            _accum(x, full)

    return _make(out, (x,), bwd)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Row gather from a 2-D tensor; backward scatter-adds into the rows."""
    idx = np.asarray(indices, dtype=np.int64)
    n = x.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = int(idx[(idx < 0) | (idx >= n)][0])
        raise IndexRangeError(f"row index {bad} out of range [0, {n})")
    out = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, idx, g)

    return _make(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape).astype(x.dtype, copy=False) * np.ones_like(x.data))

    return _make(out, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    inv = 1.0 / x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def bwd(g):
        _accum(x, np.full_like(x.data, float(g) * inv))

    return _make(out, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = (xd * phi).astype(x.dtype, copy=False)

    def bwd(g):
        dens = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        _accum(x, (g * (phi + xd * dens)).astype(x.dtype, copy=False))

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes.

    Supports plain 2-D @ 2-D, batched (equal leading axes), and the
    projection case batched @ 2-D. Backward mirrors the same forms.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {ad.shape} @ {bd.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul batch extents differ: {ad.shape} @ {bd.shape}")
    out = np.matmul(ad, bd)

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, bd.swapaxes(-1, -2)))
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k = ad.shape[-1]
                n = g.shape[-1]
                _accum(b, np.matmul(ad.reshape(-1, k).T, g.reshape(-1, n)))
            else:
                _accum(b, np.matmul(ad.swapaxes(-1, -2), g))

    return _make(out, (a, b), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction.

    -inf scores are legal as long as each row keeps at least one finite entry.
    """
    if x.data.ndim == 0 or x.data.shape[-1] < 1:
        raise ShapeError(f"softmax_rows needs a non-empty last axis, got shape {x.data.shape}")
    m = x.data.max(axis=-1, keepdims=True)
    y = x.data - m
    np.exp(y, out=y)
    s = y.sum(axis=-1, keepdims=True)
    y /= s

    def bwd(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            _accum(x, y * (g - inner))

    return _make(y, (x,), bwd)


def mask_scores(x: Tensor, allow: np.ndarray) -> Tensor:
    """Set forbidden attention scores to -inf. ``allow`` is boolean, True = attend."""
    allow = np.broadcast_to(np.asarray(allow, dtype=bool), x.data.shape)
    out = np.where(allow, x.data, x.dtype.type(-np.inf))

    def bwd(g):
        _accum(x, np.where(allow, g, x.dtype.type(0.0)))

    return _make(out, (x,), bwd)


def attention_weights(q: Tensor, k: Tensor, inv_temp: float,
                      allow: np.ndarray | None = None) -> Tensor:
    """Softmaxed scaled dot-product scores, fused into one buffer.

    Same function as softmax_rows(mask_scores(scale(matmul(q,
    transpose_last(k)), inv_temp), allow)), but the [..., L, L] score array is
    allocated once and mutated in place, which dominates the cost at long
    sequence lengths. ``allow`` broadcasts over the score shape; forbidden
    entries get weight 0 and, since the softmax gradient carries the weight as
    a factor, no gradient.
    """
    qd, kd = q.data, k.data
    if qd.ndim < 2 or qd.shape != kd.shape:
        raise ShapeError(f"attention_weights needs matching [..., L, d] operands, "
                         f"got {qd.shape} and {kd.shape}")
    att = np.matmul(qd, kd.swapaxes(-1, -2))
    att *= att.dtype.type(inv_temp)
    if allow is not None:
        keep = np.broadcast_to(np.asarray(allow, dtype=bool), att.shape)
        np.copyto(att, att.dtype.type(-np.inf), where=~keep)
    att -= att.max(axis=-1, keepdims=True)
    np.exp(att, out=att)
    att /= att.sum(axis=-1, keepdims=True)

    def bwd(g):
        gs = att * g
        inner = gs.sum(axis=-1, keepdims=True)
        gs -= att * inner
        gs *= att.dtype.type(inv_temp)
        if q.requires_grad:
            _accum(q, np.matmul(gs, kd))
        if k.requires_grad:
            _accum(k, np.matmul(gs.swapaxes(-1, -2), qd))

    return _make(att, (q, k), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} do not match feature extent {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat.mean(axis=-1, keepdims=True)
            term2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - term - xhat * term2))

    return _make(out, (x, gain, bias), bwd)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table; backward scatters into the rows."""
    idx = np.asarray(ids, dtype=np.int64)
    v = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        bad = int(idx[(idx < 0) | (idx >= v)][0])
        raise IndexRangeError(f"embedding id {bad} out of range [0, {v})")
    out = table.data[idx]

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    return _make(out, (table,), bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability of the target class.

    Raises NumericError on non-finite logits: silently optimizing a NaN
    loss is the failure mode this check exists to prevent.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise ShapeError(f"cross_entropy expects [batch, classes] logits, got {ld.shape}")
    t = np.asarray(targets, dtype=np.int64)
    n, c = ld.shape
    if t.shape != (n,):
        raise ShapeError(f"cross_entropy targets shape {t.shape} does not match batch {n}")
    if t.size and (t.min() < 0 or t.max() >= c):
        bad = int(t[(t < 0) | (t >= c)][0])
        raise IndexRangeError(f"target class {bad} out of range [0, {c})")
    if not np.isfinite(ld).all():
        raise NumericError("cross_entropy: non-finite logits")
    m = ld.max(axis=-1, keepdims=True)
    z = ld - m
    e = np.exp(z)
    s = e.sum(axis=-1)
    rows = np.arange(n)
    losses = np.log(s) - z[rows, t]
    out = np.asarray(losses.mean(), dtype=ld.dtype)

    def bwd(g):
        if logits.requires_grad:
            p = e / s[:, None]
            p[rows, t] -= 1.0
            _accum(logits, p * (ld.dtype.type(float(g) / n)))

    return _make(out, (logits,), bwd)


def check_finite(x: Tensor, op_name: str) -> Tensor:
    """Pass-through assertion that a value is finite; names the op on failure."""
    if not np.isfinite(x.data).all():
        raise NumericError(f"{op_name}: non-finite value")
    return x


# ---------------------------------------------------------------------------
# initialization helpers

def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   dtype=np.float32, shape: tuple[int, ...] | None = None) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# parameters, sharing, optimization

class Parameter:
    """A named trainable tensor; equal ``shared_handle`` means same storage."""

    __slots__ = ("name", "tensor", "shared_handle")

    def __init__(self, name: str, tensor: Tensor, shared_handle: str | None = None):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor
        self.shared_handle = shared_handle

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def __repr__(self) -> str:
        tag = f", shared={self.shared_handle}" if self.shared_handle else ""
        return f"Parameter({self.name}, shape={self.tensor.shape}{tag})"


class ParameterStore:
    """Ordered, name-unique registry of a model's parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, name: str, tensor: Tensor, shared_handle: str | None = None) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Parameter(name, tensor, shared_handle)
        self._params[name] = p
        return p

    def alias(self, name: str, other: Parameter, shared_handle: str) -> Parameter:
        """Register ``name`` sharing storage with an existing parameter."""
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        other.shared_handle = shared_handle
        p = Parameter(name, other.tensor, shared_handle)
        self._params[name] = p
        return p

    def rebind(self, name: str, other: Parameter, shared_handle: str) -> None:
        """Point an already-registered parameter at another's storage."""
        p = self._params[name]
        p.tensor = other.tensor
        p.shared_handle = shared_handle
        other.shared_handle = shared_handle

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def unique_tensors(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for p in self._params.values():
            seen.setdefault(id(p.tensor), p.tensor)
        return list(seen.values())

    def zero_grad(self) -> None:
        for t in self.unique_tensors():
            t.grad = None

    def state_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self._params.values():
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.tensor.data).tobytes())
        return h.hexdigest()


def _unique_tensors(params: Iterable[Parameter]) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    for p in params:
        seen.setdefault(id(p.tensor), p.tensor)
    return list(seen.values())


class Adam:
    """Bias-corrected Adam keeping one moment state per unique storage.

    Aliased parameters therefore receive exactly one update per step no
    matter how many names point at the storage.
    """

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._tensors = _unique_tensors(params)
        self._m = [np.zeros_like(t.data) for t in self._tensors]
        self._v = [np.zeros_like(t.data) for t in self._tensors]

    def zero_grad(self) -> None:
        for t in self._tensors:
            t.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for t, m, v in zip(self._tensors, self._m, self._v):
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            t.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: Iterable[Parameter], lr: float, beta1: float, beta2: float,
              eps: float, t: int, state: dict | None = None) -> dict:
    """One functional Adam update; pass the returned state back in next call."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    tensors = _unique_tensors(params)
    if state is None:
        state = {"m": [np.zeros_like(x.data) for x in tensors],
                 "v": [np.zeros_like(x.data) for x in tensors]}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for x, m, v in zip(tensors, state["m"], state["v"]):
        g = x.grad if x.grad is not None else np.zeros_like(x.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        x.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# finite-difference oracle

def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5,
               max_coords_per_param: int = 8, rng: np.random.Generator | None = None) -> float:
    """Compare backward grads of ``f()`` against central finite differences.

    Every parameter is probed; within large parameters up to
    ``max_coords_per_param`` coordinates are sampled. Returns the worst
    relative error |g_bwd - g_fd| / max(|g_bwd|, |g_fd|, 1e-5); the floor
    sits above the 64-bit central-difference noise so genuinely tiny
    gradients do not manufacture spurious failures.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ConfigError(f"grad_check step h={h} outside [1e-6, 1e-3]")
    tensors = _unique_tensors(params)
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ConfigError("grad_check requires 64-bit parameters; rebuild the model in float64 mode")
    if rng is None:
        rng = np.random.default_rng(0)

    for t in tensors:
        t.grad = None
    tape = Tape()
    with record(tape):
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite loss")
    backward(loss)

    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        gflat = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            with no_grad():
                fp = float(f().data)
            flat[c] = orig - h
            with no_grad():
                fm = float(f().data)
            flat[c] = orig
            fd = (fp - fm) / (2.0 * h)
            bk = float(gflat[c])
            rel = abs(bk - fd) / max(abs(bk), abs(fd), 1e-5)
            if rel > worst:
                worst = rel
    return worst
