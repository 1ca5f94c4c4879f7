"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-d float64 numpy array. Operations append records to an
ambient :class:`Tape`; :func:`backward` replays the records in exact reverse
order, so no topological sort is needed. Sparse operands (scipy CSR) are
gradient-opaque constants; learned per-edge weights enter graph products as
dense vectors through :func:`gather_rows` / :func:`scatter_rows`, which keeps
their gradients exact.

A training session owns one tape and is single-threaded. Call
:func:`reset_tape` at the start of each optimization step; parameters are
leaves and survive the reset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

EPS = 1e-8
_TINY = 1e-300  # denominator floor that only guards exact zeros
_NEG_INF = -1e30  # additive mask for excluded logits; finite on purpose

CHECKPOINT_HEADER = "ADAMORE-CKPT-1"


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names shapes and op."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf; names the operation."""


class Tensor:
    """Dense float64 matrix participating in the recording tape.

    Scalars are stored as 1x1, one-dimensional input as a column vector.
    ``grad`` is populated by :func:`backward` and always matches the value
    shape. Operations never mutate ``values`` in place.
    """

    __slots__ = ("values", "requires_grad", "grad", "tape_id", "_needs_grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor expects at most 2 dimensions, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape_id: int | None = None
        self._needs_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        """Constant copy of this tensor, cut off from the tape."""
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common cases; everything routes through the
    # recorded op functions below.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Tape:
    """Ordered operation records; backward traverses them in reverse."""

    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


_current_tape = Tape()


def current_tape() -> Tape:
    return _current_tape


def reset_tape() -> Tape:
    """Drop all recorded operations and start a fresh tape."""
    global _current_tape
    _current_tape = Tape()
    return _current_tape


def _check_finite(values: np.ndarray, op: str) -> None:
    # one-pass screen: any NaN/Inf poisons the sum; confirm before aborting
    # so that (astronomically unlikely) overflow of the sum itself cannot
    # flag a finite result
    with np.errstate(all="ignore"):
        if not np.isfinite(values.sum()) and not np.isfinite(values).all():
            raise NonFiniteError(f"operation '{op}' produced non-finite values")


def _record(op: str, out: Tensor, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    _check_finite(out.values, op)
    out._needs_grad = any(t._needs_grad for t in inputs)
    if out._needs_grad:
        out.tape_id = len(_current_tape.records)
        _current_tape.records.append((op, out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every requiring ancestor.

    Gradients of tensors that are not ancestors of ``loss`` are untouched.
    Must not be called twice on the same tape without a reset in between.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward expects a 1x1 loss, got shape {loss.shape}")
    loss.grad = np.ones((1, 1))
    for op, out, inputs, backward_fn in reversed(_current_tape.records):
        g = out.grad
        if g is None:
            continue
        grads = backward_fn(g)
        for inp, gi in zip(inputs, grads):
            if gi is None or not inp._needs_grad:
                continue
            inp.grad = gi if inp.grad is None else inp.grad + gi


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"operation '{op}' requires equal shapes, got {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and scalar ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.values + b.values)
    return _record("add", out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.values - b.values)
    return _record("sub", out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.values, b.values
    out = Tensor(av * bv)
    return _record("mul", out, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values * c)
    return _record("scale", out, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values + c)
    return _record("add_scalar", out, (a,), lambda g: (g,))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a matrix by a learnable 1x1 scalar tensor."""
    if s.shape != (1, 1):
        raise ShapeError(f"operation 'scale_by' requires a 1x1 scalar, got {s.shape}")
    av, sv = a.values, s.values[0, 0]
    out = Tensor(av * sv)
    return _record("scale_by", out, (a, s),
                   lambda g: (g * sv, np.array([[np.sum(g * av)]])))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"operation 'matmul' mismatch: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    out = Tensor(av @ bv)
    return _record("matmul", out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.values.T.copy())
    return _record("transpose", out, (a,), lambda g: (g.T,))


def spmm(sp, a: Tensor) -> Tensor:
    """Sparse (scipy CSR, constant) times dense; no gradient into sparsity."""
    if sp.shape[1] != a.shape[0]:
        raise ShapeError(f"operation 'spmm' mismatch: {sp.shape} @ {a.shape}")
    sp_t = sp.T.tocsr()
    out = Tensor(sp @ a.values)
    return _record("spmm", out, (a,), lambda g: (sp_t @ g,))


def trace(a: Tensor) -> Tensor:
    n, m = a.shape
    if n != m:
        raise ShapeError(f"operation 'trace' requires a square matrix, got {a.shape}")
    out = Tensor(np.trace(a.values))
    return _record("trace", out, (a,), lambda g: (g[0, 0] * np.eye(n),))


def frobenius(a: Tensor, b: Tensor) -> Tensor:
    """Frobenius inner product <A, B> = sum(A * B), a 1x1 tensor."""
    _same_shape(a, b, "frobenius")
    av, bv = a.values, b.values
    out = Tensor(np.sum(av * bv))
    return _record("frobenius", out, (a, b), lambda g: (g[0, 0] * bv, g[0, 0] * av))


# ---------------------------------------------------------------------------
# broadcasts, selections, concatenation

def add_row(a: Tensor, r: Tensor) -> Tensor:
    """Add a 1xd row vector to every row (bias add)."""
    if r.shape != (1, a.shape[1]):
        raise ShapeError(f"operation 'add_row' requires (1, {a.shape[1]}), got {r.shape}")
    out = Tensor(a.values + r.values)
    return _record("add_row", out, (a, r),
                   lambda g: (g, g.sum(axis=0, keepdims=True)))


def mul_col(a: Tensor, v: Tensor) -> Tensor:
    """Broadcast an nx1 column across columns and multiply elementwise."""
    if v.shape != (a.shape[0], 1):
        raise ShapeError(f"operation 'mul_col' requires ({a.shape[0]}, 1), got {v.shape}")
    av, vv = a.values, v.values
    out = Tensor(av * vv)
    return _record("mul_col", out, (a, v),
                   lambda g: (g * vv, np.einsum("ij,ij->i", g, av)[:, None]))


_AGG_CACHE: dict = {}


def _aggregator(idx: np.ndarray, n_rows: int):
    """Cached sparse matrix whose product performs a segment sum over idx.

    Index arrays repeat every forward pass (a graph's edge endpoints), so
    the n_rows x len(idx) selection matrix is built once per distinct array.
    """
    import scipy.sparse as sps

    key = (idx.tobytes(), n_rows)
    agg = _AGG_CACHE.get(key)
    if agg is None:
        m = idx.shape[0]
        agg = sps.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n_rows, m))
        if len(_AGG_CACHE) >= 64:
            _AGG_CACHE.clear()
        _AGG_CACHE[key] = agg
    return agg


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Row selection by an integer index array (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64).ravel()
    av = a.values
    out = Tensor(av[idx])

    def back(g):
        return (_aggregator(idx, av.shape[0]) @ g,)

    return _record("gather_rows", out, (a,), back)


def scatter_rows(a: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    """Segment-sum rows of ``a`` into ``n_rows`` buckets given by ``index``."""
    idx = np.asarray(index, dtype=np.int64).ravel()
    if idx.shape[0] != a.shape[0]:
        raise ShapeError(f"operation 'scatter_rows' index length {idx.shape[0]} != rows {a.shape[0]}")
    out = Tensor(_aggregator(idx, n_rows) @ a.values)
    return _record("scatter_rows", out, (a,), lambda g: (g[idx],))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"operation 'concat_cols' row mismatch: {a.shape} vs {b.shape}")
    na = a.shape[1]
    out = Tensor(np.hstack([a.values, b.values]))
    return _record("concat_cols", out, (a, b),
                   lambda g: (g[:, :na], g[:, na:]))


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    out = Tensor(a.values[:, j0:j1].copy())

    def back(g):
        buf = np.zeros_like(a.values)
        buf[:, j0:j1] = g
        return (buf,)

    return _record("slice_cols", out, (a,), back)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: Tensor) -> Tensor:
    av = a.values
    out = Tensor(np.maximum(av, 0.0))
    return _record("relu", out, (a,), lambda g: (g * (av > 0.0),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    av = a.values
    out = Tensor(np.where(av > 0.0, av, slope * av))
    return _record("leaky_relu", out, (a,),
                   lambda g: (g * np.where(av > 0.0, 1.0, slope),))


def sigmoid(a: Tensor) -> Tensor:
    sv = expit(a.values)
    out = Tensor(sv)
    return _record("sigmoid", out, (a,), lambda g: (g * sv * (1.0 - sv),))


def tanh(a: Tensor) -> Tensor:
    tv = np.tanh(a.values)
    out = Tensor(tv)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - tv * tv),))


def exp(a: Tensor) -> Tensor:
    ev = np.exp(a.values)
    out = Tensor(ev)
    return _record("exp", out, (a,), lambda g: (g * ev,))


def log(a: Tensor) -> Tensor:
    av = a.values
    with np.errstate(all="ignore"):
        out = Tensor(np.log(av))
    return _record("log", out, (a,), lambda g: (g / av,))


def power(a: Tensor, p: float) -> Tensor:
    av = a.values
    with np.errstate(all="ignore"):
        out = Tensor(np.power(av, p))
    return _record("power", out, (a,),
                   lambda g: (g * p * np.power(av, p - 1.0),))


# ---------------------------------------------------------------------------
# reductions and row-wise ops

def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.values))
    return _record("sum_all", out, (a,),
                   lambda g: (np.full(a.shape, g[0, 0]),))


def mean_all(a: Tensor) -> Tensor:
    n = a.values.size
    out = Tensor(np.mean(a.values))
    return _record("mean_all", out, (a,),
                   lambda g: (np.full(a.shape, g[0, 0] / n),))


def mean_rows(a: Tensor) -> Tensor:
    """Mean of each row, as an nx1 column."""
    cols = a.shape[1]
    out = Tensor(a.values.mean(axis=1, keepdims=True))
    return _record("mean_rows", out, (a,),
                   lambda g: (np.repeat(g / cols, cols, axis=1),))


def softmax_rows(a: Tensor) -> Tensor:
    av = a.values
    shifted = av - av.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    sv = e / e.sum(axis=1, keepdims=True)
    out = Tensor(sv)
    return _record("softmax_rows", out, (a,),
                   lambda g: (sv * (g - (g * sv).sum(axis=1, keepdims=True)),))


def log_softmax_rows(a: Tensor) -> Tensor:
    av = a.values
    shifted = av - av.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    lsv = shifted - lse
    pv = np.exp(lsv)
    out = Tensor(lsv)
    return _record("log_softmax_rows", out, (a,),
                   lambda g: (g - pv * g.sum(axis=1, keepdims=True),))


def l2_normalize_rows(a: Tensor, eps: float = EPS) -> Tensor:
    av = a.values
    norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
    denom = norms + eps
    out = Tensor(av / denom)

    def back(g):
        safe = np.maximum(norms, _TINY)
        coef = (g * av).sum(axis=1, keepdims=True) / (safe * denom * denom)
        return (g / denom - av * coef,)

    return _record("l2_normalize_rows", out, (a,), back)


def cosine_rows(a: Tensor, b: Tensor, eps: float = EPS) -> Tensor:
    """Row-wise cosine similarity as an nx1 column; zero-norm rows give 0."""
    _same_shape(a, b, "cosine_rows")
    av, bv = a.values, b.values
    dots = (av * bv).sum(axis=1, keepdims=True)
    na = np.sqrt((av * av).sum(axis=1, keepdims=True))
    nb = np.sqrt((bv * bv).sum(axis=1, keepdims=True))
    denom = na * nb + eps
    out = Tensor(dots / denom)

    def back(g):
        na_safe = np.maximum(na, _TINY)
        nb_safe = np.maximum(nb, _TINY)
        common = g * dots / (denom * denom)
        ga = g * bv / denom - common * nb * av / na_safe
        gb = g * av / denom - common * na * bv / nb_safe
        return (ga, gb)

    return _record("cosine_rows", out, (a, b), back)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """Adam moments for one parameter group; step counts shared."""

    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Standard Adam update with bias correction; zeroes gradients after."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if i not in state.m:
            state.m[i] = np.zeros_like(p.values)
            state.v[i] = np.zeros_like(p.values)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


# ---------------------------------------------------------------------------
# stochastic helpers

def gumbel_pair(rng: np.random.Generator, shape: tuple[int, int],
                train_mode: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Two independent standard Gumbel(0,1) samples; zeros in eval mode."""
    if not train_mode:
        return np.zeros(shape), np.zeros(shape)
    u = rng.random(size=(2,) + tuple(shape))
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    g = -np.log(-np.log(u))
    return g[0], g[1]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape: tuple[int, int] | None = None) -> Tensor:
    """Uniform Glorot-style init, seed-deterministic; requires_grad on."""
    if shape is None:
        shape = (fan_in, fan_out)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, int]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values)


# ---------------------------------------------------------------------------
# checkpoint archive: text manifest + flat float64 payload

def save_checkpoint(path, named: dict[str, np.ndarray]) -> None:
    """Write named float64 matrices as a flat archive with a text manifest."""
    entries = []
    offset = 0
    blobs = []
    for name, arr in named.items():
        a = np.ascontiguousarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"checkpoint entry '{name}' must be a matrix, got shape {a.shape}")
        entries.append((name, a.shape[0], a.shape[1], offset))
        blob = a.tobytes()
        blobs.append(blob)
        offset += len(blob)
    manifest = [CHECKPOINT_HEADER, str(len(entries))]
    manifest += [f"{name} {rows} {cols} {off}" for name, rows, cols, off in entries]
    header = ("\n".join(manifest) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        lines = fh.read(header_len).decode("utf-8").splitlines()
        if not lines or lines[0] != CHECKPOINT_HEADER:
            raise ValueError(f"not a checkpoint archive (expected header {CHECKPOINT_HEADER!r})")
        count = int(lines[1])
        data = fh.read()
    named = {}
    for line in lines[2:2 + count]:
        name, rows, cols, off = line.split()
        rows, cols, off = int(rows), int(cols), int(off)
        nbytes = rows * cols * 8
        named[name] = np.frombuffer(data[off:off + nbytes], dtype=np.float64).reshape(rows, cols).copy()
    return named
