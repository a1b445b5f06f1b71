"""Dense float64 matrices with reverse-mode automatic differentiation.

Every value is a 2-D row-major matrix (a scalar is 1x1, a row vector is
1xn).  Operations record themselves on a single implicit tape; the tape's
append order is already topological, so the backward sweep is one reverse
pass with no sorting.  `backward` clears the tape, matching the
one-tape-per-training-step discipline.

The engine favours exact, checkable gradients over speed: everything is
float64 and every op has a closed-form local gradient that the finite
difference checker in `grad_check` can be pointed at.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "constant",
    "leaf",
    "reset_tape",
    "backward",
    "matmul",
    "transpose",
    "relu",
    "add",
    "add_row",
    "sub",
    "mul",
    "scale",
    "scale_rows",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "mean_rows",
    "sum_all",
    "mean_all",
    "square",
    "softplus",
    "row_softmax",
    "log_row_softmax",
    "layer_norm",
    "pick_rows",
    "take_rows",
    "max_rows_per_block",
    "AdamState",
    "adam_step",
    "GradCheckReport",
    "grad_check",
]

LAYER_NORM_EPS = 1e-5


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Tensor:
    """A matrix plus an optional handle into the active tape.

    `node is None` marks a constant: gradients neither reach nor pass
    through it, and ops on constants skip the tape entirely.
    """

    __slots__ = ("data", "node", "grad")

    def __init__(self, data: np.ndarray, node: int | None = None):
        self.data = data
        self.node = node
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = "const" if self.node is None else f"node {self.node}"
        return f"Tensor(shape={self.shape}, {tag})"


class Tape:
    """Ordered record of traced tensors and their local-gradient closures."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None] | None]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, t: Tensor, backfn: Callable[[np.ndarray], None] | None) -> None:
        t.node = len(self._entries)
        self._entries.append((t, backfn))

    def backward_from(self, loss: Tensor) -> None:
        loss.grad = np.ones_like(loss.data)
        # Entries recorded after the loss cannot feed it; skipping them is
        # handled by the grad-is-None test.
        for t, fn in reversed(self._entries):
            if fn is not None and t.grad is not None:
                fn(t.grad)


_TAPE = Tape()


def reset_tape() -> None:
    """Drop any partially recorded step (e.g. after an exception)."""
    global _TAPE
    _TAPE = Tape()


def constant(values) -> Tensor:
    return Tensor(_as_matrix(values), node=None)


def leaf(values) -> Tensor:
    """Register a gradient-receiving input (a parameter) on the tape."""
    t = Tensor(_as_matrix(values))
    _TAPE.add(t, None)
    return t


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None):
    """Run the reverse sweep from a scalar loss and clear the tape.

    Returns a name -> gradient map when `params` is given; parameters the
    loss never touched get zero gradients of the right shape.
    """
    global _TAPE
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is not None:
        _TAPE.backward_from(loss)
    _TAPE = Tape()
    if params is not None:
        return {name: t.grad_or_zeros() for name, t in params.items()}
    return None


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.node is None:
        return
    t.grad = g if t.grad is None else t.grad + g


def _traced(*ts: Tensor) -> bool:
    return any(t.node is not None for t in ts)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    if _traced(a, b):

        def back(g, a=a, b=b):
            _acc(a, g @ b.data.T)
            _acc(b, a.data.T @ g)

        _TAPE.add(out, back)
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(np.ascontiguousarray(x.data.T))
    if _traced(x):

        def back(g, x=x):
            _acc(x, g.T)

        _TAPE.add(out, back)
    return out


# ---------------------------------------------------------------------------
# pointwise and structural ops


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if _traced(x):
        mask = x.data > 0.0

        def back(g, x=x, mask=mask):
            _acc(x, g * mask)

        _TAPE.add(out, back)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    if _traced(a, b):

        def back(g, a=a, b=b):
            _acc(a, g)
            _acc(b, g)

        _TAPE.add(out, back)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)
    if _traced(a, b):

        def back(g, a=a, b=b):
            _acc(a, g)
            _acc(b, -g)

        _TAPE.add(out, back)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    if _traced(a, b):

        def back(g, a=a, b=b):
            _acc(a, g * b.data)
            _acc(b, g * a.data)

        _TAPE.add(out, back)
    return out


def add_row(x: Tensor, v: Tensor) -> Tensor:
    """Broadcast a 1xn row vector over every row of x (bias addition)."""
    if v.data.shape != (1, x.data.shape[1]):
        raise ShapeError(f"add_row needs (1, {x.data.shape[1]}), got {v.shape}")
    out = Tensor(x.data + v.data)
    if _traced(x, v):

        def back(g, x=x, v=v):
            _acc(x, g)
            _acc(v, g.sum(axis=0, keepdims=True))

        _TAPE.add(out, back)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    if _traced(x):

        def back(g, x=x, c=c):
            _acc(x, g * c)

        _TAPE.add(out, back)
    return out


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of x by w[i, 0] (e.g. a 0/1 relevance mask)."""
    if w.data.shape != (x.data.shape[0], 1):
        raise ShapeError(f"scale_rows needs ({x.data.shape[0]}, 1), got {w.shape}")
    out = Tensor(x.data * w.data)
    if _traced(x, w):

        def back(g, x=x, w=w):
            _acc(x, g * w.data)
            _acc(w, (g * x.data).sum(axis=1, keepdims=True))

        _TAPE.add(out, back)
    return out


def concat_rows(*parts: Tensor) -> Tensor:
    if not parts:
        raise ContractError("concat_rows needs at least one operand")
    cols = parts[0].data.shape[1]
    for p in parts:
        if p.data.shape[1] != cols:
            raise ShapeError("concat_rows: column counts differ")
    out = Tensor(np.vstack([p.data for p in parts]))
    if _traced(*parts):
        offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

        def back(g, parts=parts, offsets=offsets):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _acc(p, g[lo:hi])

        _TAPE.add(out, back)
    return out


def concat_cols(*parts: Tensor) -> Tensor:
    if not parts:
        raise ContractError("concat_cols needs at least one operand")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.shape[0] != rows:
            raise ShapeError("concat_cols: row counts differ")
    out = Tensor(np.hstack([p.data for p in parts]))
    if _traced(*parts):
        offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

        def back(g, parts=parts, offsets=offsets):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _acc(p, g[:, lo:hi])

        _TAPE.add(out, back)
    return out


def slice_rows(x: Tensor, lo: int, hi: int) -> Tensor:
    m = x.data.shape[0]
    if not (0 <= lo < hi <= m):
        raise ShapeError(f"slice_rows [{lo}:{hi}] out of range for {m} rows")
    out = Tensor(x.data[lo:hi].copy())
    if _traced(x):

        def back(g, x=x, lo=lo, hi=hi):
            full = np.zeros_like(x.data)
            full[lo:hi] = g
            _acc(x, full)

        _TAPE.add(out, back)
    return out


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    n = x.data.shape[1]
    if not (0 <= lo < hi <= n):
        raise ShapeError(f"slice_cols [{lo}:{hi}] out of range for {n} cols")
    out = Tensor(x.data[:, lo:hi].copy())
    if _traced(x):

        def back(g, x=x, lo=lo, hi=hi):
            full = np.zeros_like(x.data)
            full[:, lo:hi] = g
            _acc(x, full)

        _TAPE.add(out, back)
    return out


def mean_rows(x: Tensor) -> Tensor:
    m = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True))
    if _traced(x):

        def back(g, x=x, m=m):
            _acc(x, np.repeat(g / m, m, axis=0))

        _TAPE.add(out, back)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.array([[x.data.sum()]]))
    if _traced(x):

        def back(g, x=x):
            _acc(x, np.full_like(x.data, g[0, 0]))

        _TAPE.add(out, back)
    return out


def mean_all(x: Tensor) -> Tensor:
    size = x.data.size
    out = Tensor(np.array([[x.data.mean()]]))
    if _traced(x):

        def back(g, x=x, size=size):
            _acc(x, np.full_like(x.data, g[0, 0] / size))

        _TAPE.add(out, back)
    return out


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)
    if _traced(x):

        def back(g, x=x):
            _acc(x, 2.0 * x.data * g)

        _TAPE.add(out, back)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(x: Tensor) -> Tensor:
    # max(x,0) + log1p(exp(-|x|)) never overflows and is exact at x=0.
    z = x.data
    out = Tensor(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))))
    if _traced(x):

        def back(g, x=x):
            _acc(x, g * _sigmoid(x.data))

        _TAPE.add(out, back)
    return out


# ---------------------------------------------------------------------------
# row-wise normalizations


def row_softmax(x: Tensor) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("row_softmax requires finite entries")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)
    out = Tensor(out_data)
    if _traced(x):

        def back(g, x=x, y=out_data):
            _acc(x, y * (g - (g * y).sum(axis=1, keepdims=True)))

        _TAPE.add(out, back)
    return out


def log_row_softmax(x: Tensor) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("log_row_softmax requires finite entries")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - lse
    out = Tensor(out_data)
    if _traced(x):

        def back(g, x=x, y=out_data):
            _acc(x, g - np.exp(y) * g.sum(axis=1, keepdims=True))

        _TAPE.add(out, back)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize each row to zero mean / unit variance, then affine."""
    n = x.data.shape[1]
    if gain.data.shape != (1, n) or bias.data.shape != (1, n):
        raise ShapeError(f"layer_norm affine params must be (1, {n})")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    if _traced(x, gain, bias):

        def back(g, x=x, gain=gain, bias=bias, xhat=xhat, inv=inv):
            _acc(gain, (g * xhat).sum(axis=0, keepdims=True))
            _acc(bias, g.sum(axis=0, keepdims=True))
            if x.node is not None:
                gy = g * gain.data
                _acc(
                    x,
                    inv
                    * (
                        gy
                        - gy.mean(axis=1, keepdims=True)
                        - xhat * (gy * xhat).mean(axis=1, keepdims=True)
                    ),
                )

        _TAPE.add(out, back)
    return out


# ---------------------------------------------------------------------------
# indexing / pooling


def pick_rows(x: Tensor, indices) -> Tensor:
    """out[i, 0] = x[i, indices[i]] (one picked column per row)."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    m, n = x.data.shape
    if idx.shape[0] != m:
        raise ShapeError(f"pick_rows needs {m} indices, got {idx.shape[0]}")
    if (idx < 0).any() or (idx >= n).any():
        raise ContractError(f"pick_rows index out of range [0, {n})")
    rows = np.arange(m)
    out = Tensor(x.data[rows, idx].reshape(m, 1).copy())
    if _traced(x):

        def back(g, x=x, rows=rows, idx=idx):
            full = np.zeros_like(x.data)
            np.add.at(full, (rows, idx), g[:, 0])
            _acc(x, full)

        _TAPE.add(out, back)
    return out


def take_rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a table (embedding lookup); repeats allowed."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    m = table.data.shape[0]
    if idx.size == 0:
        raise ContractError("take_rows needs at least one index")
    if (idx < 0).any() or (idx >= m).any():
        raise ContractError(f"take_rows index out of range [0, {m})")
    out = Tensor(table.data[idx].copy())
    if _traced(table):

        def back(g, table=table, idx=idx):
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            _acc(table, full)

        _TAPE.add(out, back)
    return out


def max_rows_per_block(x: Tensor, block: int) -> Tensor:
    """Column-wise max over consecutive groups of `block` rows.

    Gradient flows to the first row attaining each maximum, which keeps the
    backward pass deterministic under exact ties.
    """
    m, n = x.data.shape
    if block <= 0 or m % block != 0:
        raise ShapeError(f"{m} rows not divisible into blocks of {block}")
    nb = m // block
    view = x.data.reshape(nb, block, n)
    arg = view.argmax(axis=1)
    out = Tensor(view.max(axis=1))
    if _traced(x):

        def back(g, x=x, arg=arg, block=block, nb=nb, n=n):
            full = np.zeros_like(x.data).reshape(nb, block, n)
            b_idx = np.arange(nb)[:, None]
            c_idx = np.arange(n)[None, :]
            full[b_idx, arg, c_idx] = g
            _acc(x, full.reshape(nb * block, n))

        _TAPE.add(out, back)
    return out


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place on `params`."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Result of comparing tape gradients with central finite differences."""

    max_rel_err: float
    worst_param: str | None
    checked: int
    nonfinite: list[str] = field(default_factory=list)

    def ok(self, tol: float = 1e-4) -> bool:
        return not self.nonfinite and self.max_rel_err <= tol


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    atol: float = 1e-6,
) -> GradCheckReport:
    """Check every entry of every parameter against central differences.

    `loss_fn` must be deterministic and must consume the given tensors
    rather than capturing outside state.  The numeric side evaluates the
    loss with constant (untaped) parameters, so it runs at plain numpy
    speed.

    Entries where both sides fall below `atol` count as matching zeros:
    central differences bottom out near eps*|loss|/h, so relative error
    against a true zero gradient would only measure that noise.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if not arrays:
        return GradCheckReport(max_rel_err=0.0, worst_param=None, checked=0)

    reset_tape()
    leaves = {k: leaf(v) for k, v in arrays.items()}
    loss = loss_fn(leaves)
    analytic = backward(loss, leaves)

    def eval_loss() -> float:
        return loss_fn({k: constant(v) for k, v in arrays.items()}).item()

    max_rel = 0.0
    worst = None
    checked = 0
    nonfinite: list[str] = []
    for name, arr in arrays.items():
        ga = analytic[name]
        if not np.isfinite(ga).all():
            nonfinite.append(name)
            continue
        flat = arr.reshape(-1)
        ga_flat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = eval_loss()
            flat[j] = orig - h
            down = eval_loss()
            flat[j] = orig
            gn = (up - down) / (2.0 * h)
            checked += 1
            if abs(ga_flat[j]) <= atol and abs(gn) <= atol:
                continue
            rel = abs(ga_flat[j] - gn) / max(1e-8, abs(ga_flat[j]) + abs(gn))
            if rel > max_rel:
                max_rel = rel
                worst = name
    return GradCheckReport(
        max_rel_err=max_rel, worst_param=worst, checked=checked, nonfinite=nonfinite
    )
