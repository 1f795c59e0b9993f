"""Dense matrix arithmetic with reverse-mode gradients.

Everything downstream computes on 2-D float64 numpy arrays ("matrices").
Training code records its forward pass on a :class:`Tape` and calls
:func:`backward` once to get gradients for every tracked parameter; the
tape is a plain list of primitive ops with input/output slot ids, so the
whole thing stays debuggable with a print statement.

Gradient correctness is checked against central finite differences via
:func:`grad_check`. Parameter updates use Adam with bias correction
(:func:`adam_step`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's precondition."""


class TapeError(RuntimeError):
    """Tape misuse: double backward, or backward from a non-scalar loss."""


def as_matrix(x) -> np.ndarray:
    """Coerce to a finite 2-D float64 array (the library's only currency)."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if m.size and not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product, shape (a.rows, b.cols)."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with row-max subtraction for overflow safety."""
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def relu(m: np.ndarray) -> np.ndarray:
    return np.maximum(m, 0.0)


@dataclass(frozen=True)
class Slot:
    """Handle to one value recorded on a tape."""

    index: int


@dataclass
class _OpRecord:
    name: str
    out: int
    inputs: tuple[int, ...]
    # Called with the upstream gradient of the output; must return one
    # gradient array per input (None for inputs that do not need one).
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Records primitive operations for one forward pass.

    Leaves enter via :meth:`parameter` (tracked, will receive a gradient)
    or :meth:`constant` (untracked). Ops append records in execution
    order, which is by construction a topological order, so the backward
    sweep is a single reversed scan. A tape can be replayed backward
    exactly once.
    """

    def __init__(self) -> None:
        self._values: list[np.ndarray] = []
        self._needs_grad: list[bool] = []
        self._params: list[int] = []
        self._ops: list[_OpRecord] = []
        self._spent = False

    # -- leaves ------------------------------------------------------

    def parameter(self, value) -> Slot:
        return self._leaf(as_matrix(value), tracked=True)

    def constant(self, value) -> Slot:
        return self._leaf(as_matrix(value), tracked=False)

    def _leaf(self, value: np.ndarray, tracked: bool) -> Slot:
        self._values.append(value)
        self._needs_grad.append(tracked)
        if tracked:
            self._params.append(len(self._values) - 1)
        return Slot(len(self._values) - 1)

    def value(self, slot: Slot) -> np.ndarray:
        return self._values[slot.index]

    @property
    def parameters(self) -> list[Slot]:
        return [Slot(i) for i in self._params]

    def _emit(self, name: str, out_value: np.ndarray,
              inputs: Sequence[Slot], backward) -> Slot:
        idx = [s.index for s in inputs]
        self._values.append(out_value)
        self._needs_grad.append(any(self._needs_grad[i] for i in idx))
        out = len(self._values) - 1
        if self._needs_grad[out]:
            self._ops.append(_OpRecord(name, out, tuple(idx), backward))
        return Slot(out)

    # -- primitives ----------------------------------------------------
    # Each op computes eagerly and stores a closure over whatever the
    # gradient needs. Closures return one array per input slot.

    def add(self, a: Slot, b: Slot) -> Slot:
        av, bv = self.value(a), self.value(b)
        if av.shape != bv.shape:
            raise ShapeError(f"add shape mismatch: {av.shape} vs {bv.shape}")
        return self._emit("add", av + bv, (a, b), lambda g: (g, g))

    def add_rowvec(self, a: Slot, b: Slot) -> Slot:
        """a (n x d) plus a single row b (1 x d) broadcast over rows."""
        av, bv = self.value(a), self.value(b)
        if bv.shape != (1, av.shape[1]):
            raise ShapeError(f"add_rowvec shape mismatch: {av.shape} vs {bv.shape}")
        return self._emit("add_rowvec", av + bv, (a, b),
                          lambda g: (g, g.sum(axis=0, keepdims=True)))

    def mul(self, a: Slot, b: Slot) -> Slot:
        av, bv = self.value(a), self.value(b)
        if av.shape != bv.shape:
            raise ShapeError(f"mul shape mismatch: {av.shape} vs {bv.shape}")
        return self._emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))

    def smul(self, a: Slot, c: float) -> Slot:
        """Multiply by a python scalar constant."""
        return self._emit("smul", self.value(a) * c, (a,), lambda g: (g * c,))

    def matmul(self, a: Slot, b: Slot) -> Slot:
        av, bv = self.value(a), self.value(b)
        out = matmul(av, bv)
        return self._emit("matmul", out, (a, b),
                          lambda g: (g @ bv.T, av.T @ g))

    def matmul_t(self, a: Slot, b: Slot) -> Slot:
        """a @ b.T; lets layers keep weights in (out, in) layout."""
        av, bv = self.value(a), self.value(b)
        if av.shape[1] != bv.shape[1]:
            raise ShapeError(f"matmul_t shape mismatch: {av.shape} x {bv.shape}.T")
        return self._emit("matmul_t", av @ bv.T, (a, b),
                          lambda g: (g @ bv, g.T @ av))

    def relu(self, a: Slot) -> Slot:
        av = self.value(a)
        return self._emit("relu", np.maximum(av, 0.0), (a,),
                          lambda g: (g * (av > 0.0),))

    def softmax_rows(self, a: Slot) -> Slot:
        s = softmax_rows(self.value(a))
        def bwd(g):
            return (s * (g - (g * s).sum(axis=1, keepdims=True)),)
        return self._emit("softmax_rows", s, (a,), bwd)

    def hconcat(self, parts: Sequence[Slot]) -> Slot:
        vals = [self.value(p) for p in parts]
        widths = [v.shape[1] for v in vals]
        offsets = np.cumsum([0] + widths)
        def bwd(g):
            return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(vals)))
        return self._emit("hconcat", np.concatenate(vals, axis=1), tuple(parts), bwd)

    def vstack(self, parts: Sequence[Slot]) -> Slot:
        vals = [self.value(p) for p in parts]
        heights = [v.shape[0] for v in vals]
        offsets = np.cumsum([0] + heights)
        def bwd(g):
            return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(vals)))
        return self._emit("vstack", np.concatenate(vals, axis=0), tuple(parts), bwd)

    def take_rows(self, a: Slot, rows: Sequence[int]) -> Slot:
        av = self.value(a)
        idx = np.asarray(rows, dtype=np.intp)
        def bwd(g):
            da = np.zeros_like(av)
            np.add.at(da, idx, g)  # duplicates accumulate
            return (da,)
        return self._emit("take_rows", av[idx], (a,), bwd)

    def take_cols(self, a: Slot, cols: Sequence[int]) -> Slot:
        av = self.value(a)
        idx = np.asarray(cols, dtype=np.intp)
        def bwd(g):
            da = np.zeros_like(av)
            np.add.at(da.T, idx, g.T)
            return (da,)
        return self._emit("take_cols", av[:, idx], (a,), bwd)

    def grad_reverse(self, a: Slot, lam: float) -> Slot:
        """Identity forward; backward scales the gradient by -lam."""
        if lam < 0:
            raise ValueError(f"gradient reversal strength must be >= 0, got {lam}")
        return self._emit("grad_reverse", self.value(a).copy(), (a,),
                          lambda g: (-lam * g,))

    def cross_entropy(self, logits: Slot, labels: Sequence[int]) -> Slot:
        """Mean softmax cross-entropy over rows; returns a 1x1 scalar."""
        z = self.value(logits)
        y = np.asarray(labels, dtype=np.intp)
        if y.shape != (z.shape[0],):
            raise ShapeError(f"labels shape {y.shape} does not match {z.shape[0]} rows")
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        loss = np.array([[np.mean(lse - z[np.arange(len(y)), y])]])
        def bwd(g):
            p = softmax_rows(z)
            p[np.arange(len(y)), y] -= 1.0
            return (g[0, 0] * p / len(y),)
        return self._emit("cross_entropy", loss, (logits,), bwd)

    def sum_all(self, a: Slot) -> Slot:
        av = self.value(a)
        return self._emit("sum_all", np.array([[av.sum()]]), (a,),
                          lambda g: (np.full_like(av, g[0, 0]),))


def backward(tape: Tape, loss: Slot) -> dict[Slot, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter on the tape.

    A second call on the same tape raises; record a fresh forward pass
    instead, the closures capture state from exactly one evaluation.
    """
    if tape._spent:
        raise TapeError("backward was already called on this tape")
    loss_value = tape.value(loss)
    if loss_value.shape != (1, 1):
        raise TapeError(f"loss must be a 1x1 scalar, got shape {loss_value.shape}")
    tape._spent = True

    grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
    for op in reversed(tape._ops):
        g = grads.pop(op.out, None)
        if g is None:
            continue
        for slot_idx, piece in zip(op.inputs, op.backward(g)):
            if piece is None or not tape._needs_grad[slot_idx]:
                continue
            if slot_idx in grads:
                grads[slot_idx] = grads[slot_idx] + piece
            else:
                grads[slot_idx] = piece
    return {Slot(i): grads.get(i, np.zeros_like(tape._values[i]))
            for i in tape._params}


def grad_check(f: Callable[[Tape, Slot], Slot], x: np.ndarray,
               eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` builds a scalar loss on the given tape from the given slot.
    Error per entry is |analytic - numeric| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = as_matrix(x)

    tape = Tape()
    xs = tape.parameter(x)
    analytic = backward(tape, f(tape, xs))[xs]

    def eval_at(pt: np.ndarray) -> float:
        t = Tape()
        return t.value(f(t, t.parameter(pt)))[0, 0]

    worst = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            probe = x.copy()
            probe[i, j] = x[i, j] + eps
            hi = eval_at(probe)
            probe[i, j] = x[i, j] - eps
            lo = eval_at(probe)
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(analytic[i, j] - numeric) / max(1.0, abs(analytic[i, j]))
            worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    """Per-parameter Adam accumulators and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), lr=lr)


def adam_step(param: np.ndarray, grad: np.ndarray,
              state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new param and new state."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_param, AdamState(m=m, v=v, t=t, lr=state.lr, beta1=state.beta1,
                                beta2=state.beta2, eps=state.eps)
