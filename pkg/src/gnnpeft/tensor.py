"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is exactly what a small message-passing network needs: matmul,
segment scatter/gather, batch normalization, and an elementwise suite
including a masked binary-cross-entropy loss. Forward values are numpy
arrays; gradients are computed by walking a :class:`Tape` of recorded
operations in reverse.

Conventions:
  * everything is float64 (checkpoints downcast to float32 on disk);
  * an op is recorded only while a tape is active and at least one input
    has ``requires_grad``, so frozen subgraphs cost no backward work;
  * stochastic ops take an explicit :class:`~gnnpeft.rng.RngStream`.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .rng import RngStream


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateBatchError(ValueError):
    """Batch statistics were requested over fewer than two rows."""


class EmptyLossError(ValueError):
    """A loss was requested over zero unmasked elements."""


class Tensor:
    """A dense array plus an optional gradient buffer and tape handle."""

    __slots__ = ("data", "requires_grad", "grad", "tape_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.tape_node: Optional["TapeNode"] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def set_requires_grad(self, flag: bool) -> None:
        flag = bool(flag)
        if flag and self.grad is None:
            self.grad = np.zeros_like(self.data)
        elif not flag:
            self.grad = None
        self.requires_grad = flag

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    """One recorded operation: inputs, output, and its backward rule."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], None]):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; supports a single reverse sweep.

    Operations are appended in execution order, which is a topological
    order by construction. ``backward`` visits each node exactly once in
    reverse, accumulating into the ``grad`` buffers of tensors that
    require gradients.

    Leaving the ``with`` block releases the recorded graph: tensors and
    their tape nodes reference each other, and dropping those links lets
    plain refcounting reclaim each step's intermediates instead of
    leaving megabytes of cyclic garbage for the generational collector.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)
        node.output.tape_node = node

    def release(self) -> None:
        for node in self.nodes:
            node.output.tape_node = None
        self.nodes.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeMismatchError(
                f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not require grad; nothing to backpropagate")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            node.backward_fn(g)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()
        self.release()


_TAPE_STACK: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(inputs: Sequence[Tensor], out_data: np.ndarray,
            backward_fn_factory) -> Tensor:
    """Create the output tensor and record it if a tape is listening."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(TapeNode(inputs, out, backward_fn_factory(out)))
    return out


def _check_2d(t: Tensor, name: str) -> None:
    if t.data.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {t.data.shape}")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m×k) and b (k×n)."""
    _check_2d(a, "matmul lhs")
    _check_2d(b, "matmul rhs")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul inner extents differ: {a.data.shape} vs {b.data.shape}")
    out_data = a.data @ b.data

    def make_backward(out):
        def backward(g):
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ g
        return backward

    return _record((a, b), out_data, make_backward)


def gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of x (table lookup); backward scatter-adds into x."""
    _check_2d(x, "gather_rows input")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(
            f"gather index out of range [0, {x.data.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}")
    out_data = x.data[idx]

    def make_backward(out):
        def backward(g):
            if x.requires_grad:
                np.add.at(x.grad, idx, g)
        return backward

    return _record((x,), out_data, make_backward)


def scatter_sum(values: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of values into num_segments output rows by segment id.

    Segments with no entries are zero rows. Backward routes the output
    gradient back by gather.
    """
    _check_2d(values, "scatter_sum values")
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (values.data.shape[0],):
        raise ShapeMismatchError(
            f"segment_ids shape {ids.shape} does not match {values.data.shape[0]} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError(
            f"segment id out of range [0, {num_segments}): "
            f"min={ids.min()}, max={ids.max()}")
    out_data = np.zeros((num_segments, values.data.shape[1]))
    if ids.size:
        np.add.at(out_data, ids, values.data)

    def make_backward(out):
        def backward(g):
            if values.requires_grad:
                values.grad += g[ids]
        return backward

    return _record((values,), out_data, make_backward)


def segment_mean_pool(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Per-segment mean of rows; empty segments pool to zero rows."""
    _check_2d(x, "segment_mean_pool input")
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (x.data.shape[0],):
        raise ShapeMismatchError(
            f"segment_ids shape {ids.shape} does not match {x.data.shape[0]} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError(
            f"segment id out of range [0, {num_segments}): "
            f"min={ids.min()}, max={ids.max()}")
    counts = np.bincount(ids, minlength=num_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)[:, None]
    sums = np.zeros((num_segments, x.data.shape[1]))
    if ids.size:
        np.add.at(sums, ids, x.data)
    out_data = sums / denom

    def make_backward(out):
        def backward(g):
            if x.requires_grad:
                x.grad += (g / denom)[ids]
        return backward

    return _record((x,), out_data, make_backward)


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; the only broadcast allowed is (B×d) + (d,) bias."""
    if a.data.shape == b.data.shape:
        bias_mode = False
    elif a.data.ndim == 2 and b.data.shape == (a.data.shape[1],):
        bias_mode = True
    else:
        raise ShapeMismatchError(
            f"add shapes incompatible: {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def make_backward(out):
        def backward(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g.sum(axis=0) if bias_mode else g
        return backward

    return _record((a, b), out_data, make_backward)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not differentiable in c)."""
    c = float(c)
    out_data = x.data * c

    def make_backward(out):
        def backward(g):
            if x.requires_grad:
                x.grad += g * c
        return backward

    return _record((x,), out_data, make_backward)


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product. b may also be a single-element tensor (scalar
    scaling, differentiable in both factors) or a (d,) row vector applied
    to a (B×d) input."""
    if a.data.shape == b.data.shape:
        mode = "same"
    elif b.data.size == 1:
        mode = "scalar"
    elif a.data.ndim == 2 and b.data.shape == (a.data.shape[1],):
        mode = "row"
    else:
        raise ShapeMismatchError(
            f"mul shapes incompatible: {a.data.shape} vs {b.data.shape}")
    out_data = a.data * b.data

    def make_backward(out):
        def backward(g):
            if a.requires_grad:
                a.grad += g * b.data
            if b.requires_grad:
                if mode == "same":
                    b.grad += g * a.data
                elif mode == "scalar":
                    b.grad += np.sum(g * a.data).reshape(b.data.shape)
                else:
                    b.grad += (g * a.data).sum(axis=0)
        return backward

    return _record((a, b), out_data, make_backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def make_backward(out):
        mask = x.data > 0.0

        def backward(g):
            if x.requires_grad:
                x.grad += g * mask
        return backward

    return _record((x,), out_data, make_backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out_data = _sigmoid(x.data)

    def make_backward(out):
        def backward(g):
            if x.requires_grad:
                x.grad += g * out.data * (1.0 - out.data)
        return backward

    return _record((x,), out_data, make_backward)


def dropout(x: Tensor, p: float, rng: Optional[RngStream], mode: str) -> Tensor:
    """Inverted dropout: train mode zeroes with probability p and rescales
    survivors by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if mode == "eval":
        return x
    if p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng stream")
    keep = (rng.random(x.data.shape) >= p)
    scale = 1.0 / (1.0 - p)
    out_data = x.data * keep * scale

    def make_backward(out):
        def backward(g):
            if x.requires_grad:
                x.grad += g * keep * scale
        return backward

    return _record((x,), out_data, make_backward)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner product of two (K×d) tensors, returning shape (K,)."""
    _check_2d(a, "row_dot lhs")
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"row_dot shapes differ: {a.data.shape} vs {b.data.shape}")
    out_data = np.einsum("ij,ij->i", a.data, b.data)

    def make_backward(out):
        def backward(g):
            if a.requires_grad:
                a.grad += g[:, None] * b.data
            if b.requires_grad:
                b.grad += g[:, None] * a.data
        return backward

    return _record((a, b), out_data, make_backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out_data = np.asarray(x.data.sum())

    def make_backward(out):
        def backward(g):
            if x.requires_grad:
                x.grad += g
        return backward

    return _record((x,), out_data, make_backward)


def bce_with_logits(pred: Tensor, target: np.ndarray,
                    mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean binary cross entropy from logits, over unmasked entries only.

    Uses the stable form max(z,0) - z*y + log1p(exp(-|z|)); finite inputs
    can never produce NaN/Inf.
    """
    y = np.asarray(target, dtype=np.float64)
    if y.shape != pred.data.shape:
        raise ShapeMismatchError(
            f"target shape {y.shape} does not match logits {pred.data.shape}")
    if mask is None:
        m = np.ones(pred.data.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != pred.data.shape:
            raise ShapeMismatchError(
                f"mask shape {m.shape} does not match logits {pred.data.shape}")
    n = int(m.sum())
    if n == 0:
        raise EmptyLossError("all labels are masked; loss is undefined")
    z = pred.data
    per_elem = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out_data = np.asarray(np.sum(per_elem * m) / n)

    def make_backward(out):
        def backward(g):
            if pred.requires_grad:
                pred.grad += g * m * (_sigmoid(z) - y) / n
        return backward

    return _record((pred,), out_data, make_backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class BatchNormState:
    """Affine parameters plus running statistics for one BN instance.

    gamma/beta are tensors (possibly trainable); running_mean/var are
    plain buffers mutated in train mode. Running variance is updated with
    the unbiased batch variance; normalization itself uses the biased one.
    """

    def __init__(self, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.eps = eps

    @classmethod
    def fresh(cls, dim: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(Tensor(np.ones(dim), requires_grad=True),
                   Tensor(np.zeros(dim), requires_grad=True),
                   np.zeros(dim), np.ones(dim), momentum, eps)


def batchnorm1d(x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Batch normalization over rows of a (B×d) input.

    Train mode normalizes by the biased batch variance, applies the
    affine transform, and updates running statistics in place. Eval mode
    normalizes by the running statistics. The backward pass includes the
    mean and variance paths.
    """
    _check_2d(x, "batchnorm input")
    d = x.data.shape[1]
    if state.gamma.data.shape != (d,) or state.beta.data.shape != (d,):
        raise ShapeMismatchError(
            f"BN affine shape {state.gamma.data.shape} does not match width {d}")
    gamma, beta = state.gamma, state.beta

    if mode == "train":
        B = x.data.shape[0]
        if B < 2:
            raise DegenerateBatchError(
                f"train-mode batchnorm needs at least 2 rows, got {B}")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)  # biased
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mean) * inv_std
        out_data = gamma.data * xhat + beta.data
        mom = state.momentum
        unbiased = var * B / (B - 1)
        state.running_mean *= 1.0 - mom
        state.running_mean += mom * mean
        state.running_var *= 1.0 - mom
        state.running_var += mom * unbiased

        def make_backward(out):
            def backward(g):
                if gamma.requires_grad:
                    gamma.grad += (g * xhat).sum(axis=0)
                if beta.requires_grad:
                    beta.grad += g.sum(axis=0)
                if x.requires_grad:
                    dxhat = g * gamma.data
                    x.grad += (inv_std / B) * (
                        B * dxhat
                        - dxhat.sum(axis=0)
                        - xhat * (dxhat * xhat).sum(axis=0))
            return backward

        return _record((x, gamma, beta), out_data, make_backward)

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_std
        out_data = gamma.data * xhat + beta.data

        def make_backward(out):
            def backward(g):
                if gamma.requires_grad:
                    gamma.grad += (g * xhat).sum(axis=0)
                if beta.requires_grad:
                    beta.grad += g.sum(axis=0)
                if x.requires_grad:
                    x.grad += g * gamma.data * inv_std
            return backward

        return _record((x, gamma, beta), out_data, make_backward)

    raise ValueError(f"unknown batchnorm mode {mode!r}")
