"""Tensor, tape and the reverse-mode sweep.

Operations append a record to the innermost active :class:`Tape` whenever one
of their inputs requires a gradient.  ``backward`` replays the records in
exact reverse order, so no topological sort is needed.
"""
import contextlib
import threading

import numpy as np

from ..errors import GraphError, NumericError

_state = threading.local()


def default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    previous = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


class _BranchLock:
    def __init__(self):
        self.patterns = []
        self.replaying = False
        self.pos = 0


@contextlib.contextmanager
def locked_branches():
    """Pin the branch taken by every non-smooth op (ReLU masks, max selections).

    The first pass under the lock records each op's selection in call order;
    after ``lock.replay()`` later passes reuse those selections.  Near the
    recorded point the pinned function coincides with the original one, so
    its derivative there is the same, but finite differences no longer jump
    when a perturbation crosses a kink.
    """
    lock = _BranchLock()
    previous = getattr(_state, "branch_lock", None)
    _state.branch_lock = lock
    try:
        yield lock
    finally:
        _state.branch_lock = previous


def replay(lock):
    if lock.replaying and lock.pos != len(lock.patterns):
        raise GraphError(f"replayed {lock.pos} of {len(lock.patterns)} recorded branches")
    lock.replaying = True
    lock.pos = 0


def branch(compute):
    """Selection pattern for a non-smooth op: computed, recorded or replayed."""
    lock = getattr(_state, "branch_lock", None)
    if lock is None:
        return compute()
    if not lock.replaying:
        pattern = compute()
        lock.patterns.append(pattern)
        return pattern
    if lock.pos >= len(lock.patterns):
        raise GraphError("more non-smooth ops than were recorded")
    pattern = lock.patterns[lock.pos]
    lock.pos += 1
    return pattern


def _tape_stack():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        dtype = dtype or default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class _Record:
    __slots__ = ("name", "out", "parents", "backward")

    def __init__(self, name, out, parents, backward):
        self.name = name
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations executed inside the block are
    recorded here.  Tapes nest, with the innermost one receiving records.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def clear(self):
        for rec in self.records:
            rec.out.op = None
        self.records = []

    def backward(self, loss, grad=None):
        backward(loss, self, grad)


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {name}")


def apply(name, data, parents, backward_fn):
    """Wrap ``data`` as the output of an operation.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    The record is only kept when a tape is active and a parent needs grads.
    """
    _check_finite(name, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        rec = _Record(name, out, parents, backward_fn)
        out.op = rec
        tape.records.append(rec)
    return out


def backward(loss, tape, grad=None):
    """Populate ``.grad`` on every tensor reachable from ``loss``."""
    rec = loss.op
    if rec is None or not any(r is rec for r in reversed(tape.records)):
        raise GraphError("backward called on a tensor not produced by this tape")
    if grad is None:
        if loss.data.size != 1:
            raise GraphError("backward without an explicit grad needs a scalar loss")
        grad = np.ones_like(loss.data)
    loss.grad = np.asarray(grad, dtype=loss.data.dtype)
    for rec in reversed(tape.records):
        g = rec.out.grad
        if g is None:
            continue
        grads = rec.backward(g)
        for parent, pg in zip(rec.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(f"backward of {rec.name}", pg)
            if pg.shape != parent.data.shape:
                raise GraphError(
                    f"{rec.name} produced grad of shape {pg.shape} for input {parent.data.shape}"
                )
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=parent.data.dtype)
            else:
                parent.grad += pg


def zero_grads(params):
    for p in params:
        p.grad = None
