"""Central finite-difference check of analytic gradients."""
from dataclasses import dataclass, field

import contextlib

import numpy as np

from .tensor import Tape, locked_branches, precision, replay


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float
    per_tensor: dict = field(default_factory=dict)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"gradcheck {status}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g})"


def _rel_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale < 1e-10:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def _call(fn, lock):
    if lock is not None:
        replay(lock)
    return fn()


def grad_check(fn, tensors, h=1e-3, tolerance=1e-3, max_entries=None, seed=0, names=None,
               lock_branches=True):
    """Compare ``backward`` against central differences of the scalar ``fn()``.

    Every tensor is promoted to float64 for the duration of the check so the
    difference quotient is not swamped by single-precision rounding.  With
    ``max_entries`` only a seeded random subset of each tensor is perturbed.
    The relative error for a tensor is its max absolute deviation divided by
    the larger of the two gradients' max magnitudes.

    With ``lock_branches`` the ReLU masks and max-pool selections of the
    unperturbed pass are reused by the perturbed passes, so a step of size
    ``h`` that crosses a kink does not corrupt the difference quotient.
    """
    tensors = list(tensors)
    names = names or [f"t{i}" for i in range(len(tensors))]
    originals = [t.data for t in tensors]
    rng = np.random.default_rng(seed)
    report = {}
    try:
        lock_ctx = locked_branches() if lock_branches else contextlib.nullcontext()
        with precision(np.float64), lock_ctx as lock:
            for t in tensors:
                t.data = t.data.astype(np.float64)
                t.grad = None
            with Tape() as tape:
                loss = fn()
            tape.backward(loss)
            analytic = [None if t.grad is None else t.grad.copy() for t in tensors]
            tape.clear()
            for t in tensors:
                t.grad = None

            for name, t, ag in zip(names, tensors, analytic):
                flat = t.data.reshape(-1)
                if max_entries is None or flat.size <= max_entries:
                    idx = np.arange(flat.size)
                else:
                    idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
                ag = np.zeros(t.shape) if ag is None else ag
                a_sel = ag.reshape(-1)[idx]
                n_sel = np.empty(idx.size)
                for k, i in enumerate(idx):
                    old = flat[i]
                    flat[i] = old + h
                    fp = float(_call(fn, lock).data)
                    flat[i] = old - h
                    fm = float(_call(fn, lock).data)
                    flat[i] = old
                    n_sel[k] = (fp - fm) / (2 * h)
                report[name] = _rel_error(a_sel, n_sel)
    finally:
        for t, d in zip(tensors, originals):
            t.data = d
            t.grad = None
    worst = max(report.values(), default=0.0)
    return GradCheckReport(worst < tolerance, worst, tolerance, report)
