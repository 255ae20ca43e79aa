"""Pearson correlation screening and variance inflation factors."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateInputError

R2_SATURATION = 1 - 1e-12
RIDGE_COND = 1e12


@dataclass
class FactorTable:
    values: np.ndarray
    names: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("factor table must be 2-D (samples x factors)")
        self.names = tuple(self.names) if self.names else tuple(
            f"f{i}" for i in range(self.values.shape[1]))
        if len(self.names) != self.values.shape[1]:
            raise ValueError(f"{len(self.names)} names for {self.values.shape[1]} factors")
        if not np.isfinite(self.values).all():
            raise ValueError("factor table contains non-finite values")


def _centered(table):
    x = table.values
    return x - x.mean(axis=0)


def zero_variance(table):
    return np.flatnonzero(_centered(table).std(axis=0) == 0)


def pearson_matrix(table):
    """Product-moment correlations; zero-variance factors get 0 off the diagonal."""
    xc = _centered(table)
    norms = np.sqrt((xc ** 2).sum(axis=0))
    ok = norms > 0
    z = np.zeros_like(xc)
    z[:, ok] = xc[:, ok] / norms[ok]
    r = np.clip(z.T @ z, -1.0, 1.0)
    r = (r + r.T) / 2
    np.fill_diagonal(r, 1.0)
    return r


def _r_squared(y, X):
    """R^2 of y on X (both centered, so the intercept is implicit), via normal equations."""
    sst = float(y @ y)
    if sst == 0:
        return 1.0
    if X.shape[1] == 0:
        return 0.0
    gram = X.T @ X
    rhs = X.T @ y
    try:
        if np.linalg.cond(gram) > RIDGE_COND:
            raise np.linalg.LinAlgError("near-singular")
        beta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), rhs)
    except np.linalg.LinAlgError:
        lam = 1e-10 * np.trace(gram) / gram.shape[0]
        beta = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), rhs)
    resid = y - X @ beta
    return 1.0 - float(resid @ resid) / sst


def vif(table):
    """1 / (1 - R^2_j) for each factor regressed on all others; +inf when saturated."""
    n, f = table.values.shape
    if n <= f:
        raise DegenerateInputError(f"VIF needs more samples than factors (n={n}, F={f})")
    xc = _centered(table)
    # Column scaling leaves every R^2 unchanged and keeps the Gram matrix well scaled.
    scale = np.sqrt((xc ** 2).mean(axis=0))
    xs = xc / np.where(scale > 0, scale, 1.0)
    out = np.empty(f)
    for j in range(f):
        r2 = _r_squared(xs[:, j], np.delete(xs, j, axis=1))
        out[j] = np.inf if r2 >= R2_SATURATION else 1.0 / (1.0 - r2)
    return out


@dataclass
class OptimizationReport:
    names: tuple
    pearson: np.ndarray
    vif: np.ndarray
    flags: dict
    correlated_pairs: list
    thresholds: dict = field(default_factory=dict)

    def retained(self):
        return [n for n in self.names if self.flags[n] == ["retained"]]

    def to_dict(self):
        return {
            "thresholds": self.thresholds,
            "vif": {n: (None if not np.isfinite(v) else float(v))
                    for n, v in zip(self.names, self.vif)},
            "flags": self.flags,
            "correlated_pairs": [{"a": a, "b": b, "r": float(r)} for a, b, r in self.correlated_pairs],
        }

    def write(self, matrix_csv, flags_json):
        with open(matrix_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["factor", *self.names])
            for name, row in zip(self.names, self.pearson):
                w.writerow([name, *(f"{v:.6f}" for v in row)])
        with open(flags_json, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def optimize(table, corr_threshold=0.7, vif_threshold=5.0):
    """Flag strongly correlated pairs (|r| >= threshold) and VIF > threshold.

    Nothing is dropped; the caller decides what to do with flagged factors.
    """
    r = pearson_matrix(table)
    v = vif(table)
    names = table.names
    flags = {n: [] for n in names}
    pairs = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if abs(r[i, j]) >= corr_threshold:
                pairs.append((names[i], names[j], r[i, j]))
                for k in (i, j):
                    if "flagged-correlation" not in flags[names[k]]:
                        flags[names[k]].append("flagged-correlation")
    for j in zero_variance(table):
        flags[names[j]].append("undefined-correlation")
    for n, value in zip(names, v):
        if value > vif_threshold:
            flags[n].append("flagged-vif")
    for n in names:
        if not flags[n]:
            flags[n] = ["retained"]
    return OptimizationReport(names, r, v, flags, pairs,
                              {"correlation": corr_threshold, "vif": vif_threshold})
