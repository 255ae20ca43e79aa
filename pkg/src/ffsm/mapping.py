"""Whole-grid susceptibility inference, natural-breaks classes and class statistics."""
import csv
import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import FeatureStack, _interior, apply_standardization, save_stack
from .errors import ConfigError, DegenerateInputError
from .train import predict

CLASS_NAMES = ("Very low", "Low", "Moderate", "High", "Very high")
JENKS_MAX_SAMPLES = 50_000
GRAY_RAMP = (0, 51, 102, 153, 204, 255)


@dataclass
class ProbabilityMap:
    prob: np.ndarray        # (H, W) float64, 0 where masked
    mask: np.ndarray        # (H, W) True where no prediction


def valid_windows(stack, p):
    """Cells whose p x p window is in-grid and free of nodata."""
    ok = _interior(stack.mask.shape, p) & ~stack.mask
    if p > 1:
        bad = np.zeros(stack.mask.shape, dtype=bool)
        hits = sliding_window_view(stack.mask, (p, p)).any(axis=(-2, -1))
        lo = p // 2
        bad[lo:lo + hits.shape[0], lo:lo + hits.shape[1]] = hits
        ok &= ~bad
    return ok


def predict_map(model, stack, mean, std, factors=None, tile_size=1024):
    """Model probability for every cell with a complete window; others masked."""
    if factors is not None and tuple(factors) != stack.factors:
        raise ConfigError(
            f"model was trained on factors {list(factors)} but the stack has {list(stack.factors)}")
    p = model.spec.patch
    if stack.n_factors != model.spec.factors:
        raise ConfigError(f"model expects {model.spec.factors} factors, stack has {stack.n_factors}")
    z = apply_standardization(stack.data, mean, std, axis=0)
    ok = valid_windows(stack, p)
    rows, cols = np.nonzero(ok)
    windows = sliding_window_view(z, (p, p), axis=(1, 2))  # (F, H-p+1, W-p+1, p, p)
    r0, c0 = rows - p // 2, cols - p // 2
    prob = np.zeros(stack.mask.shape, dtype=np.float64)
    for start in range(0, rows.size, max(1, tile_size)):
        sl = slice(start, start + tile_size)
        batch = np.ascontiguousarray(windows[:, r0[sl], c0[sl]].transpose(1, 0, 2, 3))
        prob[rows[sl], cols[sl]] = predict(model, batch)
    return ProbabilityMap(prob, ~ok)


# -- natural breaks ----------------------------------------------------------

def _segment_cost(cw, cwx, cwx2, j, i):
    """Weighted within-segment SSD for sorted unique values j..i (inclusive, arrays of j)."""
    w = cw[i + 1] - cw[j]
    s = cwx[i + 1] - cwx[j]
    return np.maximum(cwx2[i + 1] - cwx2[j] - s * s / w, 0.0)


def _fisher_jenks(x, w, k):
    """Optimal contiguous k-partition of sorted unique values x with weights w.

    Dynamic programme over classes; each layer uses divide and conquer on the
    monotone optimal split position, which holds for 1-D squared error.
    Returns the index of the first element of classes 2..k.
    """
    n = x.size
    xs = x - x.mean()
    cw = np.r_[0.0, np.cumsum(w)]
    cwx = np.r_[0.0, np.cumsum(w * xs)]
    cwx2 = np.r_[0.0, np.cumsum(w * xs * xs)]
    cost = _segment_cost(cw, cwx, cwx2, np.zeros(n, dtype=np.int64), np.arange(n))
    starts = []
    for c in range(1, k):
        prev = cost
        cost = np.full(n, np.inf)
        arg = np.zeros(n, dtype=np.int64)
        # cost[i] = min over j in [c, i] of prev[j-1] + seg(j, i)
        stack = [(c, n - 1, c, n - 1)]
        while stack:
            lo, hi, olo, ohi = stack.pop()
            if lo > hi:
                continue
            mid = (lo + hi) // 2
            js = np.arange(olo, min(mid, ohi) + 1)
            vals = prev[js - 1] + _segment_cost(cw, cwx, cwx2, js, mid)
            best = int(np.argmin(vals))
            cost[mid] = vals[best]
            arg[mid] = js[best]
            stack.append((lo, mid - 1, olo, js[best]))
            stack.append((mid + 1, hi, js[best], ohi))
        starts.append(arg)
    bounds = []
    i = n - 1
    for arg in reversed(starts):
        j = int(arg[i])
        bounds.append(j)
        i = j - 1
    return bounds[::-1]


def jenks_breaks(values, k=5, max_samples=JENKS_MAX_SAMPLES, seed=0):
    """k-1 ascending thresholds minimizing total within-class squared deviation.

    Threshold c is the largest value of class c, so intervals are right-closed.
    Inputs larger than ``max_samples`` are uniformly subsampled (seeded).
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    v = v[np.isfinite(v)]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return []
    if v.size > max_samples:
        v = np.random.default_rng(seed).choice(v, size=max_samples, replace=False)
    x, counts = np.unique(v, return_counts=True)
    if x.size < k:
        raise DegenerateInputError(f"need at least {k} distinct values, got {x.size}")
    starts = _fisher_jenks(x, counts.astype(np.float64), k)
    return [float(x[s - 1]) for s in starts]


def within_class_ssd(values, breaks):
    v = np.asarray(values, dtype=np.float64)
    cls = np.searchsorted(np.asarray(breaks), v, side="left")
    total = 0.0
    for c in np.unique(cls):
        part = v[cls == c]
        total += float(((part - part.mean()) ** 2).sum())
    return total


# -- classification and statistics -------------------------------------------

def classify(prob, breaks, mask=None):
    """Class 1..k per cell (class c iff break_{c-1} < p <= break_c); 0 where masked."""
    b = np.asarray(breaks, dtype=np.float64)
    if b.size and np.any(np.diff(b) < 0):
        raise ValueError(f"breaks must be ascending, got {list(b)}")
    classes = np.searchsorted(b, np.asarray(prob, dtype=np.float64), side="left") + 1
    if mask is not None:
        classes = np.where(mask, 0, classes)
    return classes.astype(np.int64)


def area_stats(classes, mask=None, k=5):
    valid = classes > 0 if mask is None else ~mask
    counts = np.bincount(classes[valid], minlength=k + 1)[1:k + 1]
    total = counts.sum()
    if total == 0:
        raise DegenerateInputError("no classified cells")
    return (100.0 * counts / total).tolist()


def event_stats(classes, points, k=5, mask=None):
    """Share of flood points per class, over flood points on classified cells."""
    valid = classes > 0 if mask is None else ~mask
    hits = [classes[p.row, p.col] for p in points
            if p.label == 1 and valid[p.row, p.col]]
    if not hits:
        raise DegenerateInputError("no flood points fall on classified cells")
    counts = np.bincount(np.asarray(hits), minlength=k + 1)[1:k + 1]
    return (100.0 * counts / counts.sum()).tolist()


@dataclass
class SusceptibilityMap:
    prob: np.ndarray
    mask: np.ndarray
    breaks: list
    classes: np.ndarray
    class_area_pct: list
    event_pct: list

    def table(self):
        names = CLASS_NAMES if len(self.class_area_pct) == 5 else [
            f"Class {i + 1}" for i in range(len(self.class_area_pct))]
        return [{"class": n, "area_pct": round(a, 6), "event_pct": round(e, 6)}
                for n, a, e in zip(names, self.class_area_pct, self.event_pct)]


def build_map(prob_map, points, k=5, max_samples=JENKS_MAX_SAMPLES, seed=0):
    valid = ~prob_map.mask
    breaks = jenks_breaks(prob_map.prob[valid], k, max_samples, seed)
    classes = classify(prob_map.prob, breaks, prob_map.mask)
    return SusceptibilityMap(prob_map.prob, prob_map.mask, breaks, classes,
                             area_stats(classes, prob_map.mask, k),
                             event_stats(classes, points, k, prob_map.mask))


# -- writers -------------------------------------------------------------------

def _write_pgm(path, img, maxval):
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        fh.write(img.astype(">u2" if maxval > 255 else "u1").tobytes())


def write_probability(prob_map, stack_path, pgm_path, cell_size=12.5):
    layer = FeatureStack(prob_map.prob[None].astype(np.float32), ("flood_probability",),
                         prob_map.mask, cell_size)
    save_stack(layer, stack_path)
    img = np.where(prob_map.mask, 0, np.round(np.clip(prob_map.prob, 0, 1) * 65535))
    _write_pgm(pgm_path, img, 65535)


def write_classes(smap, csv_path, pgm_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(smap.classes.tolist())
    ramp = np.asarray(GRAY_RAMP)
    _write_pgm(pgm_path, ramp[np.clip(smap.classes, 0, 5)], 255)


def write_stats(smap, path):
    doc = {
        "breaks": [round(b, 6) for b in smap.breaks],
        "classes": smap.table(),
        "columns": {"area_pct": "share of classified cells in the class (%)",
                    "event_pct": "share of flood inventory points in the class (%)"},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = parts[4]
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype).reshape(h, w)
