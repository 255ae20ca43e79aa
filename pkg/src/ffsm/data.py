"""Factor stacks, flood inventories, patch datasets and a synthetic watershed."""
import csv
import json
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import CapacityError, FormatError, ParseError

log = logging.getLogger(__name__)

STACK_MAGIC = b"FFSTACK1\n"
DEFAULT_NODATA = -9999.0
SUBSETS = ("train", "val", "test")

FACTOR_NAMES = (
    "elevation", "slope", "aspect", "curvature", "distance_to_river", "tpi",
    "ruggedness_index", "spi", "twi", "drainage_density", "convergence_index",
    "flow_accumulation", "rainfall", "ndvi", "landcover", "distance_to_roads",
)


@dataclass
class FeatureStack:
    data: np.ndarray            # (F, H, W) float32
    factors: tuple
    mask: np.ndarray = None     # (H, W) True where nodata
    cell_size: float = 12.5
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"stack data must be (F, H, W), got {self.data.shape}")
        self.factors = tuple(self.factors)
        if len(self.factors) != self.data.shape[0]:
            raise ValueError(f"{len(self.factors)} names for {self.data.shape[0]} layers")
        if len(set(self.factors)) != len(self.factors):
            raise ValueError("factor names must be unique")
        if self.mask is None:
            self.mask = np.zeros(self.data.shape[1:], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.data.shape[1:]:
            raise ValueError("mask shape must match the grid")

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def n_factors(self):
        return self.data.shape[0]

    def layer(self, name):
        return self.data[self.factors.index(name)]


def save_stack(stack, path):
    header = {
        "width": stack.width, "height": stack.height, "cell_size": stack.cell_size,
        "nodata": stack.nodata, "factors": list(stack.factors),
    }
    data = stack.data.copy()
    data[:, stack.mask] = stack.nodata
    with open(path, "wb") as fh:
        fh.write(STACK_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_stack(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(STACK_MAGIC):
        raise FormatError(f"{path}: not an FFSTACK file")
    end = blob.find(b"\n", len(STACK_MAGIC))
    if end < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(blob[len(STACK_MAGIC):end])
        w, h = int(header["width"]), int(header["height"])
        names = list(header["factors"])
        nodata = float(header["nodata"])
        cell = float(header.get("cell_size", 12.5))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad header: {exc}") from None
    if w < 1 or h < 1 or not names:
        raise FormatError(f"{path}: degenerate dimensions {w}x{h}x{len(names)}")
    payload = blob[end + 1:]
    expected = 4 * len(names) * h * w
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(len(names), h, w).astype(np.float32)
    mask = (data == np.float32(nodata)).any(axis=0)
    if not np.isfinite(data[:, ~mask]).all():
        raise FormatError(f"{path}: non-finite values in unmasked cells")
    try:
        return FeatureStack(data, names, mask, cell, nodata)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- inventory ---------------------------------------------------------------

@dataclass(frozen=True)
class InventoryPoint:
    row: int
    col: int
    label: int
    source: str = "recorded"


def load_inventory(path, stack=None):
    """Read ``row,col,label[,source]`` rows, validating against ``stack`` if given."""
    points = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:3] != ["row", "col", "label"]:
            raise ParseError(f"expected header row,col,label[,source], got {header}", 1)
        has_source = len(header) > 3 and header[3] == "source"
        for lineno, rec in enumerate(reader, start=2):
            if not rec or not "".join(rec).strip():
                continue
            try:
                r, c, lab = int(rec[0]), int(rec[1]), int(rec[2])
            except (ValueError, IndexError):
                raise ParseError(f"cannot parse {rec}", lineno) from None
            if lab not in (0, 1):
                raise ParseError(f"label must be 0 or 1, got {lab}", lineno)
            if stack is not None:
                if not (0 <= r < stack.height and 0 <= c < stack.width):
                    raise ParseError(f"cell ({r}, {c}) outside {stack.height}x{stack.width} grid",
                                     lineno)
                if stack.mask[r, c]:
                    raise ParseError(f"cell ({r}, {c}) is nodata", lineno)
            elif r < 0 or c < 0:
                raise ParseError(f"negative cell index ({r}, {c})", lineno)
            source = rec[3].strip() if has_source and len(rec) > 3 else "recorded"
            points.append(InventoryPoint(r, c, lab, source))
    return points


def save_inventory(points, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "label", "source"])
        for p in points:
            w.writerow([p.row, p.col, p.label, p.source])


def _interior(shape, patch):
    """Cells whose ``patch`` window lies fully inside a grid of ``shape``."""
    h, w = shape
    ok = np.zeros(shape, dtype=bool)
    if patch is None or patch <= 1:
        ok[:] = True
        return ok
    lo = patch // 2
    hi_r, hi_c = h - (patch - lo), w - (patch - lo)
    if hi_r >= lo and hi_c >= lo:
        ok[lo:hi_r + 1, lo:hi_c + 1] = True
    return ok


def generate_nonflood(stack, flood_points, n, min_distance_cells=5, seed=0, patch=None):
    """Draw ``n`` distinct non-flood cells uniformly at random.

    Candidates are off nodata, not a flood cell, at Chebyshev distance
    >= ``min_distance_cells`` from every flood point and, when ``patch`` is
    given, far enough from the border for a full window.
    """
    eligible = ~stack.mask & _interior(stack.mask.shape, patch)
    d = max(int(min_distance_cells), 1)
    for p in flood_points:
        eligible[max(p.row - d + 1, 0):p.row + d, max(p.col - d + 1, 0):p.col + d] = False
    cells = np.flatnonzero(eligible)
    if cells.size < n:
        raise CapacityError(f"only {cells.size} eligible cells for {n} non-flood points")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(cells, size=n, replace=False)
    w = stack.width
    return [InventoryPoint(int(i // w), int(i % w), 0, "generated") for i in chosen]


# -- patches -------------------------------------------------------------------

@dataclass
class PatchDataset:
    X: np.ndarray               # (N, F, p, p) float32
    y: np.ndarray               # (N,) int
    points: list
    factors: tuple
    split: np.ndarray = None    # (N,) of "train" / "val" / "test"
    mean: np.ndarray = None
    std: np.ndarray = None
    rejected: list = field(default_factory=list)

    def __len__(self):
        return len(self.y)

    @property
    def patch(self):
        return self.X.shape[-1]

    def indices(self, subset):
        if self.split is None:
            raise ValueError("dataset has no split assignment")
        return np.flatnonzero(self.split == subset)

    def subset(self, name):
        idx = self.indices(name)
        return self.X[idx], self.y[idx]


def window(stack, row, col, p):
    r0, c0 = row - p // 2, col - p // 2
    return r0, c0, r0 + p, c0 + p


def extract_patches(stack, points, p):
    """Cut a p x p window around each point; off-grid or nodata windows are rejected."""
    keep, rejected = [], []
    for pt in points:
        r0, c0, r1, c1 = window(stack, pt.row, pt.col, p)
        if r0 < 0 or c0 < 0 or r1 > stack.height or c1 > stack.width:
            rejected.append((pt, "window exits grid"))
        elif stack.mask[r0:r1, c0:c1].any():
            rejected.append((pt, "window touches nodata"))
        else:
            keep.append(pt)
    if rejected:
        log.warning("rejected %d of %d points during patch extraction", len(rejected), len(points))
    X = np.empty((len(keep), stack.n_factors, p, p), dtype=np.float32)
    for i, pt in enumerate(keep):
        r0, c0, r1, c1 = window(stack, pt.row, pt.col, p)
        X[i] = stack.data[:, r0:r1, c0:c1]
    y = np.array([pt.label for pt in keep], dtype=np.int64)
    return PatchDataset(X, y, keep, stack.factors, rejected=rejected)


def _allocate(n, ratios):
    """Floor each share, then hand leftovers to the largest remainders (ties: earlier subset)."""
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e + 1e-9)) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return counts


def split(dataset, ratios=(0.7, 0.15, 0.15), seed=0, stratified=True):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(dataset), dtype="<U5")
    groups = [np.flatnonzero(dataset.y == c) for c in np.unique(dataset.y)] if stratified \
        else [np.arange(len(dataset))]
    for idx in groups:
        idx = rng.permutation(idx)
        start = 0
        for name, count in zip(SUBSETS, _allocate(idx.size, ratios)):
            assignment[idx[start:start + count]] = name
            start += count
    return replace(dataset, split=assignment)


def apply_standardization(arr, mean, std, axis=1):
    """Elementwise z-score; identical arithmetic for patch batches and whole stacks."""
    shape = [1] * arr.ndim
    shape[axis] = -1
    m = np.asarray(mean, dtype=np.float64).reshape(shape)
    s = np.asarray(std, dtype=np.float64).reshape(shape)
    return ((arr.astype(np.float64) - m) / s).astype(np.float32)


def fit_standardization(X):
    x = X.astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    flat = std < 1e-12
    if flat.any():
        log.warning("zero-variance factors %s: std replaced by 1", np.flatnonzero(flat).tolist())
        std = np.where(flat, 1.0, std)
    return mean, std


def standardize(dataset):
    """Z-score every factor with statistics fitted on the training subset only."""
    train = dataset.X[dataset.indices("train")]
    if train.shape[0] == 0:
        raise ValueError("training subset is empty")
    mean, std = fit_standardization(train)
    return replace(dataset, X=apply_standardization(dataset.X, mean, std), mean=mean, std=std)


def drop_factor(dataset, j):
    keep = [i for i in range(len(dataset.factors)) if i != j]
    return replace(
        dataset, X=np.ascontiguousarray(dataset.X[:, keep]),
        factors=tuple(dataset.factors[i] for i in keep),
        mean=None if dataset.mean is None else dataset.mean[keep],
        std=None if dataset.std is None else dataset.std[keep])


def sample_table(stack, points):
    """Factor values at inventory cells, shape (n, F)."""
    rows = np.array([p.row for p in points])
    cols = np.array([p.col for p in points])
    return stack.data[:, rows, cols].T.astype(np.float64)


def prepare_dataset(stack, points, patch, ratios=(0.7, 0.15, 0.15), seed=0, stratified=True):
    ds = extract_patches(stack, points, patch)
    return standardize(split(ds, ratios, seed, stratified))


# -- synthetic watershed -------------------------------------------------------

DEFAULT_PROFILE = {"distance_to_river": 1.0, "drainage_density": 1.0}


def _smooth_field(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return (f - f.mean()) / (f.std() + 1e-12)


def _zscore(a):
    return (a - a.mean()) / (a.std() + 1e-12)


def _river_line(rng, h, w, start_col, wander):
    """Meandering north-south channel as a boolean mask."""
    mask = np.zeros((h, w), dtype=bool)
    steps = ndimage.gaussian_filter1d(rng.standard_normal(h) * wander, 3.0)
    cols = np.clip(np.round(start_col + np.cumsum(steps)), 0, w - 1).astype(int)
    for r in range(h):
        mask[r, cols[r]] = True
        if r and abs(cols[r] - cols[r - 1]) > 1:
            lo, hi = sorted((cols[r], cols[r - 1]))
            mask[r, lo:hi + 1] = True
    return mask


def synth_generate(seed=0, width=64, height=64, n_flood=261, relevance_profile=None,
                   patch=32, sharpness=6.0, cell_size=12.5, with_probability=False):
    """Build a synthetic 16-factor watershed and a balanced flood inventory.

    A carved river network sets ``distance_to_river``; an independent gully
    network sets ``drainage_density``.  The flood logit is a weighted sum of
    the z-scored planted factors given by ``relevance_profile``; the other
    terrain layers share a common base surface (correlated nuisance), and
    ``convergence_index`` is pure white noise.  Flood points are drawn in
    proportion to the flood probability, non-flood points in proportion to
    its complement, both from cells whose ``patch`` window fits the grid.

    Returns ``(stack, points)``, plus the flood-probability grid when
    ``with_probability`` is set.
    """
    if width < 4 or height < 4 or n_flood < 1:
        raise ValueError(f"degenerate synthetic size {width}x{height} with {n_flood} floods")
    profile = dict(DEFAULT_PROFILE if relevance_profile is None else relevance_profile)
    unknown = set(profile) - set(FACTOR_NAMES)
    if unknown:
        raise ValueError(f"relevance profile names unknown factors {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    shape = (height, width)
    rows, cols = np.mgrid[0:height, 0:width]

    base = _smooth_field(rng, shape, 2.0) + 1.5 * rows / height
    river = _river_line(rng, height, width, rng.uniform(0.3, 0.7) * width, 0.6)
    for _ in range(2):
        trib = _river_line(rng, height, width, rng.uniform(0.1, 0.9) * width, 1.2)
        trib[: rng.integers(height // 4, 3 * height // 4)] = False
        river |= trib
    dist = ndimage.distance_transform_edt(~river) * cell_size

    gully_intensity = _smooth_field(rng, shape, 4.0)
    gullies = rng.random(shape) < 0.08 * (1 + np.tanh(1.5 * gully_intensity))
    drainage = ndimage.gaussian_filter(gullies.astype(float), 2.5)

    elevation = 1500 + 400 * base - 5 * np.exp(-dist / (2 * cell_size))
    gy, gx = np.gradient(elevation, cell_size)
    slope = np.degrees(np.arctan(np.hypot(gx, gy)))
    aspect = (np.degrees(np.arctan2(-gx, gy)) + 360) % 360
    curvature = ndimage.laplace(ndimage.gaussian_filter(elevation, 1.0))
    tpi = elevation - ndimage.uniform_filter(elevation, 7)
    rugged = np.sqrt(np.maximum(ndimage.uniform_filter(elevation ** 2, 5)
                                - ndimage.uniform_filter(elevation, 5) ** 2, 0))
    flow_acc = np.exp(2 + 1.5 * _smooth_field(rng, shape, 2) - 0.8 * _zscore(base))
    spi = np.log1p(flow_acc) * np.tan(np.radians(slope) + 0.01)
    twi = np.log((flow_acc + 1) / np.tan(np.radians(slope) + 0.01))
    rainfall = 360 + 40 * _zscore(base) + 10 * _smooth_field(rng, shape, 2)
    ndvi = 0.3 - 0.1 * _zscore(base) + 0.05 * _smooth_field(rng, shape, 2)
    landcover = np.digitize(_smooth_field(rng, shape, 2) - 0.5 * _zscore(base),
                            [-1.2, -0.6, -0.2, 0.2, 0.6, 1.2]) + 1
    roads = np.zeros(shape, dtype=bool)
    for _ in range(6):
        roads |= _river_line(rng, width, height, rng.uniform(0, height), 1.5).T
    dist_roads = ndimage.distance_transform_edt(~roads) * cell_size
    convergence = rng.standard_normal(shape) * 25

    layers = {
        "elevation": elevation, "slope": slope, "aspect": aspect, "curvature": curvature,
        "distance_to_river": dist, "tpi": tpi, "ruggedness_index": rugged, "spi": spi,
        "twi": twi, "drainage_density": drainage, "convergence_index": convergence,
        "flow_accumulation": flow_acc, "rainfall": rainfall, "ndvi": ndvi,
        "landcover": landcover.astype(float), "distance_to_roads": dist_roads,
    }
    logit = np.zeros(shape)
    for name, weight in profile.items():
        layer = np.log1p(layers[name] / cell_size) if name.startswith("distance") else layers[name]
        sign = -1.0 if name.startswith("distance") else 1.0
        logit += sign * weight * _zscore(layer)
    prob = 1 / (1 + np.exp(-sharpness * _zscore(logit)))

    data = np.stack([layers[n] for n in FACTOR_NAMES]).astype(np.float32)
    stack = FeatureStack(data, FACTOR_NAMES, cell_size=cell_size)

    cells = np.flatnonzero(_interior(shape, patch))
    if cells.size < 2 * n_flood:
        raise ValueError(f"only {cells.size} interior cells for {2 * n_flood} inventory points")
    p = prob.reshape(-1)[cells]
    flood = rng.choice(cells, size=n_flood, replace=False, p=p / p.sum())
    rest = np.setdiff1d(cells, flood)
    q = 1 - prob.reshape(-1)[rest]
    nonflood = rng.choice(rest, size=n_flood, replace=False, p=q / q.sum())
    points = [InventoryPoint(int(i // width), int(i % width), 1, "recorded") for i in flood]
    points += [InventoryPoint(int(i // width), int(i % width), 0, "generated") for i in nonflood]
    if with_probability:
        return stack, points, prob
    return stack, points
