"""Independent reference implementations used by the tests.

Each oracle takes a different route from the production code: pairwise
concordance for AUC, an intercept-augmented least-squares solve for VIF,
exhaustive enumeration with exact rational arithmetic for natural breaks.
"""
from fractions import Fraction
from itertools import combinations

import numpy as np

from ffsm import backbones
from ffsm.cbam import make_cbam
from ffsm.engine import Tensor, ops
from ffsm.engine.nn import BatchNorm2d


# -- AUC --------------------------------------------------------------------------

def pairwise_auc(scores, labels):
    """Probability a random positive outscores a random negative (ties count half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    wins = 0
    for p in pos:
        wins += 2 * int((p > neg).sum()) + int((p == neg).sum())
    return wins / (2 * pos.size * neg.size)


# -- VIF ------------------------------------------------------------------------------

def lstsq_vif(values):
    """1 / (1 - R^2) from an SVD least-squares fit with an explicit intercept column."""
    x = np.asarray(values, dtype=np.float64)
    n, f = x.shape
    out = np.empty(f)
    for j in range(f):
        y = x[:, j]
        A = np.column_stack([np.ones(n), np.delete(x, j, axis=1)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        sst = ((y - y.mean()) ** 2).sum()
        out[j] = sst / (resid @ resid)
    return out


# -- natural breaks -----------------------------------------------------------------

def exact_ssd(values, breaks):
    """Within-class squared deviation as an exact rational (right-closed classes)."""
    v = np.asarray(values, dtype=np.float64)
    cls = np.searchsorted(np.asarray(breaks, dtype=np.float64), v, side="left")
    total = Fraction(0)
    for c in np.unique(cls):
        part = [Fraction(float(a)) for a in v[cls == c]]
        s1 = sum(part)
        s2 = sum(a * a for a in part)
        total += s2 - s1 * s1 / len(part)
    return total


def exhaustive_min_ssd(values, k):
    """Minimum over every placement of k-1 cuts between distinct sorted values.

    All partitions are scored in floating point first; every partition within a
    generous margin of the float minimum is then rescored exactly, so the exact
    minimum is certain to be among them.
    """
    v = np.asarray(values, dtype=np.float64)
    x, w = np.unique(v, return_counts=True)
    n = x.size
    if k == 1:
        return exact_ssd(v, [])
    cuts = np.array(list(combinations(range(1, n), k - 1)), dtype=np.int64)
    cw = np.r_[0.0, np.cumsum(w)]
    c1 = np.r_[0.0, np.cumsum(w * x)]
    c2 = np.r_[0.0, np.cumsum(w * x * x)]
    edges = np.column_stack([np.zeros(len(cuts), dtype=np.int64), cuts, np.full(len(cuts), n)])
    lo, hi = edges[:, :-1], edges[:, 1:]
    seg = c2[hi] - c2[lo] - (c1[hi] - c1[lo]) ** 2 / (cw[hi] - cw[lo])
    score = seg.sum(axis=1)
    margin = 1e-7 * max(1.0, float(np.abs(score).max()))
    near = np.flatnonzero(score <= score.min() + margin)
    return min(exact_ssd(v, [x[c - 1] for c in cuts[i]]) for i in near)


# -- gradient suite -------------------------------------------------------------------

def _spaced(rng, shape, gap=0.02):
    """Values with pairwise gaps >= ``gap`` and no element near zero (safe for kinks)."""
    n = int(np.prod(shape))
    v = (np.arange(n) - n / 2 + 0.5) * gap
    return rng.permutation(v).reshape(shape)


def _leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _weighted_sum(out, rng):
    w = Tensor(rng.standard_normal(out.shape))
    return ops.sum_all(ops.mul_broadcast(out, w))


def primitive_cases():
    """(name, fn, tensors) triples, one per differentiable primitive configuration."""
    rng = np.random.default_rng(7)
    cases = []

    def case(name, build_out, *tensors):
        weights = np.random.default_rng(len(cases)).standard_normal(
            build_out(*tensors).shape)

        def fn():
            return ops.sum_all(ops.mul_broadcast(build_out(*tensors), Tensor(weights)))
        cases.append((name, fn, list(tensors)))

    x = _leaf(rng.standard_normal((2, 3, 6, 6)))
    case("conv2d 3x3 pad1 bias", lambda x, w, b: ops.conv2d(x, w, b, 1, 1),
         x, _leaf(rng.standard_normal((4, 3, 3, 3))), _leaf(rng.standard_normal(4)))
    case("conv2d 3x3 stride2", lambda x, w: ops.conv2d(x, w, None, 2, 0),
         _leaf(rng.standard_normal((2, 3, 7, 7))), _leaf(rng.standard_normal((2, 3, 3, 3))))
    case("conv2d 7x7 pad3", lambda x, w: ops.conv2d(x, w, None, 1, 3),
         _leaf(rng.standard_normal((1, 2, 5, 5))), _leaf(rng.standard_normal((1, 2, 7, 7))))
    case("conv2d 1x1 stride2", lambda x, w: ops.conv2d(x, w, None, 2, 0),
         _leaf(rng.standard_normal((2, 3, 6, 6))), _leaf(rng.standard_normal((5, 3, 1, 1))))
    case("depthwise_conv2d", lambda x, w: ops.depthwise_conv2d(x, w, 1, 1),
         _leaf(rng.standard_normal((2, 3, 5, 5))), _leaf(rng.standard_normal((3, 1, 3, 3))))
    case("depthwise_conv2d stride2", lambda x, w: ops.depthwise_conv2d(x, w, 2, 1),
         _leaf(rng.standard_normal((2, 3, 6, 6))), _leaf(rng.standard_normal((3, 1, 3, 3))))
    case("pointwise_conv2d", ops.pointwise_conv2d,
         _leaf(rng.standard_normal((2, 3, 4, 4))), _leaf(rng.standard_normal((4, 3, 1, 1))))
    case("max_pool2d 3 s2 p1", lambda x: ops.max_pool2d(x, 3, 2, 1),
         _leaf(_spaced(rng, (2, 2, 6, 6))))
    case("max_pool2d 2", lambda x: ops.max_pool2d(x, 2),
         _leaf(_spaced(rng, (2, 2, 4, 4))))
    case("avg_pool2d 2", lambda x: ops.avg_pool2d(x, 2),
         _leaf(rng.standard_normal((2, 3, 4, 4))))
    case("global_avg_pool", ops.global_avg_pool, _leaf(rng.standard_normal((2, 3, 4, 4))))
    case("global_max_pool", ops.global_max_pool, _leaf(_spaced(rng, (2, 3, 4, 4))))
    case("channel_mean", ops.channel_mean, _leaf(rng.standard_normal((2, 3, 4, 4))))
    case("channel_max", ops.channel_max, _leaf(_spaced(rng, (2, 3, 4, 4))))
    case("dense", ops.dense, _leaf(rng.standard_normal((3, 5))),
         _leaf(rng.standard_normal((4, 5))), _leaf(rng.standard_normal(4)))
    case("relu", ops.relu, _leaf(_spaced(rng, (2, 3, 3, 3))))
    case("sigmoid", ops.sigmoid, _leaf(rng.standard_normal((2, 3, 3, 3)) * 3))
    case("add", ops.add, _leaf(rng.standard_normal((2, 3, 3, 3))),
         _leaf(rng.standard_normal((2, 3, 3, 3))))
    case("mul_broadcast channel", ops.mul_broadcast, _leaf(rng.standard_normal((2, 3, 4, 4))),
         _leaf(rng.standard_normal((2, 3, 1, 1))))
    case("mul_broadcast spatial", ops.mul_broadcast, _leaf(rng.standard_normal((2, 3, 4, 4))),
         _leaf(rng.standard_normal((2, 1, 4, 4))))
    case("concat_channels", lambda a, b: ops.concat_channels(a, b),
         _leaf(rng.standard_normal((2, 2, 3, 3))), _leaf(rng.standard_normal((2, 3, 3, 3))))
    case("reshape", lambda x: ops.reshape(x, (2, 27)), _leaf(rng.standard_normal((2, 3, 3, 3))))
    case("flatten", ops.flatten, _leaf(rng.standard_normal((2, 3, 1, 1))))

    bn = BatchNorm2d(3)
    case("batch_norm train", lambda x, g, b: ops.batch_norm(
        x, g, b, bn.running_mean.copy(), bn.running_var.copy(), True),
         _leaf(rng.standard_normal((4, 3, 3, 3)) * 2 + 1), _leaf(rng.uniform(0.5, 1.5, 3)),
         _leaf(rng.standard_normal(3)))
    rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2, 3)
    case("batch_norm eval", lambda x, g, b: ops.batch_norm(x, g, b, rm, rv, False),
         _leaf(rng.standard_normal((2, 3, 3, 3))), _leaf(rng.uniform(0.5, 1.5, 3)),
         _leaf(rng.standard_normal(3)))

    pred = _leaf(rng.uniform(0.05, 0.95, (6, 1)))
    target = np.array([1, 0, 1, 1, 0, 0], dtype=np.float64).reshape(6, 1)
    cases.append(("bce_loss", lambda: ops.bce_loss(pred, target), [pred]))
    return cases


def cbam_case():
    block = make_cbam(16, seed=3)
    x = _leaf(np.random.default_rng(11).standard_normal((2, 16, 6, 6)))
    w = np.random.default_rng(12).standard_normal((2, 16, 6, 6))
    params = [p for _, p in block.named_parameters()]
    names = ["x"] + [n for n, _ in block.named_parameters()]
    return (lambda: ops.sum_all(ops.mul_broadcast(block(x), Tensor(w)))), [x] + params, names


# (width, patch, depth_scale, batch).  Training-mode batch norm over only a
# handful of values per channel is strongly curved, which inflates the O(h^2)
# error of central differences; the patch/batch keep >= 8 values per channel.
GRAD_MODEL_SIZES = {"resnet18": (4, 8, 0.5, 4), "densenet121": (4, 16, 0.25, 4),
                    "xception": (4, 16, 0.125, 8)}


def model_case(kind, placement, n=None, factors=3):
    width, patch, depth, batch = GRAD_MODEL_SIZES[kind]
    n = n or batch
    spec = backbones.BackboneSpec(kind=kind, factors=factors, patch=patch, placement=placement,
                                  base_width=width, depth_scale=depth, classifier=(8,),
                                  reduction=16)
    model = backbones.build(spec, seed=5)
    model.train()
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((n, factors, patch, patch)), dtype=np.float64)
    y = (np.arange(n) % 2).astype(np.float64).reshape(n, 1)
    named = list(model.named_parameters())

    def fn():
        return ops.bce_loss(model(x), y)
    return fn, [p for _, p in named], [name for name, _ in named]
