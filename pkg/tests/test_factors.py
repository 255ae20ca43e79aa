import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffsm.errors import DegenerateInputError
from ffsm.factors import FactorTable, optimize, pearson_matrix, vif

from oracles import lstsq_vif


def random_table(rng, n=200, f=5, collinear=False):
    x = rng.standard_normal((n, f)) * rng.uniform(0.1, 50, f) + rng.uniform(-100, 100, f)
    if collinear and f >= 3:
        x[:, 2] = x[:, 0] - 2 * x[:, 1] + rng.standard_normal(n) * 1e-2
    return x


def test_pearson_matches_numpy():
    x = random_table(np.random.default_rng(0))
    np.testing.assert_allclose(pearson_matrix(FactorTable(x, None)), np.corrcoef(x.T), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.booleans())
def test_vif_matches_least_squares_oracle(seed, f, collinear):
    x = random_table(np.random.default_rng(seed), f=f, collinear=collinear)
    np.testing.assert_allclose(vif(FactorTable(x, None)), lstsq_vif(x), rtol=1e-6)


def test_orthogonal_design_has_unit_vif():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((200, 6))
    a -= a.mean(axis=0)
    q, _ = np.linalg.qr(a)
    v = vif(FactorTable(q * [1, 10, 100, 0.1, 3, 7] + 5, None))
    np.testing.assert_allclose(v, 1.0, atol=1e-9)


def test_exact_collinearity_is_infinite():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((50, 3))
    x[:, 2] = x[:, 0] + x[:, 1]
    v = vif(FactorTable(x, None))
    assert np.isinf(v).all()


def test_too_few_samples():
    with pytest.raises(DegenerateInputError):
        vif(FactorTable(np.ones((3, 3)), None))


def test_optimize_flags_and_report(tmp_path):
    rng = np.random.default_rng(3)
    x = random_table(rng, f=5, collinear=True)
    x[:, 4] = 1.0
    report = optimize(FactorTable(x, ["a", "b", "c", "d", "e"]))
    assert "flagged-vif" in report.flags["c"]
    assert "flagged-correlation" in report.flags["c"]
    assert "undefined-correlation" in report.flags["e"]
    assert report.flags["d"] == ["retained"]
    assert "d" in report.retained()
    report.write(tmp_path / "m.csv", tmp_path / "f.json")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "factor,a,b,c,d,e" and len(rows) == 6
    doc = json.loads((tmp_path / "f.json").read_text())
    assert doc["thresholds"] == {"correlation": 0.7, "vif": 5.0}


def test_thresholds_are_inclusive_for_correlation_and_strict_for_vif():
    rng = np.random.default_rng(4)
    a = rng.standard_normal(300)
    b = rng.standard_normal(300)
    b = 0.7 * (a - a.mean()) / a.std() + np.sqrt(1 - 0.49) * (b - b.mean()) / b.std()
    # exact r is not controllable; use the measured r as the threshold itself
    t = FactorTable(np.column_stack([a, b, rng.standard_normal(300)]), ["a", "b", "c"])
    r = abs(pearson_matrix(t)[0, 1])
    assert optimize(t, corr_threshold=r).correlated_pairs
    v = vif(t)[0]
    assert "flagged-vif" not in optimize(t, vif_threshold=v).flags["a"]
