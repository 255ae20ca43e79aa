import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffsm import backbones, data, mapping
from ffsm.backbones import BackboneSpec
from ffsm.data import FeatureStack, InventoryPoint
from ffsm.errors import ConfigError, DegenerateInputError
from ffsm.mapping import (area_stats, classify, event_stats, jenks_breaks, predict_map,
                          read_pgm, within_class_ssd)
from ffsm.train import predict

from oracles import exact_ssd, exhaustive_min_ssd


def test_two_obvious_clusters():
    assert jenks_breaks([1, 2, 3, 10, 11, 12], k=2) == [3.0]


def test_degenerate_and_single_class():
    with pytest.raises(DegenerateInputError, match="1"):
        jenks_breaks([4.0] * 10, k=5)
    assert jenks_breaks([3.0, 1.0, 2.0], k=1) == []


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=5, max_size=40), st.integers(2, 5))
def test_breaks_reach_exhaustive_minimum_exactly(ints, k):
    values = np.array(ints, dtype=float) / 8
    if np.unique(values).size < k or np.unique(values).size > 25:
        return
    assert exact_ssd(values, jenks_breaks(values, k)) == exhaustive_min_ssd(values, k)


def test_breaks_are_deterministic_and_ascending():
    v = np.random.default_rng(0).random(3000)
    b = jenks_breaks(v, 5)
    assert b == jenks_breaks(v, 5) and b == sorted(b) and len(b) == 4


def test_large_inputs_are_subsampled_with_seed():
    v = np.random.default_rng(1).random(5000)
    a = jenks_breaks(v, 3, max_samples=1000, seed=2)
    assert a == jenks_breaks(v, 3, max_samples=1000, seed=2)
    full = jenks_breaks(v, 3)
    assert np.allclose(a, full, atol=0.05)


def test_classes_are_right_closed():
    c = classify(np.array([0.1, 0.2, 0.25, 0.5, 0.9]), [0.2, 0.5])
    np.testing.assert_array_equal(c, [1, 1, 2, 2, 3])
    with pytest.raises(ValueError):
        classify(np.zeros(3), [0.5, 0.2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60),
       st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_classification_is_total_and_monotone(probs, breaks):
    p = np.sort(np.array(probs))
    c = classify(p, sorted(breaks))
    assert ((c >= 1) & (c <= 5)).all()
    assert (np.diff(c) >= 0).all()


def test_area_and_event_percentages():
    classes = np.array([[1, 1, 2, 0], [5, 5, 5, 4]])
    mask = classes == 0
    area = area_stats(classes, mask)
    assert sum(area) == pytest.approx(100, abs=1e-9)
    assert area[4] == pytest.approx(300 / 7)
    pts = [InventoryPoint(1, 0, 1), InventoryPoint(1, 1, 1), InventoryPoint(0, 0, 1),
           InventoryPoint(0, 3, 1), InventoryPoint(0, 2, 0)]
    ev = event_stats(classes, pts, mask=mask)
    assert ev == pytest.approx([100 / 3, 0, 0, 0, 200 / 3])


def test_single_class_grid_is_all_in_one_class():
    classes = classify(np.full((4, 4), 0.3), [0.5, 0.6, 0.7, 0.8])
    assert area_stats(classes) == [100.0, 0.0, 0.0, 0.0, 0.0]


@pytest.fixture(scope="module")
def small_run():
    stack, pts = data.synth_generate(2, 24, 24, 40, patch=5)
    ds = data.prepare_dataset(stack, pts, 5, seed=0)
    spec = BackboneSpec("resnet18", factors=16, patch=5, base_width=4, depth_scale=0.5)
    model = backbones.build(spec, 0)
    return stack, pts, ds, model


def test_map_equals_patch_path_at_inventory_cells(small_run):
    stack, pts, ds, model = small_run
    pm = predict_map(model, stack, ds.mean, ds.std, stack.factors)
    direct = predict(model, ds.X)
    at_cells = np.array([pm.prob[p.row, p.col] for p in ds.points])
    assert np.array_equal(at_cells, direct)


def test_tiling_is_transparent(small_run):
    stack, _, ds, model = small_run
    a = predict_map(model, stack, ds.mean, ds.std, tile_size=7)
    b = predict_map(model, stack, ds.mean, ds.std, tile_size=100_000)
    assert np.array_equal(a.prob, b.prob) and np.array_equal(a.mask, b.mask)


def test_border_and_nodata_windows_are_masked(small_run):
    stack, _, ds, model = small_run
    holed = FeatureStack(stack.data.copy(), stack.factors, stack.mask.copy())
    holed.mask[12, 12] = True
    pm = predict_map(model, holed, ds.mean, ds.std)
    assert pm.mask[:2].all() and pm.mask[:, -2:].all()
    assert pm.mask[10:15, 10:15].all() and not pm.mask[9, 9]
    assert (pm.prob[pm.mask] == 0).all()


def test_constant_stack_gives_constant_map(small_run):
    stack, _, ds, model = small_run
    flat = FeatureStack(np.ones_like(stack.data), stack.factors)
    pm = predict_map(model, flat, np.zeros(16), np.ones(16))
    vals = pm.prob[~pm.mask]
    assert (vals == vals[0]).all()


def test_factor_order_mismatch_is_config_error(small_run):
    stack, _, ds, model = small_run
    with pytest.raises(ConfigError):
        predict_map(model, stack, ds.mean, ds.std, factors=stack.factors[::-1])


def test_writers(small_run, tmp_path):
    stack, pts, ds, model = small_run
    pm = predict_map(model, stack, ds.mean, ds.std)
    smap = mapping.build_map(pm, pts)
    mapping.write_probability(pm, tmp_path / "p.ffstack", tmp_path / "p.pgm")
    back = data.load_stack(tmp_path / "p.ffstack")
    np.testing.assert_array_equal(back.mask, pm.mask)
    np.testing.assert_array_equal(back.data[0][~pm.mask], pm.prob[~pm.mask].astype(np.float32))
    img = read_pgm(tmp_path / "p.pgm")
    assert img.dtype == np.dtype(">u2") and img.shape == pm.prob.shape
    mapping.write_classes(smap, tmp_path / "c.csv", tmp_path / "c.pgm")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "c.csv", delimiter=",", dtype=int),
                                  smap.classes)
    assert set(np.unique(read_pgm(tmp_path / "c.pgm"))) <= set(mapping.GRAY_RAMP)
    mapping.write_stats(smap, tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert [r["class"] for r in doc["classes"]] == list(mapping.CLASS_NAMES)
    assert doc["breaks"] == [round(b, 6) for b in smap.breaks]
    assert sum(r["area_pct"] for r in doc["classes"]) == pytest.approx(100, abs=1e-4)


def test_within_class_ssd_agrees_with_exact(small_run):
    v = np.random.default_rng(3).random(20)
    b = jenks_breaks(v, 3)
    assert within_class_ssd(v, b) == pytest.approx(float(exact_ssd(v, b)), rel=1e-12)
