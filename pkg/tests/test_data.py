import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffsm import data
from ffsm.data import (FACTOR_NAMES, FeatureStack, InventoryPoint, extract_patches,
                       generate_nonflood, load_inventory, load_stack, save_inventory, save_stack,
                       split, standardize, synth_generate)
from ffsm.errors import CapacityError, FormatError, ParseError


def small_stack(h=10, w=12, f=3, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureStack(rng.standard_normal((f, h, w)), [f"f{i}" for i in range(f)])


def test_stack_round_trip_preserves_values_and_mask(tmp_path):
    s = small_stack()
    s.mask[2, 3] = True
    save_stack(s, tmp_path / "a.ffstack")
    back = load_stack(tmp_path / "a.ffstack")
    assert back.factors == s.factors
    np.testing.assert_array_equal(back.mask, s.mask)
    np.testing.assert_array_equal(back.data[:, ~s.mask], s.data[:, ~s.mask])
    save_stack(back, tmp_path / "b.ffstack")
    assert (tmp_path / "a.ffstack").read_bytes() == (tmp_path / "b.ffstack").read_bytes()


def test_stack_format_errors(tmp_path):
    save_stack(small_stack(), tmp_path / "a.ffstack")
    blob = (tmp_path / "a.ffstack").read_bytes()
    for name, bad in (("trunc", blob[:-4]), ("magic", b"NOTSTACK\n" + blob[9:]),
                      ("header", data.STACK_MAGIC + b"{oops\n" + blob[-16:])):
        (tmp_path / name).write_bytes(bad)
        with pytest.raises(FormatError):
            load_stack(tmp_path / name)


def test_inventory_round_trip_and_errors(tmp_path):
    s = small_stack()
    pts = [InventoryPoint(1, 2, 1, "recorded"), InventoryPoint(5, 5, 0, "generated")]
    save_inventory(pts, tmp_path / "inv.csv")
    assert load_inventory(tmp_path / "inv.csv", s) == pts
    (tmp_path / "bad.csv").write_text("row,col,label\n1,2,1\n3,x,0\n")
    with pytest.raises(ParseError, match="row 3"):
        load_inventory(tmp_path / "bad.csv")
    (tmp_path / "off.csv").write_text("row,col,label\n1,2,1\n99,0,0\n")
    with pytest.raises(ParseError, match="outside"):
        load_inventory(tmp_path / "off.csv", s)
    (tmp_path / "lab.csv").write_text("row,col,label\n1,2,3\n")
    with pytest.raises(ParseError, match="label"):
        load_inventory(tmp_path / "lab.csv")


def test_nonflood_sampling_respects_buffer_and_capacity():
    s = small_stack(20, 20)
    floods = [InventoryPoint(10, 10, 1)]
    pts = generate_nonflood(s, floods, 50, min_distance_cells=3, seed=1)
    assert len({(p.row, p.col) for p in pts}) == 50
    assert all(max(abs(p.row - 10), abs(p.col - 10)) >= 3 for p in pts)
    assert pts == generate_nonflood(s, floods, 50, min_distance_cells=3, seed=1)
    with pytest.raises(CapacityError):
        generate_nonflood(s, floods, 400, min_distance_cells=3)


def test_patches_are_centered_windows_and_border_points_rejected():
    s = small_stack(10, 10)
    pts = [InventoryPoint(5, 5, 1), InventoryPoint(0, 0, 0), InventoryPoint(4, 6, 0)]
    ds = extract_patches(s, pts, 3)
    assert len(ds) == 2 and len(ds.rejected) == 1
    np.testing.assert_array_equal(ds.X[0], s.data[:, 4:7, 4:7])
    even = extract_patches(s, [InventoryPoint(5, 5, 1)], 4)
    np.testing.assert_array_equal(even.X[0], s.data[:, 3:7, 3:7])


def test_patch_touching_nodata_is_rejected():
    s = small_stack(10, 10)
    s.mask[6, 6] = True
    ds = extract_patches(s, [InventoryPoint(5, 5, 1), InventoryPoint(2, 2, 0)], 3)
    assert [p.row for p in ds.points] == [2]


def _labelled(n_pos, n_neg):
    pts = [InventoryPoint(1 + i % 8, 1 + i // 8, 1) for i in range(n_pos)]
    pts += [InventoryPoint(1 + i % 8, 9 + i // 8, 0) for i in range(n_neg)]
    return extract_patches(small_stack(20, 20), pts, 1)


def test_split_counts_are_stratified_and_deterministic():
    ds = split(_labelled(20, 20), (0.7, 0.15, 0.15), seed=3)
    for label in (0, 1):
        sub = ds.split[ds.y == label]
        assert [(sub == n).sum() for n in data.SUBSETS] == [14, 3, 3]
    assert (split(_labelled(20, 20), seed=3).split == ds.split).all()
    with pytest.raises(ValueError):
        split(ds, (0.5, 0.5, 0.5))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 500), st.floats(0, 1), st.floats(0, 1))
def test_allocation_sums_and_stays_within_one(n, a, b):
    a, b = sorted((a, b))
    ratios = (a, b - a, 1 - b)
    counts = data._allocate(n, ratios)
    assert sum(counts) == n
    assert all(abs(c - n * r) < 1 + 1e-9 for c, r in zip(counts, ratios))


def test_standardization_uses_training_subset_only():
    ds = split(_labelled(20, 20), seed=0)
    z = standardize(ds)
    train = z.X[z.indices("train")]
    np.testing.assert_allclose(train.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    raw_train = ds.X[ds.indices("train")].astype(np.float64)
    np.testing.assert_allclose(z.mean, raw_train.mean(axis=(0, 2, 3)))


def test_zero_variance_factor_is_not_divided_by_zero(caplog):
    s = small_stack(20, 20)
    s.data[1] = 4.0
    ds = standardize(split(extract_patches(s, _labelled(20, 20).points, 1), seed=0))
    assert ds.std[1] == 1.0 and np.isfinite(ds.X).all()


def test_synthetic_defaults_are_paper_shaped():
    stack, pts = synth_generate(0)
    assert stack.factors == FACTOR_NAMES and stack.n_factors == 16
    assert (stack.height, stack.width) == (64, 64)
    assert sum(p.label for p in pts) == 261 and len(pts) == 522
    assert len({(p.row, p.col) for p in pts}) == 522
    assert all(16 <= p.row <= 48 and 16 <= p.col <= 48 for p in pts)


def test_synthetic_generation_is_byte_deterministic(tmp_path):
    for name, seed in (("a", 7), ("b", 7), ("c", 8)):
        stack, pts = synth_generate(seed, 32, 32, 40, patch=9)
        save_stack(stack, tmp_path / f"{name}.ffstack")
        save_inventory(pts, tmp_path / f"{name}.csv")
    assert (tmp_path / "a.ffstack").read_bytes() == (tmp_path / "b.ffstack").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.ffstack").read_bytes() != (tmp_path / "c.ffstack").read_bytes()


def test_planted_factors_carry_the_signal():
    stack, pts = synth_generate(1)
    table = data.sample_table(stack, pts)
    y = np.array([p.label for p in pts])
    corr = {n: abs(np.corrcoef(table[:, i], y)[0, 1]) for i, n in enumerate(stack.factors)}
    top = sorted(corr, key=corr.get, reverse=True)[:2]
    assert set(top) == {"distance_to_river", "drainage_density"}
