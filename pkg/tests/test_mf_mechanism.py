import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldpofl import mf_mechanism as mfm

EQ5_B = np.array([
    [1, 0, 0, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0],
    [0, 0, 1, 1, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 1],
], dtype=float)
EQ5_C = np.array([
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [1, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
    [0, 0, 1, 1],
    [1, 1, 1, 1],
], dtype=float)


def heap_tree_oracle(steps):
    """Complete binary tree over ``steps`` (a power of two) leaves, built
    recursively; returns the leaf sets of every node and, per prefix, the
    smallest disjoint set of nodes whose union is that prefix (exhaustive)."""
    nodes = []

    def grow(lo, hi):
        nodes.append(frozenset(range(lo, hi)))
        if hi - lo > 1:
            mid = (lo + hi) // 2
            grow(lo, mid)
            grow(mid, hi)

    grow(0, steps)
    covers = []
    for k in range(steps):
        target = frozenset(range(k + 1))
        best = None
        for size in range(1, len(nodes) + 1):
            for combo in itertools.combinations(nodes, size):
                if sum(len(c) for c in combo) == len(target) and frozenset().union(*combo) == target:
                    best = combo
                    break
            if best:
                break
        covers.append(best)
    return nodes, covers


def test_binary_tree_matches_displayed_example():
    f = mfm.build_binary_tree(4)
    assert f.width == 7
    np.testing.assert_array_equal(f.dense_B(), EQ5_B)
    np.testing.assert_array_equal(f.dense_C(), EQ5_C)
    assert f.dense_B()[2].tolist() == [0, 0, 1, 1, 0, 0, 0]
    assert f.dense_C()[6].tolist() == [1, 1, 1, 1]


def test_binary_tree_single_step():
    f = mfm.build_binary_tree(1)
    assert f.width == 1
    np.testing.assert_array_equal(f.dense_B(), [[1.0]])
    np.testing.assert_array_equal(f.dense_C(), [[1.0]])


def test_binary_tree_eight_steps_against_brute_force():
    f = mfm.build_binary_tree(8)
    nodes, covers = heap_tree_oracle(8)
    assert f.width == len(nodes) == 15
    col_counts = [sum(j in node for node in nodes) for j in range(8)]
    row_counts = [len(c) for c in covers]
    stats = mfm.factorization_stats(f)
    assert max(col_counts) == 4
    assert max(row_counts) == 3
    assert stats["max_col_sq_norm"] == max(col_counts)
    assert stats["max_row_sq_norm"] == max(row_counts)
    np.testing.assert_array_equal(f.col_sq_norms(), col_counts)
    np.testing.assert_array_equal(f.row_sq_norms(), row_counts)


@pytest.mark.parametrize("steps", [3, 5, 6, 7, 12, 100])
def test_binary_tree_non_power_of_two(steps):
    f = mfm.build_binary_tree(steps)
    assert f.residual()[0] == 0.0
    padded = 1 << (steps - 1).bit_length()
    assert f.col_sq_norms().max() <= math.log2(padded) + 1
    assert f.row_sq_norms().max() <= math.log2(padded)
    assert set(np.unique(f.dense_B())) <= {0.0, 1.0}
    assert set(np.unique(f.dense_C())) <= {0.0, 1.0}


def test_toeplitz_first_column():
    f = mfm.build_toeplitz(4)
    h = [Fraction(1)]
    for j in range(1, 4):
        h.append((1 - Fraction(1, 2 * j)) * h[-1])
    assert [float(v) for v in h] == [1, 0.5, 0.375, 0.3125]
    np.testing.assert_array_equal(f.dense_B()[:, 0], [float(v) for v in h])
    np.testing.assert_array_equal(f.dense_B(), f.dense_C())


def test_toeplitz_convolution_entry():
    f = mfm.build_toeplitz(4)
    prod = f.dense_B() @ f.dense_C()
    assert prod[2, 0] == pytest.approx(0.375 + 0.25 + 0.375, abs=1e-15)
    assert prod[2, 0] == pytest.approx(1.0, abs=1e-15)


def test_toeplitz_single_step_equals_identity():
    t = mfm.build_toeplitz(1)
    i = mfm.build_identity(1)
    np.testing.assert_array_equal(t.dense_B(), i.dense_B())
    np.testing.assert_array_equal(t.dense_C(), i.dense_C())


def test_identity_factors():
    f = mfm.build_identity(3)
    np.testing.assert_array_equal(f.dense_B(), [[1, 0, 0], [1, 1, 0], [1, 1, 1]])
    np.testing.assert_array_equal(f.dense_C(), np.eye(3))


def test_identity_stats():
    s = mfm.factorization_stats(mfm.build_identity(4))
    assert (s["max_col_sq_norm"], s["max_row_sq_norm"]) == (1.0, 4.0)


def test_stats_examples():
    s = mfm.factorization_stats(mfm.build_binary_tree(4))
    assert (s["max_col_sq_norm"], s["max_row_sq_norm"]) == (3.0, 2.0)
    s = mfm.factorization_stats(mfm.build_toeplitz(4))
    assert s["max_col_sq_norm"] == pytest.approx(1 + 0.25 + 0.140625 + 0.09765625, abs=1e-15)
    assert s["max_col_sq_norm"] == pytest.approx(1.48828125, abs=1e-15)


def test_prefix_row_norms_per_round():
    s = mfm.factorization_stats(mfm.build_identity(6), tau=2)
    assert s["prefix_row_sq_norms"] == [2.0, 4.0, 6.0]
    assert s["frobenius_sq_B_rounds"] == 12.0
    with pytest.raises(ValueError):
        mfm.factorization_stats(mfm.build_identity(6), tau=4)


@pytest.mark.parametrize("builder", [mfm.build_binary_tree, mfm.build_toeplitz, mfm.build_identity])
def test_rejects_zero_steps(builder):
    with pytest.raises(ValueError):
        builder(0)


def test_factors_are_read_only():
    f = mfm.build_toeplitz(4)
    with pytest.raises(ValueError):
        f.B[0, 0] = 2.0


@settings(max_examples=40, deadline=None)
@given(steps=st.integers(1, 256), kind=st.sampled_from(["binary-tree", "toeplitz", "identity"]))
def test_every_kind_factorizes_prefix_matrix(steps, kind):
    assert mfm.build(kind, steps).residual()[0] <= 1e-9


@settings(max_examples=30, deadline=None)
@given(steps=st.integers(2, 2000))
def test_toeplitz_norms_are_monotone_and_bounded(steps):
    f = mfm.build_toeplitz(steps)
    cols = f.col_sq_norms()
    rows = f.row_sq_norms()
    assert cols[0] == cols.max()
    assert rows[-1] == rows.max()
    assert np.all(np.diff(cols) <= 0) and np.all(np.diff(rows) >= 0)
    assert cols[0] <= mfm.toeplitz_safe_bound(steps)


def test_toeplitz_coefficient_decay():
    h = mfm.toeplitz_coefficients(5000)
    j = np.arange(1, 5000)
    assert np.all(h[1:] ** 2 <= 1.0 / (np.pi * j))


def test_norm_report_flags_small_sizes():
    (row,) = mfm.toeplitz_norm_report([4])
    assert row["exact"] == pytest.approx(1.48828125)
    assert row["published_bound"] == pytest.approx(1.37024, abs=1e-5)
    assert row["published_violated"]
    assert row["exact"] <= row["safe_bound"]


# -- file format ---------------------------------------------------------------


def test_roundtrip_binary_tree(tmp_path):
    path = tmp_path / "bt.csv"
    mfm.save_factorization(mfm.build_binary_tree(4), path)
    loaded = mfm.load_factorization(path)
    assert loaded.kind is mfm.Kind.EXTERNAL
    np.testing.assert_array_equal(loaded.dense_B(), EQ5_B)
    np.testing.assert_array_equal(loaded.dense_C(), EQ5_C)


def test_roundtrip_toeplitz_keeps_values(tmp_path):
    path = tmp_path / "t.csv"
    f = mfm.build_toeplitz(16)
    mfm.save_factorization(f, path)
    np.testing.assert_array_equal(mfm.load_factorization(path).dense_B(), f.dense_B())


def test_load_trivial(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("kind=external\nsteps=1\nwidth=1\n1\n---\n1\n")
    f = mfm.load_factorization(path)
    assert f.steps == 1 and f.width == 1 and f.kind is mfm.Kind.EXTERNAL


def test_load_reports_residual_entry(tmp_path):
    path = tmp_path / "bad.csv"
    text = mfm.dumps_factorization(mfm.build_identity(3)).replace("---\n1,0,0", "---\n0,0,0")
    path.write_text(text)
    with pytest.raises(mfm.FactorizationResidualError) as info:
        mfm.load_factorization(path)
    assert (info.value.row, info.value.col) == (0, 0)
    assert "(0,0)" in str(info.value)


def test_load_parse_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("kind=external\nsteps=1\nwidth=1\nabc\n---\n1\n")
    with pytest.raises(mfm.FactorizationParseError, match=r"C\[0,0\]"):
        mfm.load_factorization(path)


def test_load_shape_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("kind=external\nsteps=2\nwidth=2\n1,0\n0,1\n---\n1,0\n")
    with pytest.raises(mfm.FactorizationShapeError, match="B has 1 rows"):
        mfm.load_factorization(path)
    path.write_text("kind=external\nsteps=2\nwidth=2\n1,0\n0,1,0\n---\n1,0\n1,1\n")
    with pytest.raises(mfm.FactorizationShapeError, match="row 1"):
        mfm.load_factorization(path)


def test_load_missing_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("steps=1\nwidth=1\n1\n---\n1\n")
    with pytest.raises(mfm.FactorizationParseError):
        mfm.load_factorization(path)
