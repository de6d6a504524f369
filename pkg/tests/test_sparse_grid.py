import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from korobov_relu import sparse_grid as G
from oracles import full_grid_nodes


def test_level_index_set_examples():
    assert G.level_index_set(2, 2) == [(1, 1), (1, 2), (2, 1)]
    assert G.level_index_set(1, 3) == [(1, 1, 1)]
    levels = G.level_index_set(3, 2)
    assert len(levels) == 6
    assert sum(len(G.odd_index_set(l)) for l in levels) == 17


def test_level_index_set_rejects_zero():
    with pytest.raises(G.SparseGridError):
        G.level_index_set(0, 2)
    with pytest.raises(G.SparseGridError):
        G.level_index_set(2, 0)


@given(st.integers(1, 6), st.integers(1, 3))
def test_level_index_set_is_the_simplex(n, d):
    levels = G.level_index_set(n, d)
    assert len(levels) == len(set(levels))
    assert levels == sorted(levels)
    assert all(min(l) >= 1 and sum(l) <= n + d - 1 for l in levels)
    assert len(levels) == math.comb(n + d - 1, d)


def test_odd_index_set_examples():
    assert G.odd_index_set((2,)) == [(1,), (3,)]
    assert G.odd_index_set((1, 1)) == [(1, 1)]
    assert len(G.odd_index_set((3, 2))) == 8


def test_hat_basis_examples():
    assert G.hat_basis_eval((1,), (1,), [0.5]) == 1.0
    assert G.hat_basis_eval((2,), (1,), [0.5]) == 0.0
    assert G.hat_basis_eval((1, 1), (1, 1), [0.5, 0.25]) == 0.5


def test_hat_basis_rejects_even_position():
    with pytest.raises(G.SparseGridError):
        G.hat_basis_eval((2,), (2,), [0.5])


@given(st.integers(1, 8), st.data())
def test_hat_basis_support_and_range(l, data):
    i = data.draw(st.sampled_from(range(1, 2**l, 2)))
    x = data.draw(st.floats(0, 1))
    v = G.hat_basis_eval((l,), (i,), [x])
    assert 0.0 <= v <= 1.0
    if not (i - 1) / 2**l < x < (i + 1) / 2**l:
        assert v == 0.0


def test_poly_surpluses_closed_form():
    t = G.hierarchize(G.poly_target(1), 6, 1)
    for (l, i), v in t.entries.items():
        assert v == pytest.approx(2.0 ** (2 - 2 * l[0]), abs=1e-15)
    assert t.entries[((1,), (1,))] == 1.0


@pytest.mark.parametrize("name", ["poly", "sine"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_surplus_bound(name, d):
    f = G.make_target(name, d)
    t = G.hierarchize(f, 10 - d + 1, d)
    for (l, i), v in t.entries.items():
        assert abs(v) <= G.surplus_bound(l, f.seminorm) * (1 + 1e-12)


def test_hierarchize_rejects_nonzero_boundary():
    f = G.poly_target(1)
    g = G.TargetFunction("shifted", 1, lambda p: f.evaluate(p) + 1.0, None, 8.0, 4.0, True)
    with pytest.raises(G.SparseGridError):
        G.hierarchize(g, 3, 1)


@pytest.mark.parametrize("d,n", [(1, 5), (2, 4), (3, 3)])
def test_interpolation_exact_at_included_grid_points(d, n):
    f = G.sine_target(d)
    t = G.hierarchize(f, n, d)
    pts = np.array([G.grid_point(l, i) for l, i in t.entries])
    assert np.max(np.abs(G.interpolant_eval(t, pts) - f(pts))) <= 1e-12


def test_full_grid_reproduction_oracle():
    # surpluses of all levels up to n in each coordinate interpolate on the full grid
    f = G.sine_target(2)
    t = G.hierarchize(f, 7, 2)
    full = {k: v for k, v in t.entries.items() if max(k[0]) <= 4}
    sub = G.SurplusTable(7, 2, full)
    nodes = full_grid_nodes(4, 2)
    assert np.max(np.abs(G.interpolant_eval(sub, nodes) - f(nodes))) <= 1e-12


def test_nesting():
    f = G.sine_target(2)
    small = G.hierarchize(f, 3, 2)
    big = G.hierarchize(f, 5, 2)
    for k, v in small.entries.items():
        assert big.entries[k] == v


def test_interpolant_examples():
    t = G.hierarchize(G.poly_target(2), 1, 2)
    assert G.interpolant_eval(t, [0.5, 0.5]) == 1.0
    empty = G.SurplusTable(2, 2, {})
    assert G.interpolant_eval(empty, [0.3, 0.4]) == 0.0


def test_interpolant_matches_basis_sum():
    t = G.hierarchize(G.sine_target(2), 4, 2)
    x = np.random.default_rng(0).random((300, 2))
    direct = sum(v * G.hat_basis_eval(l, i, x) for (l, i), v in t.entries.items())
    assert np.max(np.abs(direct - G.interpolant_eval(t, x))) <= 1e-13


def test_truncation_rate_d1():
    f = G.poly_target(1)
    x = np.linspace(0, 1, 4097)[:, None]
    errs = [np.max(np.abs(G.interpolant_eval(G.hierarchize(f, n, 1), x) - f(x))) for n in range(2, 9)]
    slope = np.polyfit(np.arange(2, 9), np.log2(errs), 1)[0]
    assert slope <= -1.8


def test_decompose_count():
    assert len(G.hierarchize(G.poly_target(2), 4, 2)) == 49


def test_surplus_table_json_round_trip():
    t = G.hierarchize(G.sine_target(2), 3, 2)
    back = G.SurplusTable.from_json(t.to_json())
    assert back.entries == t.entries and back.n == 3 and back.d == 2
    with pytest.raises(G.SparseGridError):
        G.SurplusTable.from_json({"n": 1})


def test_surplus_table_rejects_deep_level():
    with pytest.raises(G.SparseGridError):
        G.SurplusTable(1, 1, {((2,), (1,)): 0.5})


@settings(max_examples=30)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=2))
def test_target_gradients_match_finite_differences(x):
    for f in (G.poly_target(2), G.sine_target(2, normalize=True)):
        p = np.clip(np.array([x]), 1e-3, 1 - 1e-3)
        g = f.gradient(p)[0]
        for j in range(2):
            e = np.zeros((1, 2))
            e[0, j] = 1e-6
            fd = (f(p + e)[0] - f(p - e)[0]) / 2e-6
            assert fd == pytest.approx(g[j], abs=1e-6)


def test_normalized_targets():
    f = G.make_target("sine", 2, normalize=True)
    assert f.seminorm == pytest.approx(1.0)
    assert f.w1inf_norm <= 1.0
    with pytest.raises(G.SparseGridError):
        G.make_target("cosine", 1)
