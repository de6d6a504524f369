import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from korobov_relu import primitives as P
from korobov_relu import sparse_grid as G
from korobov_relu.relu_net import NetworkError
from korobov_relu.synthesis import gm_reference, omega_m_contains
from oracles import g1_cases, hat1, square_approx, staircase, teeth


def _grid(n: int, lo: float, hi: float) -> np.ndarray:
    axis = np.linspace(lo, hi, n)
    return np.array(list(itertools.product(axis, axis)))


def test_teeth_examples():
    assert P.teeth_net(1).forward([0.5])[0] == 1.0
    assert P.teeth_net(1).forward([0.75])[0] == 0.5
    assert P.teeth_net(2).forward([0.25])[0] == 1.0
    with pytest.raises(NetworkError):
        P.teeth_net(0)


@settings(max_examples=50)
@given(st.integers(1, 6), st.floats(-1, 1))
def test_teeth_matches_composition_oracle(i, x):
    assert P.teeth_net(i).forward([x])[0] == pytest.approx(teeth(i, x), abs=1e-12)


def test_square_examples():
    net = P.square_net(2, 2)
    assert net.forward([0.0])[0] == 0.0
    assert net.forward([1.0])[0] == 1.0
    x = np.linspace(-1, 1, 1001)
    three = P.square_net(1, 1, teeth=3).forward(x[:, None])[:, 0]
    assert np.max(np.abs(three - x**2)) <= 2.0**-8


def test_square_matches_rational_oracle():
    x = np.linspace(-1, 1, 257)
    got = P.square_net(1, 1, teeth=4).forward(x[:, None])[:, 0]
    want = np.array([square_approx(v, 4) for v in x])
    assert np.max(np.abs(got - want)) <= 1e-14


@pytest.mark.parametrize("N,L", [(2, 1), (2, 3), (4, 2), (3, 2)])
def test_square_default_bound(N, L):
    x = np.linspace(-1, 1, 2001)
    assert np.max(np.abs(P.square_net(N, L).forward(x[:, None])[:, 0] - x**2)) <= float(N) ** -L


def test_product2_examples():
    net = P.product2_net(P.ProductBudget(2, 2))
    assert net.forward([0.0, 0.7])[0] == 0.0
    assert net.forward([0.5, 0.5])[0] == pytest.approx(0.25, abs=6 * 2.0**-2)
    pts = _grid(201, -1, 1)
    net = P.product2_net(P.ProductBudget(2, 3))
    assert np.max(np.abs(net.forward(pts)[:, 0] - pts[:, 0] * pts[:, 1])) <= 0.75


@pytest.mark.parametrize("N,L,a", [(1, 1, 1.0), (2, 2, 1.0), (2, 3, 2.0), (4, 2, 0.5)])
def test_product2_bounds_and_size(N, L, a):
    net = P.product2_net(P.ProductBudget(N, L, a))
    bound = 6 * a * a * float(N) ** -L
    pts = _grid(101, -a, a) * (1 - 1e-9)
    v, g = net.value_and_gradient(pts)
    assert np.max(np.abs(v - pts[:, 0] * pts[:, 1])) <= bound
    assert np.max(np.abs(g - pts[:, ::-1])) <= bound
    assert net.width <= 15 * N and net.depth <= 2 * L


@settings(max_examples=50)
@given(st.floats(-1, 1))
def test_product2_zero_slice(y):
    net = P.product2_net(P.ProductBudget(2, 2))
    for pt in ([0.0, y], [y, 0.0]):
        v, g = net.value_and_gradient(pt)
        assert v == 0.0
    v, g = net.value_and_gradient([0.0, y])
    assert g[1] == 0.0


def test_product_budget_invariants():
    with pytest.raises(NetworkError):
        P.ProductBudget(0, 1)
    with pytest.raises(NetworkError):
        P.ProductBudget(1, 1, a=0.0)
    with pytest.raises(NetworkError):
        P.ProductBudget(1, 1, s=1)


def test_multi_product_examples():
    net3 = P.multi_product_net(P.ProductBudget(1, 1, 1.0, 3))
    assert net3.forward([0.5, 0.0, 0.9])[0] == 0.0
    net = P.multi_product_net(P.ProductBudget(1, 1, 1.0, 2))
    pts = _grid(101, 0, 1)
    assert np.max(np.abs(net.forward(pts)[:, 0] - pts[:, 0] * pts[:, 1])) <= 10 * 2.0**-14


@pytest.mark.parametrize("N,L,s", [(1, 1, 2), (2, 1, 2), (1, 1, 3), (2, 1, 3), (3, 2, 4)])
def test_multi_product_size(N, L, s):
    net = P.multi_product_net(P.ProductBudget(N, L, 1.0, s))
    assert net.width <= 9 * (N + 1) + s - 1
    assert net.depth <= 14 * s * (s - 1) * L


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 4), st.data())
def test_multi_product_zero_slices(s, data):
    net = P.multi_product_net(P.ProductBudget(1, 1, 1.0, s))
    x = np.array(data.draw(st.lists(st.floats(0, 1), min_size=s, max_size=s)))
    k = data.draw(st.integers(0, s - 1))
    x[k] = 0.0
    v, g = net.value_and_gradient(x)
    assert v == 0.0
    assert all(g[j] == 0.0 for j in range(s) if j != k)


def test_hat1d_examples():
    assert P.hat1d_net(1, 1).forward([0.5])[0] == 1.0
    h = P.hat1d_net(2, 3)
    assert h.forward([0.75])[0] == 1.0
    assert h.forward([0.5])[0] == 0.0 and h.forward([1.0])[0] == 0.0
    assert h.width == 3 and h.depth == 1
    with pytest.raises(NetworkError):
        P.hat1d_net(2, 4)


@pytest.mark.parametrize("l", [1, 2, 3, 5])
def test_hat1d_equals_basis(l):
    x = np.random.default_rng(l).random(1000)
    for i in range(1, 2**l, 2):
        got = P.hat1d_net(l, i).forward(x[:, None])[:, 0]
        assert np.max(np.abs(got - G.hat_basis_eval((l,), (i,), x[:, None]))) == 0.0


def test_grid_basis_examples():
    assert np.array_equal(
        P.grid_basis_net((2,), (1,), 1, 1).forward(np.linspace(0, 1, 33)[:, None]),
        P.hat1d_net(2, 1).forward(np.linspace(0, 1, 33)[:, None]),
    )
    net = P.grid_basis_net((1, 1), (1, 1), 1, 1)
    assert net.forward([0.5, 0.5])[0] == pytest.approx(1.0, abs=10 * 2 ** 2.5 * 2.0**-14 * 4)
    assert net.forward([0.9, 1.0])[0] == 0.0


@pytest.mark.parametrize("l,i,N,L", [((1, 1), (1, 1), 1, 1), ((2, 3), (3, 5), 2, 1), ((1, 2, 1), (1, 3, 1), 1, 1)])
def test_grid_basis_support_and_size(l, i, N, L):
    d = len(l)
    net = P.grid_basis_net(l, i, N, L)
    x = np.random.default_rng(0).random((3000, d))
    exact = G.hat_basis_eval(l, i, x)
    got = net.forward(x)[:, 0]
    assert np.all(got[exact == 0.0] == 0.0)
    bound = 10 * d**2.5 * (N + 1.0) ** (-7 * d * L) * 2.0 ** sum(l)
    assert np.max(np.abs(got - exact)) <= bound
    assert net.width <= 9 * (N + 1) + 4 * d - 1
    assert net.depth <= 14 * d * (d - 1) * L + 1


def test_hat_train_examples():
    assert P.periodic_hat_train_net(1).forward([0.5])[0] == 1.0
    t = P.periodic_hat_train_net(3)
    assert t.forward([0.375])[0] == 1.0
    assert t.forward([0.25])[0] == 0.0


@pytest.mark.parametrize("l,N", [(1, 1), (3, 1), (4, 2), (6, 4)])
def test_hat_train_matches_hat_sum(l, N):
    x = np.random.default_rng(l).random(2000)
    want = sum(hat1(x * 2.0**l - i) for i in range(1, 2**l, 2))
    got = P.periodic_hat_train_net(l, N).forward(x[:, None])[:, 0]
    assert np.max(np.abs(got - want)) <= 1e-12


def test_step_examples():
    net = P.step_net(4, 1 / 16, 2, 1)
    assert net.forward([0.3])[0] == 1.0
    assert net.forward([0.05])[0] == 0.0
    assert net.forward([0.95])[0] == 3.0


@pytest.mark.parametrize("K", [4, 8, 16])
def test_step_plateaus_exact(K):
    delta = 1.0 / (4 * K)
    net = P.step_net(K, delta, 4, 1)
    x = np.random.default_rng(K).random(4000)
    want = np.array([staircase(v, K, delta) for v in x], dtype=object)
    mask = np.array([w is not None for w in want])
    got = net.forward(x[mask][:, None])[:, 0]
    assert np.array_equal(got, want[mask].astype(float))


def test_step_rejects_bad_arguments():
    with pytest.raises(NetworkError):
        P.step_net(64, 1 / 256, 2, 1)
    with pytest.raises(NetworkError):
        P.step_net(4, 0.2, 2, 1)


def test_bit_extract_examples():
    net = P.bit_extract_net(P.BitExtractSpec((0.25, 0.75), 2, 2, 1))
    assert abs(net.forward([0.0])[0] - 0.25) <= 1 / 16
    assert abs(net.forward([1.0])[0] - 0.75) <= 1 / 16
    const = P.bit_extract_net([0.4] * 9, 2, 2)
    assert np.all(const.forward(np.arange(9.0)[:, None])[:, 0] == 0.4)


@pytest.mark.parametrize("s", [1, 2])
def test_bit_extract_accuracy(s):
    N = L = 2
    xi = np.random.default_rng(s).random((N * L) ** 2)
    net = P.bit_extract_net(P.BitExtractSpec(tuple(xi), N, L, s))
    got = net.forward(np.arange(xi.size, dtype=float)[:, None])[:, 0]
    assert np.max(np.abs(got - xi)) <= float(N * L) ** (-2 * s)
    y = net.forward(np.linspace(-2, xi.size + 2, 500)[:, None])[:, 0]
    assert np.all((y >= 0.0) & (y <= 1.0))


def test_bit_extract_spec_invariants():
    with pytest.raises(NetworkError):
        P.BitExtractSpec(tuple([0.1] * 5), 1, 2)
    with pytest.raises(NetworkError):
        P.BitExtractSpec((1.5,), 1, 1)


def test_partition_examples():
    K = 4
    assert gm_reference([1 / K + 1 / (8 * K)], [1], K) == 0.5
    assert g1_cases(1 / K + 1 / (8 * K), K) == 0.5


@settings(max_examples=50)
@given(st.floats(0, 1), st.sampled_from([2, 4, 16]))
def test_partition_reference_matches_cases(x, K):
    assert gm_reference([x], [1], K) == pytest.approx(g1_cases(x, K), abs=1e-12)
    assert gm_reference([x], [2], K) == pytest.approx(g1_cases(x + 1 / (2 * K), K), abs=1e-12)
    assert gm_reference([x], [1], K) + gm_reference([x], [2], K) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("d,K,N,L", [(1, 4, 2, 1), (2, 4, 2, 1), (2, 16, 4, 1)])
def test_partition_sums_to_one_on_dyadic_points(d, K, N, L):
    # 20-bit dyadic inputs keep every intermediate value exactly representable
    x = np.random.default_rng(d + K).integers(0, 2**20, (10000, d)) / 2.0**20
    ms = list(itertools.product((1, 2), repeat=d))
    assert np.all(sum(gm_reference(x, m, K) for m in ms) == 1.0)
    assert np.all(sum(P.partition_net(list(m), K, N, L).forward(x)[:, 0] for m in ms) == 1.0)


@pytest.mark.parametrize("d,K,N,L", [(1, 4, 2, 1), (1, 16, 2, 2), (2, 4, 2, 1), (2, 16, 4, 1)])
def test_partition_net(d, K, N, L):
    x = np.random.default_rng(d * K).random((3000, d))
    for m in itertools.product((1, 2), repeat=d):
        net = P.partition_net(list(m), K, N, L)
        v, g = net.value_and_gradient(x)
        ref = gm_reference(x, m, K)
        off = ~omega_m_contains(x, m, K)
        assert np.all(v[off] == 0.0) and np.all(g[off] == 0.0)
        assert np.max(np.abs(v - ref)) <= 50 * d**2.5 * (N + 1.0) ** (-4 * d * L)
        assert net.width <= (9 + d) * (N + 1) + d - 1
        if d >= 2:
            assert net.depth <= 15 * d * (d - 1) * L


def test_partition_factor_is_exact_in_1d():
    x = np.random.default_rng(9).random(2000)
    for m in (1, 2):
        got = P.partition_factor_net(m, 8).forward(x[:, None])[:, 0]
        assert np.max(np.abs(got - gm_reference(x[:, None], [m], 8))) <= 1e-12


def test_mid_extend_fixes_buffers():
    K, delta = 4, 1 / 64
    step = P.step_net(K, delta, 2, 1)
    ext = P.mid_extend_net(step, K, delta * 1.5, 1)
    x = np.linspace(0, 1, 1001)
    ok = np.array([staircase(v, K, delta) is not None for v in x])
    assert np.array_equal(ext.forward(x[ok][:, None]), step.forward(x[ok][:, None]))
    with pytest.raises(NetworkError):
        P.mid_extend_net(step, K, 0.5, 1)
