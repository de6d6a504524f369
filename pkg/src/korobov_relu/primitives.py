"""Building-block networks.

Every construction below uses dyadic breakpoints so that plateau values,
supports and zero slices are exact in binary floating point:

* teeth (tent-map iterates), the square approximant and two-factor products
  ``2[q(|x+y|/2) - q(|x|/2) - q(|y|/2)]`` with exact ``phi(0, y) = 0``;
* multi-factor products by repeated two-factor products;
* exact hats, hat trains, step functions and a bit-extraction memorizer;
* partition-of-unity factors and the median-of-three domain extension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from ._builder import Builder, Carry, Lin, lsum
from .relu_net import (
    NetworkError,
    ReluNetwork,
    affine_net,
    carry_net,
    chain,
    compose,
    constant_net,
    interleave,
    mid3_net,
    parallel,
)

__all__ = [
    "ProductBudget",
    "BitExtractSpec",
    "teeth_net",
    "square_net",
    "square_teeth",
    "product2_net",
    "product2_teeth",
    "multi_product_net",
    "product_of_nets",
    "hat1d_net",
    "grid_basis_net",
    "periodic_hat_train_net",
    "step_net",
    "bit_extract_net",
    "bit_extract_bits",
    "partition_factor_net",
    "partition_net",
    "mid_extend_net",
    "select_net",
]


@dataclass(frozen=True)
class ProductBudget:
    N: int
    L: int
    a: float = 1.0
    s: int = 2

    def __post_init__(self) -> None:
        if self.N < 1 or self.L < 1:
            raise NetworkError("N and L must be positive")
        if not self.a > 0:
            raise NetworkError("a must be positive")
        if self.s < 2:
            raise NetworkError("arity s must be at least 2")


@dataclass(frozen=True)
class BitExtractSpec:
    values: tuple[float, ...]
    N: int
    L: int
    s: int = 2

    def __post_init__(self) -> None:
        if self.N < 1 or self.L < 1 or self.s < 1:
            raise NetworkError("N, L and s must be positive")
        if not self.values:
            raise NetworkError("no values to memorize")
        if len(self.values) > (self.N * self.L) ** 2:
            raise NetworkError(
                f"{len(self.values)} values exceed the budget N^2 L^2 = {(self.N * self.L) ** 2}"
            )
        if any(not 0.0 <= v <= 1.0 for v in self.values):
            raise NetworkError("memorized values must lie in [0, 1]")


# ------------------------------------------------------------ tent helpers
def _tent(j: int, y: Fraction) -> Fraction:
    """``T_j(y) = 2 * dist(2**(j-1) y, Z)`` on ``[0, 1]``."""
    z = y * 2 ** (j - 1)
    frac = z - math.floor(z)
    return 2 * min(frac, 1 - frac)


def _relu_coeffs(values: Sequence[Fraction], flatten_end: bool) -> list[float]:
    """Coefficients ``c_m`` with ``F(t) = sum_m c_m relu(t - m/n)`` on ``[0, 1]``.

    ``values`` holds ``F`` at the breakpoints ``m/n``, ``m = 0..n`` with
    ``F(0) = 0``.  With ``flatten_end`` an extra unit at ``t = 1`` makes the
    slope vanish beyond 1.
    """
    n = len(values) - 1
    slopes = [(values[m + 1] - values[m]) * n for m in range(n)]
    coeffs = [slopes[0]] + [slopes[m] - slopes[m - 1] for m in range(1, n)]
    if flatten_end:
        coeffs.append(-slopes[-1])
    return [float(c) for c in coeffs]


def select_net(d: int, coords: Sequence[int]) -> ReluNetwork:
    w = np.zeros((len(coords), d))
    for r, c in enumerate(coords):
        w[r, c] = 1.0
    return affine_net(w, None, "select")


# ------------------------------------------------------------------- teeth
def teeth_net(i: int) -> ReluNetwork:
    """Exact ``T_i`` on ``[-1, 1]`` as the ``i``-fold composition of ``T_1``.

    ``T_1(x) = 2 relu(x) + 2 relu(-x) - 4 relu(x - 1/2) - 4 relu(-x - 1/2)``.
    """
    if i < 1:
        raise NetworkError("teeth index must be at least 1")
    t1 = ReluNetwork(
        1,
        [
            (np.array([[1.0], [-1.0], [1.0], [-1.0]]), np.array([0.0, 0.0, -0.5, -0.5])),
            (np.array([[2.0, 2.0, -4.0, -4.0]]), np.zeros(1)),
        ],
        "teeth",
    )
    return chain([t1] * i).named("teeth")


def square_teeth(N: int, L: int) -> int:
    """Teeth count ``ceil((L log2 N + 2) / 2)`` for sup error ``<= N**-L``."""
    return max(1, math.ceil((L * math.log2(N) + 2) / 2))


def _square_branch(alpha: Sequence[float], teeth: int, block: int) -> ReluNetwork:
    """``q(|u|)``, ``u = alpha . x``, with ``q(t) = t - sum_{i<=teeth} T_i(t) / 4**i``.

    The first hidden layer reads the signed input through
    ``relu(u - c) + relu(-u - c) = relu(|u| - c)``; later layers apply
    ``block`` tent levels at a time and carry ``|u|`` and the partial sum.
    """
    b = Builder(len(alpha))
    xs = b.inputs()
    u = lsum(a * x for a, x in zip(alpha, xs) if a != 0.0)
    done = 0
    t: Lin | None = None
    absu: Lin | None = None
    partial: Lin | None = None
    while done < teeth:
        kb = min(block, teeth - done)
        n = 2**kb
        grid = [Fraction(m, n) for m in range(n + 1)]
        if t is None:
            h = b.relu([u - m / n for m in range(n)] + [-u - m / n for m in range(n)])
            tri = [h[m] + h[n + m] for m in range(n)]
            absu = tri[0]
            partial_prev: Lin | float = 0.0
        else:
            h = b.relu([t - m / n for m in range(n)] + [absu, partial])
            tri = h[:n]
            absu = h[n]
            partial_prev = h[n + 1]
        tooth = _relu_coeffs([_tent(kb, y) for y in grid], False)
        acc = _relu_coeffs(
            [sum((_tent(j, y) / Fraction(4) ** (done + j) for j in range(1, kb + 1)), Fraction(0)) for y in grid],
            False,
        )
        t = lsum(c * e for c, e in zip(tooth, tri))
        partial = partial_prev + lsum(c * e for c, e in zip(acc, tri))
        done += kb
    return b.finish([absu - partial], "square")


def square_net(N: int, L: int, teeth: int | None = None) -> ReluNetwork:
    """Approximant of ``x**2`` on ``(-1, 1)`` with ``q(0) = 0`` and ``q(+-1) = 1``.

    The sup error is ``2**(-2 teeth - 2)``; the default teeth count gives
    error at most ``N**-L`` within width ``5N``.
    """
    if N < 1 or L < 1:
        raise NetworkError("N and L must be positive")
    t = square_teeth(N, L) if teeth is None else teeth
    if t < 1:
        raise NetworkError("teeth must be at least 1")
    return _square_branch([1.0], t, _square_block(N)).named("square")


def _square_block(N: int) -> int:
    # first layer holds 2 * 2**block units; keep it within 5N
    return max(1, int(math.floor(math.log2(5 * N / 2))))


def _multi_block(N: int) -> int:
    # three branches of 2 * 2**block units within 9(N+1)
    return max(1, int(math.floor(math.log2(3 * (N + 1) / 2))))


def product2_teeth(tol: float, a: float = 1.0) -> int:
    """Smallest teeth count with value error ``6 a^2 4**(-t-1)`` and
    gradient error ``2 a 2**-t`` both at most ``tol``."""
    for t in range(1, 200):
        if 6 * a * a * 4.0 ** (-t - 1) <= tol and 2 * a * 2.0**-t <= tol:
            return t
    raise NetworkError(f"tolerance {tol} not reachable")


def _product2_core(teeth: int, block: int, a: float) -> ReluNetwork:
    c = 1.0 / (2.0 * a)
    k = 2.0 * a * a
    branches = []
    for alpha, sign in (([c, c], 1.0), ([c, 0.0], -1.0), ([0.0, c], -1.0)):
        q = _square_branch(alpha, teeth, block)
        w, bias = q.layers[-1]
        branches.append(ReluNetwork(2, list(q.layers[:-1]) + [(w * (sign * k), bias * (sign * k))]))
    stacked = interleave(branches)
    return compose(stacked, affine_net(np.ones((1, 3)))).named("product2")


def product2_net(b: ProductBudget | int, L: int | None = None, a: float = 1.0, teeth: int | None = None) -> ReluNetwork:
    """Approximate ``x * y`` on ``(-a, a)^2`` with exact ``phi(0, y) = phi(x, 0) = 0``.

    Error in value and gradient at most ``6 a^2 N**-L``; width at most ``15N``.
    """
    if not isinstance(b, ProductBudget):
        b = ProductBudget(int(b), int(L if L is not None else 1), a)
    t = product2_teeth(6 * b.a * b.a * float(b.N) ** (-b.L), b.a) if teeth is None else teeth
    return _product2_core(t, _square_block(b.N), b.a)


def multi_product_teeth(N: int, L: int, s: int) -> int:
    tol = float(N + 1) ** (-7 * s * L)
    return product2_teeth(tol, 1.0)


def multi_product_net(b: ProductBudget | int, L: int | None = None, s: int | None = None, teeth: int | None = None) -> ReluNetwork:
    """Approximate ``x_1 ... x_s`` on ``(0, 1)^s`` via ``p_k = phi(p_{k-1}, x_k)``.

    Each intermediate product passes through a ``(relu(p), relu(-p))`` layer
    so that an exactly vanishing factor keeps every later stage exactly zero.
    """
    if not isinstance(b, ProductBudget):
        b = ProductBudget(int(b), int(L if L is not None else 1), 1.0, int(s if s is not None else 2))
    s = b.s
    t = multi_product_teeth(b.N, b.L, s) if teeth is None else teeth
    core = _product2_core(t, _multi_block(b.N), 1.0)
    depth = core.depth
    first = compose(select_net(s, [0, 1]), core)
    if s == 2:
        return first.named("multi_product")
    stage = parallel(
        [first, compose(select_net(s, list(range(2, s))), carry_net(s - 2, depth, nonneg=True))]
    )
    nets = [stage]
    for j in range(2, s):
        rest = s - j  # inputs x_j .. x_{s-1} still pending (0-based)
        split = _split_layer(rest)
        prod = compose(select_net(rest + 1, [0, 1]), core)
        if rest > 1:
            body = parallel(
                [prod, compose(select_net(rest + 1, list(range(2, rest + 1))), carry_net(rest - 1, depth, nonneg=True))]
            )
        else:
            body = prod
        nets.append(compose(split, body))
    return chain(nets).named("multi_product")


def _split_layer(rest: int) -> ReluNetwork:
    """Hidden layer ``(relu(p), relu(-p), relu(x_1), ..., relu(x_rest))``."""
    n = rest + 1
    w1 = np.zeros((rest + 2, n))
    w1[0, 0] = 1.0
    w1[1, 0] = -1.0
    for r in range(rest):
        w1[2 + r, 1 + r] = 1.0
    w2 = np.zeros((n, rest + 2))
    w2[0, 0] = 1.0
    w2[0, 1] = -1.0
    for r in range(rest):
        w2[1 + r, 2 + r] = 1.0
    return ReluNetwork(n, [(w1, np.zeros(rest + 2)), (w2, np.zeros(n))], "split")


def product_of_nets(nets: Sequence[ReluNetwork], N: int, L: int, teeth: int | None = None) -> ReluNetwork:
    """Product of nonnegative scalar networks sharing one input.

    The factors are rectified once more before the product so that a factor
    that is exactly zero enters the product as an exact zero unit.
    """
    if len(nets) == 1:
        return nets[0]
    stacked = parallel(list(nets), shared_input=True, nonneg_pad=True)
    rect = compose(stacked, carry_net(len(nets), 1, nonneg=True))
    return compose(rect, multi_product_net(ProductBudget(N, L, 1.0, len(nets)), teeth=teeth))


# -------------------------------------------------------------------- hats
def hat1d_net(l: int, i: int) -> ReluNetwork:
    """Exact hat ``relu(u+1) - 2 relu(u) + relu(u-1)``, ``u = 2**l x - i``."""
    if l < 1 or not 1 <= i <= 2**l - 1:
        raise NetworkError(f"invalid hat index l={l}, i={i}")
    s = 2.0**l
    w1 = np.array([[s], [s], [s]])
    b1 = np.array([1.0 - i, -float(i), -1.0 - i])
    return ReluNetwork(1, [(w1, b1), (np.array([[1.0, -2.0, 1.0]]), np.zeros(1))], "hat1d")


def grid_basis_net(l: Sequence[int], i: Sequence[int], N: int, L: int, teeth: int | None = None) -> ReluNetwork:
    """Tensor-product hat ``phi_{l,i}`` as a product network of exact 1D hats.

    Vanishes exactly outside the support of ``phi_{l,i}``.
    """
    d = len(l)
    if d != len(i):
        raise NetworkError("level and position lengths differ")
    hats = [compose(select_net(d, [j]), hat1d_net(l[j], i[j])) for j in range(d)]
    if d == 1:
        return hats[0].named("grid_basis")
    return product_of_nets(hats, N, L, teeth).named("grid_basis")


def _sawtooth_layers(b: Builder, t: Lin, levels: int, block: int) -> Lin:
    """Append layers computing ``T_levels(t)``; zero outside ``[0, 1]``."""
    done = 0
    while done < levels:
        kb = min(block, levels - done)
        n = 2**kb
        h = b.relu([t - m / n for m in range(n + 1)])
        coeffs = _relu_coeffs([_tent(kb, Fraction(m, n)) for m in range(n + 1)], True)
        t = lsum(c * e for c, e in zip(coeffs, h))
        done += kb
    return t


def _train_block(N: int) -> int:
    return max(1, int(math.floor(math.log2(4 * N))))


def periodic_hat_train_net(l: int, N: int = 1, L: int = 1) -> ReluNetwork:
    """Sum of the level-``l`` hats centred at the odd multiples of ``2**-l``.

    Realized as the tent iterate ``T_l`` on ``[0, 1]``, several levels per
    hidden layer; zero outside ``[0, 1]``.
    """
    if l < 1:
        raise NetworkError("level must be at least 1")
    b = Builder(1)
    out = _sawtooth_layers(b, b.inputs()[0], l, _train_block(N))
    return b.finish([out], "hat_train")


# ------------------------------------------------------------------- steps
def _staircase(
    b: Builder,
    x: Lin,
    ramps: Sequence[tuple[float, float]],
    incr: np.ndarray,
    base: Sequence[float],
    chunk: int,
    acc_signed: Sequence[bool],
) -> tuple[Lin, list[Lin]]:
    """Append layers computing ``base + incr @ clamp01((x - theta) / rho)``.

    Each ramp uses two layers, ``relu(t)`` and ``relu(1 - relu(t))``, so the
    clamp is exactly 0 or 1 away from the ramp.  Ramps are processed in
    chunks while ``x`` and the running sums are carried.
    """
    accs: list[Lin] = [Lin(const=v) for v in base]
    xc = Carry(x, True)
    for start in range(0, len(ramps), chunk):
        part = list(range(start, min(len(ramps), start + chunk)))
        carries = [xc] + [Carry(a, s) for a, s in zip(accs, acc_signed)]
        units = [(x * (1.0 / rho)) - theta / rho for theta, rho in (ramps[k] for k in part)]
        carry_units = [u for c in carries for u in c.units()]
        h = b.relu(units + carry_units)
        ramp_h = h[: len(part)]
        rebuilt = _rebuild(carries, h[len(part):])
        carries = [Carry(e, c.signed) for e, c in zip(rebuilt, carries)]
        h2 = b.relu([1.0 - r for r in ramp_h] + [u for c in carries for u in c.units()])
        clamp_u = h2[: len(part)]
        rebuilt = _rebuild(carries, h2[len(part):])
        x = rebuilt[0]
        xc = Carry(x, True)
        accs = []
        for o, acc in enumerate(rebuilt[1:]):
            w = incr[o, part]
            accs.append(acc + float(np.sum(w)) - lsum(float(c) * u for c, u in zip(w, clamp_u) if c != 0.0))
    return x, accs


def _rebuild(carries: Sequence[Carry], handles: Sequence[Lin]) -> list[Lin]:
    out = []
    pos = 0
    for c in carries:
        k = 2 if c.signed else 1
        out.append(c.rebuild(handles[pos : pos + k]))
        pos += k
    return out


def _step_chunk(N: int) -> int:
    return 4 * N + 2


def step_net(K: int, delta: float, N: int, L: int) -> ReluNetwork:
    """Staircase with value ``k`` on ``[k/K, (k+1)/K - delta]`` (no trim on the last cell).

    Requires ``K <= N**2 L**2`` and ``0 < delta <= 1/(3K)``.
    """
    if K < 1:
        raise NetworkError("K must be positive")
    if K > (N * L) ** 2:
        raise NetworkError(f"K={K} exceeds the budget N^2 L^2 = {(N * L) ** 2}")
    if not 0.0 < delta <= 1.0 / (3 * K):
        raise NetworkError(f"delta must lie in (0, 1/(3K)] = (0, {1.0 / (3 * K)}]")
    b = Builder(1)
    ramps = [(k / K - delta, delta) for k in range(1, K)]
    _, accs = _staircase(b, b.inputs()[0], ramps, np.ones((1, len(ramps))), [0.0], _step_chunk(N), [False])
    return b.finish(accs, "step")


# ---------------------------------------------------------- bit extraction
def bit_extract_bits(N: int, L: int, s: int) -> int:
    """Bits per value, ``ceil(2 s log2(N L)) + 1``."""
    return max(1, math.ceil(2 * s * math.log2(N * L)) + 1)


def bit_extract_net(spec: BitExtractSpec | Sequence[float], N: int | None = None, L: int | None = None, s: int = 2) -> ReluNetwork:
    """Memorize ``xi_0..xi_{M-1}`` at the integer inputs ``0..M-1``.

    Values are quantized to ``B`` bits and packed ``m`` per block into one
    dyadic constant.  A staircase over the input selects the block constant
    and the block index; the slot inside the block is decoded by ``m * B``
    rounds of doubling and thresholding.  The output is clamped to ``[0, 1]``
    and ``|phi(i) - xi_i| < 2**-B <= (N L)**(-2 s)``.
    """
    if not isinstance(spec, BitExtractSpec):
        spec = BitExtractSpec(tuple(float(v) for v in spec), int(N), int(L), s)
    vals = spec.values
    if all(v == vals[0] for v in vals):
        return constant_net(1, vals[0]).named("bit_extract")
    B = bit_extract_bits(spec.N, spec.L, spec.s)
    if B > 48:
        raise NetworkError("requested accuracy exceeds float64 exactness")
    M = len(vals)
    m = max(1, min(M, 48 // B))
    total = m * B
    codes = [min(int(math.floor(v * 2**B)), 2**B - 1) for v in vals]
    nb = -(-M // m)
    block_const = []
    for J in range(nb):
        c = Fraction(0)
        for t in range(m):
            idx = J * m + t
            if idx < M:
                c += Fraction(codes[idx], 2 ** (B * (t + 1)))
        block_const.append(c)

    b = Builder(1)
    x = b.inputs()[0]
    chunk = _step_chunk(spec.N)
    ramps = [(J * m - 0.5, 0.5) for J in range(1, nb)]
    incr = np.zeros((2, len(ramps)))
    for k, J in enumerate(range(1, nb)):
        incr[0, k] = 1.0
        incr[1, k] = float(block_const[J] - block_const[J - 1])
    x, (jidx, code) = _staircase(b, x, ramps, incr, [0.0, float(block_const[0])], chunk, [False, False])

    # slot gates g_t = [r >= t], r = x - m J
    gates: list[Lin] = []
    if m > 1:
        r = x - m * jidx
        h = b.relu([2.0 * (r - t) + 1.0 for t in range(1, m)] + [code])
        code = h[m - 1]
        h2 = b.relu([1.0 - u for u in h[: m - 1]] + [code])
        gates = [1.0 - u for u in h2[: m - 1]]
        code = h2[m - 1]

    def slot_indicator(t: int, gs: Sequence[Lin]) -> Lin | float:
        lo = 1.0 if t == 0 else gs[t - 1]
        hi = 0.0 if t == m - 1 else gs[t]
        return lo - hi

    scale = 2.0**total
    rem = code
    out: Lin = Lin()
    pending: tuple[Lin, int, int] | None = None
    gs = list(gates)
    for j in range(1, total + 1):
        units = [scale * (2.0 * rem - 1.0) + 1.0, rem] + gs + [out]
        if pending is not None:
            w, t_prev, p_prev = pending
            units.append(slot_indicator(t_prev, gs) - w)
        h = b.relu(units)
        u, rem_c = h[0], h[1]
        gs = h[2 : 2 + len(gs)]
        out_c = h[2 + len(gs)]
        if pending is not None:
            out_c = out_c + 2.0 ** (-pending[2]) * h[3 + len(gs)]
        h2 = b.relu([1.0 - u, rem_c] + gs + [out_c])
        w = h2[0]
        rem = 2.0 * h2[1] - 1.0 + w
        gs = h2[2 : 2 + len(gs)]
        out = h2[2 + len(gs)]
        pending = (w, (j - 1) // B, (j - 1) % B + 1)
    w, t_prev, p_prev = pending
    h = b.relu([slot_indicator(t_prev, gs) - w, out])
    final = h[1] + 2.0 ** (-p_prev) * h[0]
    h = b.relu([final])
    h = b.relu([1.0 - h[0]])
    return b.finish([1.0 - h[0]], "bit_extract")


# ------------------------------------------------------ partition of unity
def partition_factor_net(m: int, K: int, N: int = 1, L: int = 1) -> ReluNetwork:
    """1D trapezoid train ``g_m`` with ``K`` cells (``K`` a power of two).

    ``g_1 = clamp01(3/2 - 2 T(y))`` with ``T = T_{log2 K + 3}`` and
    ``y = (x + shift - 3/(8K) + 1) / 4``; ``shift = 1/(2K)`` for ``m = 2``.
    """
    if m not in (1, 2):
        raise NetworkError("partition index must be 1 or 2")
    if K < 1 or K & (K - 1):
        raise NetworkError("K must be a power of two")
    k = K.bit_length() - 1
    shift = 0.0 if m == 1 else 1.0 / (2 * K)
    b = Builder(1)
    x = b.inputs()[0]
    y = (x + (shift - 3.0 / (8 * K) + 1.0)) * 0.25
    tooth = _sawtooth_layers(b, y, k + 3, _train_block(N))
    h = b.relu([1.5 - 2.0 * tooth])
    h = b.relu([1.0 - h[0]])
    return b.finish([1.0 - h[0]], "partition_factor")


def partition_net(m: Sequence[int], K: int, N: int, L: int, teeth: int | None = None) -> ReluNetwork:
    """Network for ``g_m(x) = prod_j g_{m_j}(x_j)``; exactly zero with zero
    gradient wherever one factor vanishes."""
    d = len(m)
    if K > (N * L) ** 2:
        raise NetworkError(f"K={K} exceeds the budget N^2 L^2 = {(N * L) ** 2}")
    factors = [compose(select_net(d, [j]), partition_factor_net(m[j], K, N, L)) for j in range(d)]
    if d == 1:
        return factors[0].named("partition")
    return product_of_nets(factors, N, L, teeth).named("partition")


# ------------------------------------------------------- domain extension
def _shift_net(d: int, offset: np.ndarray) -> ReluNetwork:
    return affine_net(np.eye(d), offset, "shift")


def mid_extend_net(net: ReluNetwork, K: int, delta: float, d: int | None = None) -> ReluNetwork:
    """Median of three shifted copies, one coordinate at a time.

    Coordinate ``j`` combines ``net(x - delta e_j)``, ``net(x)`` and
    ``net(x + delta e_j)`` with an exact median; ``d`` rounds use ``3**d``
    copies.  Wherever at most one of each triple is inaccurate the median
    stays within the accurate values.
    """
    d = net.input_dim if d is None else d
    if d != net.input_dim or net.output_dim != 1:
        raise NetworkError("extension needs a scalar network on R^d")
    if not 0.0 < delta < 1.0 / K:
        raise NetworkError("delta must be positive and smaller than the cell size 1/K")
    offsets = np.array(np.meshgrid(*[[-1.0, 0.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T * delta
    copies = [net if not off.any() else compose(_shift_net(d, off), net) for off in offsets]
    current = parallel(copies, shared_input=True)
    width = 3**d
    for _ in range(d):
        width //= 3
        med = mid3_net() if width == 1 else parallel([mid3_net()] * width, shared_input=False)
        current = compose(current, med)
    return current.named("mid_extend")

