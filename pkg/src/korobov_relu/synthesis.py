"""Assembly of approximants for functions of dominating mixed smoothness.

Three constructions are provided:

``continuous_rate``
    the truncated hierarchical sum realized as a chain of product-of-hat
    networks; exact zeros on the boundary.
``superconv_lp``
    per level, a piecewise-constant surplus lookup (step networks, a cell
    index and a bit-extraction memorizer) multiplied by a hat-train product;
    accurate off thin buffers before cell boundaries, then extended by
    medians of shifted copies.
``superconv_h1``
    the level networks patched by the trapezoid partition of unity.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import primitives as P
from .relu_net import (
    NetworkError,
    ReluNetwork,
    affine_net,
    compose,
    constant_net,
    parallel,
    scale,
    sign_split,
    sum_chain,
    to_json,
)
from .sparse_grid import (
    LevelIndex,
    SurplusTable,
    TargetFunction,
    hierarchize,
    level_index_set,
)

__all__ = [
    "SynthesisError",
    "SynthesisBudget",
    "TriflingRegion",
    "PQFactor",
    "SynthesizedApproximant",
    "derive_n",
    "trifling_contains",
    "gm_reference",
    "omega_m_contains",
    "pq_decompose",
    "synth_continuous",
    "synth_level_net",
    "synth_superconv_lp",
    "synth_superconv_h1",
    "partition_cells",
    "CONSTRUCTIONS",
]

CONSTRUCTIONS = ("continuous_rate", "superconv_lp", "superconv_h1")

# buffer width of the step networks in the L_p construction; small enough
# that the median extension moves trimmed-region values by < 1e-12
LP_STEP_DELTA = 2.0**-44


class SynthesisError(ValueError):
    """A construction cannot be realized with the requested budget."""


def derive_n(N: int, L: int) -> int:
    """Truncation level ``max(1, round(2 log2(N L) + 1))``."""
    return max(1, int(round(2 * math.log2(N * L) + 1)))


@dataclass(frozen=True)
class SynthesisBudget:
    N: int
    L: int
    d: int
    n: int | None = None
    s: int = 2

    def __post_init__(self) -> None:
        if min(self.N, self.L, self.d, self.s) < 1:
            raise SynthesisError("N, L, d and s must be positive")
        if self.n is None:
            object.__setattr__(self, "n", derive_n(self.N, self.L))
        if self.n < 1:
            raise SynthesisError("truncation level n must be positive")

    @property
    def NL(self) -> int:
        return self.N * self.L

    def to_json(self) -> dict[str, int]:
        return {"N": self.N, "L": self.L, "d": self.d, "n": int(self.n), "s": self.s}


@dataclass(frozen=True)
class TriflingRegion:
    """Cube minus buffers of width ``delta`` before every multiple of ``2**-n``."""

    n: int
    d: int
    delta: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1 or self.d < 1:
            raise SynthesisError("n and d must be positive")
        if self.delta is None:
            object.__setattr__(self, "delta", 2.0 ** -(self.n + 2))
        if not 0.0 < self.delta <= 1.0 / (3 * 2 ** (self.n - 1)):
            raise SynthesisError("delta outside (0, 1/(3 * 2**(n-1))]")

    def contains(self, x: Any) -> np.ndarray | bool:
        return trifling_contains(x, self)


def trifling_contains(x: Any, r: TriflingRegion) -> np.ndarray | bool:
    """Membership in the trimmed region for a point ``(d,)`` or points ``(m, d)``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != r.d:
        raise SynthesisError("point dimension does not match region")
    K = 2**r.n
    nxt = np.floor(pts * K) + 1.0  # index of the next grid line
    gap = nxt / K - pts
    inner = nxt < K  # no buffer before x = 1
    bad = inner & (gap < r.delta)
    ok = ~bad.any(axis=1)
    return bool(ok[0]) if single else ok


def _g1(x: np.ndarray, K: int) -> np.ndarray:
    u = x * K - np.floor(x * K)
    return np.clip(np.minimum(4.0 * u, 3.0 - 4.0 * u), 0.0, 1.0)


def gm_reference(x: Any, m: Sequence[int], K: int) -> np.ndarray | float:
    """Closed-form trapezoid partition ``g_m(x) = prod_j g_{m_j}(x_j)``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != len(m):
        raise SynthesisError("point dimension does not match m")
    out = np.ones(pts.shape[0])
    for j, mj in enumerate(m):
        if mj not in (1, 2):
            raise SynthesisError("partition index must be 1 or 2")
        shift = 0.0 if mj == 1 else 1.0 / (2 * K)
        out = out * _g1(pts[:, j] + shift, K)
    return float(out[0]) if single else out


def omega_m_contains(x: Any, m: Sequence[int], K: int) -> np.ndarray | bool:
    """Membership in the closed cell family ``Omega_m``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    ok = np.ones(pts.shape[0], dtype=bool)
    for j, mj in enumerate(m):
        t = pts[:, j] * K
        i = np.floor(t)
        u = t - i
        if mj == 1:
            ok &= (u <= 0.75) & (i < K)
        else:
            ok &= (u >= 0.5) | (u <= 0.25)
    return bool(ok[0]) if single else ok


def partition_cells(N: int, L: int) -> int:
    """Largest power of two ``K <= (N L)**2``."""
    return 2 ** int(math.floor(math.log2((N * L) ** 2)))


# ------------------------------------------------------------- level nets
@dataclass(frozen=True)
class PQFactor:
    """A level sum written as hat-train product ``p`` times cell constant ``q``."""

    level: LevelIndex
    q: np.ndarray

    @property
    def cells(self) -> tuple[int, ...]:
        return tuple(2 ** (lj - 1) for lj in self.level)

    def cell_index(self, x: Any) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        idx = []
        for j, k in enumerate(self.cells):
            idx.append(np.clip(np.floor(pts[:, j] * k).astype(np.int64), 0, k - 1))
        return np.stack(idx, axis=1)

    def p_eval(self, x: Any) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.ones(pts.shape[0])
        for j, lj in enumerate(self.level):
            z = pts[:, j] * 2.0 ** (lj - 1)
            frac = z - np.floor(z)
            out = out * np.where((pts[:, j] >= 0) & (pts[:, j] <= 1), 2.0 * np.minimum(frac, 1.0 - frac), 0.0)
        return out

    def q_eval(self, x: Any) -> np.ndarray:
        idx = self.cell_index(x)
        return self.q[tuple(idx.T)]

    def __call__(self, x: Any) -> np.ndarray:
        return self.p_eval(x) * self.q_eval(x)

    def linear_values(self) -> list[float]:
        """Cell constants ordered by ``sum_j c_j prod_{r<j} K_r`` (first coordinate fastest)."""
        return [float(v) for v in self.q.flatten(order="F")]


def pq_decompose(t: SurplusTable, l: LevelIndex) -> PQFactor:
    l = tuple(int(a) for a in l)
    if l not in t.levels():
        raise SynthesisError(f"level {l!r} not present in the table")
    return PQFactor(l, t.level_array(l))


def _step_depth_budget(K: int, N: int) -> int:
    """Smallest ``L'`` with ``N**2 L'**2 >= K``."""
    return max(1, math.ceil(math.sqrt(K) / N - 1e-12))


def _index_net(level: LevelIndex, delta: float, N: int) -> ReluNetwork:
    """Cell index ``sum_j step_j(x_j) prod_{r<j} K_r`` of the point's level cell."""
    d = len(level)
    cells = [2 ** (lj - 1) for lj in level]
    steps = []
    weights = []
    stride = 1
    for j, K in enumerate(cells):
        if K > 1:
            net = P.step_net(K, delta, N, _step_depth_budget(K, N))
            steps.append(compose(P.select_net(d, [j]), net))
            weights.append(float(stride))
        stride *= K
    if not steps:
        return constant_net(d, 0.0)
    stacked = parallel(steps, shared_input=True, nonneg_pad=True)
    return compose(stacked, affine_net(np.array([weights])))


def synth_level_net(
    t: SurplusTable,
    l: LevelIndex,
    b: SynthesisBudget,
    *,
    delta: float | None = None,
    tol: float | None = None,
    seminorm: float | None = None,
) -> ReluNetwork:
    """Network for the level sum ``sum_i v_{l,i} phi_{l,i}`` accurate off step buffers.

    ``delta`` is the step buffer width, ``tol`` the accuracy of the final
    two-factor product and ``seminorm`` fixes the normalization constant
    ``C = 2**(-d-|l|) |f|_{2,inf}`` (default: the largest surplus of the level).
    """
    pq = pq_decompose(t, l)
    d = len(pq.level)
    cells = pq.cells
    M = int(np.prod(cells))
    if delta is None:
        delta = TriflingRegion(int(b.n), d).delta
    if delta > 1.0 / (3 * max(cells)):
        raise SynthesisError("step buffer too wide for the level's cells")
    vmax = float(np.max(np.abs(pq.q)))
    if vmax == 0.0:
        return constant_net(d, 0.0).named("level")
    C = vmax if seminorm is None else 2.0 ** (-d - sum(pq.level)) * seminorm
    if C < vmax:
        raise SynthesisError("surplus exceeds the normalization bound")
    xi = [min(1.0, max(0.0, (v + C) / (2 * C))) for v in pq.linear_values()]

    Lb = max(b.L, _step_depth_budget(M, b.N))
    try:
        lookup = P.bit_extract_net(P.BitExtractSpec(tuple(xi), b.N, Lb, b.s))
    except NetworkError as exc:
        raise SynthesisError(str(exc)) from exc
    s_net = scale(compose(_index_net(pq.level, delta, b.N), lookup), 2 * C, -C)

    trains = [compose(P.select_net(d, [j]), P.periodic_hat_train_net(lj, b.N)) for j, lj in enumerate(pq.level)]
    w_net = P.product_of_nets(trains, b.N, b.L)

    a = max(1.0, C)
    if tol is None:
        tol = float(b.NL) ** -4
    teeth = P.product2_teeth(tol, a)
    prod = P.product2_net(P.ProductBudget(b.N, b.L, a), teeth=teeth)
    both = parallel([s_net, w_net], shared_input=True)
    return compose(both, prod).named("level")


# ---------------------------------------------------------- approximants
@dataclass
class SynthesizedApproximant:
    net: ReluNetwork
    target: TargetFunction
    budget: SynthesisBudget
    predicted_bounds: dict[str, float]
    construction: str
    pre_extension: ReluNetwork | None = None
    summands: list[ReluNetwork] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    def sidecar(self) -> dict[str, Any]:
        return {
            "construction": self.construction,
            "target": self.target.name,
            "budget": self.budget.to_json(),
            "predicted_bounds": dict(self.predicted_bounds),
            "realized": {"width": self.net.width, "depth": self.net.depth, "params": self.net.params},
            "details": dict(self.details),
        }

    def save(self, path: str) -> None:
        doc = to_json(self.net)
        doc["meta"].update(self.sidecar())
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, separators=(",", ":"))
            fh.write("\n")


def _log_factor(N: int, L: int, d: int) -> float:
    return (max(1.0, math.log2(N)) * max(1.0, math.log2(L))) ** (d - 1)


def _check_target(f: TargetFunction, d: int) -> None:
    if f.dim != d:
        raise SynthesisError(f"target dimension {f.dim} does not match d={d}")
    if not f.vanishes_on_boundary:
        raise SynthesisError("target must vanish on the boundary")


def synth_continuous(f: TargetFunction, N: int, L: int, d: int) -> SynthesizedApproximant:
    """Sum over the sparse grid of ``v_{l,i}`` times product-of-hat networks.

    The truncation level is ``floor(log2 N) + floor(log2 L)``; every basis
    network uses ``(1, n)`` as its own product budget.
    """
    _check_target(f, d)
    n = int(math.floor(math.log2(N)) + math.floor(math.log2(L)))
    if n < 1:
        raise SynthesisError("budget too small for any level (N L < 2)")
    b = SynthesisBudget(N, L, d, n)
    table = hierarchize(f, n, d)
    nets = []
    for (l, i), v in sorted(table.entries.items()):
        if v == 0.0:
            continue
        nets.append(scale(P.grid_basis_net(l, i, 1, n), v))
    net = sum_chain(nets).named("continuous_rate") if nets else constant_net(d, 0.0).named("continuous_rate")
    NL = float(N * L)
    bounds = {"h1": 1.0 / NL, "l2": NL**-2, "sup": NL**-2}
    return SynthesizedApproximant(net, f, b, bounds, "continuous_rate", details={"terms": len(nets)})


def _level_sum(f: TargetFunction, b: SynthesisBudget, delta: float, tol_scale: float) -> tuple[ReluNetwork, int]:
    d = b.d
    table = hierarchize(f, int(b.n), d)
    levels = level_index_set(int(b.n), d)
    tol = tol_scale / len(levels)
    nets = [synth_level_net(table, l, b, delta=delta, tol=tol, seminorm=f.seminorm) for l in levels]
    nets = [n for n in nets if n.depth > 0] or [constant_net(d, 0.0)]
    return sum_chain(nets), len(levels)


def synth_superconv_lp(f: TargetFunction, N: int, L: int, d: int) -> SynthesizedApproximant:
    """Level networks summed, then extended over the step buffers by medians."""
    _check_target(f, d)
    if f.seminorm > 1.0 + 1e-12:
        raise SynthesisError("requires |f|_{2,inf} <= 1; normalize the target")
    b = SynthesisBudget(N, L, d)
    inner, count = _level_sum(f, b, LP_STEP_DELTA, float(b.NL) ** -4)
    inner = inner.named("superconv_lp_inner")
    K = 2 ** int(b.n)
    net = P.mid_extend_net(inner, K, LP_STEP_DELTA, d).named("superconv_lp")
    rate = float(N) ** -4 * float(L) ** -4 * _log_factor(N, L, d)
    bounds = {"sup_trifling": rate, "lp": rate}
    details = {"levels": count, "step_delta": LP_STEP_DELTA, "trifling_delta": TriflingRegion(int(b.n), d).delta}
    if f.w1inf_norm is not None and math.isfinite(f.w1inf_norm):
        bounds["sup"] = rate + d * f.w1inf_norm * LP_STEP_DELTA
    else:
        warnings.warn("no modulus of continuity available; full-domain bound unknown")
    return SynthesizedApproximant(net, f, b, bounds, "superconv_lp", pre_extension=inner, details=details)


def h1_step_delta(K: int) -> float:
    """Buffer width ``2**-8 K**-3`` so buffers add ``O(K**-1 2**-4)`` in H^1."""
    return 2.0 ** -(3 * int(round(math.log2(K))) + 8)


def synth_superconv_h1(f: TargetFunction, N: int, L: int, d: int) -> SynthesizedApproximant:
    """``k = sum_m phi(partition_m, k_m)`` over ``m in {1,2}^d``.

    Every ``k_m`` is the level-network sum with step buffers of width
    ``2**-8 K**-3`` before the cell boundaries, ``K`` the largest power of two
    ``<= (N L)**2``.  Each summand is exactly zero with zero gradient where
    its partition factor vanishes.
    """
    _check_target(f, d)
    if f.seminorm > 1.0 + 1e-12 or f.w1inf_norm > 1.0 + 1e-12:
        raise SynthesisError("requires |f|_{2,inf} <= 1 and |f|_{W^{1,inf}} <= 1; normalize the target")
    b = SynthesisBudget(N, L, d)
    K = partition_cells(N, L)
    if 2 ** (int(b.n) - 1) > K:
        b = SynthesisBudget(N, L, d, int(math.log2(K)) + 1)
    delta = h1_step_delta(K)
    tol = delta
    inner, count = _level_sum(f, b, delta, tol)
    teeth = P.product2_teeth(tol, 1.0)
    prod = P.product2_net(P.ProductBudget(N, L, 1.0), teeth=teeth)
    summands = []
    for m in itertools.product((1, 2), repeat=d):
        part = P.partition_net(list(m), K, N, L)
        pair = parallel([part, inner], shared_input=True)
        split = compose(pair, sign_split(2))
        summands.append(compose(split, prod).named("h1_summand"))
    net = sum_chain(summands).named("superconv_h1")
    rate = float(N) ** -2 * float(L) ** -2 * _log_factor(N, L, d)
    bounds = {"h1": rate, "l2": float(N) ** -4 * float(L) ** -4 * _log_factor(N, L, d)}
    details = {"levels": count, "K": K, "step_delta": delta}
    return SynthesizedApproximant(net, f, b, bounds, "superconv_h1", pre_extension=inner, summands=summands, details=details)


def synthesize(construction: str, f: TargetFunction, N: int, L: int, d: int) -> SynthesizedApproximant:
    if construction == "continuous_rate":
        return synth_continuous(f, N, L, d)
    if construction == "superconv_lp":
        return synth_superconv_lp(f, N, L, d)
    if construction == "superconv_h1":
        return synth_superconv_h1(f, N, L, d)
    raise SynthesisError(f"unknown construction {construction!r}")
