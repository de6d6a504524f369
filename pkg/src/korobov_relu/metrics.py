"""Error norms between targets and networks, gradient checks and rate fits.

All sampling draws from ``numpy.random.Philox`` keyed by the seed, so every
report is reproducible bit for bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .relu_net import ReluNetwork
from .sparse_grid import TargetFunction
from .synthesis import TriflingRegion, omega_m_contains

__all__ = [
    "MetricsError",
    "ErrorReport",
    "RateFit",
    "Domain",
    "make_rng",
    "sample_points",
    "dyadic_grid",
    "sup_error",
    "lp_error",
    "h1_error",
    "rate_fit",
    "gradient_check",
    "safe_points",
    "linear_steps",
]

H1_JITTER = 7.62939453125e-06  # 2**-17, keeps samples off dyadic kinks


class MetricsError(ValueError):
    """Invalid request to a metric."""


@dataclass(frozen=True)
class Domain:
    """Sampling domain: the full cube or a predicate-defined subset."""

    label: str
    contains: Callable[[np.ndarray], np.ndarray] | None = None
    grid_level: int | None = None

    @staticmethod
    def full() -> "Domain":
        return Domain("full")

    @staticmethod
    def trifling(region: TriflingRegion) -> "Domain":
        return Domain(f"trifling({region.n})", lambda p: np.asarray(region.contains(p)), region.n + 2)

    @staticmethod
    def omega(m: Sequence[int], K: int) -> "Domain":
        mm = tuple(int(a) for a in m)
        return Domain(f"omega_m({list(mm)})", lambda p: np.asarray(omega_m_contains(p, mm, K)))

    def filter(self, pts: np.ndarray) -> np.ndarray:
        if self.contains is None:
            return pts
        return pts[self.contains(pts)]


def _as_domain(domain: Domain | TriflingRegion | str | None) -> Domain:
    if domain is None or domain == "full":
        return Domain.full()
    if isinstance(domain, TriflingRegion):
        return Domain.trifling(domain)
    if isinstance(domain, Domain):
        return domain
    raise MetricsError(f"unknown domain {domain!r}")


@dataclass(frozen=True)
class ErrorReport:
    norm: str
    estimate: float
    samples: int
    seed: int
    domain: str = "full"
    predicted_bound: float | None = None
    standard_error: float | None = None

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


@dataclass(frozen=True)
class RateFit:
    points: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r2: float

    def to_json(self) -> dict[str, Any]:
        return {"points": [list(p) for p in self.points], "slope": self.slope, "intercept": self.intercept, "r2": self.r2}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def sample_points(d: int, samples: int, seed: int) -> np.ndarray:
    return make_rng(seed).random((samples, d))


def dyadic_grid(d: int, level: int) -> np.ndarray:
    """All points of ``(2**-level Z)^d`` in ``[0, 1]^d``."""
    axis = np.arange(2**level + 1) / 2.0**level
    mesh = np.meshgrid(*[axis] * d, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _values(net: ReluNetwork, pts: np.ndarray) -> np.ndarray:
    if net.output_dim != 1:
        raise MetricsError("metrics need a scalar-output network")
    return net.forward(pts)[:, 0]


def _check(samples: int) -> None:
    if samples < 1:
        raise MetricsError("samples must be at least 1")


def sup_error(
    f: TargetFunction,
    net: ReluNetwork,
    domain: Domain | TriflingRegion | str | None = None,
    samples: int = 10000,
    seed: int = 0,
    predicted_bound: float | None = None,
    grid_level: int | None = None,
) -> ErrorReport:
    """Max ``|f - net|`` over uniform samples plus a dyadic grid, both filtered by ``domain``.

    The grid resolution is ``2**-(n+2)`` for a trimmed region (``grid_level``
    otherwise), capped so the grid holds at most ``samples`` points.
    """
    _check(samples)
    dom = _as_domain(domain)
    d = net.input_dim
    level = grid_level if grid_level is not None else dom.grid_level
    cap = int(math.floor(math.log2(max(2.0, samples ** (1.0 / d)) - 1)))
    level = cap if level is None else min(level, cap)
    pts = np.concatenate([sample_points(d, samples, seed), dyadic_grid(d, max(0, level))])
    pts = dom.filter(pts)
    if pts.shape[0] == 0:
        raise MetricsError("no sample points inside the domain")
    err = np.abs(f(pts) - _values(net, pts))
    return ErrorReport("sup", float(np.max(err)), int(pts.shape[0]), seed, dom.label, predicted_bound)


def lp_error(
    f: TargetFunction,
    net: ReluNetwork,
    p: float = 2.0,
    samples: int = 10000,
    seed: int = 0,
    domain: Domain | TriflingRegion | str | None = None,
    predicted_bound: float | None = None,
) -> ErrorReport:
    """Monte Carlo ``(mean |f - net|**p)**(1/p)`` with a delta-method standard error."""
    if math.isinf(p):
        return sup_error(f, net, domain, samples, seed, predicted_bound)
    if p < 1:
        raise MetricsError("p must be at least 1")
    _check(samples)
    dom = _as_domain(domain)
    pts = dom.filter(sample_points(net.input_dim, samples, seed))
    if pts.shape[0] == 0:
        raise MetricsError("no sample points inside the domain")
    gap = np.abs(f(pts) - _values(net, pts)) ** p
    mean = float(np.mean(gap))
    se_mean = float(np.std(gap, ddof=1) / math.sqrt(gap.size)) if gap.size > 1 else 0.0
    est = mean ** (1.0 / p)
    se = 0.0 if mean == 0.0 else se_mean * mean ** (1.0 / p - 1.0) / p
    return ErrorReport(f"lp({p:g})", est, int(pts.shape[0]), seed, dom.label, predicted_bound, se)


def h1_error(
    f: TargetFunction,
    net: ReluNetwork,
    samples: int = 10000,
    seed: int = 0,
    domain: Domain | TriflingRegion | str | None = None,
    predicted_bound: float | None = None,
) -> ErrorReport:
    """Monte Carlo H^1 distance using exact network gradients.

    Samples are shifted by a fixed jitter of ``2**-17`` (wrapping at 1) so
    that no sample sits on a dyadic kink.
    """
    if f.grad is None:
        raise MetricsError(f"target {f.name!r} supplies no gradient")
    _check(samples)
    dom = _as_domain(domain)
    pts = sample_points(net.input_dim, samples, seed) + H1_JITTER
    pts = np.where(pts >= 1.0, pts - 1.0, pts)
    pts = dom.filter(pts)
    if pts.shape[0] == 0:
        raise MetricsError("no sample points inside the domain")
    v, g = net.value_and_gradient(pts)
    val = (f(pts) - v) ** 2
    grad = np.sum((f.gradient(pts) - g) ** 2, axis=1)
    terms = val + grad
    mean = float(np.mean(terms))
    se_mean = float(np.std(terms, ddof=1) / math.sqrt(terms.size)) if terms.size > 1 else 0.0
    est = math.sqrt(mean)
    se = 0.0 if mean == 0.0 else se_mean / (2.0 * est)
    return ErrorReport("h1", est, int(pts.shape[0]), seed, dom.label, predicted_bound, se)


def rate_fit(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(log2 budget, log2 error)``."""
    pts = [(float(a), float(b)) for a, b in points]
    if len(pts) < 3:
        raise MetricsError("rate fit needs at least three points")
    if any(a <= 0 or b <= 0 for a, b in pts):
        raise MetricsError("rate fit needs positive budgets and errors")
    x = np.log2([a for a, _ in pts])
    y = np.log2([b for _, b in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateFit(tuple(pts), float(slope), float(intercept), r2)


def _ladder(h: float, min_step: float) -> list[float]:
    out = [h]
    while out[-1] / 10.0 >= min_step * (1 - 1e-9):
        out.append(out[-1] / 10.0)
    return out


def linear_steps(net: ReluNetwork, pts: np.ndarray, ladder: Sequence[float]) -> np.ndarray:
    """Largest step in ``ladder`` with an unchanged activation pattern on
    ``x +- h e_j`` for every axis; ``nan`` where none qualifies."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    sig = net.activation_signature(pts)
    hs = np.full(pts.shape[0], np.nan)
    for h in ladder:
        todo = np.flatnonzero(np.isnan(hs))
        if todo.size == 0:
            break
        base = pts[todo]
        ok = np.ones(todo.size, dtype=bool)
        for j in range(net.input_dim):
            for sgn in (-1.0, 1.0):
                moved = base.copy()
                moved[:, j] += sgn * h
                ok &= net.activation_signature(moved) == sig[todo]
        hs[todo[ok]] = h
    return hs


def safe_points(
    net: ReluNetwork,
    count: int,
    seed: int = 0,
    h: float = 1e-4,
    lo: float = 0.0,
    hi: float = 1.0,
    min_step: float = 1e-9,
) -> np.ndarray:
    """Random points at which ``net`` is linear on ``x +- h' e_j`` for some ``h' >= min_step``.

    Steps ``h, h/10, ...`` are tried in turn.  Networks whose kinks are
    denser than ``min_step`` almost everywhere (many-teeth products) have
    slope jumps far below float resolution; for them every sample is
    accepted.
    """
    d = net.input_dim
    rng = make_rng(seed)
    ladder = _ladder(h, min_step)
    found: list[np.ndarray] = []
    total = 0
    for _ in range(20):
        cand = lo + (hi - lo) * rng.random((max(2 * count, 64), d))
        ok = np.isfinite(linear_steps(net, cand, ladder))
        if ok.mean() < 0.05:
            ok[:] = True
        found.append(cand[ok])
        total += int(ok.sum())
        if total >= count:
            break
    pts = np.concatenate(found)[:count]
    if pts.shape[0] == 0:
        raise MetricsError("no kink-free points found")
    return pts


def gradient_check(net: ReluNetwork, points: Any, fd_step: float = 1e-6, min_step: float = 1e-9) -> float:
    """Max of ``|analytic - central difference| / (1 + |analytic|)`` over points and axes.

    Each point uses the largest step from ``fd_step, fd_step/10, ...`` on
    which the activation pattern is constant (``fd_step`` if none is).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    g = net.gradient(pts)
    hs = linear_steps(net, pts, _ladder(fd_step, min_step))
    hs = np.where(np.isnan(hs), fd_step, hs)
    worst = 0.0
    for j in range(net.input_dim):
        up = pts.copy()
        dn = pts.copy()
        up[:, j] += hs
        dn[:, j] -= hs
        fd = (net.forward(up)[:, 0] - net.forward(dn)[:, 0]) / (2 * hs)
        dev = np.abs(g[:, j] - fd) / (1.0 + np.abs(g[:, j]))
        worst = max(worst, float(np.max(dev)))
    return worst
