"""Hierarchical (sparse-grid) representation on the unit cube.

Levels ``l`` are positive integer vectors with mesh widths ``h_j = 2**-l_j``;
positions ``i`` are odd integer vectors with ``1 <= i_j <= 2**l_j - 1``.  The
hat basis ``phi_{l,i}`` is the tensor product of 1D hats centred at
``i_j * h_j`` with half-width ``h_j``.  Surpluses are computed with the
tensor-product stencil ``f(x) - f(x - h)/2 - f(x + h)/2``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping

import numpy as np

__all__ = [
    "SparseGridError",
    "LevelIndex",
    "PositionIndex",
    "TargetFunction",
    "SurplusTable",
    "level_index_set",
    "odd_index_set",
    "hat_basis_eval",
    "hierarchize",
    "interpolant_eval",
    "surplus_bound",
    "grid_point",
    "poly_target",
    "sine_target",
    "make_target",
]

LevelIndex = tuple[int, ...]
PositionIndex = tuple[int, ...]


class SparseGridError(ValueError):
    """Invalid argument for a sparse-grid operation."""


def level_index_set(n: int, d: int) -> list[LevelIndex]:
    """All levels with ``|l|_1 <= n + d - 1``, in lexicographic order."""
    if n < 1 or d < 1:
        raise SparseGridError("n and d must be positive")
    top = n + d - 1
    return [l for l in itertools.product(range(1, n + 1), repeat=d) if sum(l) <= top]


def odd_index_set(l: LevelIndex) -> list[PositionIndex]:
    _check_level(l)
    return list(itertools.product(*[range(1, 2**lj, 2) for lj in l]))


def _check_level(l: LevelIndex) -> None:
    if len(l) == 0 or any(int(lj) < 1 for lj in l):
        raise SparseGridError(f"invalid level {l!r}")


def _check_position(l: LevelIndex, i: PositionIndex) -> None:
    _check_level(l)
    if len(i) != len(l):
        raise SparseGridError("level and position lengths differ")
    for lj, ij in zip(l, i):
        if ij % 2 == 0 or not 1 <= ij <= 2**lj - 1:
            raise SparseGridError(f"invalid position {i!r} for level {l!r}")


def grid_point(l: LevelIndex, i: PositionIndex) -> np.ndarray:
    return np.array([ij * 2.0**-lj for lj, ij in zip(l, i)])


def _hat(t: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(t))


def hat_basis_eval(l: LevelIndex, i: PositionIndex, x: Any) -> np.ndarray | float:
    """Evaluate ``phi_{l,i}`` at a point ``(d,)`` or points ``(m, d)``."""
    _check_position(l, i)
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != len(l):
        raise SparseGridError("point dimension does not match level")
    val = np.ones(pts.shape[0])
    for j, (lj, ij) in enumerate(zip(l, i)):
        scale = 2.0**lj
        val = val * _hat(pts[:, j] * scale - ij)
    return float(val[0]) if single else val


@dataclass(frozen=True)
class TargetFunction:
    """A test function on ``[0, 1]^d``.

    ``seminorm`` is the mixed second-derivative bound ``|f|_{2,inf}`` and
    ``w1inf_norm`` the larger of ``sup|f|`` and ``sup|grad f|``.
    """

    name: str
    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None
    seminorm: float
    w1inf_norm: float
    vanishes_on_boundary: bool = True
    scale: float = 1.0

    def __call__(self, x: Any) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.evaluate(pts)

    def gradient(self, x: Any) -> np.ndarray:
        if self.grad is None:
            raise SparseGridError(f"target {self.name!r} has no gradient")
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.grad(pts)

    def scaled(self, factor: float) -> "TargetFunction":
        ev, gr = self.evaluate, self.grad
        return TargetFunction(
            name=self.name,
            dim=self.dim,
            evaluate=lambda p: factor * ev(p),
            grad=None if gr is None else (lambda p: factor * gr(p)),
            seminorm=abs(factor) * self.seminorm,
            w1inf_norm=abs(factor) * self.w1inf_norm,
            vanishes_on_boundary=self.vanishes_on_boundary,
            scale=self.scale * factor,
        )


def _product_target(name, d, factor, grad_factor, seminorm, w1inf, normalize):
    def evaluate(p: np.ndarray) -> np.ndarray:
        return np.prod(factor(p), axis=1)

    def grad(p: np.ndarray) -> np.ndarray:
        f = factor(p)
        g = grad_factor(p)
        out = np.empty_like(p)
        for j in range(p.shape[1]):
            others = np.prod(np.delete(f, j, axis=1), axis=1) if p.shape[1] > 1 else 1.0
            out[:, j] = g[:, j] * others
        return out

    base = TargetFunction(name, d, evaluate, grad, seminorm, w1inf, True, 1.0)
    return base.scaled(1.0 / seminorm) if normalize else base


def poly_target(d: int, normalize: bool = False) -> TargetFunction:
    """``prod_j 4 x_j (1 - x_j)``; ``|f|_{2,inf} = 8**d``."""
    return _product_target(
        "poly",
        d,
        lambda p: 4.0 * p * (1.0 - p),
        lambda p: 4.0 - 8.0 * p,
        8.0**d,
        4.0,
        normalize,
    )


def sine_target(d: int, normalize: bool = False) -> TargetFunction:
    """``prod_j sin(pi x_j)``; ``|f|_{2,inf} = pi**(2d)``."""
    return _product_target(
        "sine",
        d,
        lambda p: np.sin(math.pi * p),
        lambda p: math.pi * np.cos(math.pi * p),
        math.pi ** (2 * d),
        math.pi,
        normalize,
    )


def make_target(name: str, d: int, normalize: bool = False) -> TargetFunction:
    if d < 1:
        raise SparseGridError("d must be positive")
    if name == "poly":
        return poly_target(d, normalize)
    if name == "sine":
        return sine_target(d, normalize)
    raise SparseGridError(f"unknown target {name!r}")


@dataclass(frozen=True)
class SurplusTable:
    """Sparse map ``(l, i) -> v_{l,i}`` for levels ``|l|_1 <= n + d - 1``."""

    n: int
    d: int
    entries: Mapping[tuple[LevelIndex, PositionIndex], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        top = self.n + self.d - 1
        for l, i in self.entries:
            _check_position(l, i)
            if len(l) != self.d or sum(l) > top:
                raise SparseGridError(f"level {l!r} not allowed for n={self.n}, d={self.d}")

    def __len__(self) -> int:
        return len(self.entries)

    def levels(self) -> list[LevelIndex]:
        return sorted({l for l, _ in self.entries})

    def level_items(self, l: LevelIndex) -> Iterator[tuple[PositionIndex, float]]:
        for (ll, i), v in self.entries.items():
            if ll == l:
                yield i, v

    def level_array(self, l: LevelIndex) -> np.ndarray:
        """Surpluses of one level as a dense array indexed by cell ``(i - 1) // 2``."""
        shape = tuple(2 ** (lj - 1) for lj in l)
        arr = np.zeros(shape)
        for i, v in self.level_items(l):
            arr[tuple((ij - 1) // 2 for ij in i)] = v
        return arr

    def truncated(self, n: int) -> "SurplusTable":
        top = n + self.d - 1
        keep = {k: v for k, v in self.entries.items() if sum(k[0]) <= top}
        return SurplusTable(n, self.d, keep)

    def to_json(self) -> dict[str, Any]:
        items = sorted(self.entries.items())
        return {
            "n": self.n,
            "d": self.d,
            "entries": [{"l": list(l), "i": list(i), "v": float(v)} for (l, i), v in items],
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "SurplusTable":
        try:
            entries = {
                (tuple(int(a) for a in e["l"]), tuple(int(a) for a in e["i"])): float(e["v"])
                for e in doc["entries"]
            }
            return cls(int(doc["n"]), int(doc["d"]), entries)
        except (KeyError, TypeError) as exc:
            raise SparseGridError(f"malformed surplus table: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))


def surplus_bound(l: LevelIndex, seminorm: float) -> float:
    """Upper bound ``2**-d * 2**-|l|_1 * |f|_{2,inf}`` on ``|v_{l,i}|``."""
    return 2.0 ** (-len(l) - sum(l)) * seminorm


def _boundary_probe(d: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=2024))
    pts = rng.random((64 * d, d))
    for k in range(pts.shape[0]):
        pts[k, k % d] = float((k // d) % 2)
    return pts


def hierarchize(f: TargetFunction, n: int, d: int | None = None) -> SurplusTable:
    """Hierarchical surpluses of ``f`` for all levels ``|l|_1 <= n + d - 1``."""
    d = f.dim if d is None else d
    if d != f.dim:
        raise SparseGridError("dimension mismatch between target and request")
    if not f.vanishes_on_boundary:
        raise SparseGridError("hierarchization requires a target vanishing on the boundary")
    if np.max(np.abs(f(_boundary_probe(d)))) > 1e-12:
        raise SparseGridError("target does not vanish on the boundary")
    shifts = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.float64)
    weights = np.prod(np.where(shifts == 0, 1.0, -0.5), axis=1)
    entries: dict[tuple[LevelIndex, PositionIndex], float] = {}
    for l in level_index_set(n, d):
        pos = odd_index_set(l)
        h = np.array([2.0**-lj for lj in l])
        centres = np.array(pos, dtype=np.float64) * h
        pts = centres[:, None, :] + shifts[None, :, :] * h
        vals = f(pts.reshape(-1, d)).reshape(len(pos), len(shifts))
        surplus = vals @ weights
        for i, v in zip(pos, surplus):
            entries[(l, i)] = float(v)
    return SurplusTable(n, d, entries)


def interpolant_eval(t: SurplusTable, x: Any) -> np.ndarray | float:
    """Truncated hierarchical sum at a point ``(d,)`` or points ``(m, d)``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != t.d:
        raise SparseGridError("point dimension does not match table")
    out = np.zeros(pts.shape[0])
    for l in t.levels():
        coeff = t.level_array(l)
        cells = []
        val = np.ones(pts.shape[0])
        for j, lj in enumerate(l):
            k = 2 ** (lj - 1)
            c = np.clip(np.floor(pts[:, j] * k).astype(np.int64), 0, k - 1)
            cells.append(c)
            val = val * _hat(pts[:, j] * 2.0**lj - (2 * c + 1))
        out += coeff[tuple(cells)] * val
    return float(out[0]) if single else out
