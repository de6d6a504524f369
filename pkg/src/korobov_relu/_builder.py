"""Layer-by-layer construction of networks from linear expressions."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .relu_net import ReluNetwork


class Lin:
    """Affine expression ``sum coeffs[u] * unit_u + const`` over the current frontier."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: dict[int, float] | None = None, const: float = 0.0) -> None:
        self.coeffs = dict(coeffs or {})
        self.const = float(const)

    def __add__(self, other: "Lin | float") -> "Lin":
        if not isinstance(other, Lin):
            return Lin(self.coeffs, self.const + float(other))
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, 0.0) + v
        return Lin(out, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "Lin":
        return Lin({k: -v for k, v in self.coeffs.items()}, -self.const)

    def __sub__(self, other: "Lin | float") -> "Lin":
        return self + (-other if isinstance(other, Lin) else -float(other))

    def __rsub__(self, other: float) -> "Lin":
        return (-self) + other

    def __mul__(self, c: float) -> "Lin":
        c = float(c)
        return Lin({k: v * c for k, v in self.coeffs.items()}, self.const * c)

    __rmul__ = __mul__


def lsum(exprs: Iterable[Lin | float]) -> Lin:
    out = Lin()
    for e in exprs:
        out = out + e
    return out


class Builder:
    """Accumulates hidden layers; each ``relu`` call adds one layer."""

    def __init__(self, n_inputs: int) -> None:
        self.n_inputs = n_inputs
        self.frontier = n_inputs
        self.layers: list[tuple[sp.csr_matrix, np.ndarray]] = []

    def inputs(self) -> list[Lin]:
        return [Lin({j: 1.0}) for j in range(self.n_inputs)]

    def _matrix(self, exprs: Sequence[Lin]) -> tuple[sp.csr_matrix, np.ndarray]:
        rows, cols, vals = [], [], []
        for r, e in enumerate(exprs):
            for c, v in e.coeffs.items():
                if v != 0.0:
                    rows.append(r)
                    cols.append(c)
                    vals.append(v)
        w = sp.csr_matrix((vals, (rows, cols)), shape=(len(exprs), self.frontier))
        b = np.array([e.const for e in exprs], dtype=np.float64)
        return w, b

    def relu(self, exprs: Sequence[Lin]) -> list[Lin]:
        """Add a hidden layer ``relu(expr)`` per expression; return the unit handles."""
        if not exprs:
            raise ValueError("empty layer")
        self.layers.append(self._matrix(exprs))
        self.frontier = len(exprs)
        return [Lin({j: 1.0}) for j in range(len(exprs))]

    def finish(self, outputs: Sequence[Lin], construction: str) -> ReluNetwork:
        layers = list(self.layers) + [self._matrix(outputs)]
        return ReluNetwork(self.n_inputs, layers, construction)


class Carry:
    """Helper to pass a value through a hidden layer.

    ``signed`` values use a ``(relu(v), relu(-v))`` pair; nonnegative values a
    single unit.
    """

    def __init__(self, expr: Lin, signed: bool = True) -> None:
        self.expr = expr
        self.signed = signed

    def units(self) -> list[Lin]:
        return [self.expr, -self.expr] if self.signed else [self.expr]

    def rebuild(self, handles: Sequence[Lin]) -> Lin:
        return handles[0] - handles[1] if self.signed else handles[0]
