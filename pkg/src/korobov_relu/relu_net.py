"""Explicit ReLU networks: data model, exact evaluation and combinators.

A network is an ordered list of affine layers ``(W_k, b_k)``.  Every layer
except the last is followed by ``relu``; the last layer is affine.  Width is
the largest hidden layer, depth the number of hidden layers, and the
parameter count is ``sum(rows * cols + rows)`` over all layers.

Weights are stored as canonical CSR matrices.  Evaluation accumulates each
output row term by term in column order, which makes exact cancellations
(for example ``t - t`` between two identical branches) reproducible across
backends.  Gradients use ``relu'(0) = 0``.
"""
from __future__ import annotations

import json
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import _backend

__all__ = [
    "NetworkError",
    "ParseError",
    "ReluNetwork",
    "affine_net",
    "identity_net",
    "constant_net",
    "carry_net",
    "compose",
    "chain",
    "parallel",
    "interleave",
    "pad_depth",
    "scale",
    "sum_chain",
    "sign_split",
    "mid3_net",
    "to_json",
    "from_json",
    "save",
    "load",
]

_CHUNK_BUDGET = 1 << 22
_DENSE_JSON_LIMIT = 2_000_000


class NetworkError(ValueError):
    """Invalid network construction or evaluation argument."""


class ParseError(ValueError):
    """Malformed serialized network; the message names the location."""


def _canonical(w: Any) -> sp.csr_matrix:
    m = sp.csr_matrix(w, dtype=np.float64)
    m.eliminate_zeros()
    m.sort_indices()
    m.indptr = m.indptr.astype(np.int32)
    m.indices = m.indices.astype(np.int32)
    return m


class ReluNetwork:
    """Immutable affine/ReLU network with exact size accounting."""

    __slots__ = ("_input_dim", "_weights", "_biases", "_construction")

    def __init__(
        self,
        input_dim: int,
        layers: Sequence[tuple[Any, Any]],
        construction: str = "network",
    ) -> None:
        if input_dim < 1:
            raise NetworkError("input_dim must be positive")
        if not layers:
            raise NetworkError("a network needs at least one (output) layer")
        weights = []
        biases = []
        cols = input_dim
        for k, (w, b) in enumerate(layers):
            wm = _canonical(w)
            bv = np.array(b, dtype=np.float64).reshape(-1)
            if wm.shape[1] != cols:
                raise NetworkError(
                    f"layer {k}: expects {wm.shape[1]} inputs, previous layer gives {cols}"
                )
            if bv.shape[0] != wm.shape[0]:
                raise NetworkError(f"layer {k}: bias length {bv.shape[0]} != rows {wm.shape[0]}")
            bv.setflags(write=False)
            weights.append(wm)
            biases.append(bv)
            cols = wm.shape[0]
        self._input_dim = int(input_dim)
        self._weights = tuple(weights)
        self._biases = tuple(biases)
        self._construction = str(construction)

    # ----------------------------------------------------------------- sizes
    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def output_dim(self) -> int:
        return self._weights[-1].shape[0]

    @property
    def layers(self) -> tuple[tuple[sp.csr_matrix, np.ndarray], ...]:
        return tuple(zip(self._weights, self._biases))

    @property
    def hidden_sizes(self) -> list[int]:
        return [w.shape[0] for w in self._weights[:-1]]

    @property
    def depth(self) -> int:
        return len(self._weights) - 1

    @property
    def width(self) -> int:
        return max(self.hidden_sizes, default=0)

    @property
    def params(self) -> int:
        return int(sum(w.shape[0] * w.shape[1] + w.shape[0] for w in self._weights))

    @property
    def nnz(self) -> int:
        return int(sum(w.nnz for w in self._weights))

    @property
    def construction(self) -> str:
        return self._construction

    def named(self, construction: str) -> "ReluNetwork":
        """Same layers under a different construction tag."""
        return ReluNetwork(self._input_dim, self.layers, construction)

    def meta(self) -> dict[str, Any]:
        return {
            "width": self.width,
            "depth": self.depth,
            "params": self.params,
            "construction": self._construction,
        }

    def __repr__(self) -> str:
        return (
            f"ReluNetwork({self._construction!r}, in={self._input_dim}, out={self.output_dim}, "
            f"width={self.width}, depth={self.depth})"
        )

    # ------------------------------------------------------------ evaluation
    def _points(self, x: Any) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim == 1:
            if arr.shape[0] != self._input_dim:
                raise NetworkError(
                    f"dimension mismatch: got {arr.shape[0]} inputs, network takes {self._input_dim}"
                )
            return arr.reshape(1, -1), True
        if arr.ndim != 2 or arr.shape[1] != self._input_dim:
            raise NetworkError(
                f"dimension mismatch: got shape {arr.shape}, network takes {self._input_dim} inputs"
            )
        return arr, False

    def _run(self, pts: np.ndarray, tangent: bool, signature: bool, backend: str | None):
        kern = _backend.get_kernels(backend)
        m = pts.shape[0]
        units = max([self._input_dim, self.output_dim] + self.hidden_sizes)
        per_point = units * (1 + (self._input_dim if tangent else 0))
        chunk = max(64, _CHUNK_BUDGET // max(per_point, 1))
        values = np.empty((m, self.output_dim))
        grads = np.empty((m, self.output_dim, self._input_dim)) if tangent else None
        sigs = np.zeros(m, dtype=np.uint64) if signature else None
        last = len(self._weights) - 1
        for start in range(0, m, chunk):
            stop = min(m, start + chunk)
            h = np.ascontiguousarray(pts[start:stop].T)
            n = stop - start
            tan = None
            if tangent:
                tan = np.zeros((self._input_dim, self._input_dim, n))
                for j in range(self._input_dim):
                    tan[j, j, :] = 1.0
            sig = np.zeros(n, dtype=np.uint64) if signature else None
            for k, (w, b) in enumerate(zip(self._weights, self._biases)):
                hidden = k < last
                pre = kern.csr_affine(w.indptr, w.indices, w.data, b, h, False)
                if tangent:
                    tan = kern.masked_tangent(w.indptr, w.indices, w.data, pre, tan, hidden)
                if hidden:
                    if signature:
                        mask = pre > 0.0
                        keys = _signature_keys(k, mask.shape[0])
                        with np.errstate(over="ignore"):
                            sig = sig * np.uint64(1099511628211) + (keys[:, None] * mask).sum(
                                axis=0, dtype=np.uint64
                            )
                    h = np.where(pre > 0.0, pre, 0.0)
                else:
                    h = pre
            values[start:stop] = h.T
            if tangent:
                grads[start:stop] = np.transpose(tan, (2, 0, 1))
            if signature:
                sigs[start:stop] = sig
        return values, grads, sigs

    def forward(self, x: Any, backend: str | None = None) -> np.ndarray:
        """Evaluate at one point ``(d,)`` or a batch ``(m, d)``."""
        pts, single = self._points(x)
        values, _, _ = self._run(pts, False, False, backend)
        return values[0] if single else values

    __call__ = forward

    def gradient(self, x: Any, backend: str | None = None) -> np.ndarray:
        """Exact almost-everywhere gradient of a scalar-output network."""
        if self.output_dim != 1:
            raise NetworkError("gradient requires a scalar-output network")
        pts, single = self._points(x)
        _, grads, _ = self._run(pts, True, False, backend)
        g = grads[:, 0, :]
        return g[0] if single else g

    def value_and_gradient(self, x: Any, backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        if self.output_dim != 1:
            raise NetworkError("gradient requires a scalar-output network")
        pts, single = self._points(x)
        values, grads, _ = self._run(pts, True, False, backend)
        if single:
            return values[0, 0], grads[0, 0]
        return values[:, 0], grads[:, 0, :]

    def activation_signature(self, x: Any) -> np.ndarray:
        """64-bit hash of the hidden-unit on/off pattern at each point."""
        pts, single = self._points(x)
        _, _, sigs = self._run(pts, False, True, None)
        return sigs[:1] if single else sigs

    def activation_pattern(self, x: Any) -> list[np.ndarray]:
        """Boolean on/off record per hidden layer at a single point."""
        pts, _ = self._points(x)
        h = np.ascontiguousarray(pts[:1].T)
        out = []
        kern = _backend.get_kernels()
        for w, b in zip(self._weights[:-1], self._biases[:-1]):
            pre = kern.csr_affine(w.indptr, w.indices, w.data, b, h, False)
            out.append(pre[:, 0] > 0.0)
            h = np.where(pre > 0.0, pre, 0.0)
        return out


_KEY_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _signature_keys(layer: int, size: int) -> np.ndarray:
    key = (layer, size)
    if key not in _KEY_CACHE:
        rng = np.random.Generator(np.random.Philox(key=layer + 1))
        _KEY_CACHE[key] = rng.integers(1, 2**63, size=size, dtype=np.uint64)
    return _KEY_CACHE[key]


# ----------------------------------------------------------------- builders
def affine_net(w: Any, b: Any | None = None, construction: str = "affine") -> ReluNetwork:
    """Depth-0 network ``x -> W x + b``."""
    wm = _canonical(np.atleast_2d(np.asarray(w, dtype=np.float64)) if not sp.issparse(w) else w)
    bv = np.zeros(wm.shape[0]) if b is None else b
    return ReluNetwork(wm.shape[1], [(wm, bv)], construction)


def identity_net(dim: int) -> ReluNetwork:
    return affine_net(sp.identity(dim, format="csr"), None, "identity")


def constant_net(input_dim: int, value: float | Sequence[float]) -> ReluNetwork:
    vals = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return ReluNetwork(input_dim, [(sp.csr_matrix((vals.size, input_dim)), vals)], "constant")


def carry_net(dim: int, depth: int, nonneg: bool = False) -> ReluNetwork:
    """Identity map through ``depth`` hidden layers.

    Signed channels use the pair ``(relu(u), relu(-u))``; channels known to be
    nonnegative use a single unit.
    """
    if depth == 0:
        return identity_net(dim)
    eye = sp.identity(dim, format="csr")
    if nonneg:
        first = eye
        mid = eye
        out = eye
    else:
        first = sp.vstack([eye, -eye], format="csr")
        mid = sp.identity(2 * dim, format="csr")
        out = sp.hstack([eye, -eye], format="csr")
    width = first.shape[0]
    layers = [(first, np.zeros(width))]
    layers += [(mid, np.zeros(width)) for _ in range(depth - 1)]
    layers.append((out, np.zeros(dim)))
    return ReluNetwork(dim, layers, "carry")


def sign_split(dim: int) -> ReluNetwork:
    """One hidden layer of ``(relu(u), relu(-u))`` pairs returning ``u``.

    Composing a consumer after this layer makes the consumer's first layer
    see exact zeros whenever an upstream output is exactly zero.
    """
    return carry_net(dim, 1).named("sign_split")


def compose(inner: ReluNetwork, outer: ReluNetwork) -> ReluNetwork:
    """``x -> outer(inner(x))`` with the interface affine maps fused."""
    if inner.output_dim != outer.input_dim:
        raise NetworkError(
            f"dimension mismatch: inner gives {inner.output_dim}, outer takes {outer.input_dim}"
        )
    wi, bi = inner.layers[-1]
    wo, bo = outer.layers[0]
    fused_w = _canonical(wo @ wi)
    fused_b = wo @ bi + bo
    layers = list(inner.layers[:-1]) + [(fused_w, fused_b)] + list(outer.layers[1:])
    return ReluNetwork(inner.input_dim, layers, outer.construction)


def chain(nets: Sequence[ReluNetwork]) -> ReluNetwork:
    if not nets:
        raise NetworkError("empty chain")
    out = nets[0]
    for net in nets[1:]:
        out = compose(out, net)
    return out


def pad_depth(net: ReluNetwork, depth: int, nonneg: bool = False) -> ReluNetwork:
    """Extend ``net`` to ``depth`` hidden layers with identity carries on its outputs."""
    if depth < net.depth:
        raise NetworkError("cannot pad to a smaller depth")
    if depth == net.depth:
        return net
    if net.depth == 0 and not nonneg:
        return compose(net, carry_net(net.output_dim, depth)).named(net.construction)
    return compose(net, carry_net(net.output_dim, depth - net.depth, nonneg)).named(net.construction)


def parallel(
    nets: Sequence[ReluNetwork], shared_input: bool = True, nonneg_pad: bool = False
) -> ReluNetwork:
    """Stack networks side by side; outputs are concatenated in order.

    With ``shared_input`` all networks read the same input vector, otherwise
    the inputs are concatenated.  Shallower networks are padded with identity
    carries on their outputs so that all branches share one depth.
    """
    if not nets:
        raise NetworkError("parallel needs at least one network")
    if shared_input and len({n.input_dim for n in nets}) != 1:
        raise NetworkError("shared-input parallel needs equal input dimensions")
    depth = max(n.depth for n in nets)
    padded = [pad_depth(n, depth, nonneg_pad) for n in nets]
    layers = []
    for k in range(depth + 1):
        ws = [p.layers[k][0] for p in padded]
        bs = [p.layers[k][1] for p in padded]
        if k == 0 and shared_input:
            w = sp.vstack(ws, format="csr")
        else:
            w = sp.block_diag(ws, format="csr")
        layers.append((w, np.concatenate(bs)))
    in_dim = nets[0].input_dim if shared_input else sum(n.input_dim for n in nets)
    return ReluNetwork(in_dim, layers, "parallel")


def interleave(nets: Sequence[ReluNetwork], shared_input: bool = True) -> ReluNetwork:
    """Parallel stack of identically shaped networks with interleaved units.

    Hidden unit ``u`` of branch ``b`` is placed at index ``u * B + b``.  A
    downstream row that combines the branches then meets corresponding units
    next to each other, so equal branch values cancel exactly.
    """
    shapes = {tuple(w.shape for w, _ in n.layers) for n in nets}
    if len(shapes) != 1:
        raise NetworkError("interleave needs identically shaped networks")
    stacked = parallel(nets, shared_input)
    count = len(nets)
    sizes = nets[0].hidden_sizes
    perms = []
    for size in sizes:
        # new position u*B + b holds old unit b*size + u
        old = np.arange(count * size).reshape(count, size).T.reshape(-1)
        perms.append(old)
    layers = []
    prev = None
    for k, (w, b) in enumerate(stacked.layers):
        w = w.tocsr()
        if prev is not None:
            w = w[:, prev]
        if k < len(perms):
            w = w[perms[k], :]
            b = b[perms[k]]
            prev = perms[k]
        layers.append((w, b))
    return ReluNetwork(stacked.input_dim, layers, "interleave")


def scale(net: ReluNetwork, factor: float, shift: float = 0.0) -> ReluNetwork:
    """``x -> factor * net(x) + shift``."""
    w, b = net.layers[-1]
    layers = list(net.layers[:-1]) + [(w * factor, b * factor + shift)]
    return ReluNetwork(net.input_dim, layers, net.construction)


def _chain_stage(net: ReluNetwork, d: int, first: bool, last: bool) -> ReluNetwork:
    """One stage of the summation chain: ``(x, a) -> (x, a + net(x))``."""
    if net.depth == 0:
        net = pad_depth(net, 1)
    eye = sp.identity(d, format="csr")
    n_in = d if first else d + 1
    carries_x = 2 * d
    carries_a = 0 if first else 2
    layers = []
    for k in range(net.depth):
        w, b = net.layers[k]
        units = w.shape[0]
        if k == 0:
            blocks = [sp.hstack([w, sp.csr_matrix((units, n_in - d))])]
            blocks.append(sp.hstack([eye, sp.csr_matrix((d, n_in - d))]))
            blocks.append(sp.hstack([-eye, sp.csr_matrix((d, n_in - d))]))
            if not first:
                a_rows = sp.csr_matrix(([1.0, -1.0], ([0, 1], [d, d])), shape=(2, n_in))
                blocks.append(a_rows)
            layers.append((sp.vstack(blocks, format="csr"), np.concatenate([b, np.zeros(carries_x + carries_a)])))
        else:
            bd = sp.block_diag([w, sp.identity(carries_x + carries_a)], format="csr")
            layers.append((bd, np.concatenate([b, np.zeros(carries_x + carries_a)])))
    w_out, b_out = net.layers[-1]
    units = w_out.shape[1]
    acc_cols = sp.csr_matrix(([1.0, -1.0], ([0, 0], [0, 1])), shape=(1, 2)) if not first else sp.csr_matrix((1, 0))
    acc_row = sp.hstack([w_out, sp.csr_matrix((1, carries_x)), acc_cols], format="csr")
    if last:
        out_w = acc_row
        out_b = b_out.copy()
    else:
        x_rows = sp.hstack(
            [sp.csr_matrix((d, units)), eye, -eye, sp.csr_matrix((d, carries_a))], format="csr"
        )
        out_w = sp.vstack([x_rows, acc_row], format="csr")
        out_b = np.concatenate([np.zeros(d), b_out])
    layers.append((out_w, out_b))
    return ReluNetwork(n_in, layers, "sum_chain_stage")


def sum_chain(nets: Sequence[ReluNetwork]) -> ReluNetwork:
    """Sum of scalar networks evaluated one after another.

    The input is carried as ``2d`` channels ``(relu(x_j), relu(-x_j))`` and
    the running sum as 2 channels, so the width is at most
    ``max width + 2d + 2`` and the depth is the sum of the depths.
    """
    if not nets:
        raise NetworkError("sum_chain needs at least one network")
    d = nets[0].input_dim
    if any(n.input_dim != d for n in nets):
        raise NetworkError("sum_chain needs a common input dimension")
    if any(n.output_dim != 1 for n in nets):
        raise NetworkError("sum_chain needs scalar-output networks")
    if len(nets) == 1:
        return nets[0].named("sum_chain")
    stages = [
        _chain_stage(n, d, first=(k == 0), last=(k == len(nets) - 1)) for k, n in enumerate(nets)
    ]
    return chain(stages).named("sum_chain")


def mid3_net() -> ReluNetwork:
    """Exact median of three reals, ``(a, b, c) -> mid(a, b, c)``.

    ``hi = a + relu(b - a)``, ``lo = a - relu(a - b)``, then
    ``mid = lo + relu(min(hi, c) - lo)`` with ``min(hi, c) = c - relu(c - hi)``.
    """
    # layer 1: relu(b-a), relu(a-b), relu(+-a), relu(+-c)
    w1 = np.array(
        [
            [-1, 1, 0],
            [1, -1, 0],
            [1, 0, 0],
            [-1, 0, 0],
            [0, 0, 1],
            [0, 0, -1],
        ],
        dtype=np.float64,
    )
    a = np.array([0, 0, 1, -1, 0, 0], dtype=np.float64)
    c = np.array([0, 0, 0, 0, 1, -1], dtype=np.float64)
    hi = a + np.array([1, 0, 0, 0, 0, 0])
    lo = a - np.array([0, 1, 0, 0, 0, 0])
    # layer 2: relu(c - hi), relu(+-lo), relu(+-c)
    w2 = np.vstack([c - hi, lo, -lo, c, -c])
    # layer 3: relu(c - relu(c-hi) - lo), relu(+-lo)
    c2 = np.array([0, 0, 0, 1, -1], dtype=np.float64)
    lo2 = np.array([0, 1, -1, 0, 0], dtype=np.float64)
    gate = c2 - np.array([1, 0, 0, 0, 0]) - lo2
    w3 = np.vstack([gate, lo2, -lo2])
    w4 = np.array([[1.0, 1.0, -1.0]])
    layers = [(w1, np.zeros(6)), (w2, np.zeros(5)), (w3, np.zeros(3)), (w4, np.zeros(1))]
    return ReluNetwork(3, layers, "mid3")


# ------------------------------------------------------------ serialization
def _json_float(v: float) -> float:
    return float(v)


def to_json(net: ReluNetwork, dense: bool | None = None) -> dict[str, Any]:
    """JSON document for ``net``; floats are written with round-trip precision.

    Layers are written as dense ``"w"`` matrices unless the network has more
    than two million parameters, in which case a CSR form ``"w_csr"`` is used.
    """
    if dense is None:
        dense = net.params <= _DENSE_JSON_LIMIT
    layers = []
    for w, b in net.layers:
        entry: dict[str, Any] = {}
        if dense:
            entry["w"] = [[_json_float(v) for v in row] for row in w.toarray()]
        else:
            entry["w_csr"] = {
                "shape": [int(w.shape[0]), int(w.shape[1])],
                "indptr": w.indptr.tolist(),
                "indices": w.indices.tolist(),
                "data": [_json_float(v) for v in w.data],
            }
        entry["b"] = [_json_float(v) for v in b]
        layers.append(entry)
    return {"input_dim": net.input_dim, "layers": layers, "meta": net.meta()}


def from_json(doc: Any) -> ReluNetwork:
    if not isinstance(doc, dict):
        raise ParseError("$: expected an object")
    if "input_dim" not in doc:
        raise ParseError("$.input_dim: missing key")
    if "layers" not in doc:
        raise ParseError("$.layers: missing key")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise ParseError("$.layers: expected a nonempty list")
    layers = []
    for k, entry in enumerate(doc["layers"]):
        where = f"$.layers[{k}]"
        if not isinstance(entry, dict):
            raise ParseError(f"{where}: expected an object")
        if "b" not in entry:
            raise ParseError(f"{where}.b: missing key")
        try:
            b = np.asarray(entry["b"], dtype=np.float64).reshape(-1)
            if "w" in entry:
                w = np.asarray(entry["w"], dtype=np.float64)
                if w.ndim != 2:
                    if w.size == 0:
                        w = w.reshape(len(b), 0)
                    else:
                        raise ParseError(f"{where}.w: expected a matrix")
                w = sp.csr_matrix(w)
            elif "w_csr" in entry:
                c = entry["w_csr"]
                w = sp.csr_matrix(
                    (np.asarray(c["data"], float), np.asarray(c["indices"]), np.asarray(c["indptr"])),
                    shape=tuple(c["shape"]),
                )
            else:
                raise ParseError(f"{where}.w: missing key")
        except ParseError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ParseError(f"{where}: {exc}") from exc
        layers.append((w, b))
    construction = "network"
    meta = doc.get("meta")
    if isinstance(meta, dict) and "construction" in meta:
        construction = str(meta["construction"])
    try:
        return ReluNetwork(int(doc["input_dim"]), layers, construction)
    except NetworkError as exc:
        raise ParseError(f"$.layers: {exc}") from exc


def save(net: ReluNetwork, path: str, extra_meta: dict[str, Any] | None = None) -> None:
    doc = to_json(net)
    if extra_meta:
        doc["meta"].update(extra_meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load(path: str) -> ReluNetwork:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return from_json(doc)


def iter_layers(net: ReluNetwork) -> Iterable[tuple[np.ndarray, np.ndarray]]:
    """Dense ``(W, b)`` pairs, mostly for inspection and tests."""
    for w, b in net.layers:
        yield w.toarray(), b.copy()
