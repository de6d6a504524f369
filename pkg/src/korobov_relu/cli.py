"""Command-line front end: ``korobov-relu <command> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 synthesis error,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import metrics as M
from . import primitives as P
from . import relu_net as R
from . import sparse_grid as G
from . import synthesis as S

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SYNTHESIS = 3
EXIT_VERIFY = 4

PRNG_NAME = "numpy.random.Philox-4x64"
CSV_COLUMNS = ["construction", "d", "N", "L", "NL", "norm", "error", "predicted_bound", "samples", "seed"]
NORMS = ("sup", "l2", "h1")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    construction: str
    target: str
    normalize: bool
    d: int
    budgets: tuple[tuple[int, int], ...]
    norms: tuple[str, ...]
    samples: int
    seed: int
    out: str | None = None

    def __post_init__(self) -> None:
        if self.construction not in S.CONSTRUCTIONS:
            raise ConfigError(f"unknown construction {self.construction!r}")
        if self.target not in ("poly", "sine"):
            raise ConfigError(f"unknown target {self.target!r}")
        if self.d < 1:
            raise ConfigError("d must be at least 1")
        if not self.budgets:
            raise ConfigError("budgets must not be empty")
        if any(N < 1 or L < 1 for N, L in self.budgets):
            raise ConfigError("budgets need N, L >= 1")
        if not self.norms or any(n not in NORMS for n in self.norms):
            raise ConfigError(f"norms must be drawn from {NORMS}")
        if self.samples < 1:
            raise ConfigError("samples must be positive")

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        try:
            return cls(
                construction=str(doc["construction"]),
                target=str(doc.get("target", "poly")),
                normalize=bool(doc.get("normalize", True)),
                d=int(doc.get("d", 1)),
                budgets=tuple((int(b[0]), int(b[1])) for b in doc.get("budgets", [])),
                norms=tuple(doc.get("norms", ["sup"])),
                samples=int(doc.get("samples", 10000)),
                seed=int(doc.get("seed", 0)),
                out=doc.get("out"),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed config: {exc}") from exc


def _target(name: str, d: int, normalize: bool) -> G.TargetFunction:
    try:
        return G.make_target(name, d, normalize)
    except G.SparseGridError as exc:
        raise ConfigError(str(exc)) from exc


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _dump(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------- commands
def cmd_decompose(args: argparse.Namespace) -> int:
    if args.n is None or args.n < 1:
        raise ConfigError("decompose needs --n >= 1")
    f = _target(args.target, args.d, args.normalize)
    table = G.hierarchize(f, args.n, args.d)
    doc = table.to_json()
    doc["target"] = {"name": f.name, "normalized": bool(args.normalize)}
    _write_text(args.out, _dump(doc))
    return EXIT_OK


def _evaluate_norm(norm: str, f: G.TargetFunction, approx: S.SynthesizedApproximant, samples: int, seed: int) -> M.ErrorReport:
    bounds = approx.predicted_bounds
    net = approx.net
    if norm == "sup":
        if approx.construction == "superconv_lp":
            region = S.TriflingRegion(int(approx.budget.n), approx.budget.d)
            return M.sup_error(f, net, region, samples, seed, bounds.get("sup_trifling"))
        return M.sup_error(f, net, None, samples, seed, bounds.get("sup"))
    if norm == "l2":
        return M.lp_error(f, net, 2.0, samples, seed, None, bounds.get("l2", bounds.get("lp")))
    return M.h1_error(f, net, samples, seed, None, bounds.get("h1"))


def _synthesize(construction: str, f: G.TargetFunction, N: int, L: int, d: int) -> S.SynthesizedApproximant:
    try:
        return S.synthesize(construction, f, N, L, d)
    except (S.SynthesisError, R.NetworkError) as exc:
        raise SynthesisFailure(str(exc)) from exc


class SynthesisFailure(RuntimeError):
    pass


def cmd_synthesize(args: argparse.Namespace) -> int:
    f = _target(args.target, args.d, args.normalize)
    approx = _synthesize(args.construction, f, args.N, args.L, args.d)
    doc = R.to_json(approx.net)
    side = approx.sidecar()
    side["prng"] = PRNG_NAME
    doc["meta"].update(side)
    out = args.out or f"{args.construction}.json"
    _write_text(out, json.dumps(doc, separators=(",", ":")) + "\n")
    if out != "-":
        _write_text(out + ".sidecar.json", _dump(side))
    return EXIT_OK


def _load_points(path: str, d: int) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            pts = np.asarray(json.load(fh), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read points from {path}: {exc}") from exc
    pts = np.atleast_2d(pts)
    if pts.shape[1] != d:
        raise ConfigError(f"points have dimension {pts.shape[1]}, network expects {d}")
    return pts


def cmd_evaluate(args: argparse.Namespace) -> int:
    if not args.net:
        raise ConfigError("evaluate needs --net PATH")
    try:
        net = R.load(args.net)
    except (OSError, R.ParseError) as exc:
        raise ConfigError(f"cannot load network: {exc}") from exc
    doc: dict[str, Any] = {"network": net.meta(), "seed": args.seed, "prng": PRNG_NAME}
    if args.points:
        pts = _load_points(args.points, net.input_dim)
    else:
        pts = M.sample_points(net.input_dim, args.samples, args.seed)
    vals = net.forward(pts)
    doc["points"] = pts.tolist()
    doc["values"] = vals.tolist()
    if args.target:
        if net.output_dim != 1:
            raise ConfigError("error norms need a scalar network")
        f = _target(args.target, net.input_dim, args.normalize)
        norm = args.norm or "sup"
        if norm == "sup":
            rep = M.sup_error(f, net, None, args.samples, args.seed)
        elif norm == "l2":
            rep = M.lp_error(f, net, 2.0, args.samples, args.seed)
        else:
            rep = M.h1_error(f, net, args.samples, args.seed)
        doc["error"] = rep.to_json()
    _write_text(args.out, _dump(doc))
    return EXIT_OK


def run_rate_study(cfg: ExperimentConfig) -> tuple[str, dict[str, Any]]:
    f = _target(cfg.target, cfg.d, cfg.normalize)
    rows = []
    for N, L in cfg.budgets:
        approx = _synthesize(cfg.construction, f, N, L, cfg.d)
        for norm in cfg.norms:
            rep = _evaluate_norm(norm, f, approx, cfg.samples, cfg.seed)
            rows.append(
                {
                    "construction": cfg.construction,
                    "d": cfg.d,
                    "N": N,
                    "L": L,
                    "NL": N * L,
                    "norm": norm,
                    "error": repr(float(rep.estimate)),
                    "predicted_bound": "" if rep.predicted_bound is None else repr(float(rep.predicted_bound)),
                    "samples": rep.samples,
                    "seed": cfg.seed,
                }
            )
    rows.sort(key=lambda r: (r["norm"], r["NL"], r["N"], r["L"]))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    summary: dict[str, Any] = {
        "construction": cfg.construction,
        "target": cfg.target,
        "normalized": cfg.normalize,
        "d": cfg.d,
        "seed": cfg.seed,
        "prng": PRNG_NAME,
        "fits": {},
    }
    for norm in cfg.norms:
        pts = [(r["NL"], float(r["error"])) for r in rows if r["norm"] == norm]
        if len(pts) >= 3 and all(e > 0 for _, e in pts):
            summary["fits"][norm] = M.rate_fit(pts).to_json()
        else:
            summary["fits"][norm] = None
    return buf.getvalue(), summary


def _parse_budgets(text: str | None, N: int | None, L: int | None) -> tuple[tuple[int, int], ...]:
    if text is None:
        if N is None or L is None:
            return ()
        return ((N, L),)
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            a, b = item.lower().split("x")
            out.append((int(a), int(b)))
        except ValueError as exc:
            raise ConfigError(f"bad budget {item!r}; use NxL") from exc
    return tuple(out)


def cmd_rate_study(args: argparse.Namespace) -> int:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = ExperimentConfig.from_json(json.load(fh))
        except (OSError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"cannot read config: {exc}") from exc
    else:
        cfg = ExperimentConfig(
            construction=args.construction,
            target=args.target,
            normalize=args.normalize,
            d=args.d,
            budgets=_parse_budgets(args.budgets, args.N, args.L),
            norms=tuple(args.norm or ["sup"]),
            samples=args.samples,
            seed=args.seed,
            out=args.out,
        )
    text, summary = run_rate_study(cfg)
    out = args.out or cfg.out
    _write_text(out, text)
    if out and out != "-":
        _write_text(out + ".summary.json", _dump(summary))
    else:
        sys.stdout.write(_dump(summary))
    return EXIT_OK


# ------------------------------------------------------------------ verify
@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Faults:
    hat: bool = False


def _hat_net(l: int, i: int, faults: Faults) -> R.ReluNetwork:
    net = P.hat1d_net(l, i)
    if not faults.hat:
        return net
    layers = [(w.copy(), b.copy()) for w, b in net.layers]
    w = layers[1][0].tolil()
    w[0, 1] = w[0, 1] * (1 + 1e-6)
    layers[1] = (w.tocsr(), layers[1][1])
    return R.ReluNetwork(net.input_dim, layers, net.construction)


def _suite_sparse_grid(faults: Faults) -> list[tuple[str, bool, str]]:
    out = []
    viol = 0
    for name in ("poly", "sine"):
        for d in (1, 2, 3):
            f = G.make_target(name, d)
            t = G.hierarchize(f, 10 - d + 1, d)
            for (l, i), v in t.entries.items():
                if abs(v) > G.surplus_bound(l, f.seminorm) * (1 + 1e-12):
                    viol += 1
    out.append(("surplus bound", viol == 0, f"{viol} violations"))
    n49 = len(G.hierarchize(G.poly_target(2), 4, 2))
    out.append(("decompose count d=2 n=4", n49 == 49, f"{n49} entries"))
    rng = M.make_rng(1)
    x = rng.random((500, 2))
    t = G.hierarchize(G.poly_target(2), 4, 2)
    direct = sum(v * G.hat_basis_eval(l, i, x) for (l, i), v in t.entries.items())
    gap = float(np.max(np.abs(direct - G.interpolant_eval(t, x))))
    out.append(("interpolant equals basis sum", gap <= 1e-12, f"max gap {gap:.3g}"))
    return out


def _suite_primitives(faults: Faults) -> list[tuple[str, bool, str]]:
    out = []
    rng = M.make_rng(2)
    t = P.teeth_net(1)
    ok = t.forward(np.array([0.5]))[0] == 1.0 and t.forward(np.array([0.75]))[0] == 0.5
    out.append(("teeth values", bool(ok), ""))
    xs = np.linspace(0, 1, 257)[:, None]
    exact = True
    for l in (1, 2, 3):
        for i in range(1, 2**l, 2):
            net = _hat_net(l, i, faults)
            exact &= bool(np.array_equal(net.forward(xs)[:, 0], G.hat_basis_eval((l,), (i,), xs)))
    out.append(("hat networks exact", exact, ""))
    for N, L in ((2, 2), (2, 3), (4, 2)):
        net = P.product2_net(P.ProductBudget(N, L))
        pts = rng.uniform(-1, 1, (4000, 2))
        v, g = net.value_and_gradient(pts)
        err = max(np.max(np.abs(v - pts[:, 0] * pts[:, 1])), np.max(np.abs(g - pts[:, ::-1])))
        bound = 6.0 * float(N) ** -L
        out.append((f"product2 bound N={N} L={L}", bool(err <= bound), f"{err:.3g} <= {bound:.3g}"))
        z = np.column_stack([np.zeros(200), rng.uniform(-1, 1, 200)])
        v, g = net.value_and_gradient(z)
        out.append((f"product2 zero slice N={N} L={L}", bool(np.all(v == 0) and np.all(g[:, 1] == 0)), ""))
    for s in (2, 3, 4):
        net = P.multi_product_net(P.ProductBudget(1, 1, 1.0, s))
        pts = rng.random((300, s))
        pts[:, rng.integers(0, s)] = 0.0
        v = net.forward(pts)[:, 0]
        out.append((f"multi_product zero slice s={s}", bool(np.all(v == 0)), ""))
    for K in (4, 8):
        net = P.step_net(K, 1.0 / (4 * K), 2, 2)
        ok = True
        for k in range(K):
            hi = (k + 1) / K - (1.0 / (4 * K) if k < K - 1 else 0.0)
            xs_k = np.linspace(k / K, hi, 33)[:, None]
            ok &= bool(np.all(net.forward(xs_k)[:, 0] == k))
        out.append((f"step plateaus K={K}", ok, ""))
    vals = rng.random(16)
    net = P.bit_extract_net(vals, 2, 2, 2)
    got = net.forward(np.arange(16.0)[:, None])[:, 0]
    err = float(np.max(np.abs(got - vals)))
    out.append(("bit extraction accuracy", err <= 2.0**-8, f"{err:.3g}"))
    return out


def _suite_synthesis(faults: Faults) -> list[tuple[str, bool, str]]:
    out = []
    rng = M.make_rng(3)
    for d in (1, 2):
        x = rng.random((2000, d))
        tot = sum(S.gm_reference(x, m, 8) for m in itertools.product((1, 2), repeat=d))
        gap = float(np.max(np.abs(tot - 1.0)))
        out.append((f"partition of unity d={d}", gap <= 1e-14, f"{gap:.3g}"))
    f = G.make_target("poly", 2, True)
    approx = S.synth_continuous(f, 4, 1, 2)
    b = rng.random((300, 2))
    b[np.arange(300), rng.integers(0, 2, 300)] = rng.integers(0, 2, 300).astype(float)
    out.append(("continuous boundary zeros", bool(np.all(approx.net.forward(b)[:, 0] == 0.0)), ""))
    f1 = G.make_target("poly", 1, True)
    lp = S.synth_superconv_lp(f1, 2, 1, 1)
    region = S.TriflingRegion(int(lp.budget.n), 1)
    x = rng.random((500, 1))
    x = x[region.contains(x)]
    gap = float(np.max(np.abs(lp.net.forward(x) - lp.pre_extension.forward(x))))
    out.append(("extension consistency", gap <= 1e-12, f"{gap:.3g}"))
    return out


SUITES: dict[str, Callable[[Faults], list[tuple[str, bool, str]]]] = {
    "sparse_grid": _suite_sparse_grid,
    "primitives": _suite_primitives,
    "synthesis": _suite_synthesis,
}


def run_verify(suite: str, faults: Faults | None = None) -> list[Check]:
    faults = faults or Faults()
    names = list(SUITES) if suite == "all" else [suite]
    if any(n not in SUITES for n in names):
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES) + ['all']}")
    checks = []
    for n in names:
        for name, ok, detail in SUITES[n](faults):
            checks.append(Check(n, name, bool(ok), detail))
    return checks


def cmd_verify(args: argparse.Namespace) -> int:
    checks = run_verify(args.suite, Faults(hat=args.inject_fault == "hat"))
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.suite}: {c.name} {c.detail}".rstrip())
    report = {
        "suite": args.suite,
        "passed": all(c.passed for c in checks),
        "checks": [{"suite": c.suite, "name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
    }
    if args.out:
        _write_text(args.out, _dump(report))
    return EXIT_OK if report["passed"] else EXIT_VERIFY


# ------------------------------------------------------------------ parser
class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_CONFIG)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", choices=["poly", "sine"], default="poly")
    p.add_argument("--normalize", action="store_true", help="scale the target to |f|_{2,inf} = 1")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="korobov-relu", description="Explicit ReLU approximants of mixed-smoothness functions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", help="hierarchical surpluses of a target")
    _common(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synthesize", help="build an approximant network")
    _common(p)
    p.add_argument("--construction", choices=list(S.CONSTRUCTIONS), default="continuous_rate")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="evaluate a saved network")
    _common(p)
    p.add_argument("--net", default=None)
    p.add_argument("--points", default=None, help="JSON list of points")
    p.add_argument("--norm", choices=list(NORMS), default=None)
    p.set_defaults(func=cmd_evaluate, target=None)

    p = sub.add_parser("rate-study", help="errors over a budget sweep, CSV plus fitted slopes")
    _common(p)
    p.add_argument("--construction", choices=list(S.CONSTRUCTIONS), default="superconv_lp")
    p.add_argument("--budgets", default=None, help="comma list of NxL, e.g. 1x2,2x2,2x4")
    p.add_argument("--norm", choices=list(NORMS), action="append", default=None)
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.set_defaults(func=cmd_rate_study)

    p = sub.add_parser("verify", help="run invariant suites")
    p.add_argument("--suite", default="all")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=["hat"], default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "command", None) in ("synthesize",) and (args.N is None or args.L is None):
            raise ConfigError("synthesize needs --N and --L")
        return int(args.func(args))
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except SynthesisFailure as exc:
        sys.stderr.write(f"synthesis failed: {exc}\n")
        return EXIT_SYNTHESIS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
