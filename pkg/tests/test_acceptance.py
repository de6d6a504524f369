"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line (shown in the terminal summary) with
the measured quantities, then asserts.
"""
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from korobov_relu import cli
from korobov_relu import metrics as M
from korobov_relu import primitives as P
from korobov_relu import sparse_grid as G
from korobov_relu import synthesis as S
from oracles import gm_grad_cases, staircase


class Checks:
    def __init__(self, store: dict, k: int, title: str) -> None:
        self.store, self.k, self.title = store, k, title
        self.notes: list[str] = []
        self.failed: list[str] = []
        self.t0 = time.perf_counter()

    def check(self, ok: bool, note: str) -> None:
        self.notes.append(note)
        if not ok:
            self.failed.append(note)

    def finish(self) -> None:
        secs = time.perf_counter() - self.t0
        detail = f"{self.title} [{secs:.1f}s] " + "; ".join(self.notes)
        self.store[self.k] = (not self.failed, detail)
        assert not self.failed, "; ".join(self.failed)


def _slope(xs, ys) -> float:
    return float(np.polyfit(np.log2(xs), np.log2(ys), 1)[0])


def _dyadic(n: int, d: int, count: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2**n + 1, (count, d)) / 2.0**n


# ------------------------------------------------------------------ 1
def test_criterion_01_surplus_bound(acceptance):
    c = Checks(acceptance, 1, "surplus bound")
    for name in ("poly", "sine"):
        for d in (1, 2, 3):
            f = G.make_target(name, d)
            t = G.hierarchize(f, 10 - d + 1, d)
            viol = sum(abs(v) > G.surplus_bound(l, f.seminorm) * (1 + 1e-12) for (l, i), v in t.entries.items())
            c.check(viol == 0, f"{name} d={d}: {viol}/{len(t)} violations")
    c.finish()


# ------------------------------------------------------------------ 2
def test_criterion_02_truncation_rate(acceptance):
    c = Checks(acceptance, 2, "sparse-grid truncation rate d=2")
    grid = M.dyadic_grid(2, 9)
    rand = M.sample_points(2, 20000, 0)
    pts = np.concatenate([grid, rand])
    ns = list(range(2, 9))
    for name in ("poly", "sine"):
        f = G.make_target(name, 2)
        fx = f(pts)
        errs = [float(np.max(np.abs(G.interpolant_eval(G.hierarchize(f, n, 2), pts) - fx))) for n in ns]
        slope = float(np.polyfit(ns, np.log2(errs), 1)[0])
        c.check(slope <= -1.8, f"{name}: slope {slope:.3f} (<= -1.8)")
    c.finish()


# ------------------------------------------------------------------ 3
def test_criterion_03_product_nets(acceptance):
    c = Checks(acceptance, 3, "two-factor products")
    axis = np.linspace(-1, 1, 201)
    pts = np.array(list(itertools.product(axis, axis)))
    rng = np.random.default_rng(3)
    for N, L in ((2, 2), (2, 3), (4, 2)):
        net = P.product2_net(P.ProductBudget(N, L))
        v, g = net.value_and_gradient(pts)
        bound = 6.0 * float(N) ** -L
        sup = float(np.max(np.abs(v - pts[:, 0] * pts[:, 1])))
        safe = M.safe_points(net, 20000, seed=N * L, lo=-1, hi=1)
        _, gs = net.value_and_gradient(np.concatenate([pts, safe]))
        allp = np.concatenate([pts, safe])
        gerr = float(np.max(np.abs(gs - allp[:, ::-1])))
        c.check(sup <= bound and gerr <= bound, f"(N,L)=({N},{L}) sup {sup:.3g} grad {gerr:.3g} <= {bound:.3g}")
        z = np.column_stack([np.zeros(1000), rng.uniform(-1, 1, 1000)])
        zv, zg = net.value_and_gradient(z)
        c.check(bool(np.all(zv == 0.0) and np.all(zg[:, 1] == 0.0)), f"(N,L)=({N},{L}) zero slice exact")
    c.finish()


# ------------------------------------------------------------------ 4
def test_criterion_04_multi_product(acceptance):
    c = Checks(acceptance, 4, "multi-factor products")
    rng = np.random.default_rng(4)
    for s in (2, 3, 4):
        net = P.multi_product_net(P.ProductBudget(1, 1, 1.0, s))
        x = rng.random((1000, s))
        k = rng.integers(0, s, 1000)
        x[np.arange(1000), k] = 0.0
        v, g = net.value_and_gradient(x)
        other = np.ones_like(g, dtype=bool)
        other[np.arange(1000), k] = False
        c.check(bool(np.all(v == 0.0) and np.all(g[other] == 0.0)), f"s={s} zero slices exact")
    axis = np.linspace(0, 1, 101)
    grid = np.array(list(itertools.product(axis, axis)))
    for N, L, s in ((1, 1, 2), (2, 1, 2)):
        net = P.multi_product_net(P.ProductBudget(N, L, 1.0, s))
        bound = 10 * (s - 1) * (N + 1.0) ** (-7 * s * L)
        sup = float(np.max(np.abs(net.forward(grid)[:, 0] - grid[:, 0] * grid[:, 1])))
        safe = M.safe_points(net, 5000, seed=N)
        _, g = net.value_and_gradient(safe)
        gerr = float(np.max(np.abs(g - safe[:, ::-1])))
        c.check(sup <= bound and gerr <= bound, f"(N,L,s)=({N},{L},{s}) sup {sup:.3g} grad {gerr:.3g} <= {bound:.3g}")
    c.finish()


# ------------------------------------------------------------------ 5
def test_criterion_05_step_and_bit_extraction(acceptance):
    c = Checks(acceptance, 5, "step / bit extraction")
    rng = np.random.default_rng(5)
    for K in (4, 8, 16):
        delta = 1.0 / (4 * K)
        net = P.step_net(K, delta, 4, 1)
        x = np.concatenate([rng.random(5000), np.arange(K) / K, (np.arange(1, K + 1)) / K - delta])
        want = [staircase(v, K, delta) for v in x]
        keep = np.array([w is not None for w in want])
        got = net.forward(x[keep][:, None])[:, 0]
        exact = bool(np.array_equal(got, np.array([w for w in want if w is not None], dtype=float)))
        c.check(exact, f"K={K} plateaus exact")
    N = L = 2
    for s in (1, 2):
        worst, lo, hi = 0.0, 1.0, 0.0
        for trial in range(5):
            xi = rng.random((N * L) ** 2)
            net = P.bit_extract_net(P.BitExtractSpec(tuple(xi), N, L, s))
            got = net.forward(np.arange(xi.size, dtype=float)[:, None])[:, 0]
            worst = max(worst, float(np.max(np.abs(got - xi))))
            y = net.forward(rng.uniform(-4, xi.size + 4, (2000, 1)))[:, 0]
            lo, hi = min(lo, float(y.min())), max(hi, float(y.max()))
        bound = float(N * L) ** (-2 * s)
        c.check(worst <= bound, f"s={s} memorization {worst:.3g} <= {bound:.3g}")
        c.check(0.0 <= lo and hi <= 1.0, f"s={s} range [{lo:.3g}, {hi:.3g}]")
    c.finish()


# ------------------------------------------------------------------ 6
def test_criterion_06_partition_of_unity(acceptance):
    c = Checks(acceptance, 6, "partition of unity")
    N, L = 2, 1
    K = (N * L) ** 2
    for d in (1, 2):
        ms = list(itertools.product((1, 2), repeat=d))
        nets = {m: P.partition_net(list(m), K, N, L) for m in ms}
        x = _dyadic(20, d, 10000, d)
        ref_sum = sum(S.gm_reference(x, m, K) for m in ms)
        net_sum = sum(nets[m].forward(x)[:, 0] for m in ms)
        c.check(bool(np.all(ref_sum == 1.0) and np.all(net_sum == 1.0)), f"d={d} sum exactly 1 at 10^4 dyadic points")
        rnd = np.random.default_rng(60 + d).random((10000, d))
        bound = 50 * d**2.5 * (N + 1.0) ** (-4 * d * L)
        worst = 0.0
        vanish = True
        for m in ms:
            v, g = nets[m].value_and_gradient(rnd)
            off = ~S.omega_m_contains(rnd, m, K)
            vanish &= bool(np.all(v[off] == 0.0) and np.all(g[off] == 0.0))
            worst = max(worst, float(np.max(np.abs(v - S.gm_reference(rnd, m, K)))))
            safe = M.safe_points(nets[m], 2000, seed=d)
            _, gs = nets[m].value_and_gradient(safe)
            ref = np.array([gm_grad_cases(p, m, K) for p in safe])
            worst = max(worst, float(np.max(np.abs(gs - ref))))
        c.check(vanish, f"d={d} value and gradient vanish off Omega_m")
        c.check(worst <= bound, f"d={d} W1inf distance {worst:.3g} <= {bound:.3g}")
    c.finish()


# ------------------------------------------------------------------ 7
def test_criterion_07_continuous_rate(acceptance):
    c = Checks(acceptance, 7, "continuous-rate approximant")
    budgets = [2, 4, 8, 16]
    rng = np.random.default_rng(7)
    for d in (1, 2):
        f = G.make_target("poly", d)
        h1, l2 = [], []
        boundary_ok = True
        for NL in budgets:
            net = S.synth_continuous(f, NL, 1, d).net
            h1.append(M.h1_error(f, net, 10000, 1).estimate)
            l2.append(M.lp_error(f, net, 2.0, 10000, 1).estimate)
            b = rng.random((1000, d))
            b[np.arange(1000), rng.integers(0, d, 1000)] = rng.integers(0, 2, 1000).astype(float)
            boundary_ok &= bool(np.all(net.forward(b)[:, 0] == 0.0))
        sh, sl = _slope(budgets, h1), _slope(budgets, l2)
        c.check(sh <= -0.9, f"d={d} H1 slope {sh:.3f} (<= -0.9)")
        c.check(sl <= -1.8, f"d={d} L2 slope {sl:.3f} (<= -1.8)")
        c.check(boundary_ok, f"d={d} boundary zeros exact")
    c.finish()


# ------------------------------------------------------------------ 8
def test_criterion_08_superconvergent_lp(acceptance):
    c = Checks(acceptance, 8, "super-convergent L_p approximant")
    for d, budgets in ((1, [2, 4, 8, 16]), (2, [2, 4, 8])):
        f = G.make_target("sine", d, normalize=True)
        errs = []
        agree = 0.0
        for NL in budgets:
            approx = S.synth_superconv_lp(f, NL, 1, d)
            region = S.TriflingRegion(int(approx.budget.n), d)
            errs.append(M.sup_error(f, approx.net, region, 20000, 2).estimate)
            x = M.Domain.trifling(region).filter(M.sample_points(d, 5000, 3))
            agree = max(agree, float(np.max(np.abs(approx.net.forward(x) - approx.pre_extension.forward(x)))))
        sl = _slope(budgets, errs)
        c.check(sl <= -3.5, f"d={d} sup-on-Omega_delta slope {sl:.3f} (<= -3.5)")
        c.check(agree <= 1e-12, f"d={d} extension gap {agree:.3g}")
    c.finish()


# ------------------------------------------------------------------ 9
def test_criterion_09_superconvergent_h1(acceptance):
    c = Checks(acceptance, 9, "super-convergent H1 approximant")
    f = G.make_target("sine", 1, normalize=True)
    budgets = [2, 4, 8, 16]
    errs = []
    vanish = True
    x = np.random.default_rng(9).random((5000, 1))
    for NL in budgets:
        approx = S.synth_superconv_h1(f, NL, 1, 1)
        errs.append(M.h1_error(f, approx.net, 20000, 4).estimate)
        K = approx.details["K"]
        for m, summand in zip(itertools.product((1, 2), repeat=1), approx.summands):
            off = ~S.omega_m_contains(x, m, K)
            v, g = summand.value_and_gradient(x[off])
            vanish &= bool(np.all(v == 0.0) and np.all(g == 0.0))
    sl = _slope(budgets, errs)
    c.check(sl <= -1.8, f"H1 slope {sl:.3f} (<= -1.8)")
    c.check(vanish, "summands vanish with zero gradient off Omega_m")
    c.finish()


# ------------------------------------------------------------------ 10
def _constructions():
    sine1 = G.make_target("sine", 1, normalize=True)
    sine2 = G.make_target("sine", 2, normalize=True)
    step = P.step_net(8, 1 / 64, 2, 2)
    return {
        "teeth": (P.teeth_net(3), -1, 1),
        "square": (P.square_net(2, 2), -1, 1),
        "product2": (P.product2_net(P.ProductBudget(2, 2)), -1, 1),
        "multi_product": (P.multi_product_net(P.ProductBudget(1, 1, 1.0, 3)), 0, 1),
        "hat1d": (P.hat1d_net(3, 5), 0, 1),
        "grid_basis": (P.grid_basis_net((2, 1), (3, 1), 1, 1), 0, 1),
        "hat_train": (P.periodic_hat_train_net(4, 2), 0, 1),
        "step": (step, 0, 1),
        "bit_extract": (P.bit_extract_net(list(np.linspace(0, 1, 16)), 2, 2, 2), 0, 15),
        "partition": (P.partition_net([2, 1], 4, 2, 1), 0, 1),
        "mid_extend": (P.mid_extend_net(step, 8, 1 / 48, 1), 0, 1),
        "continuous_rate d=2": (S.synth_continuous(G.poly_target(2), 4, 1, 2).net, 0, 1),
        "superconv_lp d=1": (S.synth_superconv_lp(sine1, 4, 1, 1).net, 0, 1),
        "superconv_lp d=2": (S.synth_superconv_lp(sine2, 2, 1, 2).net, 0, 1),
        "superconv_h1 d=1": (S.synth_superconv_h1(sine1, 4, 1, 1).net, 0, 1),
    }


def test_criterion_10_gradient_integrity(acceptance):
    c = Checks(acceptance, 10, "gradient integrity")
    for name, (net, lo, hi) in _constructions().items():
        pts = M.safe_points(net, 1000, seed=10, lo=lo, hi=hi)
        dev = M.gradient_check(net, pts)
        c.check(dev <= 1e-6, f"{name} {dev:.2g}")
    c.finish()


# ------------------------------------------------------------------ 11
def _cli_outputs(root: Path) -> dict[str, bytes]:
    root.mkdir()
    runs = [
        ["decompose", "--target", "sine", "--d", "2", "--n", "4", "--out", root / "dec.json"],
        ["synthesize", "--construction", "continuous_rate", "--d", "2", "--N", "2", "--L", "1", "--out", root / "c.json"],
        ["synthesize", "--construction", "superconv_lp", "--target", "sine", "--normalize", "--N", "2", "--L", "2",
         "--out", root / "lp.json"],
        ["synthesize", "--construction", "superconv_h1", "--target", "sine", "--normalize", "--N", "2", "--L", "1",
         "--out", root / "h1.json"],
        ["evaluate", "--net", root / "c.json", "--samples", "200", "--seed", "3", "--out", root / "ev.json"],
        ["evaluate", "--net", root / "h1.json", "--target", "sine", "--normalize", "--norm", "h1", "--samples", "500",
         "--seed", "3", "--out", root / "ev_h1.json"],
        ["rate-study", "--construction", "superconv_lp", "--target", "sine", "--normalize", "--budgets", "1x2,2x2,2x4",
         "--norm", "sup", "--norm", "l2", "--samples", "1000", "--seed", "3", "--out", root / "rs.csv"],
        ["verify", "--suite", "all", "--out", root / "verify.json"],
    ]
    for argv in runs:
        assert cli.main([str(a) for a in argv]) == 0, argv[0]
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_criterion_11_determinism(acceptance, tmp_path):
    c = Checks(acceptance, 11, "CLI determinism")
    first = _cli_outputs(tmp_path / "a")
    second = _cli_outputs(tmp_path / "b")
    same = [k for k in first if first[k] == second.get(k)]
    c.check(len(same) == len(first) == len(second), f"{len(same)}/{len(first)} output files byte-identical")
    c.finish()


@pytest.fixture(autouse=True)
def _quiet_warnings(recwarn):
    yield
