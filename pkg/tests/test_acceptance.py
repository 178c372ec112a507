"""End-to-end acceptance checks, one test (or parametrised group) per criterion."""

import math
import time

import numpy as np
import pytest
from scipy import optimize

from obslab.cli import execute, load_config, random_pairs, random_triples
from obslab.evolution import cocycle_residual, kernel, verify_gaussian_bound
from obslab.observability import (HypothesisConstants, cobs_explicit, interpolation_combine, lebesgue_chain)
from obslab.ou import (MatrixTrack, OUSystem, kalman_generalized, kolmogorov_form, liouville_check,
                       norm_bound_check, quad_form, solve_transition)
from obslab.observability import observability_candidates
from obslab.spectral import Field, GridSpec, lp_norm, project_smooth, projector_kernel_l1
from obslab.symbol import NonAutonomousSymbol

from oracles import cobs_reference

CONFIG = load_config()
PRESETS = CONFIG["presets"]
ELLIPTIC = ["heat", "quartic"]


def preset_symbol(name):
    s = PRESETS[name]["symbol"]
    coeffs = {}
    for k, v in s["xi_coefficients"].items():
        coeffs[tuple(int(c) for c in k.split(","))] = np.asarray(v, dtype=float)
    return NonAutonomousSymbol.from_xi_coefficients(s["d"], s["m"], s["T"], coeffs)


def preset_grid(sec, d=1):
    return GridSpec(d, sec["X"], sec["N"])


@pytest.mark.criterion(1, "cocycle exactness < 1e-12 over 100 triples, heat and quartic, < 10 s")
@pytest.mark.parametrize("name", ELLIPTIC)
def test_cocycle_exactness(name):
    sym = preset_symbol(name)
    grid = GridSpec(1, 16.0, 1024)
    t0 = time.perf_counter()
    worst = max(cocycle_residual(sym, grid, r, s, t) for r, s, t in random_triples(sym.T, 100, 0))
    elapsed = time.perf_counter() - t0
    print(f"{name}: max residual {worst:.3e}, {elapsed:.2f} s")
    assert worst < 1e-12 and elapsed < 10


@pytest.mark.criterion(2, "heat kernel at tau = 1/4 matches the closed form to 1e-8 (X = 20, N = 2048)")
def test_heat_kernel_oracle():
    grid = GridSpec(1, 20.0, 2048)
    p = kernel(preset_symbol("heat"), 0.0, 0.25, grid).values
    ref = (4 * np.pi * 0.25) ** -0.5 * np.exp(-grid.x1 ** 2)
    err = float(np.max(np.abs(p - ref)))
    print(f"max abs error {err:.3e}")
    assert err < 1e-8


@pytest.mark.criterion(3, "Gaussian kernel bound with C2 = (2^(m-1) - 1) / 2^m on 20 pairs, heat and quartic")
@pytest.mark.parametrize("name", ELLIPTIC)
def test_gaussian_bound(name):
    sym = preset_symbol(name)
    grid = preset_grid(PRESETS[name]["kernel"]["grid"])
    reports = [verify_gaussian_bound(sym, s, t, grid) for s, t in random_pairs(sym.T, 20, 0)]
    worst = max(r.max_ratio for r in reports)
    print(f"{name}: C2 = {reports[0].C2}, worst pointwise ratio {worst:.3e}, "
          f"all L1 bounds hold: {all(r.l1_norm <= r.l1_bound for r in reports)}")
    assert all(r.passed for r in reports)


@pytest.mark.criterion(4, "dissipation exponents within 10% and envelope dominates all samples, < 60 s")
@pytest.mark.parametrize("name", ELLIPTIC)
def test_dissipation_exponents(name, tmp_path):
    t0 = time.perf_counter()
    status, rec = execute(CONFIG, "dissipation", preset=name, out=tmp_path)
    elapsed = time.perf_counter() - t0
    o = rec.outputs
    m = PRESETS[name]["symbol"]["m"]
    print(f"{name}: gamma2_fit {o['gamma2_fit']:.4f} (m = {m}), gamma3_fit {o['gamma3_fit']:.4f}, "
          f"dominates {o['dominates']}, {elapsed:.1f} s")
    assert abs(o["gamma2_fit"] - m) <= 0.1 * m
    assert abs(o["gamma3_fit"] - 1) <= 0.1
    assert o["dominates"] and status == 0 and elapsed < 60


@pytest.mark.criterion(5, "P_mu P_lam = P_lam for mu >= 2 lam; projector norm bound on 200 fields, p in {1, 2, inf}")
def test_projector_algebra():
    rng = np.random.default_rng(0)
    grid = GridSpec(1, 16.0, 1024)
    f = Field(grid, rng.standard_normal((8, grid.N)))
    worst = 0.0
    for _ in range(20):
        lam = rng.uniform(0.5, 40.0)
        mu = lam * rng.uniform(2.0, 4.0)
        a = project_smooth(f, lam).values
        b = project_smooth(project_smooth(f, lam), mu).values
        worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(a))))
    K = projector_kernel_l1(1)
    fields = Field(grid, rng.standard_normal((200, grid.N)) * np.exp(-grid.x1 ** 2 / 20))
    excess = 0.0
    for p in (1.0, 2.0, math.inf):
        lam = rng.uniform(0.5, 40.0)
        ratio = lp_norm(project_smooth(fields, lam), p) / lp_norm(fields, p)
        excess = max(excess, float(np.max(ratio)) / K)
    print(f"absorption residual {worst:.2e}; max ||P f||_p / (K ||f||_p) = {excess:.4f} with K = {K:.4f}")
    assert worst < 1e-12 and excess <= 1.0


def _tightest_F2(F1, G, D, C, theta):
    """Largest F2 allowed by both hypotheses, minimising over eps in (0, 1] numerically."""
    a = theta / (1 - theta)

    def f(u):
        eps = math.exp(u)
        return C * (eps ** (-a) * G + eps * F1)

    # the minimiser lies at |log eps| <= (1 - theta) |log(theta G / ((1 - theta) F1))|, well inside this range
    lo = max(-60.0, -700.0 / (1 + a))
    res = optimize.minimize_scalar(f, bounds=(lo, 0.0), method="bounded", options={"xatol": 1e-13})
    return min(D * F1, float(res.fun), f(0.0))


@pytest.mark.criterion(6, "interpolation lemma: 1e4 constructed instances, no violation")
def test_interpolation_lemma():
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(10_000):
        theta = rng.uniform(0.02, 0.98)
        F1, G = 10 ** rng.uniform(-6, 6, 2)
        D, C = 10 ** rng.uniform(-3, 3, 2)
        F2 = _tightest_F2(F1, G, D, C, theta) * rng.choice([1.0, rng.uniform(0, 1)])
        if not interpolation_combine(F1, G, D, C, theta, F2=F2).holds:
            violations += 1
    print(f"violations: {violations} / 10000")
    assert violations == 0


def _random_constants(rng):
    g1 = rng.uniform(0.5, 2.0)
    return HypothesisConstants(d0=rng.uniform(1, 20), d1=rng.uniform(0.01, 3), gamma1=g1,
                               d2=rng.uniform(1, 20), d3=rng.uniform(0.05, 2), gamma2=g1 + rng.uniform(0.5, 3),
                               gamma3=rng.uniform(0.5, 1.5), M=rng.uniform(1, 3), omega=rng.uniform(-1, 2),
                               c_norm=rng.uniform(0, 2), theta=rng.uniform(0.1, 0.9))


@pytest.mark.criterion(7, "explicit constant matches an independent re-evaluation to 1e-12 on 100 draws; q in (0, 1)")
def test_explicit_constants():
    rng = np.random.default_rng(7)
    worst, qs = 0.0, []
    for _ in range(100):
        hc = _random_constants(rng)
        T, r = rng.uniform(0.05, 5.0), rng.choice([1.0, 2.0, 4.0, math.inf])
        res = cobs_explicit(hc, T, r)
        ref, q_ref, *_ = cobs_reference(hc, T, r)
        worst = max(worst, abs(res.log_cobs - ref) / abs(ref), abs(res.q - q_ref) / q_ref)
        qs.append(res.q)
    print(f"max relative deviation {worst:.2e}; q range [{min(qs):.4f}, {max(qs):.6f}]")
    assert worst < 1e-12 and all(0 < q < 1 for q in qs)


@pytest.mark.criterion(8, "density chain on [0, 1] with q = 1/2 and on three intervals covering 30%")
def test_lebesgue_chain():
    full = lebesgue_chain([(0.0, 1.0)], 0.5, depth=10)
    assert full.points == tuple(0.5 ** m for m in range(11))
    assert min(full.densities) >= 1 / 3
    E = [(0.05, 0.15), (0.4, 0.5), (0.7, 0.8)]
    ch = lebesgue_chain(E, 0.5, depth=10)
    print(f"three intervals: limit point {ch.ell}, first point {ch.points[0]}, min density {min(ch.densities):.3f}")
    assert ch.depth == 10 and min(ch.densities) >= 1 / 3


@pytest.mark.criterion(9, "heat observability: sup ratio over 500 candidates <= explicit constant, < 5 min")
def test_heat_observability(tmp_path):
    t0 = time.perf_counter()
    status, rec = execute(CONFIG, "observe", preset="heat", out=tmp_path)
    elapsed = time.perf_counter() - t0
    o = rec.outputs
    print(f"max ratio {o['max_ratio']:.4f} vs C_obs = exp({o['log_cobs']:.4f}); {elapsed:.1f} s")
    assert len(rec.tables["ratios"]) == 500
    assert status == 0 and math.log(o["max_ratio"]) <= o["log_cobs"] and elapsed < 300


@pytest.mark.criterion(10, "marching bump on a left-half sensor: growth > 10 with leakage < 1e-10")
def test_thickness_converse(tmp_path):
    status, rec = execute(CONFIG, "falsify", preset="falsify", out=tmp_path)
    o = rec.outputs
    print(f"growth {o['growth']:.3e}, leakage {o['leakage']:.2e}")
    assert status == 0 and o["growth"] > 10 and o["leakage"] < 1e-10


@pytest.mark.criterion(11, "OU identities: Liouville < 1e-9, transition cocycle < 1e-10, Kolmogorov form < 1e-10")
def test_ou_identities():
    rng = np.random.default_rng(11)
    liou, coc = 0.0, 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        sys = OUSystem(MatrixTrack.constant(np.eye(d)), MatrixTrack.constant(rng.standard_normal((d, d))), 1.0)
        r, s, t = np.sort(rng.uniform(0, 1, 3))
        liou = max(liou, liouville_check(sys, r, t))
        R = solve_transition(sys, r, t)
        coc = max(coc, float(np.linalg.norm(R - solve_transition(sys, s, t) @ solve_transition(sys, r, s))
                             / np.linalg.norm(R)))
    kol = OUSystem.kolmogorov(1, 1.0)
    qerr = 0.0
    for _ in range(50):
        s, t = np.sort(rng.uniform(0, 1, 2))
        xi, eta = rng.standard_normal(2)
        ref = kolmogorov_form(t - s, np.array([xi]), np.array([eta]))
        qerr = max(qerr, abs(float(quad_form(kol, s, t, [xi, eta]) - ref)) / abs(float(ref)))
    print(f"Liouville {liou:.2e}, cocycle {coc:.2e}, Kolmogorov form {qerr:.2e}")
    assert liou < 1e-9 and coc < 1e-10 and qerr < 1e-10


@pytest.mark.criterion(12, "Kalman: Kolmogorov rank 2d at k <= 1; A = 0 fails; A = Id, B = 0 rank d at k = 0")
def test_kalman():
    kol = kalman_generalized(OUSystem.kolmogorov(1, 1.0))
    zero = kalman_generalized(OUSystem(MatrixTrack.constant(np.zeros((2, 2))),
                                       MatrixTrack.constant([[0.0, 1.0], [0.0, 0.0]]), 1.0))
    ident = kalman_generalized(OUSystem(MatrixTrack.constant(np.eye(3)), MatrixTrack.constant(np.zeros((3, 3))),
                                        1.0))
    print(f"Kolmogorov rank {kol.rank} at k = {kol.k_used}; A = 0: {zero.status}; identity: rank {ident.rank}")
    assert kol.satisfied and kol.rank == 2 and kol.k_used <= 1
    assert zero.status == "fails"
    assert ident.satisfied and ident.rank == 3 and ident.k_used == 0


@pytest.mark.criterion(13, "OU L^p norm bound on 1e3 samples; Kolmogorov p-sweep bounded by 1")
def test_ou_norm_bound():
    rng = np.random.default_rng(13)
    grid = GridSpec(2, 10.0, 64)
    fields, _ = observability_candidates(grid, 100, seed=13, kinds=("packet",), band=2.0,
                                         sigma_range=(1.0, 1.3), center_fraction=0.1)
    worst, n = 0.0, 0
    for _ in range(10):
        B = 0.3 * rng.standard_normal((2, 2))
        A = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
        sys = OUSystem(MatrixTrack.constant(A), MatrixTrack.constant(B), 1.0)
        s = rng.uniform(0, 0.3)
        t = s + rng.uniform(0.05, 0.3)
        p = float(rng.choice([1.0, 1.25, 2.0, 4.0, math.inf]))
        rep = norm_bound_check(sys, s, t, p, fields)
        worst = max(worst, rep.max_ratio_over_bound)
        n += rep.ratios.size
    kol = OUSystem.kolmogorov(1, 0.5)
    sweep = {p: norm_bound_check(kol, 0.0, 0.5, p, Field(grid, fields.values[:24]))
             for p in (1.25, 2.0, 4.0)}
    sweep_max = {p: float(np.max(r.ratios)) for p, r in sweep.items()}
    print(f"{n} samples, max ratio / bound {worst:.6f}; Kolmogorov sweep {sweep_max}")
    assert n == 1000 and worst <= 1 + 1e-10
    assert all(r.bound == 1.0 and v <= 1 + 1e-10 for (p, r), v in zip(sweep.items(), sweep_max.values()))


@pytest.mark.criterion(14, "Kolmogorov observability ratio finite and stable (< 2x) over three refinements")
def test_ou_observability(tmp_path):
    status, rec = execute(CONFIG, "ou-observe", preset="kolmogorov", out=tmp_path)
    o = rec.outputs
    print(f"max ratios {o['max_ratios']} on N = {PRESETS['kolmogorov']['refinements']}; growth {o['growth']:.4f}; "
          f"{o['note']}")
    assert PRESETS["kolmogorov"]["refinements"][-1] == 256
    assert status == 0 and all(math.isfinite(v) for v in o["max_ratios"]) and o["growth"] < 2


@pytest.mark.criterion(15, "two seeded runs of the heat observability check give byte-identical ratio tables")
def test_determinism(tmp_path):
    for run in ("a", "b"):
        execute(CONFIG, "observe", preset="heat", seed=0, out=tmp_path / run)
    a = (tmp_path / "a" / "observe-heat-ratios.csv").read_bytes()
    b = (tmp_path / "b" / "observe-heat-ratios.csv").read_bytes()
    print(f"{len(a)} bytes, identical: {a == b}")
    assert a == b
