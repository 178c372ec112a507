"""Command line front end: presets, config parsing and one function per subcommand.

Every subcommand writes a :class:`~obslab.report.RunRecord` as JSON plus one
CSV per curve and ratio table.  Exit status is 0 when every asserted
invariant holds, 1 when one fails (the witness is serialised in the record)
and 2 for a malformed or incomplete configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import report
from .errors import (AliasingError, ChainTruncatedError, ConfigError, DomainError, EllipticityError,
                     HypothesisViolation, IntegrationError, UsageError)
from .evolution import (cocycle_residual, fit_exponential_bound, generator_consistency, heat_kernel,
                        kernel, gaussian_envelope, propagate, verify_gaussian_bound)
from .observability import (HypothesisConstants, assemble_constants, cobs_chain, cobs_explicit,
                            empirical_ratio, estimate_dissipation, estimate_uncertainty,
                            falsify_mean_thickness, merge_intervals, observability_candidates)
from .ou import (MatrixTrack, OUSystem, fit_ou_l2_dissipation, kalman_generalized, kolmogorov_form,
                 liouville_check, norm_bound_check, ou_propagate, quad_form, solve_transition)
from .spectral import Field, GridSpec
from .symbol import NonAutonomousSymbol, garding_lower_bound, principal_symbol, sphere_directions
from .thickness import SetFamily, is_mean_thick, is_uniformly_thick, window_fractions

COMMANDS = ("ellipticity", "kernel-check", "propagate", "thickness", "uncertainty", "dissipation",
            "cobs", "observe", "falsify", "ou-check", "ou-observe")
DEFAULT_PRESET = {"ou-check": "kolmogorov", "ou-observe": "kolmogorov", "falsify": "falsify"}
OUT_ENV = "OBSLAB_OUT"

# failures of a mathematical invariant, as opposed to bad input
INVARIANT_ERRORS = (HypothesisViolation, EllipticityError, AliasingError, ChainTruncatedError,
                    IntegrationError)

_MISSING = object()


# -- config access ------------------------------------------------------------------

class Section:
    """Read-only view of a config mapping that reports missing or mistyped fields by path."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        self.data = data
        self.path = path

    def __contains__(self, key):
        return key in self.data

    def _at(self, key):
        return f"{self.path}.{key}"

    def get(self, key, default=_MISSING):
        if key in self.data:
            return self.data[key]
        if default is _MISSING:
            raise ConfigError(f"{self._at(key)}: missing required field")
        return default

    def sub(self, key, default=_MISSING) -> "Section":
        return Section(self.get(key, default), self._at(key))

    def num(self, key, default=_MISSING) -> float:
        return _number(self.get(key, default), self._at(key))

    def int(self, key, default=_MISSING) -> int:
        v = self.get(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{self._at(key)}: expected an integer, got {v!r}")
        return v

    def array(self, key, default=_MISSING) -> np.ndarray:
        return _array(self.get(key, default), self._at(key))


def _number(v, path) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _array(v, path) -> np.ndarray:
    """A list of numbers or ``{"geomspace" | "linspace": [start, stop, n]}``."""
    if isinstance(v, dict):
        if len(v) != 1 or next(iter(v)) not in ("geomspace", "linspace"):
            raise ConfigError(f"{path}: expected a list or {{geomspace|linspace: [a, b, n]}}")
        kind, spec = next(iter(v.items()))
        if not isinstance(spec, list) or len(spec) != 3:
            raise ConfigError(f"{path}.{kind}: expected [start, stop, count]")
        a, b = _number(spec[0], f"{path}.{kind}[0]"), _number(spec[1], f"{path}.{kind}[1]")
        n = spec[2]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"{path}.{kind}[2]: expected a positive integer count")
        if kind == "geomspace" and (a <= 0 or b <= 0):
            raise ConfigError(f"{path}.geomspace: endpoints must be positive")
        return getattr(np, kind)(a, b, n)
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a nonempty list of numbers")
    return np.array([_number(x, f"{path}[{i}]") for i, x in enumerate(v)])


def _coefficient(v, path):
    if isinstance(v, dict):
        unknown = set(v) - {"re", "im"}
        if unknown or not v:
            raise ConfigError(f"{path}: complex coefficients use keys 're' and 'im'")
        re = _array(v["re"], f"{path}.re") if isinstance(v.get("re"), list) else \
            np.array([_number(v.get("re", 0.0), f"{path}.re")])
        im = _array(v["im"], f"{path}.im") if isinstance(v.get("im"), list) else \
            np.array([_number(v.get("im", 0.0), f"{path}.im")])
        if re.size != im.size and min(re.size, im.size) != 1:
            raise ConfigError(f"{path}: 're' and 'im' have different piece counts")
        return re + 1j * im
    if isinstance(v, list):
        return _array(v, path)
    return np.array([_number(v, path)])


def _build(path, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (UsageError, DomainError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_symbol(sec: Section) -> NonAutonomousSymbol:
    """Symbol from ``{"d", "m", "T", "xi_coefficients": {"i,j": value}}``.

    Keys are comma-separated multi-indices; values are numbers, lists of
    piece values (uniform pieces on ``[0, T]``) or ``{"re": ..., "im": ...}``.
    Coefficients multiply ``xi^alpha``.
    """
    d, m, T = sec.int("d"), sec.int("m"), sec.num("T")
    raw = sec.sub("xi_coefficients")
    coeffs = {}
    for key, val in raw.data.items():
        try:
            alpha = tuple(int(k) for k in str(key).split(","))
        except ValueError:
            raise ConfigError(f"{raw.path}.{key}: multi-index keys are comma-separated integers") from None
        coeffs[alpha] = _coefficient(val, f"{raw.path}.{key}")
    return _build(sec.path, NonAutonomousSymbol.from_xi_coefficients, d, m, T, coeffs)


def build_grid(sec: Section, d: int) -> GridSpec:
    return _build(sec.path, GridSpec, d, sec.num("X"), sec.int("N"))


def build_sets(sec: Section, grid: GridSpec, T: float) -> SetFamily:
    """Set family from ``{"type": periodic_intervals | halfline | left_half | full | boxes, ...}``.

    ``{"pattern": "halfline_example"}`` is accepted as a synonym for the half-line family.
    """
    if "pattern" in sec and "type" not in sec:
        if sec.get("pattern") != "halfline_example":
            raise ConfigError(f"{sec.path}.pattern: unknown pattern {sec.get('pattern')!r}")
        kind = "halfline"
    else:
        kind = sec.get("type")
    if kind == "periodic_intervals":
        return _build(sec.path, SetFamily.periodic_intervals, grid, T, period=sec.num("period", 1.0),
                      fraction=sec.num("fraction", 0.5), velocity=sec.num("velocity", 0.0),
                      n_times=sec.int("n_times", 1), axis=sec.int("axis", 0))
    if kind == "halfline":
        return _build(sec.path, SetFamily.halfline_example, grid, T, axis=sec.int("axis", 0))
    if kind == "left_half":
        return SetFamily.constant(grid, T, grid.x[sec.int("axis", 0)] < -0.5 * grid.h)
    if kind == "full":
        return SetFamily.constant(grid, T, np.ones(grid.shape, dtype=bool))
    if kind == "boxes":
        pieces = sec.get("pieces")
        if not isinstance(pieces, list) or not pieces:
            raise ConfigError(f"{sec.path}.pieces: expected a list of box lists, one per time piece")
        return _build(sec.path, SetFamily.from_boxes, grid, T, pieces)
    raise ConfigError(f"{sec.path}.type: unknown set family {kind!r}")


def _matrix_track(v, path) -> MatrixTrack:
    try:
        if isinstance(v, dict):
            if "polynomial" in v:
                return MatrixTrack.polynomial(v["polynomial"])
            if "trig" in v:
                t = Section(v["trig"], f"{path}.trig")
                return MatrixTrack.trig(t.get("M0"), t.get("Mc"), t.get("Ms"), t.num("freq"))
            raise ConfigError(f"{path}: matrix tracks are a matrix, {{polynomial: ...}} or {{trig: ...}}")
        return MatrixTrack.constant(v)
    except (UsageError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def build_ou(sec: Section) -> OUSystem:
    """OU system from ``{"preset": "kolmogorov", "n", "T"}`` or ``{"A", "B", "T"}``.

    ``eps_window`` defaults to ``T``, the window on which the Kolmogorov
    quadratic form is known to be definite.
    """
    T = sec.num("T")
    eps = sec.num("eps_window", T)
    if sec.get("preset", None) == "kolmogorov":
        return _build(sec.path, OUSystem.kolmogorov, sec.int("n", 1), T, eps)
    if "preset" in sec:
        raise ConfigError(f"{sec.path}.preset: unknown OU preset {sec.get('preset')!r}")
    A = _matrix_track(sec.get("A"), f"{sec.path}.A")
    B = _matrix_track(sec.get("B"), f"{sec.path}.B")
    return _build(sec.path, OUSystem, A, B, T, eps)


def load_config(path=None) -> dict:
    """Parse a config file; ``None`` loads the packaged presets."""
    if path is None:
        text = resources.files("obslab").joinpath("presets.json").read_text()
        name = "presets.json"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        name = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("presets"), dict):
        raise ConfigError(f"{name}: top level must be an object with a 'presets' object")
    return data


def apply_overrides(cfg: dict, sets: dict) -> dict:
    """Return a copy of ``cfg`` with dotted-path assignments applied."""
    cfg = json.loads(json.dumps(cfg))
    for dotted, value in sets.items():
        keys = dotted.split(".")
        node = cfg
        for k in keys[:-1]:
            nxt = node.get(k)
            if nxt is None:
                nxt = node[k] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"--set {dotted}: '{k}' is not an object")
            node = nxt
        node[keys[-1]] = value
    return cfg


def parse_assignment(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set {text!r}: expected key=value")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


# -- subcommands -----------------------------------------------------------------

@dataclass
class Context:
    preset: str
    seed: int
    workers: int


def _result(passed, outputs, tables=None, curves=None, witness=None):
    return {"passed": bool(passed), "outputs": outputs, "tables": tables or {}, "curves": curves or {},
            "witness": witness}


def _gaussian_field(grid: GridSpec, sigma: float, center) -> Field:
    c = np.broadcast_to(np.asarray(center, float), (grid.d,))
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.x, c))
    return Field(grid, np.exp(-r2 / (2 * sigma * sigma)))


def random_pairs(T: float, n: int, seed: int, min_gap: float = 0.05) -> list:
    """``n`` reproducible pairs ``0 <= s < t <= T`` with ``t - s >= min_gap``."""
    rng = np.random.default_rng([seed, 1])
    out = []
    for _ in range(n):
        s = rng.uniform(0.0, T - min_gap)
        t = rng.uniform(s + min_gap, T)
        out.append((float(s), float(t)))
    return out


def random_triples(T: float, n: int, seed: int) -> list:
    rng = np.random.default_rng([seed, 2])
    return [tuple(float(v) for v in np.sort(rng.uniform(0.0, T, 3))) for _ in range(n)]


def cmd_ellipticity(cfg: Section, ctx: Context):
    sym = build_symbol(cfg.sub("symbol"))
    cert = sym.certificate()
    out = {"c": cert.c, "elliptic": cert.elliptic, "n_directions": cert.n_directions,
           "n_times": cert.n_times, "worst_time": cert.worst_time,
           "worst_direction": list(cert.worst_direction)}
    dirs = sphere_directions(sym.d, cert.n_directions)
    times = sym.piece_midpoints()
    mins = [float(principal_symbol(sym, t, dirs).real.min()) for t in times]
    curves = {"principal_minimum": {"t": times.tolist(), "min_re_principal": mins}}
    if not cert.elliptic:
        return _result(False, out, curves=curves,
                       witness={"time": cert.worst_time, "direction": list(cert.worst_direction),
                                "re_principal": cert.c})
    c0 = cfg.num("c0_fraction", 0.9) * cert.c
    g = garding_lower_bound(sym, c0, cert.c)
    out.update({"c0": c0, "omega": g.omega, "garding_radius": g.radius, "omega_time": g.argmax_time})
    return _result(True, out, curves=curves)


def cmd_kernel_check(cfg: Section, ctx: Context):
    sym = build_symbol(cfg.sub("symbol"))
    ksec = cfg.sub("kernel")
    grid = build_grid(ksec.sub("grid"), sym.d)
    pairs = random_pairs(sym.T, ksec.int("n_pairs", 20), ctx.seed)
    reps = [verify_gaussian_bound(sym, s, t, grid) for s, t in pairs]
    rows = report.ratio_rows(range(len(pairs)), [t - s for s, t in pairs],
                             [r.max_ratio for r in reps], [1.0] * len(reps))
    csec = cfg.sub("cocycle", {})
    triples = random_triples(sym.T, csec.int("n_triples", 100), ctx.seed)
    coc = max(cocycle_residual(sym, grid, r, s, t) for r, s, t in triples)
    tol = csec.num("tol", 1e-12)
    first = reps[0]
    p0 = kernel(sym, *pairs[0], grid)
    env = gaussian_envelope(grid, first.tau, sym.m, first.C1, first.C2, first.omega)
    out = {"C1": first.C1, "C2": first.C2, "omega": first.omega, "c0": first.c0,
           "max_gaussian_ratio": max(r.max_ratio for r in reps),
           "kernel_l1": [r.l1_norm for r in reps], "cocycle_residual": coc, "cocycle_tol": tol}
    heat = sym.d == 1 and set(sym.coeffs) == {(2,)} and bool(np.all(sym.coeffs[(2,)].values == -1))
    if heat and sym.T >= 0.25:
        err = float(np.max(np.abs(kernel(sym, 0.0, 0.25, grid).values - heat_kernel(grid, 0.25))))
        out["heat_kernel_error"] = err
    curves = {"kernel": {"x": grid.x1.tolist(), "abs_kernel": np.abs(p0.values).tolist(),
                         "envelope": env.tolist()}}
    failing = [i for i, r in enumerate(reps) if not r.passed]
    witness = None
    if failing:
        i = failing[0]
        witness = {"s": pairs[i][0], "t": pairs[i][1], "max_ratio": reps[i].max_ratio}
    elif coc >= tol:
        witness = {"cocycle_residual": coc}
    return _result(not failing and coc < tol, out, {"gaussian": rows}, curves, witness)


def cmd_propagate(cfg: Section, ctx: Context):
    sym = build_symbol(cfg.sub("symbol"))
    grid = build_grid(cfg.sub("grid"), sym.d)
    isec = cfg.sub("initial", {})
    f = _gaussian_field(grid, isec.num("sigma", 1.0), isec.get("center", 0.0))
    times = isec.array("times", [sym.T])
    u = [propagate(sym, 0.0, float(t), f) for t in times]
    h = isec.num("fd_step", 1e-4)
    gtol = isec.num("generator_tol", 1e-5)
    gens = [generator_consistency(sym, 0.0, float(t), f, h) for t in times]
    csec = cfg.sub("cocycle", {})
    triples = random_triples(sym.T, csec.int("n_triples", 100), ctx.seed)
    coc = max(cocycle_residual(sym, grid, r, s, t) for r, s, t in triples)
    tol = csec.num("tol", 1e-12)
    curves = {"norms": {"t": times.tolist(), "l2": [float(v.norm(2.0)) for v in u],
                        "linf": [float(v.norm(math.inf)) for v in u],
                        "generator_residual": [g.residual for g in gens]},
              "final_profile": {"x": grid.x1.tolist(), "u": u[-1].values.real.tolist()}}
    out = {"cocycle_residual": coc, "generator_schemes": [g.scheme for g in gens],
           "max_generator_residual": max(g.residual for g in gens)}
    bad = [i for i, g in enumerate(gens) if not g.residual < gtol]
    witness = None
    if bad:
        witness = {"t": float(times[bad[0]]), "generator_residual": gens[bad[0]].residual}
    elif coc >= tol:
        witness = {"cocycle_residual": coc}
    return _result(not bad and coc < tol, out, curves=curves, witness=witness)


def _family(cfg: Section, grid: GridSpec, T: float) -> SetFamily:
    return build_sets(cfg.sub("sets"), grid, T)


def _horizon(cfg: Section) -> tuple:
    if "symbol" in cfg:
        sym = build_symbol(cfg.sub("symbol"))
        return sym, sym.d, sym.T
    o = build_ou(cfg.sub("ou"))
    return o, o.d, o.T


def cmd_thickness(cfg: Section, ctx: Context):
    _, d, T = _horizon(cfg)
    grid = build_grid(cfg.sub("grid"), d)
    fam = _family(cfg, grid, T)
    tsec = cfg.sub("thickness")
    L, rho = tsec.num("L"), tsec.num("rho")
    uni = _build(tsec.path, is_uniformly_thick, fam, L, rho)
    mean = _build(tsec.path, is_mean_thick, fam, L, rho)
    fr = window_fractions(fam.masks, grid, L)
    per_piece = fr.reshape(fam.n_times, -1).min(axis=1)
    out = {"uniform": asdict(uni), "mean": asdict(mean), "L": L, "rho": rho}
    curves = {"window_minimum": {"t": fam.times.tolist(), "min_fraction": per_piece.tolist()}}
    expect = tsec.sub("expect", {})
    witness = None
    for name, dec in (("uniform", uni), ("mean", mean)):
        if name in expect and bool(expect.get(name)) != dec.holds:
            witness = {"property": name, "expected": bool(expect.get(name)), **asdict(dec)}
            break
    return _result(witness is None, out, curves=curves, witness=witness)


def _uncertainty(cfg: Section, ctx: Context, fam: SetFamily):
    usec = cfg.sub("uncertainty")
    tsec = cfg.sub("thickness", {})
    L = tsec.num("L", None) if "L" in tsec else None
    return _build(usec.path, estimate_uncertainty, fam, usec.array("lambdas"), p=usec.num("p", 2.0), L=L,
                  n_random=usec.int("n_random", 24), power_iters=usec.int("power_iters", 12),
                  seed=ctx.seed, workers=ctx.workers)


def cmd_uncertainty(cfg: Section, ctx: Context):
    _, d, T = _horizon(cfg)
    grid = build_grid(cfg.sub("grid"), d)
    fam = _family(cfg, grid, T)
    fit = _uncertainty(cfg, ctx, fam)
    lams = np.asarray(fit.lambdas)
    bound = [fit.d0 * math.exp(fit.d1 * lam) if math.isfinite(fit.d0) else math.inf for lam in lams]
    rows = report.ratio_rows(range(lams.size), lams.tolist(), fit.worst_ratios, bound)
    out = {"d0": fit.d0, "d1": fit.d1, "gamma1": fit.gamma1}
    ok = math.isfinite(fit.d0) and all(r["pass"] for r in rows)
    witness = None if ok else {"lambda": fit.witness_lambda, "time": fit.witness_time}
    return _result(ok, out, {"uncertainty": rows}, witness=witness)


def _growth(sym, grid, ctx):
    times = np.linspace(0.0, sym.T, 5)
    pairs = [(float(a), float(b)) for i, a in enumerate(times) for b in times[i + 1:]]
    return fit_exponential_bound(sym, grid, pairs)


def _dissipation(cfg: Section, ctx: Context, sym, omega):
    dsec = cfg.sub("dissipation")
    grid = build_grid(dsec.sub("grid"), sym.d)
    fit = _build(dsec.path, estimate_dissipation, sym, grid, dsec.array("lambdas"), dsec.array("gaps"),
                 starts=dsec.array("starts", [0.0]).tolist(), p=dsec.num("p", 2.0), omega=omega,
                 n_random=dsec.int("n_random", 4), seed=ctx.seed, workers=ctx.workers)
    return fit, dsec.num("tolerance", 0.1)


def cmd_dissipation(cfg: Section, ctx: Context):
    sym = build_symbol(cfg.sub("symbol"))
    grid = build_grid(cfg.sub("grid"), sym.d)
    growth = _growth(sym, grid, ctx)
    fit, tol = _dissipation(cfg, ctx, sym, growth.omega)
    lam, s, tau, lr = fit.samples.T
    env = fit.d2 * np.exp(-fit.d3 * lam ** fit.gamma2 * tau ** fit.gamma3)
    rows = report.ratio_rows(range(lam.size), lam.tolist(), np.exp(lr), env)
    out = {"d2": fit.d2, "d3": fit.d3, "gamma2": fit.gamma2, "gamma3": fit.gamma3,
           "gamma2_fit": fit.gamma2_fit, "gamma3_fit": fit.gamma3_fit, "lambda_star": fit.lambda_star,
           "omega": growth.omega, "dominates": fit.dominates}
    curves = {"samples": {"lambda": lam.tolist(), "s": s.tolist(), "tau": tau.tolist(),
                          "log_ratio": lr.tolist()}}
    g2_ok = abs(fit.gamma2_fit - sym.m) <= tol * sym.m
    g3_ok = abs(fit.gamma3_fit - 1.0) <= tol
    ok = g2_ok and g3_ok and fit.dominates
    witness = None if ok else {"gamma2_fit": fit.gamma2_fit, "gamma3_fit": fit.gamma3_fit,
                               "dominates": fit.dominates}
    return _result(ok, out, {"dissipation": rows}, curves, witness)


def estimate_constants(cfg: Section, ctx: Context) -> tuple:
    """Hypothesis constants for a symbol preset, estimated from its grids and set family."""
    sym = build_symbol(cfg.sub("symbol"))
    grid = build_grid(cfg.sub("grid"), sym.d)
    fam = _family(cfg, grid, sym.T)
    growth = _growth(sym, grid, ctx)
    unc = _uncertainty(cfg, ctx, fam)
    diss, _ = _dissipation(cfg, ctx, sym, growth.omega)
    osec = cfg.sub("observe", {})
    hc = assemble_constants(unc, diss, growth, c_norm=osec.num("c_norm", 1.0), theta=osec.num("theta", 0.5))
    return hc, sym, grid, fam


def _given_constants(cfg: Section):
    c = cfg.sub("constants")
    fields = ("d0", "d1", "gamma1", "d2", "d3", "gamma2", "gamma3")
    extra = {k: c.num(k) for k in ("M", "omega", "c_norm", "theta") if k in c}
    return _build(c.path, HypothesisConstants, *(c.num(k) for k in fields), **extra)


def cmd_cobs(cfg: Section, ctx: Context):
    if "constants" in cfg:
        hc = _given_constants(cfg)
        T0 = build_symbol(cfg.sub("symbol")).T if "symbol" in cfg else 1.0
    else:
        hc, sym, _, _ = estimate_constants(cfg, ctx)
        T0 = sym.T
    csec = cfg.sub("cobs", {})
    r = csec.num("r", 2.0)
    Ts = csec.array("T", [T0])
    res = [_build(csec.path, cobs_explicit, hc, float(T), r) for T in Ts]
    main = _build(csec.path, cobs_explicit, hc, T0, r)
    out = {"constants": asdict(hc), "T": T0, "r": r, "log_cobs": main.log_cobs, "q": main.q,
           "kappa": main.kappa}
    curves = {"cobs": {"T": Ts.tolist(), "log_cobs": [x.log_cobs for x in res], "q": [x.q for x in res]}}
    ok = all(math.isfinite(x.log_cobs) and x.log_q < 0 for x in res)
    witness = None if ok else {"T": [float(T) for T, x in zip(Ts, res) if not math.isfinite(x.log_cobs)]}
    return _result(ok, out, curves=curves, witness=witness)


def _intervals(sec: Section, key, T):
    raw = sec.get(key, [[0.0, T]])
    if not isinstance(raw, list) or not all(isinstance(iv, list) and len(iv) == 2 for iv in raw):
        raise ConfigError(f"{sec.path}.{key}: expected a list of [start, end] pairs")
    return [(_number(a, f"{sec.path}.{key}"), _number(b, f"{sec.path}.{key}")) for a, b in raw]


def cmd_observe(cfg: Section, ctx: Context):
    hc, sym, grid, fam = estimate_constants(cfg, ctx)
    osec = cfg.sub("observe")
    E = _intervals(osec, "E", sym.T)
    p, r = osec.num("p", 2.0), osec.num("r", 2.0)
    ivs = merge_intervals(E)
    if len(ivs) == 1 and ivs[0][0] <= 0 and ivs[0][1] >= sym.T:
        log_cobs = _build(osec.path, cobs_explicit, hc, sym.T, r).log_cobs
    else:
        log_cobs, _ = _build(osec.path, cobs_chain, hc, sym.T, r, E, osec.int("chain_depth", 10))
    n = osec.int("n_candidates", 100)
    cands, labels = observability_candidates(grid, n, ctx.seed, band=osec.num("band", 6.0))
    rep = _build(osec.path, empirical_ratio, lambda s, t, f: propagate(sym, s, t, f), fam, E, cands,
                 r=r, p=p, labels=labels, log_cobs=log_cobs, n_sub=osec.int("n_sub", 4),
                 n_gl=osec.int("n_gl", 12), workers=ctx.workers)
    bound = math.exp(log_cobs) if log_cobs < 709 else math.inf
    rows = report.ratio_rows(range(n), labels, rep.ratios, [bound] * n)
    out = {"constants": asdict(hc), "log_cobs": log_cobs, "max_ratio": rep.max_ratio,
           "argmax": rep.argmax, "leakage": rep.leakage, "n_nodes": rep.n_nodes}
    witness = None
    if not rep.passed:
        witness = {"candidate": rep.argmax, "label": labels[rep.argmax], "ratio": rep.max_ratio,
                   "log_cobs": log_cobs}
    return _result(rep.passed, out, {"ratios": rows}, witness=witness)


def cmd_falsify(cfg: Section, ctx: Context):
    sym = build_symbol(cfg.sub("symbol"))
    grid = build_grid(cfg.sub("grid"), sym.d)
    fam = _family(cfg, grid, sym.T)
    fsec = cfg.sub("falsify")
    bump = _gaussian_field(grid, fsec.num("sigma", 1.0), fsec.get("center", 0.0))
    shifts = fsec.array("shifts")
    rep = _build(fsec.path, falsify_mean_thickness, lambda s, t, f: propagate(sym, s, t, f), fam, bump,
                 shifts.tolist(), r=fsec.num("r", 2.0), p=fsec.num("p", 2.0),
                 leak_tol=fsec.num("leak_max", 1e-10), workers=ctx.workers)
    rows = report.ratio_rows(range(shifts.size), shifts.tolist(), rep.ratios, [math.inf] * shifts.size)
    gmin, lmax = fsec.num("growth_min", 10.0), fsec.num("leak_max", 1e-10)
    out = {"growth": rep.growth, "leakage": rep.leakage, "monotone": rep.monotone}
    ok = rep.growth > gmin and rep.leakage < lmax
    witness = None if ok else {"growth": rep.growth, "leakage": rep.leakage, "growth_min": gmin}
    return _result(ok, out, {"shifts": rows}, witness=witness)


def cmd_ou_check(cfg: Section, ctx: Context):
    sysm = build_ou(cfg.sub("ou"))
    osec = cfg.sub("ou_check", {})
    rng = np.random.default_rng([ctx.seed, 3])
    T = sysm.eps_window if sysm.eps_window is not None else sysm.T
    n = osec.int("n_samples", 50)
    liou, coc, qerr = 0.0, 0.0, 0.0
    kolm = cfg.sub("ou").get("preset", None) == "kolmogorov"
    for _ in range(n):
        r, s, t = np.sort(rng.uniform(0.0, T, 3))
        liou = max(liou, liouville_check(sysm, r, t))
        R = solve_transition(sysm, r, t)
        coc = max(coc, float(np.linalg.norm(R - solve_transition(sysm, s, t) @ solve_transition(sysm, r, s))
                             / np.linalg.norm(R)))
        if kolm and t > r:
            k = sysm.d // 2
            xi, eta = rng.standard_normal(k), rng.standard_normal(k)
            ref = kolmogorov_form(t - r, xi, eta)
            got = quad_form(sysm, r, t, np.concatenate([xi, eta]))
            qerr = max(qerr, abs(float(got - ref)) / max(abs(float(ref)), 1e-300))
    kal = kalman_generalized(sysm)
    grid = build_grid(cfg.sub("grid"), sysm.d)
    fields, _ = observability_candidates(grid, osec.int("n_fields", 8), ctx.seed, band=2.0,
                                         kinds=("packet",), sigma_range=(1.0, 1.3), center_fraction=0.1)
    rows, bound_ok = [], True
    for i, p in enumerate(osec.array("p_values", [2.0])):
        nb = norm_bound_check(sysm, 0.0, T, float(p), fields)
        rows.append({"candidate_id": i, "n_or_lambda": float(p), "ratio": float(np.max(nb.ratios)),
                     "bound": nb.bound, "pass": nb.passed})
        bound_ok &= nb.passed
    fit = fit_ou_l2_dissipation(sysm, osec.array("lambdas", [5.0, 50.0]),
                                osec.array("gaps", [0.05, 0.5]))
    out = {"liouville_residual": liou, "transition_cocycle_residual": coc, "kalman_rank": kal.rank,
           "kalman_status": kal.status, "kalman_k": kal.k_used,
           "dissipation": {"c0": fit.c0, "c1": fit.c1, "m1": fit.m1}}
    if kolm:
        out["kolmogorov_form_error"] = qerr
    checks = {"liouville": liou < 1e-9, "cocycle": coc < 1e-10, "kolmogorov_form": qerr < 1e-10,
              "kalman": kal.satisfied, "norm_bound": bound_ok}
    failed = [k for k, v in checks.items() if not v]
    witness = {"failed": failed, **{k: out.get(k) for k in ("liouville_residual", "kalman_status")}} \
        if failed else None
    return _result(not failed, out, {"norm_bound": rows}, witness=witness)


def cmd_ou_observe(cfg: Section, ctx: Context):
    sysm = build_ou(cfg.sub("ou"))
    gsec = cfg.sub("grid")
    osec = cfg.sub("observe")
    refinements = cfg.get("refinements", [gsec.int("N")])
    if not isinstance(refinements, list) or not refinements:
        raise ConfigError(f"{cfg.path}.refinements: expected a nonempty list of grid sizes")
    E = _intervals(osec, "E", sysm.T)
    p, r = osec.num("p", 2.0), osec.num("r", 2.0)
    n = osec.int("n_candidates", 24)
    sig = osec.array("sigma_range", [1.0, 1.3])
    maxima, thick = [], []
    for N in refinements:
        grid = _build(f"{cfg.path}.refinements", GridSpec, sysm.d, gsec.num("X"), N)
        fam = _family(cfg, grid, sysm.T)
        tsec = cfg.sub("thickness", {})
        if "L" in tsec:
            thick.append(asdict(is_uniformly_thick(fam, tsec.num("L"), tsec.num("rho", 0.5))))
        cands, labels = observability_candidates(grid, n, ctx.seed, band=osec.num("band", 2.0),
                                                 kinds=("packet",), sigma_range=tuple(sig),
                                                 center_fraction=osec.num("center_fraction", 0.1))
        rep = _build(osec.path, empirical_ratio, lambda s, t, f: ou_propagate(sysm, s, t, f), fam, E,
                     cands, r=r, p=p, labels=labels, n_sub=osec.int("n_sub", 1), n_gl=osec.int("n_gl", 8),
                     workers=ctx.workers)
        maxima.append(rep.max_ratio)
    gmax = osec.num("growth_max", 2.0)
    finite = all(math.isfinite(v) and v > 0 for v in maxima)
    growth = max(maxima) / min(maxima) if finite else math.inf
    base = min(maxima) if finite else math.inf
    rows = report.ratio_rows(refinements, refinements, maxima, [gmax * base] * len(maxima))
    out = {"max_ratios": maxima, "growth": growth, "thickness": thick,
           "note": "grid-refinement consistency evidence; the OU observability constant is not explicit"}
    thick_ok = all(t["holds"] for t in thick)
    ok = finite and growth < gmax and thick_ok
    witness = None if ok else {"max_ratios": maxima, "growth": growth, "thick": thick_ok}
    return _result(ok, out, {"refinement": rows}, witness=witness)


HANDLERS = {
    "ellipticity": cmd_ellipticity, "kernel-check": cmd_kernel_check, "propagate": cmd_propagate,
    "thickness": cmd_thickness, "uncertainty": cmd_uncertainty, "dissipation": cmd_dissipation,
    "cobs": cmd_cobs, "observe": cmd_observe, "falsify": cmd_falsify, "ou-check": cmd_ou_check,
    "ou-observe": cmd_ou_observe,
}


# -- driver ------------------------------------------------------------------------

def _resolve_out(out):
    if out is not None:
        return Path(out)
    return Path(os.environ.get(OUT_ENV) or "obslab-out")


def execute(config: dict, subcommand: str, preset: str | None = None, seed: int | None = None,
            out=None, threads: int = 1, sets: dict | None = None) -> tuple:
    """Run one subcommand on a parsed config; returns ``(exit_status, record)``.

    Config errors propagate as :class:`ConfigError`; invariant failures are
    recorded with a witness and give status 1.
    """
    if subcommand not in HANDLERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    preset = preset or DEFAULT_PRESET.get(subcommand, "heat")
    presets = config["presets"]
    if preset not in presets:
        raise ConfigError(f"presets.{preset}: no such preset (available: {', '.join(sorted(presets))})")
    pcfg = apply_overrides(presets[preset], sets or {})
    if seed is None:
        seed = config.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer")
    ctx = Context(preset, seed, threads)
    started = report.timestamp()
    try:
        res = HANDLERS[subcommand](Section(pcfg, f"presets.{preset}"), ctx)
    except INVARIANT_ERRORS as exc:
        res = _result(False, {}, witness={"error": type(exc).__name__, "message": str(exc),
                                          **({"spill": exc.spill} if isinstance(exc, AliasingError) else {}),
                                          **({"achieved_depth": exc.achieved_depth}
                                             if isinstance(exc, ChainTruncatedError) else {})})
    except (UsageError, DomainError) as exc:
        raise ConfigError(f"presets.{preset}: {exc}") from exc
    record = report.RunRecord(command=subcommand, preset=preset,
                              config_hash=report.config_hash({"command": subcommand, "config": pcfg}),
                              seed=seed, started=started, finished=report.timestamp(), **res)
    directory = _resolve_out(out)
    report.write_report(record, directory / f"{subcommand}-{preset}.json")
    report.emit_plot_data(record, directory)
    return (0 if record.passed else 1), record


def run(config_path, subcommand: str, overrides: dict | None = None) -> int:
    """Load ``config_path`` (``None`` for the packaged presets) and run ``subcommand``.

    ``overrides`` may hold ``preset``, ``seed``, ``out``, ``threads`` and
    ``set`` (a mapping of dotted config paths to values).
    """
    ov = dict(overrides or {})
    try:
        config = load_config(config_path)
        status, record = execute(config, subcommand, preset=ov.get("preset"), seed=ov.get("seed"),
                                 out=ov.get("out"), threads=ov.get("threads", 1), sets=ov.get("set"))
    except ConfigError as exc:
        print(f"obslab: config error: {exc}", file=sys.stderr)
        return 2
    verdict = "PASS" if status == 0 else "FAIL"
    print(f"obslab {subcommand} [{record.preset}]: {verdict}")
    if record.witness is not None:
        print("witness: " + json.dumps(record.witness, default=report._plain, sort_keys=True), file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="obslab", description="Observability experiments for parabolic "
                                 "and Ornstein-Uhlenbeck evolutions on periodic grids.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config with a 'presets' section (default: packaged presets)")
    ap.add_argument("--preset", help="preset name (default depends on the command)")
    ap.add_argument("--seed", type=int, help="random seed (default: config 'seed' or 0)")
    ap.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./obslab-out)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a preset field by dotted path; VALUE is parsed as JSON")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sets = dict(parse_assignment(s) for s in args.set)
    except ConfigError as exc:
        print(f"obslab: config error: {exc}", file=sys.stderr)
        return 2
    return run(args.config, args.command, {"preset": args.preset, "seed": args.seed, "out": args.out,
                                           "threads": args.threads, "set": sets})


if __name__ == "__main__":
    sys.exit(main())
