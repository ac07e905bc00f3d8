"""Command line: figure data, acceptance experiments, manifest replay.

    semistable-dk figure --id 1 --out out/fig1
    semistable-dk run --experiment merging --seed 7 --out out/merging [--config run.ini]
    semistable-dk replay out/merging/manifest.json

Exit codes: 0 pass, 1 tolerance failure, 2 usage or config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import platform
import re
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .interval_maps import (
    FibonacciTower,
    NumericalEscapeError,
    TruncationBudgetError,
    distortion_bound,
    fib_tail_h,
    orbit_occupation,
    smooth_wang_map,
    wang_map,
)
from .renewal_ops import (
    HorizonError,
    operator_karamata_gap,
    q0_of_M,
    renewal_scaling_p,
    renewal_sequence,
    safe_z_grid,
    transfer_matrix,
    verify_A_alpha_p,
)
from .renewal_processes import H_lambda_cdf, H_slope_at_zero, merging_gap, simulate_S
from .semistable_core import (
    DEFAULT_Q,
    DomainError,
    QuadratureError,
    SemistableLaw,
    cdf,
    constant_m,
    sample,
    st_petersburg_m,
    wang_m,
)
from .tail_models import (
    TailSpec,
    fibonacci,
    h_lambda,
    pareto,
    st_petersburg,
    wang_continuous,
    wang_noncontinuous,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (QuadratureError, NumericalEscapeError, TruncationBudgetError, HorizonError,
                  ArithmeticError, FloatingPointError)


class ConfigError(ValueError):
    """Bad config file; the message carries line and key."""


# ---------------------------------------------------------------------------
# CSV and formatting


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> Path:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in r) for r in rows]
    path.write_bytes(("\n".join(lines) + "\n").encode())
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Config: one [tail] section plus one section named after the experiment

TAIL_KEYS = {"family": str, "alpha": float, "c": float, "eps": float, "lambda_slope": float, "m0": float}


def _floats(s: str) -> list[float]:
    return [float(t) for t in s.replace(",", " ").split()]


def _ints(s: str) -> list[int]:
    return [int(t) for t in s.replace(",", " ").split()]


PARSERS = {int: int, float: float, str: str, "floats": _floats, "ints": _ints}

# experiment -> (tail defaults, {key: (type, default)})
EXPERIMENTS: dict[str, tuple[dict, dict]] = {
    "merging": (
        {"family": "st_petersburg", "alpha": "0.5"},
        {"n": (int, "1048576"), "n_small": (int, "1024"), "samples": (int, "100000"),
         "grid_lo": (float, "0.1"), "grid_hi": (float, "10"), "grid_points": (int, "20"),
         "tolerance": (float, "0.02")},
    ),
    "h-slope": (
        {"family": "wang_continuous", "alpha": "0.5", "c": "2", "eps": "0.04"},
        {"lambdas": ("floats", "0.6 0.75 1.0"), "tolerance": (float, "0.1"),
         "const_m0": (float, "0.7"), "const_tolerance": (float, "0.02")},
    ),
    "h-tail": (
        {"family": "wang_continuous", "alpha": "0.5", "c": "2", "eps": "0.04"},
        {"x": ("floats", "2 3 4 5 6"), "samples": (int, "1000000"), "seeds": (int, "2"),
         "tolerance": (float, "0.2")},
    ),
    "renewal-scaling": (
        {"family": "wang_continuous", "alpha": "0.5", "c": "2", "eps": "0.04"},
        {"horizon": (int, "100000"), "n_list": ("ints", "6 7 8"), "z0": (float, "0.375"),
         "z_points": (int, "16"), "s_lo": (float, "1"), "s_hi": (float, "4"), "s_points": (int, "9"),
         "const_m0": (float, "1"), "const_tolerance": (float, "0.01"),
         "step_tolerance": (float, "0.05"), "product_tolerance": (float, "0.1")},
    ),
    "operator-karamata": (
        {"family": "wang_continuous", "alpha": "0.5", "c": "2", "eps": "0.04"},
        {"K": (int, "10000"), "n_list": ("ints", "4 5 6"), "z0": (float, "0.6"),
         "z_points": (int, "16"), "tolerance": (float, "1e-12")},
    ),
    "fib-tail": (
        {"family": "fibonacci", "lambda_slope": "0.7"},
        {"n": (int, "30"), "x": ("floats", "1.3 2.0"), "tolerance": (float, "0.01"),
         "draws": (int, "1000000"), "levels": (int, "20"), "sigmas": (float, "3")},
    ),
    "smooth-glue": (
        {"family": "wang_continuous", "alpha": "0.5", "c": "2", "eps": "0.01"},
        {"N": (int, "10000"), "tolerance": (float, "1e-10"), "periods": (int, "4"),
         "slope_lo": (float, "-3.3"), "slope_hi": (float, "-2.7"), "growth": (float, "1.5")},
    ),
    "distortion": (
        {"family": "wang_continuous", "alpha": "0.5", "c": "2", "eps": "0.01"},
        {"N": (int, "1000"), "n_small": (int, "100"), "n_large": (int, "1000"),
         "tolerance": (float, "0.05")},
    ),
    "orbit-dk": (
        {"family": "wang_continuous", "alpha": "0.5", "c": "2", "eps": "0.04"},
        {"n": (int, "65536"), "orbits": (int, "10000"), "grid_lo": (float, "0.2"),
         "grid_hi": (float, "3"), "grid_points": (int, "15"), "sigmas": (float, "3")},
    ),
}


@dataclass
class Config:
    experiment: str
    tail: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)  # section -> key -> string, fully resolved

    def echo(self) -> dict:
        return {s: dict(sorted(kv.items())) for s, kv in sorted(self.raw.items())}


def _line_of(text: str, section: str, key: str | None) -> int:
    sec = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            if key is None and sec == section:
                return i
            continue
        if key is not None and sec == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return i
    return 0


def load_config(experiment: str, path: str | None = None, overrides: dict | None = None) -> Config:
    """Defaults for ``experiment``, overlaid by the file at ``path`` and by ``overrides``."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    tail_def, run_def = EXPERIMENTS[experiment]
    raw = {"tail": dict(tail_def), experiment: {k: v[1] for k, v in run_def.items()}}
    sources = []
    if path is not None:
        text = Path(path).read_text()
        cp = configparser.ConfigParser(interpolation=None, default_section="\x00")
        cp.optionxform = str
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        sources.append((cp, text, str(path)))
    for cp, text, name in sources:
        for sec in cp.sections():
            if sec not in raw:
                raise ConfigError(f"{name}:{_line_of(text, sec, None)}: unknown section [{sec}]")
            allowed = TAIL_KEYS if sec == "tail" else run_def
            for key, val in cp.items(sec):
                if key not in allowed:
                    raise ConfigError(f"{name}:{_line_of(text, sec, key)}: unknown key {key!r} in [{sec}]")
                raw[sec][key] = val.strip()
    for (sec, key), val in (overrides or {}).items():
        allowed = TAIL_KEYS if sec == "tail" else run_def
        if sec not in raw or key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{sec}]")
        raw[sec][key] = str(val)
    cfg = Config(experiment, raw=raw)
    for sec, table, dest in (("tail", {k: t for k, t in TAIL_KEYS.items()}, cfg.tail),
                             (experiment, {k: v[0] for k, v in run_def.items()}, cfg.run)):
        for key, val in raw[sec].items():
            try:
                dest[key] = PARSERS[table[key]](val)
            except ValueError:
                where = f"{path}:{_line_of(sources[0][1], sec, key)}: " if sources else ""
                raise ConfigError(f"{where}bad value {val!r} for {key!r} in [{sec}]") from None
    return cfg


def build_tail(t: dict) -> TailSpec:
    fam = t.get("family")
    try:
        if fam == "st_petersburg":
            return st_petersburg(t["alpha"])
        if fam == "wang_continuous":
            return wang_continuous(t["alpha"], t.get("c", 2.0), t.get("eps", 0.04))
        if fam == "wang_noncontinuous":
            return wang_noncontinuous(t["alpha"])
        if fam == "fibonacci":
            return fibonacci(t["lambda_slope"])
        if fam == "pareto":
            return pareto(t["alpha"], t.get("m0", 1.0), t.get("c", 2.0))
    except KeyError as e:
        raise ConfigError(f"[tail] family {fam!r} needs key {e.args[0]!r}") from None
    except DomainError as e:
        raise ConfigError(f"[tail] {e}") from None
    raise ConfigError(f"[tail] unknown family {fam!r}")


# ---------------------------------------------------------------------------
# Experiments: each returns (verdicts, metrics, files)


@dataclass
class Outcome:
    verdicts: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def exp_merging(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    spec = build_tail(cfg.tail)
    grid = np.geomspace(r["grid_lo"], r["grid_hi"], r["grid_points"])
    big = merging_gap(spec, r["n"], grid, r["samples"], seed)
    small = merging_gap(spec, r["n_small"], grid, r["samples"], seed + 1)
    o = Outcome()
    for name, rep in (("merging.csv", big), ("merging_small.csv", small)):
        o.files.append(write_csv(out / name, ["x", "empirical", "reference", "gap", "sigma"],
                                 zip(rep.grid, rep.empirical, rep.reference, rep.gap, rep.sigma)))
    o.metrics.update(sup_gap=big.sup_gap, sup_gap_small=small.sup_gap)
    o.verdicts["sup_gap"] = big.sup_gap <= r["tolerance"]
    o.verdicts["gap_shrinks"] = big.sup_gap < small.sup_gap
    return o


def exp_h_slope(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    spec = build_tail(cfg.tail)
    rows, o = [], Outcome()
    for lam in r["lambdas"]:
        e = H_slope_at_zero(spec.m, spec.alpha, spec.c, lam)
        rows.append((spec.family, lam, e.estimate, e.reference, e.relative_error))
        o.verdicts[f"lambda={lam:g}"] = e.relative_error <= r["tolerance"]
    cm = constant_m(spec.alpha, spec.c, r["const_m0"])
    e = H_slope_at_zero(cm, spec.alpha, spec.c, 1.0)
    rows.append(("constant", 1.0, e.estimate, e.reference, e.relative_error))
    o.verdicts["constant"] = e.relative_error <= r["const_tolerance"]
    o.files.append(write_csv(out / "h_slope.csv", ["model", "lambda", "estimate", "reference", "relative_error"], rows))
    o.metrics["max_relative_error"] = max(row[4] for row in rows)
    return o


def exp_h_tail(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    """-log(1 - H_1(x)) x^(-1/(1-alpha)) from inversion, and again from draws of V_{h_1(x)}."""
    r = cfg.run
    spec = build_tail(cfg.tail)
    x = np.asarray(r["x"], dtype=float)
    power = 1.0 / (1.0 - spec.alpha)
    H = np.asarray(H_lambda_cdf(spec.m, spec.alpha, spec.c, 1.0, x), dtype=float)
    band = -np.log1p(-H) / x**power
    lo, hi = float(band.min()), float(band.max())
    lams = np.atleast_1d(h_lambda(1.0, x, spec.c))
    cols, o = [], Outcome()
    for k in range(r["seeds"]):
        draws = {}
        vals = []
        for xi, lam in zip(x, lams):
            key = round(float(lam), 12)
            if key not in draws:
                law = SemistableLaw(spec.m, float(lam) if lam > 1.0 / spec.c else 1.0)
                draws[key] = sample(law, seed + k, r["samples"], threads=threads).values
            p = float(np.mean(draws[key] <= xi ** (-1.0 / spec.alpha)))
            vals.append(-math.log(p) / xi**power if p > 0 else math.inf)
        vals = np.asarray(vals)
        cols.append(vals)
        o.verdicts[f"seed{k}_in_band"] = bool(np.all((vals >= lo * (1 - r["tolerance"]))
                                                    & (vals <= hi * (1 + r["tolerance"]))))
        o.verdicts[f"seed{k}_pointwise"] = bool(np.all(np.abs(vals / band - 1) <= r["tolerance"]))
    o.verdicts["band_positive"] = lo > 0
    o.metrics.update(band_lo=lo, band_hi=hi)
    header = ["x", "lambda", "inversion"] + [f"seed{k}" for k in range(r["seeds"])]
    o.files.append(write_csv(out / "h_tail.csv", header, zip(x, lams, band, *cols)))
    return o


def exp_renewal_scaling(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    spec = build_tail(cfg.tail)
    a, c = spec.alpha, spec.c
    z = safe_z_grid(r["z0"], r["z_points"], a, c)
    n_list = r["n_list"]
    o = Outcome()
    # constant amplitude: classical renewal constant
    pa = pareto(a, r["const_m0"], c)
    lp_c, rep_c = renewal_scaling_p(renewal_sequence(pa, r["horizon"], "fft"), a, c, z, n_list)
    classical = 1.0 / (r["const_m0"] * math.gamma(1 - a) * math.gamma(1 + a))
    err_c = float(np.max(np.abs(rep_c.p_hat[-1] / classical - 1)))
    o.verdicts["constant_limit"] = err_c <= r["const_tolerance"]
    lp, rep = renewal_scaling_p(renewal_sequence(spec, r["horizon"], "fft"), a, c, z, n_list)
    step = float(np.max(rep.delta_to_prev[-1] / rep.p_hat[-1]))
    o.verdicts["last_step"] = step <= r["step_tolerance"]
    s = np.geomspace(r["s_lo"], r["s_hi"], r["s_points"])
    prod = verify_A_alpha_p(lp, q0_of_M(spec.m, a), s)
    o.verdicts["product_identity"] = prod <= r["product_tolerance"]
    o.metrics.update(constant_rel_error=err_c, last_step=step, product_gap=prod)
    hdr = ["z", "n", "p_hat", "delta_to_prev_n"]
    o.files.append(write_csv(out / "scaling.csv", hdr, rep.rows()))
    o.files.append(write_csv(out / "scaling_constant.csv", hdr, rep_c.rows()))
    return o


def exp_operator_karamata(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    spec = build_tail(cfg.tail)
    K = r["K"]
    T = transfer_matrix(spec, K)
    useq = renewal_sequence(spec, K, "direct")
    readout = T.readout(K)
    exact = float(np.max(np.abs(readout - useq.u[: K + 1])))
    z = safe_z_grid(r["z0"], r["z_points"], spec.alpha, spec.c)
    _, scalar = renewal_scaling_p(useq, spec.alpha, spec.c, z, r["n_list"])
    kr = operator_karamata_gap(T, spec.alpha, spec.c, None, z, r["n_list"], scalar=scalar)
    o = Outcome()
    o.verdicts["readout"] = exact <= r["tolerance"]
    o.verdicts["partial_sums"] = kr.match_scalar <= r["tolerance"]
    o.metrics.update(readout_gap=exact, partial_sum_gap=kr.match_scalar,
                     row_sum_gap=float(np.max(np.abs(T.row_sums() - 1))))
    o.files.append(write_csv(out / "operator_scaling.csv", ["z", "n", "p_hat", "delta_to_prev_n"],
                             kr.scaling.rows()))
    return o


def exp_fib_tail(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    tw = FibonacciTower(cfg.tail["lambda_slope"])
    lam = tw.lambda_slope
    o = Outcome()
    hv = [fib_tail_h(tw, r["n"], x) for x in r["x"]]
    o.verdicts["h_small"] = max(abs(v) for v in hv) <= r["tolerance"]
    y = 1.0 - np.random.default_rng(seed).random(r["draws"])
    idx = tw.branch_index(y)
    k = np.arange(r["levels"] + 1)
    counts = np.bincount(idx[idx <= r["levels"]], minlength=k.size)[: k.size]
    emp = counts / r["draws"]
    exact = (1 - lam) * lam**k
    z = np.abs(emp - exact) / np.sqrt(exact * (1 - exact) / r["draws"])
    o.verdicts["tau_law"] = float(z.max()) <= r["sigmas"]
    o.metrics.update(max_abs_h=max(abs(v) for v in hv), max_z=float(z.max()))
    o.files.append(write_csv(out / "fib_h.csv", ["x", "n", "h"], [(x, r["n"], v) for x, v in zip(r["x"], hv)]))
    o.files.append(write_csv(out / "fib_tau.csv", ["level", "empirical", "exact", "z"], zip(k, emp, exact, z)))
    return o


def _loglog_slope(v: np.ndarray, lo: int, hi: int) -> float:
    n = np.arange(lo, hi)
    return float(np.polyfit(np.log(n), np.log(np.abs(v[lo:hi])), 1)[0])


def exp_smooth_glue(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    t = cfg.tail
    N = r["N"]
    m = smooth_wang_map(t["alpha"], t["c"], t["eps"], N)
    cf = m.coeffs
    gv, gd = m.glue_residuals()
    n = np.arange(2, N + 1)
    nB = n**2 * np.abs(cf.B[2:])
    tenth = n > N // 10
    hundredth = (n > N // 100) & ~tenth
    growth = float(nB[tenth].max() / nB[hundredth].max())
    # fit over whole log-periods so the oscillation does not tilt the slope
    period = t["c"] ** (1.0 / t["alpha"])
    lo = max(3, int(round(N / period ** r["periods"])))
    slope = _loglog_slope(cf.q_diff, lo, N)
    o = Outcome()
    o.verdicts["glue_value"] = gv <= r["tolerance"]
    o.verdicts["glue_derivative"] = gd <= r["tolerance"]
    o.verdicts["n2B_bounded"] = bool(np.isfinite(nB).all()) and growth <= r["growth"]
    o.verdicts["q_diff_slope"] = r["slope_lo"] <= slope <= r["slope_hi"]
    o.metrics.update(glue_value=gv, glue_derivative=gd, n2B_max=float(nB.max()), n2B_growth=growth,
                     q_diff_slope=slope, tail_bound=cf.tail_bound)
    o.files.append(write_csv(out / "coefficients.csv", ["n", "alpha_n", "q_n", "B_n", "A_n"],
                             zip(n, cf.alpha_n[2:N + 1], cf.q[2:N + 1], cf.B[2:], cf.A[2:])))
    return o


def exp_distortion(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    t = cfg.tail
    m = smooth_wang_map(t["alpha"], t["c"], t["eps"], max(r["N"], r["n_large"]))
    s_small, _ = distortion_bound(m, r["n_small"])
    s_large, per = distortion_bound(m, r["n_large"])
    rel = abs(s_large / s_small - 1.0)
    o = Outcome()
    o.verdicts["stabilizes"] = rel <= r["tolerance"]
    o.verdicts["finite_positive"] = bool(np.all(np.isfinite(per)) and np.all(per > 0))
    o.metrics.update(sup_small=s_small, sup_large=s_large, relative_change=rel)
    o.files.append(write_csv(out / "distortion.csv", ["n", "distortion"], zip(range(2, r["n_large"] + 1), per)))
    return o


def exp_orbit_dk(cfg: Config, seed: int, out: Path, threads: int) -> Outcome:
    r = cfg.run
    spec = build_tail(cfg.tail)
    o = Outcome()
    if spec.family == "fibonacci":
        tw = FibonacciTower(spec.params["lambda_slope"])
        a = orbit_occupation(tw, n=r["n"], seed=seed, n_orbits=r["orbits"])
        b = orbit_occupation(tw, n=r["n"], seed=seed + 1, n_orbits=r["orbits"])
        ren = simulate_S(spec, r["n"], r["orbits"], seed + 2)
        band = 1.36 * math.sqrt(2.0 / r["orbits"])
        ks_ab, ks_ren = _ks(a, b), _ks(a, ren)
        o.verdicts["two_seeds"] = ks_ab <= 2 * band
        o.verdicts["orbit_vs_renewal"] = ks_ren <= 2 * band
        o.metrics.update(ks_seeds=ks_ab, ks_renewal=ks_ren, band=band)
        o.files.append(write_csv(out / "orbit_counts.csv", ["orbit", "S_n_seed_a", "S_n_seed_b"],
                                 zip(range(a.size), a, b)))
        return o
    if spec.family != "wang_continuous":
        raise ConfigError("orbit-dk supports wang_continuous and fibonacci")
    m = wang_map(spec.alpha, spec.c, spec.params.get("eps", 0.04))
    counts = orbit_occupation(m, n=r["n"], seed=seed, n_orbits=r["orbits"])
    grid = np.linspace(r["grid_lo"], r["grid_hi"], r["grid_points"])
    rep = merging_gap(spec, r["n"], grid, r["orbits"], seed, samples=counts)
    excess = rep.excess_over_band(r["sigmas"])
    o.verdicts["within_band"] = excess <= 0
    o.metrics.update(sup_gap=rep.sup_gap, excess=excess)
    o.files.append(write_csv(out / "orbit_dk.csv", ["x", "empirical", "reference", "gap", "sigma"],
                             zip(rep.grid, rep.empirical, rep.reference, rep.gap, rep.sigma)))
    return o


def _ks(a, b) -> float:
    a, b = np.sort(a), np.sort(b)
    pts = np.union1d(a, b)
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


RUNNERS = {
    "merging": exp_merging,
    "h-slope": exp_h_slope,
    "h-tail": exp_h_tail,
    "renewal-scaling": exp_renewal_scaling,
    "operator-karamata": exp_operator_karamata,
    "fib-tail": exp_fib_tail,
    "smooth-glue": exp_smooth_glue,
    "distortion": exp_distortion,
    "orbit-dk": exp_orbit_dk,
}


# ---------------------------------------------------------------------------
# Figures

FIGURES = {
    1: ("G", "st_petersburg", (0.5, 0.75, 1.0)),
    2: ("H", "st_petersburg", (0.5, 0.75, 1.0)),
    3: ("G", "wang_continuous", (0.5, 0.75)),
    4: ("H", "wang_continuous", (1.0,)),
}
FIG_ALPHA, FIG_EPS, FIG_C = 0.5, 0.04, 2.0


def figure_grid(kind: str) -> np.ndarray:
    if kind == "G":
        return np.linspace(0.05, 10.0, 200)
    return np.concatenate([[1e-3, 10**-2.5, 1e-2], np.linspace(0.025, 5.0, 200)])


def figure_rows(fig_id: int):
    kind, family, lams = FIGURES[fig_id]
    m = st_petersburg_m(FIG_ALPHA) if family == "st_petersburg" else wang_m(FIG_ALPHA, FIG_C, FIG_EPS)
    x = figure_grid(kind)
    rows = []
    for lam in lams:
        if kind == "G":
            v = np.asarray(cdf(SemistableLaw(m, lam), x, DEFAULT_Q).value, dtype=float)
        else:
            v = np.asarray(H_lambda_cdf(m, FIG_ALPHA, FIG_C, lam, x), dtype=float)
        v = np.clip(v, 0.0, 1.0)
        rows += [(xi, lam, vi) for xi, vi in zip(x, v)]
    return rows


def make_figure(fig_id: int, out: Path) -> Outcome:
    kind, family, lams = FIGURES[fig_id]
    rows = figure_rows(fig_id)
    o = Outcome()
    o.files.append(write_csv(out / f"fig{fig_id}.csv", ["x", "lambda", "value"], rows))
    for lam in lams:
        v = np.array([r[2] for r in rows if r[1] == lam])
        o.verdicts[f"monotone_lambda={lam:g}"] = bool(np.all(np.diff(v) >= -1e-9))
    o.verdicts["in_unit_interval"] = all(0.0 <= r[2] <= 1.0 for r in rows)
    o.metrics.update(kind=kind, family=family, alpha=FIG_ALPHA, c=FIG_C,
                     eps=FIG_EPS if family == "wang_continuous" else None)
    return o


# ---------------------------------------------------------------------------
# Manifests


def _versions() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "semistable_dk": __version__}


def _config_digest(echo: dict) -> str:
    return hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, command: list[str], kind: str, name: str, echo: dict, seed: int | None,
                   o: Outcome, wall: float) -> Path:
    man = {
        "command": command,
        "kind": kind,
        "name": name,
        "config": echo,
        "config_sha256": _config_digest(echo),
        "seed": seed,
        "versions": _versions(),
        "wall_time_s": round(wall, 3),
        "outputs": {p.name: sha256(p) for p in o.files},
        "verdicts": {k: bool(v) for k, v in o.verdicts.items()},
        "metrics": {k: (None if v is None else (v if isinstance(v, str) else float(v))) for k, v in o.metrics.items()},
        "status": "PASS" if o.passed else "FAIL",
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def run_experiment(name: str, seed: int, out: Path, config: str | None = None, threads: int = 1,
                   overrides: dict | None = None, command: list[str] | None = None) -> tuple[Outcome, Path]:
    cfg = load_config(name, config, overrides)
    return _run_cfg(cfg, seed, out, threads, command or ["run", "--experiment", name])


def _run_cfg(cfg: Config, seed: int, out: Path, threads: int, command: list[str]):
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    o = RUNNERS[cfg.experiment](cfg, seed, out, threads)
    man = write_manifest(out, command, "experiment", cfg.experiment, cfg.echo(), seed, o, time.perf_counter() - t0)
    return o, man


def run_figure(fig_id: int, out: Path, command: list[str] | None = None) -> tuple[Outcome, Path]:
    if fig_id not in FIGURES:
        raise ConfigError(f"figure id must be one of {sorted(FIGURES)}")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    o = make_figure(fig_id, out)
    echo = {"figure": {"id": str(fig_id), "alpha": fmt(FIG_ALPHA), "c": fmt(FIG_C), "eps": fmt(FIG_EPS)}}
    man = write_manifest(out, command or ["figure", "--id", str(fig_id)], "figure", f"fig{fig_id}", echo,
                         None, o, time.perf_counter() - t0)
    return o, man


@dataclass
class ReplayReport:
    matched: list
    mismatched: list
    missing: list
    config_tampered: bool

    @property
    def ok(self) -> bool:
        return not (self.mismatched or self.missing or self.config_tampered)


def replay(manifest_path: str | Path, threads: int = 1) -> ReplayReport:
    """Rerun the manifest's command in a scratch directory and compare checksums."""
    mp = Path(manifest_path)
    if not mp.is_file():
        raise FileNotFoundError(f"manifest not found: {mp}")
    man = json.loads(mp.read_text())
    base = mp.parent
    missing = [f for f in man["outputs"] if not (base / f).is_file()]
    if missing:
        raise FileNotFoundError("listed output missing: " + ", ".join(sorted(missing)))
    tampered = _config_digest(man["config"]) != man["config_sha256"]
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        if man["kind"] == "figure":
            run_figure(int(man["config"]["figure"]["id"]), out)
        else:
            name = man["name"]
            tail_def, run_def = EXPERIMENTS[name]
            over = {}
            for sec, kv in man["config"].items():
                for k, v in kv.items():
                    over[(sec, k)] = v
            cfg = load_config(name, None, over)
            _run_cfg(cfg, int(man["seed"]), out, threads, man["command"])
        matched, mismatched = [], []
        for f, digest in sorted(man["outputs"].items()):
            new = out / f
            ok = new.is_file() and sha256(new) == digest and sha256(base / f) == digest
            (matched if ok else mismatched).append(f)
    return ReplayReport(matched, mismatched, [], tampered)


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semistable-dk", description="Semistable Darling-Kac numerics.")
    sub = p.add_subparsers(dest="cmd", required=True)
    f = sub.add_parser("figure", help="write figure data as CSV")
    f.add_argument("--id", type=int, required=True, choices=sorted(FIGURES))
    f.add_argument("--out", required=True)
    r = sub.add_parser("run", help="run an acceptance experiment")
    r.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    r.add_argument("--config")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    s = sub.add_parser("replay", help="rerun a manifest and compare checksums")
    s.add_argument("manifest")
    s.add_argument("--threads", type=int, default=1)
    sub.add_parser("list", help="list experiments and their default config")
    return p


def _print_outcome(o: Outcome, man: Path):
    for k, v in o.verdicts.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    for k, v in o.metrics.items():
        print(f"  {k} = {fmt(v) if v is not None else '-'}")
    print(f"manifest: {man}")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASS
    try:
        if args.cmd == "list":
            for name, (tail, run) in EXPERIMENTS.items():
                print(f"[{name}]")
                print("  tail: " + ", ".join(f"{k}={v}" for k, v in tail.items()))
                print("  run:  " + ", ".join(f"{k}={v[1]}" for k, v in run.items()))
            return EXIT_PASS
        if args.cmd == "figure":
            o, man = run_figure(args.id, Path(args.out), ["figure"] + argv[1:])
        elif args.cmd == "run":
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            o, man = run_experiment(args.experiment, args.seed, Path(args.out), args.config, args.threads,
                                    command=argv)
        else:
            rep = replay(args.manifest, args.threads)
            for f in rep.matched:
                print(f"MATCH {f}")
            for f in rep.mismatched:
                print(f"MISMATCH {f}")
            if rep.config_tampered:
                print("MISMATCH config (echo does not match its checksum)")
            return EXIT_PASS if rep.ok else EXIT_FAIL
    except (ConfigError, FileNotFoundError, DomainError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as e:
        print(f"numeric failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    _print_outcome(o, man)
    return EXIT_PASS if o.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
