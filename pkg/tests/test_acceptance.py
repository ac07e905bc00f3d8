"""Acceptance criteria 1-11 at their stated sizes and tolerances.

Each test prints one ``PASS``/``FAIL`` line for its criterion (visible in
``pytest -v`` output) before asserting.  Run alone with
``pytest tests/test_acceptance.py -v``.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from semistable_dk import cli
from semistable_dk.interval_maps import (
    noncont_derivative_limits,
    restricted_ratio,
    wang_noncontinuous_map,
)
from semistable_dk.renewal_processes import duality_violations
from semistable_dk.semistable_core import SemistableLaw, cdf, sample, st_petersburg_m, wang_m
from semistable_dk.tail_models import (
    fibonacci,
    pareto,
    st_petersburg,
    wang_continuous,
    wang_noncontinuous,
)

WANG_TAIL = {("tail", "family"): "wang_continuous", ("tail", "alpha"): "0.5",
             ("tail", "c"): "2", ("tail", "eps"): "0.04"}


@pytest.fixture
def report(capsys):
    def emit(k: int, ok: bool, detail: str, t0: float):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail} [{time.perf_counter() - t0:.1f}s]")
        assert ok, detail
    return emit


def _run(name, tmp_path, seed=0, overrides=None, tag=None):
    o, _ = cli.run_experiment(name, seed, tmp_path / (tag or name), overrides=overrides)
    return o


def _fmt(metrics: dict) -> str:
    return ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in metrics.items())


def test_criterion_01_duality_exact(report):
    t0 = time.perf_counter()
    specs = {"st_petersburg": st_petersburg(0.5), "wang_continuous": wang_continuous(0.5),
             "wang_noncontinuous": wang_noncontinuous(0.5), "fibonacci": fibonacci(0.7),
             "pareto": pareto(0.5)}
    bad = {name: duality_violations(s, 1000, 10_000, seed=11) for name, s in specs.items()}
    report(1, all(v == 0 for v in bad.values()), f"violations on 10^4 paths per spec: {bad}", t0)


@pytest.mark.parametrize("which", ["st_petersburg", "wang"])
def test_criterion_02_inversion_vs_simulation(which, report):
    t0 = time.perf_counter()
    m = st_petersburg_m(0.5) if which == "st_petersburg" else wang_m(0.5, 2.0, 0.04)
    law = SemistableLaw(m, 1.0)
    draws = sample(law, 2, 10**6)
    v = np.sort(draws.values)
    grid = np.quantile(v, np.linspace(0.005, 0.995, 100))
    emp = np.searchsorted(v, grid, side="right") / v.size
    ref = np.asarray(cdf(law, grid).value, dtype=float)
    ks = float(np.max(np.abs(emp - ref)))
    report(2, ks <= 0.005, f"{which}: Kolmogorov distance {ks:.4g} (bias bound {draws.bias_bound:.2g})", t0)


@pytest.mark.parametrize("which", ["st_petersburg", "wang"])
def test_criterion_03_merging(which, tmp_path, report):
    t0 = time.perf_counter()
    o = _run("merging", tmp_path, 0, None if which == "st_petersburg" else WANG_TAIL, which)
    report(3, o.passed, f"{which}: {_fmt(o.metrics)} (n=2^20 vs 2^10, 10^5 paths)", t0)


def test_criterion_04_slope_at_zero(tmp_path, report):
    t0 = time.perf_counter()
    o = _run("h-slope", tmp_path)
    report(4, o.passed, f"{_fmt(o.metrics)}; {o.verdicts}", t0)


def test_criterion_05_tail_band(tmp_path, report):
    t0 = time.perf_counter()
    o = _run("h-tail", tmp_path)
    report(5, o.passed, f"{_fmt(o.metrics)}; {o.verdicts}", t0)


def test_criterion_06_renewal_scaling(tmp_path, report):
    t0 = time.perf_counter()
    o = _run("renewal-scaling", tmp_path)
    report(6, o.passed, _fmt(o.metrics), t0)


def test_criterion_07_transfer_operator(tmp_path, report):
    t0 = time.perf_counter()
    o = _run("operator-karamata", tmp_path)
    report(7, o.passed, f"K=10^4: {_fmt(o.metrics)}", t0)


def test_criterion_08_fibonacci(tmp_path, report):
    # one 21-cell 3-sigma check has a family-wise false-alarm rate near 5.5%,
    # so the tau-law check is repeated on five fixed seeds and must hold on four
    t0 = time.perf_counter()
    runs = [_run("fib-tail", tmp_path, seed, tag=f"fib{seed}") for seed in range(5)]
    h_ok = all(o.verdicts["h_small"] for o in runs)
    law_ok = sum(o.verdicts["tau_law"] for o in runs)
    zs = ", ".join(f"{o.metrics['max_z']:.2f}" for o in runs)
    detail = f"max|h|={runs[0].metrics['max_abs_h']:.3g}; tau law max z per seed [{zs}], {law_ok}/5 within 3 sigma"
    report(8, h_ok and law_ok >= 4, detail, t0)


def test_criterion_09_smooth_construction(tmp_path, report):
    t0 = time.perf_counter()
    g = _run("smooth-glue", tmp_path)
    d = _run("distortion", tmp_path)
    ok = g.passed and d.passed
    report(9, ok, f"{_fmt(g.metrics)}; {_fmt(d.metrics)}", t0)


def test_criterion_10_noncontinuous_limits(report):
    t0 = time.perf_counter()
    m = wang_noncontinuous_map(0.5)
    lim = noncont_derivative_limits(m, 10**5)
    r = restricted_ratio(m, 10**4)
    ok = abs(lim.liminf - 1.0) <= 0.02 and abs(lim.limsup - 1.5) <= 0.02 and abs(r - 1) <= 1e-3
    report(10, ok, f"liminf={lim.liminf:.6f}, limsup={lim.limsup:.6f}, restricted ratio={r:.7f}", t0)


def test_criterion_11_figures(tmp_path, report):
    t0 = time.perf_counter()
    notes, ok = [], True
    for i in sorted(cli.FIGURES):
        o, man = cli.run_figure(i, tmp_path / f"fig{i}")
        rep = cli.replay(man)
        ok &= o.passed and rep.ok
        notes.append(f"fig{i} {'ok' if o.passed else 'shape-fail'}/{'stable' if rep.ok else 'unstable'}")
    report(11, ok, ", ".join(notes), t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
