"""Renewal chain simulation, occupation times and the H_lambda laws.

S_n counts visits of the renewal chain to 0 during times 0..n-1 (X_0 = 0),
Z_m = tau_1 + ... + tau_m, and the two are linked by S_n >= m <=> Z_{m-1} <= n-1.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .semistable_core import (
    DEFAULT_Q,
    DomainError,
    LogPeriodicM,
    QuadratureConfig,
    SemistableLaw,
    cdf,
)
from .tail_models import TailSpec, draw_tau, gamma, h_lambda, norming_a

__all__ = [
    "RenewalPath",
    "simulate_returns",
    "simulate_S",
    "chain_visits",
    "duality_violations",
    "EmpiricalCurve",
    "empirical_cdf_S",
    "H_lambda_cdf",
    "MergingReport",
    "merging_gap",
    "reference_curve",
    "SlopeEstimate",
    "H_slope_at_zero",
    "H_tail_band",
    "MomentReport",
    "H_moments",
]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


# ---------------------------------------------------------------------------
# Paths


@dataclass(frozen=True)
class RenewalPath:
    taus: np.ndarray  # tau_1..tau_{S_n}; the last one carries Z past n-1
    Z: np.ndarray  # Z_0..Z_{S_n}
    n: int
    S_n: int

    def duality_holds(self) -> bool:
        """S_n >= m  <=>  Z_{m-1} <= n-1 for every 1 <= m <= S_n + 1."""
        m = np.arange(1, self.S_n + 2)
        lhs = self.S_n >= m
        rhs = self.Z[m - 1] <= self.n - 1
        return bool(np.all(lhs == rhs))


def simulate_returns(spec: TailSpec, n: int, seed: int, block: int = 256) -> RenewalPath:
    """One path: return times drawn until Z passes n-1."""
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = _rng(seed)
    taus: list[np.ndarray] = []
    total = 0
    while total <= n - 1:
        t = draw_tau(spec, rng, block)
        cs = total + np.cumsum(np.minimum(t, n))
        hit = np.searchsorted(cs, n - 1, side="right")
        if hit < block:
            taus.append(t[: hit + 1])
            break
        taus.append(t)
        total = int(cs[-1])
    tau = np.concatenate(taus)
    Z = np.concatenate([[0], np.cumsum(tau)])
    s_n = int(np.searchsorted(Z, n - 1, side="right"))
    return RenewalPath(tau, Z, int(n), s_n)


def chain_visits(taus: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Run the renewal chain step by step and count visits to 0 before time n.

    From 0 the chain jumps to tau - 1, elsewhere it moves down by one.  This is
    an independent route to S_n used to test the duality identity.
    """
    P = len(taus)
    width = max(len(t) for t in taus) + 1
    table = np.zeros((P, width), dtype=np.int64)
    for i, t in enumerate(taus):
        table[i, : len(t)] = t
    state = np.zeros(P, dtype=np.int64)
    ptr = np.zeros(P, dtype=np.int64)
    visits = np.zeros(P, dtype=np.int64)
    rows = np.arange(P)
    for _ in range(n):
        at0 = state == 0
        visits += at0
        jump = table[rows, np.minimum(ptr, width - 1)] - 1
        state = np.where(at0, jump, state - 1)
        ptr += at0
    return visits


def duality_violations(spec: TailSpec, n: int, n_paths: int, seed: int) -> int:
    """Number of paths on which the duality identity or the chain count fails."""
    paths = [simulate_returns(spec, n, seed + 7919 * i) for i in range(n_paths)]
    chain = chain_visits([p.taus for p in paths], n)
    bad = 0
    for p, s in zip(paths, chain):
        if not p.duality_holds() or int(s) != p.S_n:
            bad += 1
    return bad


def simulate_S(spec: TailSpec, n: int, n_samples: int, seed: int, chunk: int = 2048) -> np.ndarray:
    """n_samples iid copies of S_n; deterministic per (seed, chunk)."""
    if n < 1 or n_samples < 1:
        raise DomainError("n and n_samples must be positive")
    out = np.empty(n_samples, dtype=np.int64)
    a = norming_a(spec, n)
    block = int(min(max(32, 2 * a), 1 << 14))
    for ci, s in enumerate(range(0, n_samples, chunk)):
        rng = _rng(seed, ci)
        size = min(chunk, n_samples - s)
        Z = np.zeros(size, dtype=np.int64)
        cnt = np.ones(size, dtype=np.int64)  # Z_0 = 0 is a visit
        live = np.arange(size)
        while live.size:
            t = np.minimum(draw_tau(spec, rng, (live.size, block)), n)
            cs = Z[live, None] + np.cumsum(t, axis=1)
            cnt[live] += (cs <= n - 1).sum(axis=1)
            Z[live] = cs[:, -1]
            live = live[Z[live] <= n - 1]
        out[s: s + size] = cnt
    return out


# ---------------------------------------------------------------------------
# Distribution of S_n / a_n


@dataclass(frozen=True)
class EmpiricalCurve:
    grid: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    n: int
    a_n: int
    n_samples: int


def empirical_cdf_S(spec: TailSpec, n: int, grid, n_samples: int, seed: int,
                    samples: np.ndarray | None = None) -> EmpiricalCurve:
    """Monte Carlo P(S_n / a_n <= x) with binomial standard errors."""
    if n_samples < 1000:
        raise DomainError("n_samples must be at least 1000")
    S = simulate_S(spec, n, n_samples, seed) if samples is None else np.asarray(samples)
    a = norming_a(spec, n)
    g = np.asarray(grid, dtype=float)
    srt = np.sort(S / a)
    v = np.searchsorted(srt, g, side="right") / S.size
    sig = np.sqrt(np.maximum(v * (1 - v), 1.0 / S.size) / S.size)
    return EmpiricalCurve(g, v, sig, int(n), a, int(S.size))


def _circle(lam: float, c: float) -> float:
    """Representative of lam in (1/c, 1] on the multiplicative circle."""
    while lam <= 1.0 / c:
        lam *= c
    while lam > 1.0 + 1e-15:
        lam /= c
    return min(lam, 1.0)


def _check_m(m: LogPeriodicM, alpha: float, c: float):
    if abs(m.alpha - alpha) > 1e-12 or abs(m.c - c) > 1e-12 * c:
        raise DomainError("alpha/c disagree with the amplitude M")


def H_lambda_cdf(m: LogPeriodicM, alpha: float, c: float, lam: float, x,
                 q: QuadratureConfig = DEFAULT_Q, with_error: bool = False):
    """H_lam(x) = 1 - G_{h_lam(x)}(x^(-1/alpha))."""
    _check_m(m, alpha, c)
    if not 1.0 / c - 1e-12 < lam <= 1.0 + 1e-12:
        raise DomainError("lambda must lie in (1/c, 1]")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 0):
        raise DomainError("x must be positive")
    lams = np.atleast_1d(h_lambda(lam, xs, c))
    out = np.empty_like(xs)
    err = 0.0
    keys = np.round(lams, 15)
    for key in np.unique(keys):
        sel = keys == key
        law = SemistableLaw(m, _circle(float(lams[sel][0]), c))
        r = cdf(law, xs[sel] ** (-1.0 / alpha), q)
        out[sel] = 1.0 - np.asarray(r.value, dtype=float)
        err = max(err, r.error_bound)
    out = np.clip(out, 0.0, 1.0)
    val = float(out[0]) if np.ndim(x) == 0 else out
    return (val, err) if with_error else val


# ---------------------------------------------------------------------------
# Merging


@dataclass(frozen=True)
class MergingReport:
    grid: np.ndarray
    empirical: np.ndarray
    reference: np.ndarray
    sup_gap: float
    n: int
    n_samples: int
    sigma: np.ndarray
    inversion_error: float

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.empirical - self.reference)

    def excess_over_band(self, k: float = 3.0) -> float:
        """Largest gap beyond k sigma plus inversion error (<= 0 means inside)."""
        return float(np.max(self.gap - k * self.sigma - self.inversion_error))

    def to_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "empirical", "reference", "gap"])
            for row in zip(self.grid, self.empirical, self.reference, self.gap):
                wr.writerow([f"{float(v):.17g}" for v in row])


def reference_curve(spec: TailSpec, n: int, grid, q: QuadratureConfig = DEFAULT_Q,
                    position: str = "a_n x") -> tuple[np.ndarray, float, np.ndarray]:
    """P(V_gamma <= x^(-1/alpha)) with gamma = gamma(a_n x) (or gamma(n), for contrast)."""
    a = norming_a(spec, n)
    g = np.asarray(grid, dtype=float)
    if position == "a_n x":
        lams = np.array([_circle(gamma(spec, a * x), spec.c) for x in g])
    elif position == "n":
        lams = np.full(g.shape, _circle(gamma(spec, n), spec.c))
    else:
        raise ValueError(f"unknown position rule {position!r}")
    ref = np.empty_like(g)
    err = 0.0
    for i, (x, lam) in enumerate(zip(g, lams)):
        r = cdf(SemistableLaw(spec.m, float(lam)), x ** (-1.0 / spec.alpha), q)
        ref[i] = float(r)
        err = max(err, r.error_bound)
    return ref, err, lams


def merging_gap(spec: TailSpec, n: int, grid, n_samples: int, seed: int,
                q: QuadratureConfig = DEFAULT_Q, samples: np.ndarray | None = None) -> MergingReport:
    """sup_x |P^(S_n >= a_n x) - P(V_{gamma(a_n x)} <= x^(-1/alpha))| over the grid."""
    g = np.asarray(grid, dtype=float)
    if np.any(g <= 0):
        raise DomainError("grid must be positive")
    S = simulate_S(spec, n, n_samples, seed) if samples is None else np.asarray(samples)
    a = norming_a(spec, n)
    thresh = np.ceil(a * g * (1 - 1e-15))
    emp = np.array([(S >= t).mean() for t in thresh])
    ref, err, _ = reference_curve(spec, n, g, q)
    sig = np.sqrt(np.maximum(emp * (1 - emp), 1.0 / S.size) / S.size)
    gap = float(np.max(np.abs(emp - ref)))
    return MergingReport(g, emp, ref, gap, int(n), int(S.size), sig, err)


# ---------------------------------------------------------------------------
# Properties of H_lambda


@dataclass(frozen=True)
class SlopeEstimate:
    estimate: float
    reference: float
    x: np.ndarray
    ratios: np.ndarray

    @property
    def relative_error(self) -> float:
        return abs(self.estimate / self.reference - 1.0)


def H_slope_at_zero(m: LogPeriodicM, alpha: float, c: float, lam: float,
                    q: QuadratureConfig = DEFAULT_Q,
                    x=(1e-2, 10**-2.5, 1e-3)) -> SlopeEstimate:
    """lim H_lam(x)/x as x -> 0, extrapolated linearly in x from a few small x."""
    xs = np.asarray(x, dtype=float)
    r = np.asarray(H_lambda_cdf(m, alpha, c, lam, xs, q), dtype=float) / xs
    coef = np.polyfit(xs, r, 1)
    est = float(coef[1])
    ref = float(m(lam ** (1.0 / alpha)))
    return SlopeEstimate(est, ref, xs, r)


def H_tail_band(m: LogPeriodicM, alpha: float, c: float, lam: float, x,
                q: QuadratureConfig = DEFAULT_Q) -> np.ndarray:
    """-log(1 - H_lam(x)) / x^(1/(1-alpha)) on a grid of large x."""
    xs = np.asarray(x, dtype=float)
    h = np.asarray(H_lambda_cdf(m, alpha, c, lam, xs, q), dtype=float)
    with np.errstate(divide="ignore"):
        return -np.log1p(-h) / xs ** (1.0 / (1.0 - alpha))


@dataclass(frozen=True)
class MomentReport:
    k: np.ndarray
    moments: np.ndarray
    std_error: np.ndarray
    ml_scale: float
    ml_ratio_max: float  # max_k M_k / fitted Mittag-Leffler profile


def _ml_profile(k: np.ndarray, alpha: float) -> np.ndarray:
    return np.exp(np.array([math.lgamma(kk + 1) - math.lgamma(1 + kk * alpha) for kk in k]))


def H_moments(data, k_max: int = 8, alpha: float = 0.5) -> MomentReport:
    """Moments M_0..M_k_max from samples, or from a (grid, cdf) pair.

    The Mittag-Leffler profile C theta^k k!/Gamma(1 + k alpha) is fitted by
    least squares in log scale; ``ml_ratio_max`` reports the largest ratio.
    """
    if not 0 <= k_max <= 8:
        raise DomainError("k_max must lie in 0..8")
    k = np.arange(k_max + 1)
    if isinstance(data, tuple):
        x, F = (np.asarray(v, dtype=float) for v in data)
        surv = 1.0 - F
        mom = np.array([1.0] + [float(np.trapezoid(kk * x ** (kk - 1) * surv, x)) for kk in k[1:]])
        se = np.zeros_like(mom)
    else:
        s = np.asarray(data, dtype=float)
        pw = s[None, :] ** k[:, None]
        mom = pw.mean(axis=1)
        se = pw.std(axis=1) / math.sqrt(s.size)
    prof = _ml_profile(k, alpha)
    if k_max >= 1 and np.all(mom[1:] > 0):
        y = np.log(mom[1:] / prof[1:])
        A = np.vstack([np.ones(k_max), k[1:]]).T
        (lc, lt), *_ = np.linalg.lstsq(A, y, rcond=None)
        fitted = np.exp(lc + lt * k) * prof
        ratio = float(np.max(mom[1:] / fitted[1:]))
        scale = float(math.exp(lt))
    else:
        ratio, scale = 1.0, float("nan")
    return MomentReport(k, mom, se, scale, ratio)
