"""Renewal sequences, their scaling limits and the A/B transforms.

Conventions: ``f[j] = P(tau = j)`` is the first-return law (``f[0] = 0``), so
``u_0 = 1`` and ``u_n = sum_{j=1}^n f_j u_{n-j}``.  The Markov shift has
states ``0..K`` and jumps from 0 to ``k`` with probability ``P(tau = k + 1)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .semistable_core import DomainError, LogPeriodicM, QuadratureError
from .tail_models import TailSpec

__all__ = [
    "HorizonError",
    "RenewalSequence",
    "renewal_sequence",
    "LogPeriodicP",
    "op_B",
    "op_A",
    "q0_of_M",
    "LaplaceValue",
    "laplace_F",
    "ScalingReport",
    "renewal_scaling_p",
    "safe_z_grid",
    "verify_A_alpha_p",
    "TransferMatrix",
    "transfer_matrix",
    "KaramataReport",
    "operator_karamata_gap",
]


class HorizonError(ValueError):
    """Requested index lies beyond the computed horizon."""


# ---------------------------------------------------------------------------
# Renewal sequence


@dataclass(frozen=True)
class RenewalSequence:
    f: np.ndarray
    u: np.ndarray
    N: int

    def U(self) -> np.ndarray:
        """Renewal function U(k) = sum_{j<=k} u_j."""
        return np.cumsum(self.u)


def _as_return_pmf(f, N: int) -> np.ndarray:
    if isinstance(f, TailSpec):
        return f.return_pmf(N)
    f = np.asarray(f, dtype=float)
    out = np.zeros(N + 1)
    m = min(len(f), N + 1)
    out[:m] = f[:m]
    if np.any(out < 0):
        raise DomainError("negative weights")
    if out[0] != 0.0:
        raise DomainError("f[0] must vanish (return times are positive)")
    if f.sum() > 1.0 + 1e-12:
        raise DomainError("weights sum above 1")
    return out


def _direct(f: np.ndarray, N: int) -> np.ndarray:
    u = np.zeros(N + 1)
    rev = np.zeros(N + 1)  # rev[N - k] = u_k keeps the dot products contiguous
    u[0] = rev[N] = 1.0
    for n in range(1, N + 1):
        v = float(np.dot(f[1:n + 1], rev[N - n + 1:]))
        u[n] = v
        rev[N - n] = v
    return u


def _fft_conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = len(a) + len(b) - 1
    if min(len(a), len(b)) <= 64:
        return np.convolve(a, b)
    size = 1 << (n - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(a, size) * np.fft.rfft(b, size), size)[:n]


def _online(f: np.ndarray, N: int, leaf: int = 64) -> np.ndarray:
    """Divide-and-conquer (relaxed) convolution, O(N log^2 N)."""
    u = np.zeros(N + 1)
    acc = np.zeros(N + 1)

    def solve(lo: int, hi: int):
        if hi - lo <= leaf:
            for n in range(lo, hi):
                if n == 0:
                    u[0] = 1.0
                else:
                    # contributions of u[lo..n-1]; earlier indices already sit in acc
                    u[n] = acc[n] + float(np.dot(u[lo:n], f[n - lo:0:-1]))
            return
        mid = (lo + hi) // 2
        solve(lo, mid)
        conv = _fft_conv(u[lo:mid], f[: hi - lo])
        # acc[n] += sum_{i in [lo,mid)} u_i f_{n-i} for n in [mid, hi)
        acc[mid:hi] += conv[mid - lo: hi - lo]
        solve(mid, hi)

    solve(0, N + 1)
    return u


def renewal_sequence(f, N: int, method: str = "direct") -> RenewalSequence:
    """u_0..u_N from the first-return law ``f`` (array or TailSpec).

    ``method="direct"`` is the O(N^2) recursion, ``"fft"`` the divide-and-conquer
    convolution; both give the same values to rounding.
    """
    if N < 1:
        raise DomainError("N must be at least 1")
    fa = _as_return_pmf(f, N)
    if method == "direct":
        u = _direct(fa, N)
    elif method == "fft":
        u = _online(fa, N)
    else:
        raise ValueError(f"unknown method {method!r}")
    return RenewalSequence(fa, u, N)


# ---------------------------------------------------------------------------
# Log-periodic functions and the B / A transforms

_GL = {n: np.polynomial.legendre.leggauss(n) for n in (8, 16, 24, 32)}


def _gl(a, b, n=24):
    x, w = _GL[n]
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


@dataclass(frozen=True)
class LogPeriodicP:
    """Samples of a positive function with p(P z) = p(z), P = c^(1/rho).

    ``z`` covers one period ``[z[0], z[0] P)``; evaluation interpolates
    linearly in log z with periodic wrap.
    """

    z: np.ndarray
    values: np.ndarray
    rho: float
    c: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or z.size < 2 or np.any(np.diff(z) <= 0):
            raise DomainError("z must be increasing")
        if z[-1] >= z[0] * self.period * (1 + 1e-12):
            raise DomainError("z must lie within one period")
        if np.any(np.asarray(self.values) <= 0):
            raise DomainError("samples must be positive")

    @property
    def alpha(self) -> float:
        return self.rho

    @property
    def period(self) -> float:
        return self.c ** (1.0 / self.rho)

    def _phase(self, x):
        return np.mod(np.log(np.asarray(x, dtype=float) / self.z[0]) / math.log(self.period), 1.0)

    def __call__(self, x):
        ph = self._phase(x)
        nodes = np.log(self.z / self.z[0]) / math.log(self.period)
        xp = np.concatenate([nodes, [1.0]])
        fp = np.concatenate([self.values, [self.values[0]]])
        return np.interp(ph, xp, fp)

    def breaks(self) -> np.ndarray:
        """Interpolation nodes moved into [1, P)."""
        return np.sort(np.power(self.period, self._phase(self.z)))

    def monotone_check(self, n_grid: int = 4097) -> float:
        """Largest relative drop of x^rho p(x) over a period (0 when nondecreasing)."""
        x = self.z[0] * np.power(self.period, np.linspace(0.0, 1.0, n_grid))
        g = x**self.rho * self(x)
        return float(max(0.0, np.max((g[:-1] - g[1:]) / g[:-1])))


def _period_of(p) -> float:
    return float(p.c ** (1.0 / p.alpha))


def _breaks_of(p) -> np.ndarray:
    """Points in [1, P) where ``p`` may be non-smooth."""
    P = _period_of(p)
    if isinstance(p, LogPeriodicP):
        b = p.breaks()
    else:
        hint = getattr(p, "continuity_points_hint", None) or ()
        b = np.array([np.power(P, np.mod(np.log(h) / math.log(P), 1.0)) for h in hint])
    b = np.concatenate([[1.0], b, [P]])
    b = np.unique(b[(b >= 1.0) & (b <= P)])
    return b


def _panels(p, sub: int = 8) -> np.ndarray:
    """Log-panel edges on [1, P], refined between the non-smooth points."""
    b = np.log(_breaks_of(p))
    edges = [b[0]]
    width = (b[-1] - b[0]) / sub
    for a, e in zip(b[:-1], b[1:]):
        k = max(1, int(math.ceil((e - a) / width)))
        edges.extend(np.linspace(a, e, k + 1)[1:])
    return np.exp(np.array(edges))


class _BTransform:
    """B_rho p for a log-periodic p, reduced to one period."""

    def __init__(self, p, rho: float, sub: int = 16):
        if rho <= 0:
            raise DomainError("rho must be positive")
        self.p, self.rho = p, rho
        self.P = _period_of(p)
        self.edges = _panels(p, sub)
        lo, hi = np.log(self.edges[:-1]), np.log(self.edges[1:])
        u, w = _gl(lo, hi, 32)
        vals = (np.exp(rho * u) * p(np.exp(u)) * w).sum(axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(vals)])
        self.I0 = self.cum[-1]
        if not np.isfinite(self.I0):
            raise QuadratureError("B transform integral is not finite")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("B_rho p needs x > 0")
        P, rho = self.P, self.rho
        k = np.floor(np.log(x) / math.log(P))
        x0 = x / np.power(P, k)
        x0 = np.where(x0 >= P, x0 / P, x0)
        x0 = np.where(x0 < 1.0, x0 * P, x0)
        i = np.clip(np.searchsorted(self.edges, x0, side="right") - 1, 0, len(self.edges) - 2)
        u, w = _gl(np.log(self.edges[i]), np.log(x0), 32)
        part = (np.exp(rho * u) * self.p(np.exp(u)) * w).sum(axis=-1)
        inner = self.I0 / (P**rho - 1.0) + self.cum[i] + part
        out = x0 ** (-rho) * inner
        return float(out) if out.ndim == 0 else out

    # the output is log-periodic with the same period and is continuous
    @property
    def c(self):
        return self.p.c

    @property
    def alpha(self):
        return self.p.alpha

    continuity_points_hint = ()


def op_B(p, rho: float, x):
    """B_rho p(x) = x^-rho int_0^x y^(rho-1) p(y) dy for log-periodic p."""
    return _BTransform(p, rho)(x)


def op_A(p, rho: float, s, y_min: float = 1e-40, y_max: float = 80.0):
    """A_rho p(s) = s^(rho+1) int_0^inf e^(-s x) p(x) x^rho dx for log-periodic p.

    After x = y/s the integrand is e^-y y^rho p(y/s); panels follow the periods
    of p(y/s) so that jumps of p sit on panel edges.
    """
    if rho <= 0:
        raise DomainError("rho must be positive")
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr <= 0):
        raise DomainError("s must be positive")
    P = _period_of(p)
    base = _panels(p, 8)
    out = np.empty_like(s_arr)
    for i, sv in enumerate(s_arr):
        # edges in y: s * base * P^k covering [y_min, y_max]
        k0 = math.floor(math.log(y_min / sv) / math.log(P)) - 1
        k1 = math.ceil(math.log(y_max / sv) / math.log(P)) + 1
        ks = np.arange(k0, k1 + 1, dtype=float)
        e = (sv * base[:-1][None, :] * np.power(P, ks)[:, None]).ravel()
        e = np.concatenate([e, [sv * base[-1] * P**k1]])
        e = e[(e >= y_min * 0.999) & (e <= 4 * y_max)]
        e = np.unique(np.concatenate([[y_min], e[(e > y_min) & (e < y_max)], [y_max]]))
        # refine near the exponential cut-off so that e^-y is resolved
        fine = []
        for a, b in zip(e[:-1], e[1:]):
            n = max(1, int(math.ceil((b - a) / 2.0)))
            fine.extend(np.linspace(a, b, n + 1)[:-1])
        fine.append(e[-1])
        e = np.array(fine)
        u, w = _gl(np.log(e[:-1]), np.log(e[1:]), 24)
        y = np.exp(u)
        val = (np.exp(-y) * y ** (rho + 1.0) * p(y / sv) * w).sum()
        out[i] = val
    if not np.all(np.isfinite(out)):
        raise QuadratureError("A transform produced non-finite values")
    return float(out[0]) if np.ndim(s) == 0 else out


class _Q0:
    def __init__(self, m: LogPeriodicM, alpha: float):
        self.m, self.alpha = m, alpha
        self.b = _BTransform(m, 1.0 - alpha)

    def __call__(self, s):
        return op_A(self.b, 1.0 - self.alpha, s)


def q0_of_M(m: LogPeriodicM, alpha: float) -> Callable:
    """q_0 = A_{1-alpha} B_{1-alpha} M as a function of s."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0,1)")
    return _Q0(m, alpha)


# ---------------------------------------------------------------------------
# Laplace side


@dataclass(frozen=True)
class LaplaceValue:
    value: float
    error_bound: float

    def __float__(self):
        return self.value


def _lattice_sum(tail, s: float, k0: int, k1: int, chunk: int = 1 << 22) -> float:
    """sum_{k0 <= k < k1} e^{-s k} tail(k)."""
    tot = 0.0
    for a in range(k0, k1, chunk):
        k = np.arange(a, min(k1, a + chunk), dtype=float)
        tot += float(np.sum(np.exp(-s * k) * tail(k)))
    return tot


def _em_tail(g: Callable, s: float, x0: float, cut: float = 50.0) -> tuple[float, float]:
    """sum_{k >= x0} e^{-s k} g(k) by Euler-Maclaurin with a smooth g."""
    x1 = x0 + cut / s
    n = max(8, int(math.ceil(math.log(x1 / x0) / 0.05)))
    e = np.exp(np.linspace(math.log(x0), math.log(x1), n + 1))
    u, w = _gl(np.log(e[:-1]), np.log(e[1:]), 24)
    x = np.exp(u)
    integral = float(np.sum(np.exp(-s * x) * g(x) * x * w))

    def G(t):
        return math.exp(-s * t) * float(g(np.array(t)))

    d1 = (G(x0 + 1.0) - G(x0 - 1.0)) / 2.0
    corr = 0.5 * G(x0) - d1 / 12.0
    # neglected terms: next Euler-Maclaurin term and the exponential cut
    d3 = (G(x0 + 2) - 2 * G(x0 + 1) + 2 * G(x0 - 1) - G(x0 - 2)) / 2.0
    err = abs(d3) / 720.0 + math.exp(-s * x1) * float(g(np.array(x1))) / s + 1e-15 * abs(integral)
    return integral + corr, err


def laplace_F(f, s: float, tol: float = 1e-13) -> LaplaceValue:
    """1 - F^(s) = sum_k (1 - e^{-s k}) f_k.

    ``f`` is a TailSpec or an array of weights ``f[k] = P(tau = k)``.
    """
    if s <= 0:
        raise DomainError("s must be positive")
    if not isinstance(f, TailSpec):
        w = np.asarray(f, dtype=float)
        k = np.arange(len(w), dtype=float)
        missing = max(0.0, 1.0 - float(w.sum()))
        return LaplaceValue(float(np.sum(-np.expm1(-s * k) * w)), missing)
    spec = f
    if spec.atoms is not None:
        j = 64
        while True:
            pos, pr = spec.atoms(j)
            rest = 1.0 - float(pr.sum())
            if rest <= tol or j > 4000:
                break
            j *= 2
        return LaplaceValue(float(np.sum(-np.expm1(-s * pos) * pr)), max(rest, 0.0))
    pref = -math.expm1(-s)
    need = int(math.ceil(math.log(1.0 / tol) / s))
    if spec.tail_real is not None and need > (1 << 21):
        k0 = max(1 << 20, int(math.ceil(spec.tail_real[0])) + 2)
        head = _lattice_sum(spec.tail, s, 0, k0)
        rest, err = _em_tail(spec.tail_real[1], s, float(k0))
        return LaplaceValue(pref * (head + rest), pref * err)
    head = _lattice_sum(spec.tail, s, 0, need)
    bound = math.exp(-s * need) * float(spec.tail(need)) / pref
    return LaplaceValue(pref * head, pref * bound)


# ---------------------------------------------------------------------------
# Scaling of the renewal function


@dataclass(frozen=True)
class ScalingReport:
    z: np.ndarray
    n_list: tuple[int, ...]
    p_hat: np.ndarray  # shape (len(n_list), len(z))
    delta_to_prev: np.ndarray  # NaN in the first row

    def rows(self):
        for i, n in enumerate(self.n_list):
            for j, z in enumerate(self.z):
                yield float(z), int(n), float(self.p_hat[i, j]), float(self.delta_to_prev[i, j])

    def to_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["z", "n", "p_hat", "delta_to_prev_n"])
            for r in self.rows():
                wr.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


def safe_z_grid(z0: float, count: int, alpha: float, c: float,
                jump_phases: Sequence[float] = (), guard: float = 1e-3) -> np.ndarray:
    """``count`` log-spaced points over one period from z0, kept 'guard' away (in phase) from jumps."""
    P = c ** (1.0 / alpha)
    ph = (np.arange(count) + 0.5) / count
    for j in jump_phases:
        d = np.mod(ph - j + 0.5, 1.0) - 0.5
        ph = np.where(np.abs(d) < guard, ph + np.sign(d + 1e-300) * guard, ph)
    return np.sort(z0 * np.power(P, np.mod(ph, 1.0)))


def _scaled(U: np.ndarray, alpha: float, c: float, z: np.ndarray, n: int, ell=None) -> np.ndarray:
    x = np.floor(c ** (n / alpha) * z * (1 + 1e-15)).astype(np.int64)
    if x.max() >= len(U):
        raise HorizonError(f"index {int(x.max())} beyond horizon {len(U) - 1}")
    norm = c**n * z**alpha
    if ell is not None:
        norm = norm / ell(c ** (n / alpha) * z)
    return U[x] / norm


def _report(U, alpha, c, z, n_list, ell=None) -> ScalingReport:
    z = np.asarray(z, dtype=float)
    ph = np.array([_scaled(U, alpha, c, z, n, ell) for n in n_list])
    d = np.full_like(ph, np.nan)
    d[1:] = np.abs(ph[1:] - ph[:-1])
    return ScalingReport(z, tuple(int(n) for n in n_list), ph, d)


def renewal_scaling_p(useq: RenewalSequence, alpha: float, c: float, z_grid, n_list):
    """p^_n(z) = U(c^{n/alpha} z) / (c^n z^alpha) plus the per-z convergence report.

    The limiting samples (largest n) come back as a LogPeriodicP when the grid
    has at least two points within one period, otherwise None.
    """
    rep = _report(useq.U(), alpha, c, z_grid, n_list)
    z = rep.z
    lp = None
    P = c ** (1.0 / alpha)
    if z.size >= 2 and z[-1] < z[0] * P * (1 - 1e-12):
        lp = LogPeriodicP(z, rep.p_hat[-1].copy(), alpha, c)
    return lp, rep


def verify_A_alpha_p(p_hat: LogPeriodicP, q0, s_grid) -> float:
    """sup over s of |A_alpha p^(s) q_0(s) - 1|."""
    s = np.asarray(s_grid, dtype=float)
    a = op_A(p_hat, p_hat.rho, s)
    q = np.asarray(q0(s), dtype=float) if callable(q0) else np.full_like(s, float(q0))
    return float(np.max(np.abs(a * q - 1.0)))


# ---------------------------------------------------------------------------
# Markov shift


@dataclass(frozen=True)
class TransferMatrix:
    """Truncated transition matrix of the renewal shift on states 0..K."""

    matrix: sp.csr_matrix
    K: int
    chain_f: np.ndarray  # row 0 as used (tail mass folded into state K)
    tail: np.ndarray  # P(tau > k), k = 0..K, for the stationarity check

    def readout(self, n_max: int) -> np.ndarray:
        """(P^n)_{00} for n = 0..n_max; equals u_n for n <= K."""
        v = np.zeros(self.K + 1)
        v[0] = 1.0
        out = np.empty(n_max + 1)
        out[0] = 1.0
        mt = self.matrix.T.tocsr()
        for n in range(1, n_max + 1):
            v = mt @ v
            out[n] = v[0]
        return out

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def stationarity_residual(self) -> float:
        """max_k |(pi P)_k - pi_k| over states whose column is untouched by the fold."""
        pi = self.tail
        r = self.matrix.T @ pi - pi
        return float(np.max(np.abs(r[: self.K])))


def transfer_matrix(spec, K: int) -> TransferMatrix:
    """Sparse transition matrix on 0..K; mass of jumps beyond K goes to state K."""
    if K < 1:
        raise DomainError("K must be at least 1")
    r = _as_return_pmf(spec, K + 1) if not isinstance(spec, TailSpec) else spec.return_pmf(K + 1)
    f = r[1:K + 2].copy()  # f_k = P(tau = k+1), k = 0..K
    if isinstance(spec, TailSpec):
        tail_k = np.asarray(spec.tail(np.arange(K + 1)), dtype=float)
        f[K] = tail_k[K]  # P(tau > K) = P(jump >= K)
    else:
        tail_k = 1.0 - np.concatenate([[0.0], np.cumsum(r[1:K + 1])])
        f[K] = max(0.0, 1.0 - f[:K].sum())
    rows = np.concatenate([np.zeros(K + 1, dtype=np.int64), np.arange(1, K + 1)])
    cols = np.concatenate([np.arange(K + 1), np.arange(0, K)])
    data = np.concatenate([f, np.ones(K)])
    keep = data != 0
    m = sp.csr_matrix((data[keep], (rows[keep], cols[keep])), shape=(K + 1, K + 1))
    return TransferMatrix(m, K, f, tail_k)


@dataclass(frozen=True)
class KaramataReport:
    scaling: ScalingReport
    match_scalar: float | None
    min_partial_sum: float


def operator_karamata_gap(Tseq, alpha: float, c: float, q0, z_grid, n_list,
                          ell: Callable | None = None, scalar: ScalingReport | None = None) -> KaramataReport:
    """Normalised partial sums of the transfer operators read at state 0.

    ``Tseq`` is a TransferMatrix (readouts only within its exact horizon K) or a
    RenewalSequence.  When ``scalar`` is given the profile is compared to it.
    """
    z = np.asarray(z_grid, dtype=float)
    need = int(max(math.floor(c ** (n / alpha) * z.max() * (1 + 1e-15)) for n in n_list))
    if isinstance(Tseq, TransferMatrix):
        if need > Tseq.K:
            raise HorizonError(f"index {need} beyond exact horizon K={Tseq.K}")
        t = Tseq.readout(need)
    elif isinstance(Tseq, RenewalSequence):
        if need > Tseq.N:
            raise HorizonError(f"index {need} beyond horizon {Tseq.N}")
        t = Tseq.u[: need + 1]
    else:
        t = np.asarray(Tseq, dtype=float)
    U = np.cumsum(t)
    rep = _report(U, alpha, c, z, n_list, ell)
    match = None
    if scalar is not None:
        match = float(np.max(np.abs(rep.p_hat - scalar.p_hat)))
    return KaramataReport(rep, match, float(U.min()))
