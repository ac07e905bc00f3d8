"""Nonnegative semistable laws V_lambda.

A law is specified by a log-periodic amplitude ``M`` (period ``c**(1/alpha)``)
and a position parameter ``lam``.  Its Levy tail is

    Lambda_lam(x) = -R_lam(x) = M(lam**(1/alpha) * x) / x**alpha,

and its characteristic function is ``exp(psi(t))`` with
``psi(t) = int (exp(itx) - 1) dR_lam(x)``.

The Levy measure is split into atoms (jumps of ``M``) and an absolutely
continuous part.  Because ``Lambda(P x) = Lambda(x) / c`` with ``P = c**(1/alpha)``,
one period of the measure determines everything, and the exponent obeys the
scaling law ``psi(P t) = c psi(t)``.  Distribution functions come from the
Gil-Pelaez formula applied to a truncated measure; far in the tail a
compound-Poisson lattice route takes over.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Chebyshev
from scipy import special

__all__ = [
    "DomainError",
    "QuadratureError",
    "LogPeriodicM",
    "SemistableLaw",
    "FiniteLevyLaw",
    "QuadratureConfig",
    "CDFResult",
    "SampleResult",
    "log_floor",
    "constant_m",
    "st_petersburg_m",
    "wang_m",
    "wang_noncontinuous_m",
    "fibonacci_m",
    "levy_tail",
    "char_fn",
    "cdf",
    "sample",
    "nu_lambda",
    "uniform_subexp_gap",
    "small_x_band",
    "mellin_log_char_fn",
]

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class QuadratureError(RuntimeError):
    """A numerical integral could not be brought within its budget."""


def log_floor(x, base: float):
    """Return ``floor(log_base(x))`` with an exact correction at powers of ``base``.

    The logarithm ratio gives a first guess which is then polished against
    ``base**k`` so that points on a period boundary are never misclassified.
    """
    x = np.asarray(x, dtype=float)
    k = np.floor(np.log(x) / math.log(base))
    k = np.where(np.power(base, k + 1.0) <= x, k + 1.0, k)
    k = np.where(np.power(base, k) > x, k - 1.0, k)
    return k.astype(np.int64)


# ---------------------------------------------------------------------------
# Log-periodic amplitudes


@dataclass(frozen=True, eq=False)
class LogPeriodicM:
    """Positive function with ``M(c**(1/alpha) x) = M(x)``.

    ``continuity_points_hint`` lists the jump abscissae of ``M`` inside one
    period ``[1, c**(1/alpha))``.  ``None`` means unknown (jumps are then
    detected numerically); an empty tuple declares ``M`` continuous.
    """

    alpha: float
    c: float
    eval: Callable[[np.ndarray], np.ndarray]
    continuity_points_hint: tuple[float, ...] | None = None
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0,1), got {self.alpha}")
        if not self.c > 1.0:
            raise DomainError(f"c must exceed 1, got {self.c}")

    @property
    def period(self) -> float:
        return self.c ** (1.0 / self.alpha)

    def __call__(self, x):
        return np.asarray(self.eval(np.asarray(x, dtype=float)), dtype=float)

    @property
    def is_constant(self) -> bool:
        return self.label == "constant"

    def check(self, n_grid: int = 2049) -> dict:
        """Grid check of periodicity, positivity and monotonicity of M(x)/x^alpha."""
        P = self.period
        x = np.exp(np.linspace(0.0, math.log(P), n_grid, endpoint=False))
        vals = self(x)
        shifted = self(x * P)
        period_err = float(np.max(np.abs(shifted - vals) / np.abs(vals)))
        dense = np.exp(np.linspace(0.0, 2.0 * math.log(P), 8 * n_grid))
        tail = self(dense) / dense**self.alpha
        rises = np.diff(tail) / tail[:-1]
        return {
            "period_rel_err": period_err,
            "inf": float(vals.min()),
            "sup": float(vals.max()),
            "max_relative_rise": float(max(rises.max(), 0.0)),
            "ok": period_err <= 1e-12 and vals.min() > 0 and rises.max() <= 1e-12,
        }


def constant_m(alpha: float, c: float = 2.0, m0: float = 1.0) -> LogPeriodicM:
    """Constant amplitude: the alpha-stable case."""
    if m0 <= 0:
        raise DomainError("m0 must be positive")
    return LogPeriodicM(alpha, c, lambda x: np.full(np.shape(x), float(m0)), (),
                        "constant", {"m0": float(m0)})


def st_petersburg_m(alpha: float) -> LogPeriodicM:
    """``M(x) = 2**{alpha log2 x}`` of the generalised St. Petersburg law."""
    P = 2.0 ** (1.0 / alpha)

    def ev(x):
        k = log_floor(x, P)
        return (x / np.power(P, k.astype(float))) ** alpha

    return LogPeriodicM(alpha, 2.0, ev, (1.0,), "st_petersburg", {})


def wang_m(alpha: float, c: float = 2.0, eps: float = 0.04) -> LogPeriodicM:
    """Smooth amplitude ``(1 + 2 eps sin(2 pi alpha log x / log c)) / 2``."""
    freq = 2.0 * math.pi * alpha / math.log(c)

    def ev(x):
        return 0.5 * (1.0 + 2.0 * eps * np.sin(freq * np.log(x)))

    return LogPeriodicM(alpha, c, ev, (), "wang", {"eps": float(eps)})


def wang_noncontinuous_m(alpha: float) -> LogPeriodicM:
    """``M(x) = (1 + 2**{alpha log2 x}) / 2``, jumping at ``x = 2**(k/alpha)``."""
    P = 2.0 ** (1.0 / alpha)

    def ev(x):
        k = log_floor(x, P)
        return 0.5 * (1.0 + (x / np.power(P, k.astype(float))) ** alpha)

    return LogPeriodicM(alpha, 2.0, ev, (1.0,), "wang_noncontinuous", {})


def fibonacci_m(lambda_slope: float) -> LogPeriodicM:
    """Amplitude of the Fibonacci tower return time, ``q_inf G**(alpha {log_G(x/q0)})``."""
    alpha = -math.log(lambda_slope) / math.log(GOLDEN)
    q0 = (3.0 + math.sqrt(5.0)) / (2.0 * math.sqrt(5.0))
    q_inf = lambda_slope * q0**alpha

    def ev(x):
        r = x / q0
        k = log_floor(r, GOLDEN)
        return q_inf * (r / np.power(GOLDEN, k.astype(float))) ** alpha

    return LogPeriodicM(alpha, GOLDEN**alpha, ev, (q0,), "fibonacci",
                        {"lambda_slope": float(lambda_slope)})


# ---------------------------------------------------------------------------
# Configuration and results


@dataclass(frozen=True)
class QuadratureConfig:
    """Numerical budgets for evaluation and sampling.

    ``t_max`` overrides the automatic truncation of the inversion integral;
    ``n_nodes`` is the size of the Chebyshev table of the continuous part of the
    exponent over one period; ``small_jump_cut`` is the jump size below which
    the sampler replaces jumps by their mean.
    """

    t_max: float | None = None
    n_nodes: int = 128
    jump_split: bool = True
    small_jump_cut: float = 1e-4
    tol: float = 1e-10
    gauss_order: int = 16
    direct_max: float = 512.0
    fft_size: int = 2**20
    max_nodes: int = 60_000_000
    error_estimate: bool = True

    def __post_init__(self):
        if self.t_max is not None and not self.t_max > 0:
            raise DomainError("t_max must be positive")
        if self.n_nodes < 64:
            raise DomainError("n_nodes must be at least 64")
        if not 0.0 < self.small_jump_cut < 1.0:
            raise DomainError("small_jump_cut must lie in (0,1)")


DEFAULT_Q = QuadratureConfig()


@dataclass(frozen=True)
class CDFResult:
    """Distribution-function values with an accuracy report."""

    value: np.ndarray
    error_bound: float
    nodes: int
    t_max: float
    route: str

    def __float__(self):
        return float(np.asarray(self.value).reshape(-1)[0])


@dataclass(frozen=True)
class SampleResult:
    """Draws plus the reported small-jump truncation bias bound."""

    values: np.ndarray
    bias_bound: float
    small_jump_cut: float
    drift: float


_GAUSS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GAUSS:
        _GAUSS[n] = np.polynomial.legendre.leggauss(n)
    return _GAUSS[n]


def _gauss_on(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


# ---------------------------------------------------------------------------
# Period structure of the Levy measure (position parameter 1)


class _LevyData:
    """One period of the Levy measure with tail M(y)/y^alpha, in u = log y."""

    SERIES_CUT = 0.05
    OSC_CUT = 200.0
    N_DERIV = 4

    def __init__(self, m: LogPeriodicM, jump_split: bool = True, table_nodes: int = 128):
        self.m = m
        self.alpha = a = m.alpha
        self.c = m.c
        self.P = m.period
        self.L = math.log(self.P)
        jumps = self._jump_logs(jump_split)
        self.has_jumps = jumps.size > 0
        self.u0 = float(jumps[0]) if self.has_jumps else 0.0
        self.starts = jumps if self.has_jumps else np.array([0.0])
        self.ends = np.append(self.starts[1:], self.u0 + self.L)
        self.fits = [self._fit(s, e) for s, e in zip(self.starts, self.ends)]
        self.gpolys = []
        for f in self.fits:
            g = [a * f - f.deriv()]
            for j in range(self.N_DERIV - 1):
                g.append(g[-1].deriv() - (a + 1.0 + j) * g[-1])
            self.gpolys.append(g)
        self._check_monotone()

        if self.has_jumps:
            left = [self.fits[j - 1](self.starts[j]) for j in range(1, len(self.starts))]
            left.insert(0, self.fits[-1](self.u0 + self.L))
            right = [f(s) for f, s in zip(self.fits, self.starts)]
            w = (np.array(left) - np.array(right)) * np.exp(-a * self.starts)
            if np.any(w < -1e-12):
                raise DomainError("M(x)/x^alpha increases across a jump")
            self.atom_u = self.starts.copy()
            self.atom_w = np.clip(w, 0.0, None)
        else:
            self.atom_u = np.zeros(0)
            self.atom_w = np.zeros(0)

        scale = max(abs(float(f(0.5 * (f.domain[0] + f.domain[1])))) for f in self.fits)
        nodes = [_gauss_on(s, e, 64) for s, e in zip(self.starts, self.ends)]
        self._piece_nodes = nodes
        dens = [np.exp(-a * u) * g[0](u) for (u, _), g in zip(nodes, self.gpolys)]
        gmax = max(float(np.max(np.abs(d * np.exp(a * u)))) for d, (u, _) in zip(dens, nodes))
        self.has_ac = gmax > 1e-9 * scale
        mmax = 14
        self.mom_ac = np.zeros(mmax + 1)
        self.mom_at = np.zeros(mmax + 1)
        for mm in range(mmax + 1):
            if self.has_ac:
                self.mom_ac[mm] = sum(float(np.sum(w * np.exp(mm * u) * d))
                                      for (u, w), d in zip(nodes, dens))
            self.mom_at[mm] = float(np.sum(self.atom_w * np.exp(mm * self.atom_u)))
        self.piece_mass_ac = np.array([float(np.sum(w * d)) for (u, w), d in zip(nodes, dens)]) \
            if self.has_ac else np.zeros(len(self.fits))
        self.mass_ac0 = float(self.piece_mass_ac.sum())
        self.mass_at0 = float(self.atom_w.sum())
        # int_{period} e^{(1-alpha)u} mu(u) du, used for int_0^a Lambda
        self._int_lambda0 = sum(float(np.sum(w * np.exp((1.0 - a) * u) * f(u)))
                                for (u, w), f in zip(nodes, self.fits))
        self._table = None
        self._table_nodes = table_nodes
        self._rho = None

    # -- construction helpers -------------------------------------------------

    def _jump_logs(self, jump_split: bool) -> np.ndarray:
        m, L = self.m, math.log(self.m.period)
        if not jump_split:
            return np.zeros(0)
        if m.continuity_points_hint is not None:
            pts = np.asarray(m.continuity_points_hint, dtype=float)
            if pts.size == 0:
                return np.zeros(0)
            k = log_floor(pts, m.period)
            v = np.log(pts / np.power(m.period, k.astype(float)))
            return np.unique(np.mod(v, L))
        return self._detect_jumps()

    def _detect_jumps(self, n: int = 16384, threshold: float = 1e-9) -> np.ndarray:
        L = math.log(self.m.period)
        v = np.linspace(0.0, L, n + 1)
        mu = self.m(np.exp(v))
        mu[-1] = mu[0]
        d = np.abs(np.diff(mu))
        nb = np.maximum(np.roll(d, 1), np.roll(d, -1))
        cand = np.nonzero((d > threshold) & (d > 4.0 * nb) & (d > 8.0 * np.median(d)))[0]
        found = []
        for i in cand:
            lo, hi = v[i], v[i + 1]
            flo, fhi = mu[i], mu[i + 1]
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                fm = float(self.m(np.exp(mid)))
                if abs(fm - flo) > abs(fhi - fm):
                    hi, fhi = mid, fm
                else:
                    lo, flo = mid, fm
            if abs(fhi - flo) > threshold:
                found.append(hi % L)
        return np.unique(np.array(found))

    def _fit(self, s: float, e: float) -> Chebyshev:
        def f(u):
            return self.m(np.exp(u))

        for deg in (16, 32, 64, 128, 256):
            ch = Chebyshev.interpolate(f, deg, domain=[s, e])
            coef = np.abs(ch.coef)
            if coef[-4:].max() <= 1e-14 * max(1.0, coef.max()):
                break
        return ch.trim(1e-17 * max(1.0, coef.max()))

    def _check_monotone(self):
        for f, g, s, e in zip(self.fits, self.gpolys, self.starts, self.ends):
            u = np.linspace(s, e, 513)
            if np.min(g[0](u)) < -1e-9 * max(1.0, float(np.max(np.abs(f(u))))):
                raise DomainError("M(x)/x^alpha is not nonincreasing")

    # -- locating points --------------------------------------------------------

    def locate(self, u):
        """Period index, reduced log-position and piece index of log-positions ``u``."""
        u = np.asarray(u, dtype=float)
        k = np.floor((u - self.u0) / self.L).astype(np.int64)
        ur = u - k * self.L
        hi = ur >= self.u0 + self.L
        k = np.where(hi, k + 1, k)
        ur = np.where(hi, ur - self.L, ur)
        lo = ur < self.u0
        k = np.where(lo, k - 1, k)
        ur = np.where(lo, ur + self.L, ur)
        piece = np.clip(np.searchsorted(self.starts, ur, side="right") - 1, 0, len(self.starts) - 1)
        return k, ur, piece

    def lam(self, y):
        """Levy tail at position 1, straight from M."""
        y = np.asarray(y, dtype=float)
        return self.m(y) / y**self.alpha

    def atoms_above(self, Y: float) -> float:
        """Atom mass in (Y, infinity)."""
        if not self.atom_w.size:
            return 0.0
        ly = math.log(Y)
        k = np.floor((ly - self.atom_u) / self.L).astype(np.int64) + 1
        pos = self.atom_u + k * self.L
        k = np.where(pos <= ly, k + 1, k)
        k = np.where(self.atom_u + (k - 1) * self.L > ly, k - 1, k)
        return float(np.sum(self.atom_w * self.c ** (-k.astype(float))) / (1.0 - 1.0 / self.c))

    def ac_above(self, Y: float) -> float:
        """Absolutely continuous mass in (Y, infinity)."""
        if not self.has_ac:
            return 0.0
        k, ur, p = self.locate(math.log(Y))
        k, ur, p = int(k), float(ur), int(p)
        a = self.alpha
        uu, ww = _gauss_on(ur, float(self.ends[p]), 48)
        part = float(np.sum(ww * np.exp(-a * uu) * self.gpolys[p][0](uu)))
        part += float(self.piece_mass_ac[p + 1:].sum())
        full = self.mass_ac0 * self.c ** (-(k + 1.0)) / (1.0 - 1.0 / self.c)
        return part * self.c ** (-float(k)) + full

    def int_lambda(self, a_: float) -> float:
        """``int_0^a Lambda(y) dy``."""
        k, ur, p = self.locate(math.log(a_))
        k, ur, p = int(k), float(ur), int(p)
        r = self.P / self.c
        total = self._int_lambda0 * r**k / (r - 1.0)
        part = 0.0
        for j in range(p):
            u, w = self._piece_nodes[j]
            part += float(np.sum(w * np.exp((1.0 - self.alpha) * u) * self.fits[j](u)))
        u, w = _gauss_on(float(self.starts[p]), ur, 48)
        part += float(np.sum(w * np.exp((1.0 - self.alpha) * u) * self.fits[p](u)))
        return total + part * r**k

    def first_moment(self, a_: float) -> float:
        """``int_(0,a] y dnu(y)``."""
        return self.int_lambda(a_) - a_ * float(self.lam(a_))

    # -- characteristic exponent ------------------------------------------------

    def _series_k(self, t, X):
        k_lo = np.floor(np.log(self.SERIES_CUT / (t * math.exp(self.u0) * self.P)) / self.L)
        k_lo = k_lo.astype(np.int64)
        if np.isfinite(X):
            kX = int(self.locate(math.log(X))[0])
            k_lo = np.minimum(k_lo, kX - 1)
        return k_lo

    def _series(self, t, k_lo, mom):
        s = t * np.exp(k_lo * self.L)
        ck = self.c ** (-k_lo.astype(float))
        out = np.zeros(t.shape, dtype=complex)
        term = np.ones(t.shape, dtype=complex)
        for mm in range(1, len(mom)):
            term = term * (1j * s) / mm
            out += term * mom[mm] / (1.0 - self.c / self.P**mm)
        return out * ck

    def psi_atoms(self, t, X: float = math.inf):
        """Atomic part of the exponent restricted to jumps in (0, X]."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        if not self.atom_w.size:
            return out
        k_lo = self._series_k(t, X)
        out += self._series(t, k_lo, self.mom_at)
        if np.isfinite(X):
            k_end = np.full(t.shape, int(self.locate(math.log(X))[0]), dtype=np.int64)
        else:
            k_far = int(math.ceil(math.log(max(self.mass_at0, 1e-300) / 1e-20) / math.log(self.c)))
            k_end = np.maximum(k_lo + 1, k_far)
        n_iter = int(np.max(k_end - k_lo)) if t.size else 0
        lX = math.log(X) if np.isfinite(X) else math.inf
        for j in range(1, n_iter + 1):
            k = k_lo + j
            act = k <= k_end
            if not act.any():
                break
            uu = self.atom_u[None, :] + (k * self.L)[:, None]
            # integer powers keep phases exact when P and the atoms are dyadic
            y = np.exp(self.atom_u)[None, :] * np.power(self.P, k.astype(float))[:, None]
            term = self.atom_w[None, :] * np.expm1(1j * t[:, None] * y)
            term *= (self.c ** (-k.astype(float)))[:, None]
            mask = act[:, None] & (uu <= lX)
            out += np.where(mask, term, 0.0).sum(axis=1)
        if not np.isfinite(X):
            out -= self.mass_at0 * self.c ** (-k_end.astype(float)) / (self.c - 1.0)
        return out

    def _edge_terms(self, t, y, k, ur, p, side_piece):
        """Asymptotic antiderivative of exp(ity) g(y) at y (arrays over t)."""
        a = self.alpha
        it = 1j * t
        acc = np.zeros(t.shape, dtype=complex)
        for mm in range(self.N_DERIV):
            gm = y ** (-a - 1.0 - mm) * float(self.gpolys[side_piece][mm](ur))
            acc += (-1.0) ** mm * gm / it ** (mm + 1)
        return np.exp(1j * t * y) * acc

    def ac_tail(self, t, Y: float):
        """``int_Y^inf (exp(ity) - 1) g(y) dy`` for t*Y large (asymptotic expansion)."""
        t = np.asarray(t, dtype=float)
        if not self.has_ac:
            return np.zeros(t.shape, dtype=complex)
        k, ur, p = self.locate(math.log(Y))
        k, ur, p = int(k), float(ur), int(p)
        osc = -self._edge_terms(t, Y, k, ur, p, p)
        if self.has_jumps:
            a = self.alpha
            gscale = max(float(np.max(np.abs(g[0](np.linspace(s, e, 9)))))
                         for g, s, e in zip(self.gpolys, self.starts, self.ends))
            tmin = float(np.min(t))
            kk = k
            while True:
                done = True
                for j, s in enumerate(self.starts):
                    yb = math.exp(s + kk * self.L)
                    if yb <= Y:
                        continue
                    if yb ** (-a - 1.0) * gscale / tmin > 1e-22:
                        done = False
                    left_piece = j - 1 if j > 0 else len(self.starts) - 1
                    ul = s if j > 0 else self.u0 + self.L
                    el = self._edge_terms(t, yb, kk, ul, left_piece, left_piece)
                    er = self._edge_terms(t, yb, kk, s, j, j)
                    osc += el - er
                if done and kk > k:
                    break
                kk += 1
        return osc - self.ac_above(Y)

    def psi_ac_direct(self, t: float, X: float = math.inf) -> complex:
        """Continuous part of the exponent at one t, restricted to (0, X]."""
        if not self.has_ac:
            return 0j
        tt = np.array([float(t)])
        k_lo = int(self._series_k(tt, X)[0])
        total = complex(self._series(tt, np.array([k_lo]), self.mom_ac)[0])
        k = k_lo + 1
        while True:
            for i, (s, e) in enumerate(zip(self.starts, self.ends)):
                ya = math.exp(s + k * self.L)
                if ya >= X:
                    return total
                if t * ya >= self.OSC_CUT:
                    tail = complex(self.ac_tail(tt, ya)[0])
                    if np.isfinite(X):
                        tail -= complex(self.ac_tail(tt, X)[0])
                    return total + tail
                ee = e
                if math.exp(e + k * self.L) > X:
                    ee = math.log(X) - k * self.L
                yb = math.exp(ee + k * self.L)
                n = int(math.ceil(0.6 * t * (yb - ya))) + 24
                u, w = _gauss_on(s, ee, n)
                y = np.exp(u + k * self.L)
                d = np.exp(-self.alpha * u) * self.gpolys[i][0](u)
                total += self.c ** (-k) * complex(np.sum(w * np.expm1(1j * t * y) * d))
            k += 1

    # -- table of the continuous part over one period of t ----------------------

    def _build_table(self):
        L = self.L
        if not self.has_ac:
            self._table = (None, None, 0.0)
            return

        def f(w):
            return np.array([self.psi_ac_direct(math.exp(x)) for x in np.atleast_1d(w)])

        n = self._table_nodes
        re = Chebyshev.interpolate(lambda w: f(w).real, n, domain=[0.0, L])
        # imaginary part from the same nodes: reuse by evaluating once
        nodes = re.domain[0] + 0.5 * (re.domain[1] - re.domain[0]) * (
            1.0 + np.cos(np.pi * (np.arange(n + 1) + 0.5) / (n + 1)))
        vals = f(nodes)
        re = Chebyshev.fit(nodes, vals.real, n, domain=[0.0, L])
        im = Chebyshev.fit(nodes, vals.imag, n, domain=[0.0, L])
        grid = np.linspace(0.0, L, 2**16 + 1)
        dense = re(grid) + 1j * im(grid)
        probe = np.array([0.123, 0.577, 0.911]) * L
        direct = f(probe)
        err = float(np.max(np.abs(re(probe) + 1j * im(probe) - direct)))
        self._table = (grid, dense, err)

    @property
    def table_error(self) -> float:
        if self._table is None:
            self._build_table()
        return self._table[2]

    def psi_ac_table(self, t):
        t = np.asarray(t, dtype=float)
        if not self.has_ac:
            return np.zeros(t.shape, dtype=complex)
        if self._table is None:
            self._build_table()
        grid, dense, _ = self._table
        k = log_floor(t, self.P)
        w = np.log(t) - k * self.L
        w = np.clip(w, 0.0, self.L)
        val = np.interp(w, grid, dense.real) + 1j * np.interp(w, grid, dense.imag)
        return val * self.c ** k.astype(float)

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        return self.psi_atoms(t) + self.psi_ac_table(t)

    def psi_low(self, t, X: float):
        """Exponent of the law restricted to jumps in (0, X]."""
        t = np.asarray(t, dtype=float)
        out = self.psi_atoms(t, X)
        if self.has_ac:
            hi = t * X >= self.OSC_CUT
            if hi.any():
                th = t[hi]
                out[hi] += self.psi_ac_table(th) - self.ac_tail(th, X)
            lo = ~hi
            if lo.any():
                out[lo] += self._psi_ac_below(t[lo], X)
        return out

    def _psi_ac_below(self, t, X: float):
        """Continuous part restricted to (0, X] for a batch of t with t*X small."""
        tm = float(np.max(t))
        k_lo = int(self._series_k(np.array([tm]), X)[0])
        out = self._series(t, np.full(t.shape, k_lo, dtype=np.int64), self.mom_ac)
        us, ws = [], []
        k = k_lo + 1
        lX = math.log(X)
        while True:
            stop = False
            for i, (s, e) in enumerate(zip(self.starts, self.ends)):
                if s + k * self.L >= lX:
                    stop = True
                    break
                ee = min(e, lX - k * self.L)
                ya, yb = math.exp(s + k * self.L), math.exp(ee + k * self.L)
                u, w = _gauss_on(s, ee, int(math.ceil(0.6 * tm * (yb - ya))) + 24)
                us.append(u + k * self.L)
                ws.append(w * np.exp(-self.alpha * u) * self.gpolys[i][0](u) * self.c ** (-k))
            if stop:
                break
            k += 1
        y = np.exp(np.concatenate(us))
        w = np.concatenate(ws)
        step = max(1, (1 << 22) // y.size)
        for j in range(0, t.size, step):
            out[j:j + step] += np.expm1(1j * np.outer(t[j:j + step], y)) @ w
        return out

    # -- decay of |phi| over one period, for truncating the inversion integral --

    def rho_table(self, n_sub: int = 32):
        if self._rho is not None:
            return self._rho
        Y = 200.0 * math.exp(self.u0)
        lip = self.first_moment(Y)
        delta = 0.02 / max(lip, 1e-12)
        n = int(min(max((self.P - 1.0) / delta, 2000), 400_000))
        tau = np.linspace(1.0, self.P, n + 1)
        delta = tau[1] - tau[0]
        re = self.psi_low(tau, Y).real
        edges = np.exp(np.linspace(0.0, self.L, n_sub + 1))
        idx = np.clip(np.searchsorted(edges, tau, side="right") - 1, 0, n_sub - 1)
        mx = np.full(n_sub, -np.inf)
        np.maximum.at(mx, idx, re)
        # include the neighbouring grid point of each sub-interval boundary
        for j in range(1, n_sub):
            b = np.searchsorted(tau, edges[j])
            mx[j] = max(mx[j], re[max(b - 1, 0)])
        log_rho = np.minimum(mx + 0.5 * delta * lip, 0.0)
        if np.any(log_rho >= -1e-14):
            raise QuadratureError("|phi| does not decay over a period")
        self._rho = (edges, log_rho)
        return self._rho


_DATA_CACHE: dict[tuple, _LevyData] = {}


def _levy_data(m: LogPeriodicM, q: QuadratureConfig) -> _LevyData:
    key = (id(m), q.jump_split, q.n_nodes)
    d = _DATA_CACHE.get(key)
    if d is None or d.m is not m:
        d = _LevyData(m, q.jump_split, q.n_nodes)
        _DATA_CACHE[key] = d
    return d


# ---------------------------------------------------------------------------
# Laws


@dataclass(frozen=True, eq=False)
class SemistableLaw:
    """Law V_lambda with Levy function R_lam(x) = -M(lam^(1/alpha) x)/x^alpha."""

    m: LogPeriodicM
    lam: float = 1.0

    def __post_init__(self):
        c = self.m.c
        if not (1.0 / c - 1e-12 < self.lam <= 1.0 + 1e-12):
            raise DomainError(f"position parameter must lie in (1/c, 1], got {self.lam}")

    @property
    def alpha(self) -> float:
        return self.m.alpha

    @property
    def c(self) -> float:
        return self.m.c

    @property
    def is_stable(self) -> bool:
        return self.m.is_constant

    @property
    def _s(self) -> float:
        return self.lam ** (1.0 / self.alpha)

    def data(self, q: QuadratureConfig = DEFAULT_Q) -> _LevyData:
        return _levy_data(self.m, q)

    def levy_tail(self, x):
        x = np.asarray(x, dtype=float)
        return self.m(self._s * x) / x**self.alpha

    TINY = 1e-200

    def log_char_fn(self, t, q: QuadratureConfig = DEFAULT_Q):
        t = np.asarray(t, dtype=float)
        d = self.data(q)
        out = np.zeros(t.shape, dtype=complex)
        # below TINY the exponent is O(TINY^alpha), far under double resolution of 1
        pos = t > self.TINY
        neg = t < -self.TINY
        if pos.any():
            out[pos] = self.lam * d.psi(t[pos] / self._s)
        if neg.any():
            out[neg] = np.conj(self.lam * d.psi(-t[neg] / self._s))
        return out

    def psi_low(self, t, X: float, q: QuadratureConfig = DEFAULT_Q):
        d = self.data(q)
        return self.lam * d.psi_low(np.asarray(t, dtype=float) / self._s, self._s * X)

    def tail_mass(self, X: float, q: QuadratureConfig = DEFAULT_Q) -> float:
        return float(self.levy_tail(X))

    def first_moment(self, X: float, q: QuadratureConfig = DEFAULT_Q) -> float:
        """``int_(0,X] y dnu_lam(y)``."""
        return self.lam * self.data(q).first_moment(self._s * X) / self._s

    def remainder_bound(self, T: float, X: float, q: QuadratureConfig = DEFAULT_Q) -> float:
        """Bound on (1/pi) int_T^inf |phi_low(t)|/t dt."""
        d = self.data(q)
        edges, log_rho = d.rho_table()
        n_sub = len(log_rho)
        width = d.L / n_sub
        tb = T / self._s
        k0 = int(log_floor(tb, d.P))
        total = 0.0
        k = k0
        while True:
            e = edges * d.P**k
            sel = e[1:] > tb
            vals = self.lam * d.c**k * log_rho[sel]
            total += float(np.sum(np.exp(vals))) * width
            if k > k0 and (vals.size == 0 or np.max(vals) < -745.0):
                break
            k += 1
            if k - k0 > 200:
                raise QuadratureError("remainder bound did not converge")
        return math.exp(2.0 * self.tail_mass(X, q)) * total / math.pi

    def t_cut(self, X: float, q: QuadratureConfig = DEFAULT_Q) -> float:
        if q.t_max is not None:
            return float(q.t_max)
        d = self.data(q)
        edges, log_rho = d.rho_table()
        cand = []
        for k in range(-60, 200):
            cand.extend((edges[1:] * d.P**k * self._s).tolist())
        lo, hi = 0, len(cand) - 1
        if self.remainder_bound(cand[hi], X, q) > q.tol:
            raise QuadratureError("inversion integral cannot reach tolerance")
        while lo < hi:
            mid = (lo + hi) // 2
            if self.remainder_bound(cand[mid], X, q) <= q.tol:
                hi = mid
            else:
                lo = mid + 1
        return float(cand[lo])


@dataclass(frozen=True, eq=False)
class FiniteLevyLaw:
    """Compound Poisson law with finitely many atoms on the lattice ``span * N``.

    Serves as a closed-form surrogate (a single unit atom of mass 1 gives
    Poisson(1)).
    """

    atoms: tuple[float, ...]
    weights: tuple[float, ...]
    span: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.size == 0 or np.any(a <= 0) or np.any(np.asarray(self.weights) < 0):
            raise DomainError("atoms must be positive with nonnegative weights")
        ratio = a / self.span
        if np.max(np.abs(ratio - np.round(ratio))) > 1e-12:
            raise DomainError("atoms must lie on the lattice span*N")

    def levy_tail(self, x):
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.atoms)
        w = np.asarray(self.weights)
        return np.sum(np.where(a[None, :] > x.reshape(-1, 1), w[None, :], 0.0), axis=1).reshape(x.shape)

    def log_char_fn(self, t, q: QuadratureConfig = DEFAULT_Q):
        t = np.asarray(t, dtype=float)
        a = np.asarray(self.atoms)
        w = np.asarray(self.weights)
        return np.sum(w * np.expm1(1j * t[..., None] * a), axis=-1)


# ---------------------------------------------------------------------------
# Inversion


def _panel_edges(q0: float, hcap: float, T: float) -> np.ndarray:
    edges = [0.0]
    t = 0.5 * q0
    while t < T and 0.5 * t < hcap:
        edges.append(t)
        t *= 1.5
    start = edges[-1]
    if start < T:
        n = int(math.ceil((T - start) / hcap))
        edges.extend((start + hcap * np.arange(1, n + 1)).tolist())
    return np.asarray(edges)


def _gp_integral(phi_fn, x: np.ndarray, edges: np.ndarray, order: int):
    """sum over panels of the Gauss rule for int Im(e^{-itx} phi(t))/t dt."""
    gx, gw = _gauss(order)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    total = np.zeros(x.shape)
    nper = max(1, (1 << 22) // (order * max(x.size, 1)))
    for s in range(0, a.size, nper):
        aa, hh = a[s:s + nper], half[s:s + nper]
        t = (aa[:, None] + hh[:, None] * (gx[None, :] + 1.0)).ravel()
        w = (hh[:, None] * gw[None, :]).ravel()
        ph = phi_fn(t)
        tx = np.outer(x, t)
        val = ph.imag[None, :] * np.cos(tx) - ph.real[None, :] * np.sin(tx)
        total += (val * (w / t)[None, :]).sum(axis=1)
    return total, a.size * order


def _cdf_gil_pelaez(law: SemistableLaw, x: np.ndarray, q: QuadratureConfig) -> CDFResult:
    xmax = float(np.max(x))
    X = xmax * 1.001
    T = law.t_cut(X, q)
    m1 = law.first_moment(X, q)
    q0 = 1.0 / (xmax + X + m1)
    edges = _panel_edges(q0, 2.0 * math.pi * q0, T)
    n_nodes = (edges.size - 1) * q.gauss_order
    if n_nodes > q.max_nodes:
        raise QuadratureError(f"inversion needs {n_nodes} nodes, budget {q.max_nodes}")

    def phi(t):
        return np.exp(law.psi_low(t, X, q))

    I, nodes = _gp_integral(phi, x, edges, q.gauss_order)
    err = 0.0
    if q.error_estimate:
        I2, n2 = _gp_integral(phi, x, edges, max(6, q.gauss_order - 6))
        err = float(np.max(np.abs(I - I2))) / math.pi
        nodes += n2
    if q.t_max is None:
        err += law.remainder_bound(T, X, q)
    damp = math.exp(-law.tail_mass(X, q))
    vals = damp * (0.5 - I / math.pi)
    err += law.data(q).table_error * T ** law.alpha
    return CDFResult(np.clip(vals, 0.0, 1.0), err, nodes, T, "gil-pelaez")


def _fft_cdf_one(law: SemistableLaw, z: float, q: QuadratureConfig, n: int) -> float:
    """P(V <= z) from a lattice compound-Poisson representation of V."""
    Lg = 2.0 * z
    h = Lg / n
    theta = 12.0 / Lg
    drift = law.first_moment(0.5 * h, q)
    kmax = int(math.floor(z / h - 0.5))
    edges = (np.arange(1, kmax + 2) - 0.5) * h
    edges[-1] = min(edges[-1], z)
    lam_e = law.levy_tail(edges)
    mass = np.zeros(n)
    mass[1:kmax + 1] = lam_e[:-1] - lam_e[1:]
    if edges[-1] < z:
        mass[kmax + 1] = float(lam_e[-1] - law.levy_tail(z))
    grid = np.arange(n) * h
    r = float(mass.sum())
    tilt = np.exp(-theta * grid)
    qhat = np.exp(np.fft.fft(mass * tilt) - r)
    p = np.fft.ifft(qhat).real / tilt
    s = z - drift
    j = int(math.floor(s / h + 0.5))
    frac = s / h + 0.5 - j
    cdf_c = float(np.sum(p[:j])) + frac * float(p[j]) if 0 <= j < n else (0.0 if j < 0 else 1.0)
    return math.exp(-law.tail_mass(z, q)) * min(max(cdf_c, 0.0), 1.0)


def _cdf_fft(law: SemistableLaw, x: np.ndarray, q: QuadratureConfig) -> CDFResult:
    vals = np.array([_fft_cdf_one(law, float(z), q, q.fft_size) for z in x])
    err = 0.0
    if q.error_estimate:
        coarse = np.array([_fft_cdf_one(law, float(z), q, q.fft_size // 2) for z in x])
        err = float(np.max(np.abs(vals - coarse)))
    return CDFResult(vals, err, q.fft_size * x.size, math.inf, "lattice-fft")


def _cdf_lattice(law: FiniteLevyLaw, x: np.ndarray) -> CDFResult:
    a = np.asarray(law.atoms)
    w = np.asarray(law.weights)
    mean = float(np.sum(a * w)) / law.span
    sd = math.sqrt(float(np.sum(a**2 * w))) / law.span
    n = 1 << int(math.ceil(math.log2(max(64.0, mean + 40.0 * sd + 40.0 * a.max() / law.span))))
    s = 2.0 * math.pi * np.arange(n) / n
    phi = np.exp(np.sum(w * np.expm1(1j * s[:, None] * (a / law.span)), axis=1))
    p = np.fft.fft(phi).real / n
    cum = np.cumsum(p)
    idx = np.floor(np.asarray(x, dtype=float) / law.span + 1e-12).astype(int)
    vals = np.where(idx < 0, 0.0, cum[np.clip(idx, 0, n - 1)])
    return CDFResult(np.clip(vals, 0.0, 1.0), 1e-12, n, 2.0 * math.pi, "lattice-dft")


def levy_tail(law, x):
    """``-R_lam(x) = M(lam^(1/alpha) x)/x^alpha``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("levy_tail needs x > 0")
    out = law.levy_tail(x)
    return float(out) if out.ndim == 0 else out


def char_fn(law, t, q: QuadratureConfig = DEFAULT_Q):
    """``exp{int (e^{itx}-1) dR_lam(x)}``."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("t must be finite")
    out = np.exp(law.log_char_fn(t, q))
    return complex(out) if out.ndim == 0 else out


def cdf(law, x, q: QuadratureConfig = DEFAULT_Q) -> CDFResult:
    """Distribution function G_lam(x) with an accuracy report.

    Arguments up to ``q.direct_max`` go through the Gil-Pelaez integral;
    larger ones through the lattice compound-Poisson route.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x_arr <= 0):
        raise DomainError("cdf needs x > 0")
    if isinstance(law, FiniteLevyLaw):
        res = _cdf_lattice(law, x_arr)
    else:
        small = x_arr <= q.direct_max
        vals = np.zeros(x_arr.shape)
        err, nodes, tmax, routes = 0.0, 0, 0.0, []
        if small.any():
            # one truncation level per octave keeps the panel width matched to x
            octave = np.ceil(np.log2(x_arr)).astype(int)
            for o in np.unique(octave[small]):
                sel = small & (octave == o)
                r = _cdf_gil_pelaez(law, x_arr[sel], q)
                vals[sel] = r.value
                err = max(err, r.error_bound)
                nodes += r.nodes
                tmax = max(tmax, r.t_max)
            routes.append(r.route)
        if (~small).any():
            r = _cdf_fft(law, x_arr[~small], q)
            vals[~small] = r.value
            err = max(err, r.error_bound)
            nodes += r.nodes
            routes.append(r.route)
        res = CDFResult(vals, err, nodes, tmax, "+".join(routes))
    value = res.value.reshape(np.shape(x)) if np.ndim(x) else res.value[0]
    return CDFResult(value, res.error_bound, res.nodes, res.t_max, res.route)


def mellin_log_char_fn(m: LogPeriodicM, lam: float, t):
    """Closed-form exponent for amplitudes with finitely many log-Fourier modes.

    Supports the constant and smooth Wang amplitudes:
    ``psi(t) = -sum_j m_j Gamma(1-alpha+i b_j) (-it)^(alpha - i b_j)`` for
    ``Lambda(y) = sum_j m_j y^(-alpha + i b_j)``.
    """
    a = m.alpha
    s = lam ** (1.0 / a)
    if m.label == "constant":
        modes = [(m.params["m0"], 0.0)]
    elif m.label == "wang":
        eps = m.params["eps"]
        b = 2.0 * math.pi * a / math.log(m.c)
        modes = [(0.5, 0.0), (eps / 2j, b), (-eps / 2j, -b)]
    else:
        raise DomainError("closed form only for constant and smooth Wang amplitudes")
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    tp = np.abs(t)
    logmit = np.log(tp) - 0.5j * math.pi
    for mj, bj in modes:
        # Lambda_lam(y) = M(s y) y^-a: mode coefficient picks up s^(i b)
        coef = mj * s ** (1j * bj)
        out += -coef * special.gamma(1.0 - a + 1j * bj) * np.exp((a - 1j * bj) * logmit)
    return np.where(t < 0, np.conj(out), out)


# ---------------------------------------------------------------------------
# Sampling


def _base_inverse(d: _LevyData):
    """Monotone map from Levy-tail level to log-position over one period."""
    levels, pos = [], []
    a = d.alpha
    for j, (s, e) in enumerate(zip(d.starts, d.ends)):
        if d.has_jumps:
            left = d.fits[j - 1](s) if j > 0 else d.fits[-1](d.u0 + d.L)
            levels.append(float(left) * math.exp(-a * s))
            pos.append(s)
        u = np.linspace(s, e, 4097)
        lv = d.fits[j](u) * np.exp(-a * u)
        levels.extend(lv[:-1].tolist())
        pos.extend(u[:-1].tolist())
    end_level = float(d.fits[-1](d.u0 + d.L)) * math.exp(-a * (d.u0 + d.L))
    levels.append(end_level)
    pos.append(d.u0 + d.L)
    lv = np.asarray(levels)[::-1]
    ps = np.asarray(pos)[::-1]
    # keep the smallest position for each repeated level
    keep = np.ones(lv.size, dtype=bool)
    keep[:-1] = lv[1:] > lv[:-1]
    return lv[keep], ps[keep], float(np.asarray(levels)[0])


def _sample_chunk(law: SemistableLaw, seed: int, idx: int, size: int, q: QuadratureConfig,
                  inv, rate: float, drift: float) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(idx,)))
    d = law.data(q)
    lv, ps, top = inv
    counts = rng.poisson(rate, size)
    total = int(counts.sum())
    u = rate * (1.0 - rng.random(total))
    # level at position 1 scale: Lambda_1(s y) = Lambda_lam(y)/lam
    u1 = u / law.lam
    k = np.floor(np.log(top / u1) / math.log(d.c)).astype(np.int64)
    u0 = u1 * d.c ** k.astype(float)
    hi = u0 > top
    k = np.where(hi, k + 1, k)
    u0 = np.where(hi, u0 / d.c, u0)
    lo = u0 <= top / d.c
    k = np.where(lo, k - 1, k)
    u0 = np.where(lo, u0 * d.c, u0)
    logy = np.interp(u0, lv, ps) + k * d.L
    jumps = np.exp(logy) / law._s
    owner = np.repeat(np.arange(size), counts)
    return drift + np.bincount(owner, weights=jumps, minlength=size)


def sample(law, seed: int, n: int, q: QuadratureConfig = DEFAULT_Q,
           chunk: int = 16384, threads: int = 1) -> SampleResult:
    """Draw n iid copies of V_lam.

    Jumps above ``q.small_jump_cut`` are simulated exactly as a compound
    Poisson sum; smaller ones are replaced by their mean.  Output depends only
    on ``(seed, chunk)``, never on ``threads``.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    if isinstance(law, FiniteLevyLaw):
        rng = np.random.default_rng(seed)
        a = np.asarray(law.atoms)
        w = np.asarray(law.weights)
        counts = rng.poisson(w[None, :], size=(n, a.size))
        return SampleResult((counts * a).sum(axis=1).astype(float), 0.0, 0.0, 0.0)
    eps = q.small_jump_cut
    d = law.data(q)
    inv = _base_inverse(d)
    rate = float(law.levy_tail(eps))
    drift = law.first_moment(eps, q)
    # sup over one period of y^(alpha-1) int_(0,y] t dnu, times eps^(1-alpha)
    ys = eps * np.exp(np.linspace(0.0, d.L, 65))
    csup = max(law.first_moment(float(y), q) * y ** (law.alpha - 1.0) for y in ys)
    bias = csup * eps ** (1.0 - law.alpha)
    starts = list(range(0, n, chunk))

    def job(i):
        s = starts[i]
        return _sample_chunk(law, seed, i, min(chunk, n - s), q, inv, rate, drift)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, range(len(starts))))
    else:
        parts = [job(i) for i in range(len(starts))]
    return SampleResult(np.concatenate(parts), bias, eps, drift)


# ---------------------------------------------------------------------------
# Derived quantities


def nu_lambda(law: SemistableLaw, x):
    """Normalised big-jump law ``1 - x^-alpha M(x lam^(1/alpha))/M(lam^(1/alpha))``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 1.0):
        raise DomainError("nu_lambda needs x >= 1")
    s = law._s
    out = 1.0 - x ** (-law.alpha) * law.m(x * s) / law.m(s)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def uniform_subexp_gap(m: LogPeriodicM, x: float, lambda_grid: Sequence[float],
                       q: QuadratureConfig = DEFAULT_Q) -> float:
    """``sup_lam |x^alpha (1 - G_lam(x)) / M(x lam^(1/alpha)) - 1|`` over a grid."""
    gaps = []
    for lam in lambda_grid:
        law = SemistableLaw(m, float(lam))
        tail = 1.0 - float(cdf(law, x, q))
        gaps.append(abs(x**m.alpha * tail / float(m(x * lam ** (1.0 / m.alpha))) - 1.0))
    return float(max(gaps))


def small_x_band(law: SemistableLaw, x, q: QuadratureConfig = DEFAULT_Q) -> np.ndarray:
    """``x^(alpha/(1-alpha)) log G_lam(x)`` on a grid of small x."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(cdf(law, x, q).value, dtype=float)
    a = law.alpha
    with np.errstate(divide="ignore"):
        return x ** (a / (1.0 - a)) * np.log(g)
