"""Interval maps whose first-return times fall in a domain of geometric partial attraction.

All maps share the set Y = (1/2, 1] (base level for the tower), on which the
Wang-type maps act as ``x -> 2x - 1``; on [0, 1/2] the branch on
``(xi_{b+1}, xi_b]`` is carried onto ``(xi_b, xi_{b-1}]``, so a point on that
branch needs exactly ``b`` steps to reach Y.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .semistable_core import GOLDEN, DomainError
from .tail_models import (
    TailSpec,
    _FIB_ARR,
    fibonacci,
    fibonacci_numbers,
    wang_continuous,
    wang_noncontinuous,
)

__all__ = [
    "NumericalEscapeError",
    "TruncationBudgetError",
    "WangMap",
    "wang_map",
    "wang_noncontinuous_map",
    "wang_eval",
    "wang_return_time",
    "DerivativeLimits",
    "noncont_derivative_limits",
    "restricted_ratio",
    "SmoothCoeffs",
    "smooth_coeffs",
    "SmoothWangMap",
    "smooth_wang_map",
    "smooth_eval",
    "smooth_deriv",
    "distortion_bound",
    "min_expansion",
    "FibonacciTower",
    "fib_eval",
    "fib_return_time",
    "fib_tail_h",
    "orbit_occupation",
    "smooth_tail_constant",
]

SNAP = 1e-14
ESCAPE = 1e-12


class NumericalEscapeError(ArithmeticError):
    """An orbit left its branch by more than the escape tolerance."""


class TruncationBudgetError(ArithmeticError):
    """The alternating-tail bound for B_n exceeds the budget."""


# ---------------------------------------------------------------------------
# Wang maps


def _wang_xi(alpha: float, c: float, eps: float) -> Callable:
    a = 2.0 * math.pi * alpha / math.log(c)

    def xi(n):
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = 0.5 * n ** (-alpha) * (1.0 + 2.0 * eps * np.sin(a * np.log(n)))
        return np.where(n == 0, 1.0, v)

    return xi


def _wang_gaps(alpha: float, c: float, eps: float) -> Callable:
    """xi_k - xi_{k+1} for k >= 1 without cancellation."""
    a = 2.0 * math.pi * alpha / math.log(c)

    def gap(k):
        k = np.asarray(k, dtype=float)
        l1 = np.log1p(1.0 / k)
        p = k ** (-alpha) * -np.expm1(-alpha * l1)
        sk = np.sin(a * np.log(k))
        ds = -2.0 * np.cos(a * (np.log(k) + 0.5 * l1)) * np.sin(0.5 * a * l1)
        return 0.5 * (p + 2.0 * eps * (p * sk + (k + 1.0) ** (-alpha) * ds))

    return gap


def _noncont_xi(alpha: float) -> Callable:
    P = 2.0 ** (1.0 / alpha)

    def xi(n):
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.floor(np.log(np.maximum(n, 1.0)) / math.log(P))
            k = np.where(np.power(P, k + 1.0) <= n, k + 1.0, k)
            k = np.where(np.power(P, k) > n, k - 1.0, k)
            frac = (n / np.power(P, k)) ** alpha
            v = 0.25 * n ** (-alpha) * (1.0 + frac)
        return np.where(n == 0, 1.0, v)

    return xi


class _XiTable:
    """xi_0..xi_N with branch lookup; deeper points are located by bisection."""

    def __init__(self, xi: Callable, N: int):
        self.xi = xi
        self.N = N
        self.values = np.asarray(xi(np.arange(N + 1)), dtype=float)
        if np.any(np.diff(self.values) >= 0):
            raise DomainError("xi is not strictly decreasing on the table")
        self.neg = -self.values

    def level(self, y) -> np.ndarray:
        """b >= 0 with xi_{b+1} < y <= xi_b; -1 for y <= 0 (never returns)."""
        y = np.asarray(y, dtype=float)
        b = np.searchsorted(self.neg, -y, side="right").astype(np.int64) - 1
        deep = (b >= self.N) & (y > 0)
        if deep.any():
            yd = y[deep]
            lo = np.full(yd.shape, float(self.N))
            hi = lo * 2.0
            for _ in range(200):
                grow = self.xi(hi) >= yd
                if not grow.any():
                    break
                lo = np.where(grow, hi, lo)
                hi = np.where(grow, hi * 2.0, hi)
            for _ in range(200):
                if np.all(hi - lo <= 1):
                    break
                mid = np.floor(0.5 * (lo + hi))
                up = self.xi(mid) >= yd
                lo = np.where(up, mid, lo)
                hi = np.where(up, hi, mid)
            b[deep] = lo.astype(np.int64)
        b = np.where(y <= 0, -1, b)
        return b


@dataclass(frozen=True, eq=False)
class WangMap:
    """Countably piecewise linear map with T(xi_{n+1}) = xi_n and 2x - 1 on (1/2, 1]."""

    alpha: float
    c: float
    eps: float
    variant: str
    xi: Callable
    table: _XiTable
    gap: Callable | None = None

    def tail_spec(self) -> TailSpec:
        """Law of the first return time to Y under normalised Lebesgue measure."""
        if self.variant == "continuous":
            return wang_continuous(self.alpha, self.c, self.eps)
        return wang_noncontinuous(self.alpha, scale=0.5)

    def _xi(self, n):
        n = np.asarray(n, dtype=np.int64)
        inside = n <= self.table.N
        out = np.empty(n.shape)
        out[inside] = self.table.values[n[inside]]
        if (~inside).any():
            out[~inside] = self.xi(n[~inside])
        return out

    def _gap(self, k):
        if self.gap is not None:
            return np.where(np.asarray(k) == 0, 0.5, self.gap(np.maximum(k, 1)))
        return self._xi(k) - self._xi(np.asarray(k) + 1)

    def branch(self, b, x):
        """Image of x on level b >= 1, anchored at the nearer node."""
        b = np.asarray(b, dtype=np.int64)
        x = np.asarray(x, dtype=float)
        hi, lo = self._xi(b), self._xi(b + 1)
        top = self._xi(b - 1)
        slope = self._gap(b - 1) / self._gap(b)
        right = top - (hi - x) * slope
        left = hi + (x - lo) * slope
        return np.where(hi - x <= x - lo, right, left)

    def snap(self, x, b):
        """Move inputs within SNAP of the nodes of level b onto the nodes."""
        hi, lo = self._xi(b), self._xi(b + 1)
        tol = np.minimum(SNAP, 0.25 * (hi - lo))
        x = np.where(np.abs(x - hi) <= tol, hi, x)
        return x

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise DomainError("x must lie in [0, 1]")
        out = np.where(x > 0.5, 2.0 * x - 1.0, 0.0)
        left = (x <= 0.5) & (x > 0)
        if left.any():
            xl = x[left]
            b = self.table.level(xl)
            xl = self.snap(xl, b)
            b = self.table.level(xl)
            out[left] = self.branch(b, xl)
        return float(out) if out.ndim == 0 else out

    def return_time(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x <= 0.5) | (x > 1)):
            raise DomainError("return time is defined on (1/2, 1]")
        y = 2.0 * x - 1.0
        b = self.table.level(y)
        out = np.where(y > 0.5, 1, b + 1)
        return int(out) if out.ndim == 0 else out


def wang_map(alpha: float, c: float = 2.0, eps: float = 0.04, table: int = 1 << 20) -> WangMap:
    wang_continuous(alpha, c, eps)  # validates the parameters
    xi = _wang_xi(alpha, c, eps)
    return WangMap(float(alpha), float(c), float(eps), "continuous", xi, _XiTable(xi, table),
                   _wang_gaps(alpha, c, eps))


def wang_noncontinuous_map(alpha: float, table: int = 1 << 20) -> WangMap:
    """Variant with xi_n = n^-alpha (1 + 2^{alpha log2 n}) / 4, xi_0 = 1 (so xi_1 = 1/2)."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0,1)")
    xi = _noncont_xi(alpha)
    return WangMap(float(alpha), 2.0, 0.0, "noncontinuous", xi, _XiTable(xi, table))


def wang_eval(m: WangMap, x):
    return m.eval(x)


def wang_return_time(m: WangMap, x):
    return m.return_time(x)


@dataclass(frozen=True)
class DerivativeLimits:
    liminf: float
    limsup: float
    n_max: int

    def restricted(self, m: WangMap, n: int) -> float:
        return restricted_ratio(m, n)


def _jump_index(alpha: float, n) -> np.ndarray:
    """True where floor(alpha log2 n) changes between n-1 and n."""
    P = 2.0 ** (1.0 / alpha)
    n = np.asarray(n, dtype=float)

    def lf(v):
        k = np.floor(np.log(v) / math.log(P))
        k = np.where(np.power(P, k + 1.0) <= v, k + 1.0, k)
        return np.where(np.power(P, k) > v, k - 1.0, k)

    return lf(n) != lf(n - 1.0)


def restricted_ratio(m: WangMap, n: int) -> float:
    """T(xi_n)/xi_n at the first n' >= n that avoids the jump indices."""
    while _jump_index(m.alpha, n):
        n += 1
    return float(m._xi(n - 1) / m._xi(n))


def noncont_derivative_limits(m: WangMap, n_max: int = 10**5) -> DerivativeLimits:
    """Limit points of T(xi_n)/xi_n = xi_{n-1}/xi_n.

    The lower limit is read off as the smallest ratio on the last decade; the
    upper one by fitting L + C/n + D/n^2 to the ratios at the jump indices.
    """
    if m.variant != "noncontinuous":
        raise DomainError("noncontinuous variant required")
    n = np.arange(2, n_max + 1)
    r = m._xi(n - 1) / m._xi(n)
    w = n >= n_max // 10
    liminf = float(r[w].min())
    jumps = _jump_index(m.alpha, n) & (n >= max(16, n_max // 1000))
    nj, rj = n[jumps].astype(float), r[jumps]
    if nj.size >= 3:
        A = np.vstack([np.ones_like(nj), 1.0 / nj, 1.0 / nj**2]).T
        limsup = float(np.linalg.lstsq(A, rj, rcond=None)[0][0])
    else:
        limsup = float(rj.max())
    return DerivativeLimits(liminf, limsup, int(n_max))


# ---------------------------------------------------------------------------
# Smooth map


@dataclass(frozen=True)
class SmoothCoeffs:
    alpha: float
    c: float
    eps: float
    N: int
    alpha_n: np.ndarray  # index n = 0..N (entry 0 unused)
    rem: np.ndarray
    q: np.ndarray
    B: np.ndarray
    A: np.ndarray
    tail_bound: float
    q_diff: np.ndarray  # q_n - q_{n+1}, n = 0..N


def _H1(alpha: float, a: float, eps: float, x):
    x = np.asarray(x, dtype=float)
    s, co = np.sin(x), np.cos(x)
    return 1.0 + alpha - 2.0 * eps * a * (a * s + alpha * co) / (alpha * (1.0 + 2.0 * eps * s) - 2.0 * eps * a * co)


def smooth_coeffs(alpha: float, c: float = 2.0, eps: float = 0.04, N: int = 10**4,
                  tail_terms: int = 2 * 10**6, budget: float = 1e-10) -> SmoothCoeffs:
    """alpha_n, rem_n, q_n, B_n, A_n for branches 2..N.

    B_N is the alternating tail sum over ``tail_terms`` pairs; smaller indices
    follow from B_{n-1} = q_n - B_n, which keeps every derivative glue exact.
    The reported bound covers the truncated pairs and the rounding of the sum.
    """
    wang_continuous(alpha, c, eps)
    if N < 3:
        raise DomainError("N must be at least 3")
    a = 2.0 * math.pi * alpha / math.log(c)
    gap = _wang_gaps(alpha, c, eps)

    def d(k):
        k = np.asarray(k, dtype=float)
        return np.where(k == 0, 0.5, gap(np.maximum(k, 1.0)))

    def parts(n):
        n = np.asarray(n, dtype=float)
        an = _H1(alpha, a, eps, a * np.log(n))
        rem = d(n - 2) / d(n - 1) - 1.0 - an / n
        return an, rem

    def q_of(n):
        n = np.asarray(n, dtype=float)
        an, rem = parts(n)
        prev = _H1(alpha, a, eps, a * np.log(n - 1.0)) / (n - 1.0)
        return 2.0 * rem - (prev - an / n)

    n = np.arange(N + 2, dtype=float)
    an = np.zeros(N + 2)
    an[1:] = _H1(alpha, a, eps, a * np.log(n[1:]))
    rem = np.zeros(N + 2)
    q = np.zeros(N + 2)
    rem[2:] = parts(n[2:])[1]
    q[2:] = q_of(n[2:])
    # alternating tail for B_N, summed from the far end in chunks
    BN = 0.0
    step = 1 << 18
    for hi in range(tail_terms, 0, -step):
        k = np.arange(max(1, hi - step + 1), hi + 1, dtype=float)
        pairs = q_of(N + 2 * k - 1) - q_of(N + 2 * k)
        BN += float(np.sum(pairs[::-1]))
    # |q_i - q_{i+1}| <= C i^-3, C read where differences sit well above rounding
    i = np.arange(max(3, N // 2), N + 1)
    C = 2.0 * float(np.max(np.abs(q[i] - q_of(i + 1.0)) * i.astype(float) ** 3))
    last = float(N + 2 * tail_terms)
    rounding = 4.0 * np.finfo(float).eps * math.sqrt(tail_terms)
    bound = C / (4.0 * (last - 1.0) ** 2) + rounding
    if bound > budget:
        raise TruncationBudgetError(f"tail bound {bound:.3g} exceeds budget {budget:.3g}")
    B = np.zeros(N + 1)
    B[N] = BN
    for j in range(N - 1, 0, -1):
        B[j] = q[j + 1] - B[j + 1]
    A = np.zeros(N + 1)
    A[2:] = 2.0 * (rem[2:N + 1] - B[2:])
    qd = np.zeros(N + 1)
    qd[2:] = q[2:N + 1] - q[3:N + 2]
    return SmoothCoeffs(float(alpha), float(c), float(eps), int(N), an, rem, q, B, A, bound, qd)


@dataclass(frozen=True, eq=False)
class SmoothWangMap:
    """C^1 map with quadratic branches f_n on [xi_n, xi_{n-1}], n >= 2, and 2x - 1 on (1/2, 1]."""

    coeffs: SmoothCoeffs
    xi: Callable
    table: _XiTable
    gap: Callable

    @property
    def alpha(self):
        return self.coeffs.alpha

    @property
    def N(self):
        return self.coeffs.N

    def _xi(self, n):
        n = np.asarray(n, dtype=np.int64)
        return self.table.values[n]

    def _parts(self, n):
        cf = self.coeffs
        n = np.asarray(n, dtype=np.int64)
        if np.any(n > cf.N) or np.any(n < 2):
            raise DomainError(f"branch index outside 2..{cf.N}")
        lo = self._xi(n)
        width = self.gap(n - 1)
        lin = 1.0 + cf.alpha_n[n] / n + cf.B[n]
        return lo, width, lin, cf.A[n]

    def branch(self, n, x):
        lo, width, lin, A = self._parts(n)
        t = np.asarray(x, dtype=float) - lo
        return 0.5 * A * t * t / width + lin * t + self._xi(np.asarray(n) - 1)

    def branch_deriv(self, n, x):
        lo, width, lin, A = self._parts(n)
        return A * (np.asarray(x, dtype=float) - lo) / width + lin

    def branch_deriv2(self, n, x):
        lo, width, lin, A = self._parts(n)
        return A / width + 0.0 * np.asarray(x, dtype=float)

    def _index(self, x):
        b = self.table.level(x)  # xi_{b+1} < x <= xi_b  -> branch n = b + 1
        return b + 1

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise DomainError("x must lie in [0, 1]")
        return x

    def eval(self, x):
        x = self._check(x)
        out = np.where(x > 0.5, 2.0 * x - 1.0, 0.0)
        left = (x <= 0.5) & (x > 0)
        if left.any():
            out[left] = self.branch(self._index(x[left]), x[left])
        return float(out) if out.ndim == 0 else out

    def deriv(self, x):
        x = self._check(x)
        out = np.where(x > 0.5, 2.0, 1.0)
        left = (x <= 0.5) & (x > 0)
        if left.any():
            out[left] = self.branch_deriv(self._index(x[left]), x[left])
        return float(out) if out.ndim == 0 else out

    def glue_residuals(self, n_max: int | None = None) -> tuple[float, float]:
        """Largest value and derivative mismatch at the knots of branches 2..n_max."""
        cf = self.coeffs
        n_max = cf.N if n_max is None else n_max
        n = np.arange(2, n_max + 1)
        v_left = np.abs(self.branch(n, self._xi(n)) - self._xi(n - 1))
        v_right = np.abs(self.branch(n, self._xi(n - 1)) - self._xi(n - 2))
        m = n[n >= 3]
        d = np.abs(self.branch_deriv(m, self._xi(m - 1)) - (1.0 + cf.alpha_n[m - 1] / (m - 1) + cf.B[m - 1]))
        return float(max(v_left.max(), v_right.max())), float(d.max())

    def tail_spec(self) -> TailSpec:
        """Return-time law for Lebesgue-uniform starts in Y (same partition as the linear map)."""
        cf = self.coeffs
        return wang_continuous(cf.alpha, cf.c, cf.eps)


def smooth_wang_map(alpha: float = 0.5, c: float = 2.0, eps: float = 0.04, N: int = 10**4,
                    tail_terms: int = 2 * 10**6) -> SmoothWangMap:
    cf = smooth_coeffs(alpha, c, eps, N, tail_terms)
    xi = _wang_xi(alpha, c, eps)
    return SmoothWangMap(cf, xi, _XiTable(xi, N + 2), _wang_gaps(alpha, c, eps))


def smooth_eval(m: SmoothWangMap, x):
    return m.eval(x)


def smooth_deriv(m: SmoothWangMap, x):
    return m.deriv(x)


def distortion_bound(m: SmoothWangMap, n_max: int, points: int = 9) -> tuple[float, np.ndarray]:
    """sup over J_n, n <= n_max, of |F''|/(F')^2 for the first-return map F.

    J_n = [(xi_n + 1)/2, (xi_{n-1} + 1)/2) is sent by 2x - 1 onto branch n and
    then by f_n, ..., f_2 onto Y; derivatives follow the chain rule.
    Returns the supremum and the per-branch values (index n - 2).
    """
    if n_max < 2 or n_max > m.N:
        raise DomainError(f"n_max must lie in 2..{m.N}")
    n = np.arange(2, n_max + 1)
    # interior Chebyshev points of each branch
    th = (np.arange(points) + 0.5) / points
    u = 0.5 - 0.5 * np.cos(np.pi * th)
    lo, hi = m._xi(n)[:, None], m._xi(n - 1)[:, None]
    y = lo + u[None, :] * (hi - lo)
    d1 = np.full(y.shape, 2.0)
    d2 = np.zeros(y.shape)
    level = np.repeat(n[:, None], points, axis=1)
    while True:
        act = level >= 2
        if not act.any():
            break
        k = level[act]
        ya = y[act]
        fp = m.branch_deriv(k, ya)
        if np.any(fp <= 0):
            bad = int(k[fp <= 0].min())
            raise DomainError(f"branch {bad} is not monotone; eps too large for a distortion bound")
        fpp = m.branch_deriv2(k, ya)
        d2[act] = fpp * d1[act] ** 2 + fp * d2[act]
        d1[act] = fp * d1[act]
        y[act] = m.branch(k, ya)
        level[act] -= 1
    per = np.max(np.abs(d2) / d1**2, axis=1)
    if not np.all(np.isfinite(per)):
        raise ArithmeticError("non-finite distortion")
    return float(per.max()), per


def min_expansion(m: SmoothWangMap, n_max: int, points: int = 9) -> np.ndarray:
    """Minimum of f' over each branch n = 2..n_max (index n - 2)."""
    if n_max < 2 or n_max > m.N:
        raise DomainError(f"n_max must lie in 2..{m.N}")
    n = np.arange(2, n_max + 1)
    u = np.linspace(0.0, 1.0, points)
    lo, hi = m._xi(n)[:, None], m._xi(n - 1)[:, None]
    y = lo + u[None, :] * (hi - lo)
    return m.branch_deriv(np.repeat(n[:, None], points, axis=1), y).min(axis=1)


def smooth_tail_constant(m: SmoothWangMap, n_orbits: int = 4000, induced_steps: int = 60,
                         seed: int = 0, cap: int | None = None, n_range=(4, 64)) -> float:
    """Ratio P(tau > n)/xi_n under the invariant law of the induced map, averaged over n.

    Induced orbits start uniformly in Y; excursions longer than ``cap`` restart
    the orbit uniformly (a small, reported-free bias for rare long returns).
    """
    rng = np.random.default_rng(seed)
    cap = m.N - 2 if cap is None else min(cap, m.N - 2)
    x = 1.0 - 0.5 * rng.random(n_orbits)
    taus = []
    for step in range(induced_steps):
        y = 2.0 * x - 1.0
        b = m.table.level(y)
        tau = np.where(y > 0.5, 1, b + 1)
        long = (b > cap) | (b < 0)
        level = np.where(y > 0.5, 0, b)
        level[long] = 0
        z = y.copy()
        while True:
            act = level >= 1
            if not act.any():
                break
            z[act] = m.branch(level[act] + 1, z[act])
            level[act] -= 1
        z = np.clip(z, np.nextafter(0.5, 1.0), 1.0)
        if step >= induced_steps // 3:
            taus.append(tau.copy())
        x = np.where(long, 1.0 - 0.5 * rng.random(n_orbits), z)
    t = np.concatenate(taus)
    ns = np.arange(n_range[0], n_range[1] + 1)
    emp = np.array([(t > k).mean() for k in ns])
    return float(np.mean(emp / m._xi(ns)))


# ---------------------------------------------------------------------------
# Fibonacci tower


@dataclass(frozen=True)
class FibonacciTower:
    """Kakutani tower over T_Y(y) = (lam^n - y)/(lam^n - lam^(n+1)) on (lam^(n+1), lam^n]."""

    lambda_slope: float

    def __post_init__(self):
        if not 1.0 / GOLDEN < self.lambda_slope < 1.0:
            raise DomainError("lambda_slope must lie in (1/G, 1)")

    @property
    def alpha(self) -> float:
        return -math.log(self.lambda_slope) / math.log(GOLDEN)

    def tail_spec(self) -> TailSpec:
        return fibonacci(self.lambda_slope)

    def branch_index(self, y) -> np.ndarray:
        """n with lam^(n+1) < y <= lam^n (-1 for y <= 0)."""
        lam = self.lambda_slope
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            n = np.floor(np.log(np.where(y > 0, y, 1.0)) / math.log(lam))
        n = np.maximum(n, 0.0)
        n = np.where(np.power(lam, n) < y, n - 1.0, n)
        n = np.where(np.power(lam, n + 1.0) >= y, n + 1.0, n)
        return np.where(y > 0, n, -1.0).astype(np.int64)

    def base_map(self, y):
        lam = self.lambda_slope
        y = np.asarray(y, dtype=float)
        if np.any((y < 0) | (y > 1)):
            raise DomainError("y must lie in [0, 1]")
        n = self.branch_index(y)
        ln = np.power(lam, n.astype(float))
        out = np.where(n >= 0, (ln - y) / (ln - ln * lam), 0.0)
        return float(out) if out.ndim == 0 else out

    def height(self, y):
        n = self.branch_index(y)
        if np.any(n < 0):
            raise DomainError("height is infinite at y = 0")
        out = _FIB_ARR[np.minimum(n, len(_FIB_ARR) - 1)]
        return out


def fib_return_time(t: FibonacciTower, y):
    y = np.asarray(y, dtype=float)
    if np.any((y <= 0) | (y > 1)):
        raise DomainError("y must lie in (0, 1]")
    n = t.branch_index(y)
    if np.ndim(y) == 0:
        return int(fibonacci_numbers(int(n))[int(n)])
    return t.height(y).astype(np.int64)


def fib_eval(t: FibonacciTower, state: tuple[float, int]) -> tuple[float, int]:
    """One step of the tower map on (y, level), levels counted from 1."""
    y, level = state
    h = fib_return_time(t, y)
    if not 1 <= level <= h:
        raise DomainError("level outside the tower column")
    if h > level:
        return (float(y), int(level) + 1)
    return (float(t.base_map(y)), 1)


def fib_tail_h(t: FibonacciTower, n: int, x: float) -> float:
    """Error term h(A_{k_n} x) of the Fibonacci tail, A_k = k^(1/alpha), k_n = floor(G^(alpha n))."""
    lam, alpha = t.lambda_slope, t.alpha
    q0 = (3.0 + math.sqrt(5.0)) / (2.0 * math.sqrt(5.0))
    frac = math.log(x / q0) / math.log(GOLDEN)
    frac -= math.floor(frac)
    if frac < 1e-12 or frac > 1 - 1e-12:
        warnings.warn("x is a discontinuity point of M; no convergence is claimed", RuntimeWarning)
    k = math.floor(GOLDEN ** (alpha * n))
    X = k ** (1.0 / alpha) * x
    m = int(_fib_index_exact(X))
    S = float(fibonacci_numbers(m)[m])
    q_inf = lam * q0**alpha
    q_m = lam * q0**alpha * (1.0 - (-1) ** m * GOLDEN ** (-2.0 * (m + 2))) ** alpha
    lg = math.log(X / S) / math.log(GOLDEN)
    fr = math.log(X / q0) / math.log(GOLDEN)
    fr -= math.floor(fr)
    return q_inf * (GOLDEN ** (alpha * lg) - GOLDEN ** (alpha * fr)) + (q_m - q_inf) * GOLDEN ** (alpha * lg)


def _fib_index_exact(X: float) -> int:
    fib = fibonacci_numbers(200)
    m = 0
    while m + 1 < len(fib) and fib[m + 1] <= X:
        m += 1
    return m


# ---------------------------------------------------------------------------
# Orbits


def _wang_like_orbits(m, x: np.ndarray, n: int) -> np.ndarray:
    smooth = isinstance(m, SmoothWangMap)
    deep = m.N - 2 if smooth else m.table.N - 1
    level = np.where(x > 0.5, 0, m.table.level(x))
    visits = np.zeros(x.shape, dtype=np.int64)
    parked = np.zeros(x.shape, dtype=bool)
    for t in range(n):
        inY = level == 0
        visits += inY & ~parked
        remaining = n - 1 - t
        if inY.any():
            y = 2.0 * x[inY] - 1.0
            b = np.where(y > 0.5, 0, m.table.level(y))
            far = (b < 0) | (b > min(deep, remaining + 1))
            b = np.where(far, remaining + 2, b)
            x[inY] = y
            level[inY] = b
            parked[inY] = far
        out = (level >= 1) & ~inY
        act = out & ~parked
        if act.any():
            b = level[act]
            xa = x[act]
            new = m.branch(b + 1, xa) if smooth else m.branch(b, xa)
            lo, hi = m._xi(b), m._xi(b - 1)
            if np.any((new < lo - ESCAPE) | (new > hi + ESCAPE)):
                raise NumericalEscapeError("orbit left its branch")
            if np.any(b == 1):
                lo = np.where(b == 1, np.nextafter(0.5, 1.0), lo)
            x[act] = np.clip(new, lo, hi)
        level[out] -= 1
    return visits


def _tower_orbits(tw: FibonacciTower, y: np.ndarray, n: int) -> np.ndarray:
    lam = tw.lambda_slope
    visits = np.zeros(y.shape, dtype=np.int64)
    level = np.ones(y.shape, dtype=np.int64)
    idx = tw.branch_index(y)
    height = np.where((idx >= 0) & (idx < len(_FIB_ARR)), _FIB_ARR[np.clip(idx, 0, len(_FIB_ARR) - 1)], np.inf)
    for _ in range(n):
        visits += level == 1
        top = level >= height
        level = np.where(top, 1, level + 1)
        if top.any():
            yt = y[top]
            i = idx[top].astype(float)
            li = np.power(lam, i)
            ny = (li - yt) / (li - li * lam)
            if np.any((ny < -ESCAPE) | (ny > 1 + ESCAPE)):
                raise NumericalEscapeError("tower base orbit left [0, 1]")
            ny = np.clip(ny, 0.0, 1.0)
            y[top] = ny
            ni = tw.branch_index(ny)
            idx[top] = ni
            height[top] = np.where((ni >= 0) & (ni < len(_FIB_ARR)),
                                   _FIB_ARR[np.clip(ni, 0, len(_FIB_ARR) - 1)], np.inf)
    return visits


def orbit_occupation(system, x0=None, n: int = 1, seed: int = 0, n_orbits: int = 1,
                     chunk: int = 4096) -> np.ndarray:
    """Visits to Y (base level for the tower) during times 0..n-1.

    ``x0`` fixes the starting points; otherwise ``n_orbits`` starts are drawn
    uniformly from Y with streams derived from ``seed`` per chunk.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    tower = isinstance(system, FibonacciTower)
    if x0 is not None:
        starts = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
        if tower and np.any((starts <= 0) | (starts > 1)):
            raise DomainError("tower starts must lie in (0, 1]")
        if not tower and np.any((starts < 0) | (starts > 1)):
            raise DomainError("starts must lie in [0, 1]")
        chunks = [starts]
    else:
        chunks = []
        for i, s in enumerate(range(0, n_orbits, chunk)):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
            u = rng.random(min(chunk, n_orbits - s))
            chunks.append(1.0 - u if tower else 1.0 - 0.5 * u)
    out = []
    for c in chunks:
        out.append(_tower_orbits(system, c, n) if tower else _wang_like_orbits(system, c, n))
    return np.concatenate(out)
