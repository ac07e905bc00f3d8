"""Return-time tails in the domain of geometric partial attraction.

A ``TailSpec`` describes the law of the integer return time ``tau`` through
its survival function on the lattice, ``tail(k) = P(tau > k)``, together
with the data of the representation

    P(tau > x) = ell(x) x^-alpha [M(delta(x)) + h(x)]

(geometric ratio ``c``, subsequence ``k_n``, norming ``A_n = n^(1/alpha) ell1(n)``).
The chain transition weights are ``f_k = P(tau = k + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .semistable_core import (
    GOLDEN,
    DomainError,
    LogPeriodicM,
    constant_m,
    fibonacci_m,
    log_floor,
    st_petersburg_m,
    wang_m,
    wang_noncontinuous_m,
)

__all__ = [
    "TailSpec",
    "SubsequencePlan",
    "InfeasibleLambdaError",
    "st_petersburg",
    "wang_continuous",
    "wang_noncontinuous",
    "fibonacci",
    "pareto",
    "from_text",
    "tail_bar",
    "delta",
    "gamma",
    "h_lambda",
    "norming_A",
    "norming_a",
    "k_seq",
    "subsequence_for_lambda",
    "circular_limit",
    "sample_tau",
    "draw_tau",
    "extend_discrete",
    "lemma_gamma_check",
    "fibonacci_numbers",
]

DEFAULT_CAP = 2**62
_TABLE_SIZE = 1 << 20


class InfeasibleLambdaError(ValueError):
    """No index sequence realises the requested position parameter."""


def fibonacci_numbers(n_max: int = 92) -> list[int]:
    """S_0, S_1, ... = 1, 2, 3, 5, ... (exact integers)."""
    s = [1, 2]
    while len(s) <= n_max:
        s.append(s[-1] + s[-2])
    return s[: n_max + 1]


_FIB = fibonacci_numbers(200)
_FIB_ARR = np.array([float(v) for v in _FIB])


def _fib_index(x) -> np.ndarray:
    """Index n with S_n <= x < S_{n+1}; -1 below S_0."""
    x = np.asarray(x, dtype=float)
    return np.searchsorted(_FIB_ARR, x, side="right") - 1


def _one(x):
    return np.ones(np.shape(x))


@dataclass(frozen=True, eq=False)
class TailSpec:
    """Law of the return time plus its geometric-partial-attraction data."""

    family: str
    alpha: float
    c: float
    m: LogPeriodicM
    tail_fn: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    lattice_cap: int = DEFAULT_CAP
    ell: Callable = _one
    ell1: Callable = _one
    k_fn: Callable[[int], int] | None = None
    fast_inverse: Callable[[np.ndarray], np.ndarray] | None = None
    # purely atomic laws: atoms(j_max) -> (positions, probabilities) of the first j_max atoms
    atoms: Callable[[int], tuple[np.ndarray, np.ndarray]] | None = None
    # analytic continuation (x_from, g) with g(k) = tail(k) for integers k >= x_from
    tail_real: tuple[float, Callable] | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0,1)")
        if not self.c > 1.0:
            raise DomainError("c must exceed 1")

    # lattice law -----------------------------------------------------------

    def tail(self, k) -> np.ndarray:
        """P(tau > k) at integers k (vectorised)."""
        k = np.asarray(k, dtype=float)
        return np.where(k < 1.0, 1.0, self.tail_fn(np.maximum(k, 1.0)))

    def pmf(self, k) -> np.ndarray:
        """P(tau = k) for integers k >= 1."""
        k = np.asarray(k, dtype=float)
        return np.where(k < 1.0, 0.0, self.tail(k - 1.0) - self.tail(k))

    def chain_f(self, n: int) -> np.ndarray:
        """Chain weights f_0..f_{n-1}, f_k = P(tau = k + 1)."""
        return self.pmf(np.arange(1, n + 1))

    def return_pmf(self, n: int) -> np.ndarray:
        """Array r with r[j] = P(tau = j), j = 0..n (r[0] = 0)."""
        out = np.zeros(n + 1)
        out[1:] = self.pmf(np.arange(1, n + 1))
        return out

    # representation data ---------------------------------------------------

    def k(self, n: int) -> int:
        return k_seq(self, n)

    def A(self, n):
        n = np.asarray(n, dtype=float)
        return n ** (1.0 / self.alpha) * self.ell1(n)

    def h(self, x):
        """Error term of the representation, ``x^a F(x)/ell(x) - M(delta(x))``."""
        x = np.asarray(x, dtype=float)
        lead = x**self.alpha * tail_bar(self, x) / self.ell(x)
        return lead - self.m(delta(self, x))

    # serialisation ---------------------------------------------------------

    def to_text(self) -> str:
        keys = {"family": self.family, "alpha": repr(float(self.alpha)), "c": repr(float(self.c))}
        for k in ("eps", "lambda_slope", "m0", "scale"):
            if k in self.params:
                keys[k] = repr(float(self.params[k]))
        keys["lattice_cap"] = str(int(self.lattice_cap))
        return "[tail]\n" + "".join(f"{k} = {v}\n" for k, v in keys.items())


# ---------------------------------------------------------------------------
# Built-in families


def _check_alpha(alpha: float):
    if not (isinstance(alpha, (int, float)) and 0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0,1), got {alpha}")


def st_petersburg(alpha: float, lattice_cap: int = DEFAULT_CAP) -> TailSpec:
    """Generalised St. Petersburg return time: P(tau = ceil(2^(j/alpha))) = 2^-j, j >= 1."""
    _check_alpha(alpha)
    P = 2.0 ** (1.0 / alpha)

    def tail(x):
        j = np.maximum(log_floor(x, P), 0)
        return np.power(0.5, j.astype(float))

    def inverse(u):
        # u in (0,1]: tau = ceil(2^(J/alpha)) with J = ceil(-log2 u) clipped to >= 1
        j = np.maximum(np.ceil(-np.log2(u)), 1.0)
        j = np.where(np.power(0.5, j - 1.0) <= u, j - 1.0, j)
        j = np.maximum(j, 1.0)
        return np.ceil(np.power(P, j))

    def atoms(j_max):
        j = np.arange(1, j_max + 1, dtype=float)
        return np.ceil(np.power(P, j)), np.power(0.5, j)

    return TailSpec("st_petersburg", float(alpha), 2.0, st_petersburg_m(alpha), tail, {},
                    int(lattice_cap), k_fn=lambda n: 2**n, fast_inverse=inverse, atoms=atoms)


def _wang_bound_ok(alpha: float, c: float, eps: float) -> bool:
    return 2.0 * alpha * eps * (1.0 + 2.0 * math.pi / math.log(c)) < alpha


def wang_continuous(alpha: float, c: float = 2.0, eps: float = 0.04,
                    lattice_cap: int = DEFAULT_CAP) -> TailSpec:
    """P(tau > n) = xi_n = n^-alpha (1 + 2 eps sin(2 pi alpha log n / log c)) / 2."""
    _check_alpha(alpha)
    if c <= 1.0:
        raise DomainError("c must exceed 1")
    if eps < 0 or not _wang_bound_ok(alpha, c, eps):
        raise DomainError("eps outside the monotonicity region 2 eps (1 + 2 pi / log c) < 1")
    a = 2.0 * math.pi * alpha / math.log(c)

    def tail(x):
        n = np.floor(x)
        return 0.5 * n ** (-alpha) * (1.0 + 2.0 * eps * np.sin(a * np.log(n)))

    def smooth(x):
        return 0.5 * x ** (-alpha) * (1.0 + 2.0 * eps * np.sin(a * np.log(x)))

    return TailSpec("wang_continuous", float(alpha), float(c), wang_m(alpha, c, eps), tail,
                    {"eps": float(eps)}, int(lattice_cap), tail_real=(1.0, smooth))


def wang_noncontinuous(alpha: float, lattice_cap: int = DEFAULT_CAP, scale: float = 1.0) -> TailSpec:
    """P(tau > n) = scale n^-alpha (1 + 2^{alpha log2 n}) / 2 with fractional part.

    With ``scale = 1`` the tail equals 1 at n = 1, so tau >= 2; the interval map
    uses ``scale = 1/2`` so that its first branch ends at 1/2.
    """
    _check_alpha(alpha)
    if not 0.0 < scale <= 1.0:
        raise DomainError("scale must lie in (0,1]")
    P = 2.0 ** (1.0 / alpha)
    base = wang_noncontinuous_m(alpha)

    def tail(x):
        n = np.floor(x)
        k = log_floor(n, P)
        frac = (n / np.power(P, k.astype(float))) ** alpha
        return scale * 0.5 * n ** (-alpha) * (1.0 + frac)

    m = base
    params = {}
    if scale != 1.0:
        m = LogPeriodicM(alpha, 2.0, lambda x: scale * base(x), base.continuity_points_hint,
                         "wang_noncontinuous", {"scale": float(scale)})
        params["scale"] = float(scale)
    return TailSpec("wang_noncontinuous", float(alpha), 2.0, m, tail,
                    params, int(lattice_cap), k_fn=lambda n: 2**n)


def fibonacci(lambda_slope: float, lattice_cap: int = DEFAULT_CAP) -> TailSpec:
    """Fibonacci tower return time, P(tau = S_n) = (1 - lam) lam^n."""
    lam = float(lambda_slope)
    if not 1.0 / GOLDEN < lam < 1.0:
        raise DomainError("lambda_slope must lie in (1/G, 1)")
    alpha = -math.log(lam) / math.log(GOLDEN)

    def tail(x):
        n = _fib_index(np.floor(x))
        return np.where(n < 0, 1.0, np.power(lam, n + 1.0))

    def inverse(u):
        # smallest n >= 0 with lam^(n+1) <= u
        n = np.maximum(np.ceil(np.log(u) / math.log(lam)) - 1.0, 0.0)
        n = np.where(np.power(lam, n) <= u, np.maximum(n - 1.0, 0.0), n)
        n = np.where(np.power(lam, n + 1.0) > u, n + 1.0, n)
        return _FIB_ARR[np.minimum(n.astype(np.int64), len(_FIB_ARR) - 1)]

    def atoms(j_max):
        j = np.arange(j_max, dtype=float)
        pos = np.array([float(v) for v in fibonacci_numbers(j_max - 1)])
        return pos, (1.0 - lam) * np.power(lam, j)

    return TailSpec("fibonacci", alpha, GOLDEN**alpha, fibonacci_m(lam), tail,
                    {"lambda_slope": lam}, int(lattice_cap), fast_inverse=inverse, atoms=atoms)


def pareto(alpha: float, m0: float = 1.0, c: float = 2.0,
           lattice_cap: int = DEFAULT_CAP) -> TailSpec:
    """Lattice Pareto tail P(tau > n) = min(1, m0 n^-alpha): the constant-amplitude case."""
    _check_alpha(alpha)
    if not 0.0 < m0 <= 1.0:
        raise DomainError("m0 must lie in (0,1]")

    def tail(x):
        return np.minimum(1.0, m0 * np.floor(x) ** (-alpha))

    def inverse(u):
        k = np.maximum(np.ceil((m0 / u) ** (1.0 / alpha)), 1.0)
        k = np.where((k > 1) & (tail(k - 1.0) <= u), k - 1.0, k)
        k = np.where(tail(k) > u, k + 1.0, k)
        return k

    return TailSpec("pareto", float(alpha), float(c), constant_m(alpha, c, m0), tail,
                    {"m0": float(m0)}, int(lattice_cap), fast_inverse=inverse,
                    tail_real=(max(1.0, m0 ** (1.0 / alpha)), lambda x: m0 * x ** (-alpha)))


_BUILDERS = {
    "st_petersburg": lambda d: st_petersburg(d["alpha"], d["lattice_cap"]),
    "wang_continuous": lambda d: wang_continuous(d["alpha"], d["c"], d["eps"], d["lattice_cap"]),
    "wang_noncontinuous": lambda d: wang_noncontinuous(d["alpha"], d["lattice_cap"], d.get("scale", 1.0)),
    "fibonacci": lambda d: fibonacci(d["lambda_slope"], d["lattice_cap"]),
    "pareto": lambda d: pareto(d["alpha"], d["m0"], d["c"], d["lattice_cap"]),
}


def from_text(text: str) -> TailSpec:
    """Inverse of ``TailSpec.to_text``."""
    d: dict = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or line == "[tail]":
            continue
        if "=" not in line:
            raise ValueError(f"malformed line: {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        d[k] = v
    fam = d.pop("family", None)
    if fam not in _BUILDERS:
        raise ValueError(f"unknown family {fam!r}")
    vals = {k: (int(v) if k == "lattice_cap" else float(v)) for k, v in d.items()}
    vals.setdefault("lattice_cap", DEFAULT_CAP)
    spec = _BUILDERS[fam](vals)
    if abs(spec.c - vals.get("c", spec.c)) > 0 or abs(spec.alpha - vals.get("alpha", spec.alpha)) > 0:
        raise ValueError("alpha/c inconsistent with family parameters")
    return spec


# ---------------------------------------------------------------------------
# Tail and subsequence machinery


def tail_bar(spec: TailSpec, x):
    """1 - F(x) = P(tau > x); constant between lattice points."""
    x = np.asarray(x, dtype=float)
    out = spec.tail(np.floor(x))
    return float(out) if out.ndim == 0 else out


def k_seq(spec: TailSpec, n: int) -> int:
    """k_n, by default floor(c^n) (exact integer powers when c is an integer)."""
    if spec.k_fn is not None:
        return int(spec.k_fn(n))
    if float(spec.c).is_integer():
        return int(spec.c) ** n
    return int(math.floor(spec.c**n))


def norming_A(spec: TailSpec, n):
    """A_n = n^(1/alpha) ell1(n)."""
    out = spec.A(n)
    return float(out) if np.ndim(out) == 0 else out


def norming_a(spec: TailSpec, n: int) -> int:
    """Integer asymptotic inverse of A: floor(n^alpha / ell(n))."""
    v = n**spec.alpha / float(spec.ell(float(n)))
    a = int(math.floor(v))
    # polish against rounding of the power
    if (a + 1) ** (1.0 / spec.alpha) <= n and float(spec.ell(float(n))) == 1.0:
        a += 1
    while a > 1 and a ** (1.0 / spec.alpha) > n * (1 + 1e-15) and float(spec.ell(float(n))) == 1.0:
        a -= 1
    return max(a, 1)


def _block_index(spec: TailSpec, x: float) -> int:
    """n with k_{n-1} < x <= k_n."""
    if x <= k_seq(spec, 0):
        return 0
    n = max(int(math.ceil(math.log(x) / math.log(spec.c))), 1)
    while n > 0 and k_seq(spec, n - 1) >= x:
        n -= 1
    while k_seq(spec, n) < x:
        n += 1
    return n


def gamma(spec: TailSpec, x):
    """Position parameter x / k_n with k_{n-1} < x <= k_n."""
    if np.ndim(x):
        return np.array([gamma(spec, float(v)) for v in np.ravel(x)]).reshape(np.shape(x))
    x = float(x)
    if x <= 0:
        raise DomainError("gamma needs x > 0")
    return x / k_seq(spec, _block_index(spec, x))


def h_lambda(lam: float, x, c: float):
    """lam x / c^ceil(log_c(lam x)); log-periodic in x with ratio c."""
    if not 1.0 / c - 1e-12 < lam <= 1.0 + 1e-12:
        raise DomainError("lambda must lie in (1/c, 1]")
    y = lam * np.asarray(x, dtype=float)
    k = np.ceil(np.log(y) / math.log(c))
    k = np.where(np.power(c, k - 1.0) >= y, k - 1.0, k)
    k = np.where(np.power(c, k) < y, k + 1.0, k)
    out = y / np.power(c, k)
    return float(out) if out.ndim == 0 else out


def delta(spec: TailSpec, x):
    """x / A_{k_n} for the unique n with A_{k_n} <= x < A_{k_{n+1}}."""
    if np.ndim(x):
        flat = np.ravel(np.asarray(x, dtype=float))
        return np.array([delta(spec, v) for v in flat]).reshape(np.shape(x))
    x = float(x)
    a0 = float(norming_A(spec, k_seq(spec, 0)))
    if x < a0 * (1 - 1e-15):
        raise DomainError(f"delta defined for x >= A_k0 = {a0}")
    n = max(int(math.floor(math.log(x) / (math.log(spec.c) / spec.alpha))), 0)
    while n > 0 and float(norming_A(spec, k_seq(spec, n))) > x:
        n -= 1
    while float(norming_A(spec, k_seq(spec, n + 1))) <= x:
        n += 1
    return x / float(norming_A(spec, k_seq(spec, n)))


# ---------------------------------------------------------------------------
# Subsequences and circular convergence


@dataclass(frozen=True)
class SubsequencePlan:
    lambda_target: float
    indices: tuple[int, ...]
    mode: str
    achieved: tuple[float, ...]

    def points(self) -> list[float]:
        return list(self.achieved)


def _circ_dist(u: float, v: float, c: float) -> float:
    return min(abs(u - v), abs(u * c - v), abs(u - v * c))


def circular_limit(seq: Sequence[float], lam: float, c: float = 2.0, tol: float = 1e-3) -> tuple[bool, dict]:
    """True iff the accumulation points of ``seq`` sit at lam (or in {1, 1/c} for lam = 1).

    Accumulation points are read off the second half of the sequence.
    """
    s = np.asarray(seq, dtype=float)
    if s.size == 0:
        raise ValueError("empty sequence")
    tail = s[s.size // 2:]
    if abs(lam - 1.0) < 1e-12:
        d = np.minimum(np.abs(tail - 1.0), np.abs(tail - 1.0 / c))
    else:
        d = np.abs(tail - lam)
    report = {"examined": int(tail.size), "max_deviation": float(d.max()),
              "min": float(tail.min()), "max": float(tail.max())}
    return bool(d.max() <= tol), report


def subsequence_for_lambda(spec: TailSpec, lam: float, r_max: int, mode: str = "gamma-of-a_n",
                           r_min: int = 1) -> SubsequencePlan:
    """Index sequence n_r whose position parameter converges circularly to lam."""
    if not 1.0 / spec.c - 1e-12 < lam <= 1.0 + 1e-12:
        raise DomainError("lambda must lie in (1/c, 1]")
    idx, ach = [], []
    for r in range(r_min, r_max + 1):
        kr = k_seq(spec, r)
        t = lam * kr
        target = max(int(round(t)) if abs(t - round(t)) <= 1e-9 * max(t, 1.0) else int(math.ceil(t)), 1)
        if mode == "gamma-of-n":
            n = target
            g = gamma(spec, n)
        elif mode == "gamma-of-a_n":
            n = max(int(math.ceil(target ** (1.0 / spec.alpha))), 1)
            while n > 1 and norming_a(spec, n - 1) >= target:
                n -= 1
            while norming_a(spec, n) < target:
                n += 1
            g = gamma(spec, norming_a(spec, n))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        idx.append(n)
        ach.append(g)
    ok, rep = circular_limit(ach, lam, spec.c)
    if not ok:
        raise InfeasibleLambdaError(f"achieved limit points {rep}")
    return SubsequencePlan(float(lam), tuple(idx), mode, tuple(ach))


def lemma_gamma_check(spec: TailSpec, plan: SubsequencePlan, y: float) -> float:
    """Largest circular distance between gamma(x_r y) and h_lam(y) over the plan tail."""
    if y <= 0:
        raise DomainError("y must be positive")
    if plan.mode == "gamma-of-a_n":
        base = [norming_a(spec, n) for n in plan.indices]
    else:
        base = list(plan.indices)
    target = h_lambda(min(plan.lambda_target, 1.0), y, spec.c)
    vals = [gamma(spec, b * y) for b in base]
    tail = vals[len(vals) // 2:]
    return float(max(_circ_dist(v, target, spec.c) for v in tail))


# ---------------------------------------------------------------------------
# Sampling


class _InverseTable:
    def __init__(self, spec: TailSpec, size: int = _TABLE_SIZE):
        self.spec = spec
        self.size = size
        self.neg = -spec.tail(np.arange(size + 1, dtype=float))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        spec = self.spec
        k = np.searchsorted(self.neg, -u, side="left").astype(float)
        k = np.maximum(k, 1.0)
        far = k > self.size
        if far.any():
            uf = u[far]
            lo = np.full(uf.shape, float(self.size))
            hi = lo * 2.0
            cap = float(spec.lattice_cap)
            for _ in range(80):
                grow = (spec.tail(hi) > uf) & (hi < cap)
                if not grow.any():
                    break
                lo = np.where(grow, hi, lo)
                hi = np.where(grow, np.minimum(hi * 2.0, cap), hi)
            for _ in range(70):
                mid = np.floor(0.5 * (lo + hi))
                ok = hi - lo > 1
                if not ok.any():
                    break
                below = spec.tail(mid) > uf
                lo = np.where(ok & below, mid, lo)
                hi = np.where(ok & ~below, mid, hi)
            k[far] = hi
        return k


_TABLES: dict[int, _InverseTable] = {}


def _inverse(spec: TailSpec):
    if spec.fast_inverse is not None:
        return spec.fast_inverse
    t = _TABLES.get(id(spec))
    if t is None or t.spec is not spec:
        t = _InverseTable(spec)
        _TABLES[id(spec)] = t
    return t


def draw_tau(spec: TailSpec, rng: np.random.Generator, size) -> np.ndarray:
    """iid return times from a given generator (values saturate at the lattice cap)."""
    u = 1.0 - rng.random(size)
    k = _inverse(spec)(np.ravel(u)).reshape(np.shape(u))
    k = np.minimum(k, float(spec.lattice_cap))
    return k.astype(np.int64)


def sample_tau(spec: TailSpec, seed: int, n: int, chunk: int = 65536) -> np.ndarray:
    """n iid return times by exact inverse transform on the lattice."""
    if n < 1:
        raise DomainError("n must be at least 1")
    parts = []
    for i, s in enumerate(range(0, n, chunk)):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        parts.append(draw_tau(spec, rng, min(chunk, n - s)))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Extension of lattice data to the half line


@dataclass(frozen=True)
class ExtendedTail:
    """ell and h extended from the lattice so that the representation is exact."""

    spec: TailSpec

    def ell(self, x):
        x = np.asarray(x, dtype=float)
        f = np.floor(x)
        return self.spec.ell(f) * x**self.spec.alpha / f**self.spec.alpha

    def h(self, x):
        x = np.asarray(x, dtype=float)
        f = np.floor(x)
        m = self.spec.m
        return self.spec.h(f) + m(delta(self.spec, f)) - m(delta(self.spec, x))

    def tail_bar(self, x):
        x = np.asarray(x, dtype=float)
        m = self.spec.m
        return self.ell(x) / x**self.spec.alpha * (m(delta(self.spec, x)) + self.h(x))


def extend_discrete(spec: TailSpec) -> ExtendedTail:
    """Extend lattice ell and h to the reals so that F(x) = F(floor(x))."""
    return ExtendedTail(spec)
