"""Change of variables between approximation functions psi and rate functions r.

Work in the coordinates ``lambda = log x`` and ``P(lambda) = -log psi(e^lambda)``.
For a time ``t`` the pair ``(lambda(t), L(t))`` is the intersection of the
non-decreasing graph ``L = P(lambda)`` with the decreasing line
``L = ((m+n) t - m lambda) / n``; then ``r(t) = (L - lambda) / (m + n)``,
which makes ``psi(exp(t - n r)) = exp(-t - m r)``.

The intersection is located by bisection (P may have unbounded slope for
tabulated psi, so Newton is not used).
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import IO, Callable

import numpy as np
from scipy import integrate

from .errors import DomainError, ValidationError

LAMBDA_TOL = 1e-12
PROBE_POINTS = 1000
PROBE_SPAN = 60.0


@dataclass(frozen=True)
class PsiFunction:
    """Positive non-increasing ``psi`` on ``[x0, inf)``.

    Internally stored as ``P(lambda)``.  Below ``x0`` the function is
    continued by the constant ``psi(x0)``, so it can be evaluated on all of
    ``(0, inf)`` while staying non-increasing.
    """

    family: str
    x0: float
    P: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    params: dict = field(default_factory=dict)
    # tabulated support (lambda nodes); evaluations beyond the last node are extrapolated
    nodes: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def lam0(self) -> float:
        return math.log(self.x0)

    def P_at(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=np.float64)
        return self.P(np.maximum(lam, self.lam0))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore"):
            lam = np.log(np.maximum(x, self.x0))
        return np.exp(-self.P(lam))

    def extrapolated(self, x) -> np.ndarray:
        """True where ``psi(x)`` lies beyond the last tabulated node."""
        x = np.asarray(x, dtype=np.float64)
        if self.nodes is None:
            return np.zeros(x.shape, dtype=bool)
        return np.log(np.maximum(x, self.x0)) > self.nodes[-1]

    def validate(self, span: float = PROBE_SPAN, points: int = PROBE_POINTS) -> None:
        lam = self.lam0 + np.linspace(0.0, span, points)
        if self.nodes is not None:
            lam = np.linspace(self.nodes[0], self.nodes[-1], points)
        P = self.P(lam)
        if not np.all(np.isfinite(P)):
            raise ValidationError(f"{self.family}: psi is not finite and positive on its probe grid")
        if np.any(np.diff(P) < -1e-12 * np.maximum(1.0, np.abs(P[1:]))):
            raise ValidationError(f"{self.family}: psi is not non-increasing")

    # -- constructors -------------------------------------------------------

    @classmethod
    def power_log(cls, c: float = 1.0, a: float = 1.0, q: float = 0.0, x0: float = 1.0) -> "PsiFunction":
        """``c x^{-a} (log x)^{-q}`` on ``[x0, inf)``."""
        if c <= 0 or a < 0:
            raise ValidationError("power_log needs c > 0 and a >= 0")
        if q != 0 and x0 <= 1:
            raise ValidationError("power_log with q != 0 needs x0 > 1")
        logc = math.log(c)

        if q == 0:
            def P(lam):
                return a * lam - logc
        else:
            def P(lam):
                return a * lam + q * np.log(lam) - logc

        psi = cls("power_log", float(x0), P, {"c": c, "a": a, "q": q, "x0": x0})
        psi.validate()
        return psi

    @classmethod
    def tabulated(cls, lam, P) -> "PsiFunction":
        """Monotone piecewise-linear interpolation in ``(lambda, P)`` coordinates.

        Beyond the last node the last slope is continued (a power law in x).
        """
        lam = np.asarray(lam, dtype=np.float64)
        Pv = np.asarray(P, dtype=np.float64)
        if lam.ndim != 1 or lam.shape != Pv.shape or len(lam) < 2:
            raise ValidationError("tabulated psi needs matching 1-d node arrays of length >= 2")
        if np.any(np.diff(lam) <= 0):
            raise ValidationError("tabulated lambda nodes must be strictly increasing")
        if np.any(np.diff(Pv) < 0):
            raise ValidationError("tabulated psi is not non-increasing")
        slope = (Pv[-1] - Pv[-2]) / (lam[-1] - lam[-2])

        def P_fn(x):
            x = np.asarray(x, dtype=np.float64)
            inner = np.interp(x, lam, Pv)
            return np.where(x > lam[-1], Pv[-1] + slope * (x - lam[-1]), inner)

        psi = cls("tabulated", float(math.exp(lam[0])), P_fn, {"nodes": len(lam)}, nodes=lam)
        psi.validate()
        return psi

    @classmethod
    def from_callable(cls, func: Callable, x0: float, name: str = "callable") -> "PsiFunction":
        """Wrap a vectorised ``psi``; validation is deferred to :func:`dani_forward`."""

        def P(lam):
            with np.errstate(divide="ignore", invalid="ignore"):
                return -np.log(func(np.exp(lam)))

        return cls(name, float(x0), P, {})

    @classmethod
    def parse(cls, spec: str) -> "PsiFunction":
        """Parse strings like ``"power_log:c=1,a=1,q=2,x0=2"``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?::(.*))?", spec)
        if not m:
            raise ValidationError(f"cannot parse psi spec {spec!r}")
        family, rest = m.group(1), m.group(2) or ""
        kw = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, _, val = item.partition("=")
            kw[key.strip()] = float(val)
        if family == "power_log":
            return cls.power_log(**kw)
        if family == "eps_over_x":
            return cls.power_log(c=kw.get("eps", 1.0), a=1.0, q=0.0, x0=kw.get("x0", 1.0))
        raise ValidationError(f"unknown psi family {family!r}")


@dataclass(frozen=True)
class RateFunction:
    """Rate function ``r`` on ``[t0, inf)`` for the ``(m, n)`` correspondence.

    ``C`` is the quasi-increasing constant (``r(t2) > r(t1) - C`` on unit windows).
    """

    t0: float
    m: int
    n: int
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    C: float = 0.0
    psi: PsiFunction | None = field(default=None, repr=False, compare=False)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.t0 - 1e-12):
            raise DomainError(f"t below the start of the domain t0 = {self.t0}")
        return self.evaluator(t)

    def lam(self, t) -> np.ndarray:
        return np.asarray(t, dtype=np.float64) - self.n * self(t)

    def L(self, t) -> np.ndarray:
        return np.asarray(t, dtype=np.float64) + self.m * self(t)

    def time_of_lambda(self, lam) -> np.ndarray:
        """Inverse of ``t -> t - n r(t)``."""
        lam = np.asarray(lam, dtype=np.float64)
        if self.psi is not None:
            lam0 = self.psi.lam0
            if np.any(lam < lam0 - 1e-12):
                raise DomainError("lambda below the start of the domain")
            P = self.psi.P_at(lam)
            return (self.m * lam + self.n * P) / (self.m + self.n)
        lo_val = float(self.lam(self.t0))
        if np.any(lam < lo_val - 1e-12):
            raise DomainError("lambda below the start of the domain")
        lo = np.full(lam.shape, self.t0)
        width = np.ones(lam.shape)
        hi = lo + width
        for _ in range(200):
            short = self.lam(hi) < lam
            if not np.any(short):
                break
            width = np.where(short, 2 * width, width)
            hi = np.where(short, lo + width, hi)
        else:
            raise DomainError("lambda(t) does not reach the requested value")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.lam(mid) < lam
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= LAMBDA_TOL * np.maximum(1.0, np.abs(hi))):
                break
        return 0.5 * (lo + hi)

    def psi_value(self, x) -> np.ndarray:
        """``psi(x)`` of the function corresponding to ``r`` (clamped below ``x0``)."""
        if self.psi is not None:
            return self.psi(x)
        lam = np.log(np.asarray(x, dtype=np.float64))
        lam = np.maximum(lam, float(self.lam(self.t0)))
        t = self.time_of_lambda(lam)
        return np.exp(-self.L(t))

    def table(self, ts) -> np.ndarray:
        """Rows ``(t, r, lambda, L)``."""
        ts = np.asarray(ts, dtype=np.float64)
        r = self(ts)
        return np.column_stack([ts, r, ts - self.n * r, ts + self.m * r])

    def to_csv(self, ts, fh: IO[str]) -> None:
        w = csv.writer(fh)
        w.writerow(["t", "r", "lambda", "L"])
        for row in self.table(ts):
            w.writerow([repr(float(x)) for x in row])


def _solve_lambda(psi: PsiFunction, t: np.ndarray, m: int, n: int) -> np.ndarray:
    """Root of ``P(lambda) - ((m+n) t - m lambda) / n`` on ``[lambda0, inf)`` by bisection."""
    lam0 = psi.lam0

    def F(lam):
        return psi.P(lam) - ((m + n) * t - m * lam) / n

    lo = np.full(t.shape, lam0)
    width = np.ones(t.shape)
    hi = lo + width
    for _ in range(1100):
        short = F(hi) < 0
        if not np.any(short):
            break
        width = np.where(short, 2 * width, width)
        hi = np.where(short, lo + width, hi)
    else:
        raise DomainError("could not bracket the intersection")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = F(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= LAMBDA_TOL * np.maximum(1.0, np.abs(hi))):
            break
    # final secant step inside the bracket
    flo, fhi = F(lo), F(hi)
    denom = fhi - flo
    safe = denom > 0
    lam = np.where(safe, lo - flo * (hi - lo) / np.where(safe, denom, 1.0), 0.5 * (lo + hi))
    return np.clip(lam, lo, hi)


def dani_forward(psi: PsiFunction, m: int, n: int) -> RateFunction:
    """Rate function ``r = D_{m,n}(psi)``."""
    if m < 1 or n < 1:
        raise DomainError("m and n must be positive")
    psi.validate()
    lam0 = psi.lam0
    t0 = (m * lam0 + n * float(psi.P(np.array(lam0)))) / (m + n)

    def r_of_t(t):
        t = np.asarray(t, dtype=np.float64)
        lam = _solve_lambda(psi, np.atleast_1d(t).astype(np.float64), m, n)
        L = ((m + n) * np.atleast_1d(t) - m * lam) / n
        r = (L - lam) / (m + n)
        return r.reshape(t.shape)

    return RateFunction(t0=t0, m=m, n=n, evaluator=r_of_t, C=1.0 / m + 1e-9, psi=psi)


def rate_from_callable(func: Callable, t0: float, m: int, n: int, C: float = 0.0) -> RateFunction:
    """Wrap a vectorised ``r``; the conditions on ``lambda`` and ``L`` are checked by :func:`dani_inverse`."""

    def evaluator(t):
        t = np.asarray(t, dtype=np.float64)
        return np.broadcast_to(np.asarray(func(t), dtype=np.float64), t.shape).copy()

    return RateFunction(t0=float(t0), m=m, n=n, evaluator=evaluator, C=C)


def _check_rate_conditions(r: RateFunction, ts: np.ndarray) -> None:
    lam = r.lam(ts)
    L = r.L(ts)
    if np.any(np.diff(lam) <= 0):
        raise ValidationError("t - n r(t) is not strictly increasing")
    if np.any(np.diff(L) < -1e-12 * np.maximum(1.0, np.abs(L[1:]))):
        raise ValidationError("t + m r(t) is not non-decreasing")


def default_time_grid(t0: float, t_max: float, num: int = 40001) -> np.ndarray:
    """Grid on ``[t0, t_max]`` refined quadratically toward ``t0`` where curvature concentrates."""
    s = np.linspace(0.0, 1.0, num)
    return t0 + (t_max - t0) * (0.5 * s + 0.5 * s * s)


def dani_inverse(r: RateFunction, m: int, n: int, t_max: float | None = None,
                 grid=None) -> PsiFunction:
    """Tabulated ``psi`` with ``P(lambda) = L(t(lambda))``.

    The table is built on ``grid`` (default: 40001 points on ``[t0, t_max]``);
    ``x0 = exp(t0 - n r(t0))``.
    """
    if (m, n) != (r.m, r.n):
        raise DomainError(f"rate function built for {(r.m, r.n)}, asked for {(m, n)}")
    if grid is None:
        if t_max is None:
            t_max = r.t0 + 50.0
        grid = default_time_grid(r.t0, t_max)
    ts = np.asarray(grid, dtype=np.float64)
    if ts[0] < r.t0 - 1e-12:
        raise DomainError("grid starts before t0")
    _check_rate_conditions(r, ts)
    rv = r(ts)
    lam = ts - n * rv
    L = ts + m * rv
    return PsiFunction.tabulated(lam, L)


def dani_residual(psi: PsiFunction, r: RateFunction, t) -> np.ndarray:
    """``|log psi(e^{t - n r}) + t + m r|`` at the given times."""
    t = np.asarray(t, dtype=np.float64)
    rv = r(t)
    lam = t - r.n * rv
    return np.abs(-psi.P_at(lam) + t + r.m * rv)


def _quad_pieces(f: Callable[[float], float], a: float, b: float) -> float:
    """Adaptive quadrature over ``[a, b]`` split at ``a + 2^j - 1`` so long ranges stay resolved."""
    edges = [a]
    width = 1.0
    while edges[-1] < b:
        edges.append(min(b, edges[-1] + width))
        width *= 2
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, lo, hi, epsrel=1e-10, epsabs=0.0, limit=200)
        total += val
    return float(total)


def integral_probe(psi: PsiFunction, q: int, X: float | None = None, *, log_X: float | None = None) -> float:
    """``int_{x0}^{X} (log x)^q psi(x) dx``, computed as ``int lambda^q e^{lambda - P} dlambda``."""
    if q < 0:
        raise DomainError("q must be non-negative")
    upper = log_X if log_X is not None else math.log(X)
    lam0 = psi.lam0
    if upper <= lam0:
        return 0.0

    def f(lam):
        return lam**q * math.exp(lam - float(psi.P(np.array(lam))))

    return _quad_pieces(f, lam0, upper)


def rate_integral_probe(r: RateFunction, q: int, m: int, n: int, T: float) -> float:
    """``int_{t0}^{T} t^q e^{-(m+n) r(t)} dt``."""
    if q < 0:
        raise DomainError("q must be non-negative")
    if T <= r.t0:
        return 0.0

    def f(t):
        return t**q * math.exp(-(m + n) * float(r(np.array(t))))

    return _quad_pieces(f, r.t0, T)


def cauchy_tail_converged(probe: Callable[[float], float], T: float, rel: float = 1e-6) -> bool:
    """Heuristic: the integral over ``[T, 2T]`` is below ``rel * I(T)``."""
    a = probe(T)
    b = probe(2 * T)
    return abs(b - a) <= rel * abs(a)


def quasi_increasing_check(r: Callable, C: float, grid) -> bool:
    """Whether ``r(t2) > r(t1) - C`` for all grid pairs with ``t1 <= t2 < t1 + 1``."""
    ts = np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(ts) < 0):
        raise DomainError("grid must be sorted")
    rv = np.asarray(r(ts), dtype=np.float64)
    hi = np.searchsorted(ts, ts + 1.0, side="left")
    for i in range(len(ts)):
        window = rv[i:hi[i]]
        if window.size and window.min() <= rv[i] - C:
            return False
    return True
