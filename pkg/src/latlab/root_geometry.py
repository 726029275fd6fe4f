"""Type A root data, fundamental-weight norms and the positive-chamber tail integral.

The Cartan subalgebra of ``sl_n`` is the trace-zero hyperplane of ``R^n``.
Simple roots are ``e_i - e_{i+1}``; the fundamental weights (identified
with coweights through the standard pairing) are ``e_1 + ... + e_i - (i/n) 1``.

The inner product is fixed by the target values

    |omega_i|^2 = (i (n - i) / n^2) (n (n + 1) - 2 i (n - i)),

which are not all proportional to the trace form (they agree with twice the
trace form only for ``n = 2``).  We keep the angles of the trace form and
rescale each fundamental weight to the target length, giving the Gram matrix
``D G_tr D`` in the fundamental-weight basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import DomainError

MAX_N = 8


def _check_n(n: int) -> None:
    if not 2 <= n <= MAX_N:
        raise DomainError(f"n must be between 2 and {MAX_N}, got {n}")


def weight_norm_sq(n: int, i: int) -> float:
    """``|omega_i|^2 = (i (n-i) / n^2) (n (n+1) - 2 i (n-i))``."""
    if n < 2:
        raise DomainError("n must be at least 2")
    if not 1 <= i <= n - 1:
        raise DomainError(f"index i = {i} outside 1..{n - 1}")
    return i * (n - i) / n**2 * (n * (n + 1) - 2 * i * (n - i))


def rho_coefficient(n: int, i: int) -> float:
    """Coefficient ``k_i = i (n - i) / 2`` of ``alpha_i`` in ``rho``."""
    return i * (n - i) / 2


@dataclass(frozen=True)
class RootSystemA:
    """Root data of ``A_{n-1}`` realised in ``R^n``."""

    n: int
    simple_roots: np.ndarray = field(init=False, repr=False)
    fundamental_weights: np.ndarray = field(init=False, repr=False)
    positive_roots: np.ndarray = field(init=False, repr=False)
    k: np.ndarray = field(init=False, repr=False)
    gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n
        _check_n(n)
        eye = np.eye(n)
        alpha = np.array([eye[i] - eye[i + 1] for i in range(n - 1)])
        omega = np.array([np.r_[np.ones(i + 1), np.zeros(n - i - 1)] - (i + 1) / n for i in range(n - 1)])
        pos = np.array([eye[i] - eye[j] for i in range(n) for j in range(i + 1, n)])
        idx = np.arange(1, n)
        g_tr = np.minimum.outer(idx, idx) - np.outer(idx, idx) / n
        target = np.array([weight_norm_sq(n, i) for i in idx])
        d = np.sqrt(target / np.diag(g_tr))
        object.__setattr__(self, "simple_roots", alpha)
        object.__setattr__(self, "fundamental_weights", omega)
        object.__setattr__(self, "positive_roots", pos)
        object.__setattr__(self, "k", np.array([rho_coefficient(n, i) for i in idx]))
        object.__setattr__(self, "gram", d[:, None] * g_tr * d[None, :])

    @property
    def rank(self) -> int:
        return self.n - 1

    def pairing(self) -> np.ndarray:
        """Matrix ``alpha_i(omega_j)``."""
        return self.simple_roots @ self.fundamental_weights.T

    def rho(self) -> np.ndarray:
        """``sum_i k_i alpha_i`` as a vector of ``R^n``."""
        return self.k @ self.simple_roots

    def rho_from_roots(self) -> np.ndarray:
        """Half the sum of the positive roots."""
        return 0.5 * self.positive_roots.sum(axis=0)

    def norm(self, c) -> np.ndarray:
        """Length of ``sum_i c_i omega_i``."""
        c = np.asarray(c, dtype=np.float64)
        return np.sqrt(np.einsum("...i,ij,...j->...", c, self.gram, c))

    def rho_of(self, c) -> np.ndarray:
        """``rho(sum_i c_i omega_i) = sum_i k_i c_i``."""
        return np.asarray(c, dtype=np.float64) @ self.k


def dl_exponent(n: int) -> float:
    """``min_i k_i / |omega_i|``, checked against ``(n/2) sqrt((n-1)/(n^2-n+2))``."""
    if n < 2:
        raise DomainError("n must be at least 2")
    ratios = np.array([rho_coefficient(n, i) / math.sqrt(weight_norm_sq(n, i)) for i in range(1, n)])
    value = float(ratios.min())
    closed = n / 2 * math.sqrt((n - 1) / (n * n - n + 2))
    if abs(value - closed) > 1e-12:
        raise AssertionError(f"minimum {value!r} differs from closed form {closed!r}")
    ends = {0, n - 2}
    attained = set(np.flatnonzero(np.abs(ratios - value) <= 1e-12).tolist())
    if not attained <= ends:
        raise AssertionError(f"minimum attained away from the end nodes: {sorted(attained)}")
    return value


def _radial_tail(z: float, g: float) -> float:
    """``int_z^inf e^{-g r} r dr``."""
    return math.exp(-z * g) * (z * g + 1.0) / (g * g)


@lru_cache(maxsize=None)
def _rank2_frame(n: int):
    rs = RootSystemA(n)
    L = np.linalg.cholesky(rs.gram)
    # orthonormal coordinates x = L^T c; e1 along omega_1, e2 completes the frame inside the plane
    w1 = L.T @ np.array([1.0, 0.0])
    w2 = L.T @ np.array([0.0, 1.0])
    e1 = w1 / np.linalg.norm(w1)
    e2 = w2 - (w2 @ e1) * e1
    e2 /= np.linalg.norm(e2)
    opening = math.atan2(w2 @ e2, w2 @ e1)
    LinvT = np.linalg.inv(L.T)
    return rs.k, e1, e2, opening, LinvT


def chamber_tail_integral(n: int, z: float) -> float:
    """``J(z)``: integral of ``e^{-rho(w)}`` over chamber points with ``|w| >= z``.

    Rank 1 is closed form; rank 2 integrates the radial part exactly and the
    angle by adaptive quadrature.
    """
    if z < 0:
        raise DomainError("z must be non-negative")
    if n == 2:
        k = rho_coefficient(2, 1) / math.sqrt(weight_norm_sq(2, 1))
        return math.exp(-k * z) / k
    if n != 3:
        raise DomainError(f"chamber integral supports rank 1 and 2 only (n = 2, 3), got n = {n}")
    k, e1, e2, opening, LinvT = _rank2_frame(n)

    def integrand(phi: float) -> float:
        u = math.cos(phi) * e1 + math.sin(phi) * e2
        g = float(k @ (LinvT @ u))
        return _radial_tail(z, g)

    val, _ = integrate.quad(integrand, 0.0, opening, epsrel=1e-10, epsabs=0.0, limit=200)
    return float(val)
