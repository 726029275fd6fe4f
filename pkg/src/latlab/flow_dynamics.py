"""Diagonal flows on the space of lattices, the embedding A -> Lambda_A, and the (ED) sum.

Conventions: ``f_t = diag(exp(a_1 t), ..., exp(a_k t))`` acts on a basis by
left multiplication, i.e. coordinate (row) ``i`` of every basis vector is
scaled by ``exp(a_i t)``.  Long orbits are followed by stepping and
re-reducing the basis; see :func:`planar_orbit_deltas` and
:func:`orbit_bases`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OverflowGuard, ValidationError
from .lattice_core import (
    LatticeBasis,
    gauss_reduce_batch,
    lll_reduce,
    sup_minimum_batch,
)

EXPONENT_GUARD = 500.0
TRACE_TOL = 1e-12


@dataclass(frozen=True)
class DiagonalFlow:
    """One-parameter diagonal flow with a trace-zero exponent vector."""

    exponents: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.exponents)
        if len(a) < 2:
            raise ValidationError("a flow needs at least two exponents")
        if abs(math.fsum(a)) > TRACE_TOL:
            raise ValidationError(f"exponents must sum to zero, got {math.fsum(a)!r}")
        object.__setattr__(self, "exponents", a)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @classmethod
    def from_mn(cls, m: int, n: int) -> "DiagonalFlow":
        """``diag(e^{t/m} (m times), e^{-t/n} (n times))``."""
        if m < 1 or n < 1:
            raise DomainError("m and n must be positive")
        return cls((1.0 / m,) * m + (-1.0 / n,) * n)

    @classmethod
    def parse(cls, spec: str) -> "DiagonalFlow":
        """Parse ``"m:n"`` shorthand or a comma separated exponent list."""
        spec = spec.strip()
        if ":" in spec:
            m, n = spec.split(":")
            return cls.from_mn(int(m), int(n))
        return cls(tuple(float(x) for x in spec.split(",")))

    def to_json(self) -> str:
        return json.dumps({"exponents": list(self.exponents)})

    @classmethod
    def from_json(cls, text: str | dict) -> "DiagonalFlow":
        data = json.loads(text) if isinstance(text, str) else text
        return cls(tuple(data["exponents"]))


@dataclass(frozen=True)
class ChamberPoint:
    """Point ``t`` of the trace-zero diagonal algebra."""

    t: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.t)
        if abs(math.fsum(t)) > TRACE_TOL * max(1.0, max(abs(x) for x in t)):
            raise ValidationError(f"chamber point must be trace-zero, got sum {math.fsum(t)!r}")
        object.__setattr__(self, "t", t)

    @property
    def minus_norm(self) -> float:
        """``max{|t_i| : t_i <= 0}``."""
        neg = [abs(x) for x in self.t if x <= 0]
        return max(neg) if neg else 0.0

    def __add__(self, other: "ChamberPoint") -> "ChamberPoint":
        return ChamberPoint(tuple(a + b for a, b in zip(self.t, other.t)))


def _scale_rows(B: LatticeBasis, logs: np.ndarray) -> LatticeBasis:
    if np.any(np.abs(logs) > EXPONENT_GUARD):
        raise OverflowGuard(f"flow exponent {np.max(np.abs(logs)):.1f} exceeds guard {EXPONENT_GUARD}")
    out = np.exp(logs)[:, None] * B.cols
    # trace-zero scaling leaves det = 1 up to rounding; renormalise the drift
    det = np.linalg.det(out)
    if abs(det - 1.0) > 1e-9:
        raise ValidationError(f"flow broke unimodularity: det = {det!r}")
    return LatticeBasis(out)


def apply_flow(flow: DiagonalFlow, t: float, B: LatticeBasis) -> LatticeBasis:
    if flow.dim != B.dim:
        raise DomainError(f"flow of dim {flow.dim} applied to lattice of dim {B.dim}")
    return _scale_rows(B, np.asarray(flow.exponents) * t)


def apply_multiflow(t: ChamberPoint, B: LatticeBasis) -> LatticeBasis:
    if len(t.t) != B.dim:
        raise DomainError(f"chamber point of dim {len(t.t)} applied to lattice of dim {B.dim}")
    return _scale_rows(B, np.asarray(t.t))


def lattice_of_matrix(A) -> LatticeBasis:
    """Basis ``[[I_m, A], [0, I_n]]`` of ``Lambda_A = {(Aq + p, q)}``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    m, n = A.shape
    if m < 1 or n < 1 or m + n > 6:
        raise DomainError(f"need m, n >= 1 and m + n <= 6, got {m}x{n}")
    B = np.eye(m + n)
    B[:m, m:] = A
    return LatticeBasis(B)


def ed_sum(flow: DiagonalFlow, beta: float, T: int) -> float:
    """``max_{t<=T} sum_{s<=T} exp(-beta |f_s f_t^{-1}|)``.

    For diagonal elements ``|diag(e^{d_i})|`` is taken to be the Euclidean
    norm of ``d``, so the summand only depends on ``|s - t| * |a|_2``.
    """
    if beta <= 0:
        raise DomainError("beta must be positive")
    if T < 1:
        raise DomainError("T must be at least 1")
    speed = float(np.linalg.norm(flow.exponents))
    # sum over s of exp(-beta*speed*|s-t|) for every t, via the two one-sided sums
    w = np.exp(-beta * speed * np.arange(T))
    csum = np.cumsum(w)
    t = np.arange(1, T + 1)
    totals = csum[t - 1] + csum[T - t] - 1.0
    return float(totals.max())


# ---------------------------------------------------------------------------
# long orbits
# ---------------------------------------------------------------------------

def planar_orbit_deltas(bases: np.ndarray, exponents, steps: int, dt: float = 1.0) -> np.ndarray:
    """Sup-norm ``Delta(f_{j dt} Lambda)`` for ``j = 1..steps`` and a batch of planar lattices.

    ``bases`` has shape (S, 2, 2) (columns are generators).  Each step applies
    ``f_dt``, Gauss-reduces and rescales to determinant one.  Rounding errors
    are expanded by the hyperbolic flow, so beyond a few dozen steps this is
    a pseudo-orbit (shadowed by a true orbit of a nearby lattice); the
    statistics it produces are those of the flow.  Returns shape (S, steps).
    """
    a = np.asarray(exponents, dtype=np.float64)
    if a.shape != (2,) or abs(a.sum()) > TRACE_TOL:
        raise ValidationError("planar flow needs two exponents summing to zero")
    if np.max(np.abs(a * dt)) > EXPONENT_GUARD:
        raise OverflowGuard("flow step exceeds exponent guard")
    scale = np.exp(a * dt)
    b1 = np.array(bases[:, :, 0], dtype=np.float64)
    b2 = np.array(bases[:, :, 1], dtype=np.float64)
    out = np.empty((len(b1), steps))
    for j in range(steps):
        b1 *= scale
        b2 *= scale
        b1, b2 = gauss_reduce_batch(b1, b2)
        det = b1[:, 0] * b2[:, 1] - b1[:, 1] * b2[:, 0]
        fix = 1.0 / np.sqrt(np.abs(det))
        b1 *= fix[:, None]
        b2 *= fix[:, None]
        out[:, j] = -np.log(sup_minimum_batch(b1, b2))
    return out


def orbit_bases(B: LatticeBasis, flow: DiagonalFlow, times) -> list[LatticeBasis]:
    """Reduced bases of ``f_t Lambda`` at increasing ``times`` (t >= 0), stepping and re-reducing.

    Valid for any dimension; steps longer than 1 time unit are split so the
    basis never grows beyond ``e`` per coordinate between reductions.
    """
    a = np.asarray(flow.exponents)
    cur = np.array(B.cols)
    now = 0.0
    out = []
    for t in times:
        if t < now:
            raise DomainError("times must be non-decreasing")
        remaining = t - now
        while remaining > 0:
            h = min(remaining, 1.0)
            cur = np.exp(a * h)[:, None] * cur
            cur, _ = lll_reduce(cur)
            cur = cur / abs(np.linalg.det(cur)) ** (1.0 / len(a))
            remaining -= h
        now = t
        out.append(LatticeBasis(cur))
    return out
