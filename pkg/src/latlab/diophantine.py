"""Approximation witnesses and their translation into flow excursions.

Three witness notions are supported:

* pairs ``(p, q)`` with ``|Aq + p|^m <= psi(|q|^n)`` for a matrix ``A``;
* lattice vectors ``v`` whose first ``m`` coordinates are small relative to
  the last ``n`` (the same inequality written inside an arbitrary lattice);
* multiplicative witnesses ``prod |v_i| <= |v| psi(|v|)``.

All norms are sup norms.  ``psi`` is evaluated with its constant continuation
below ``x0``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .dani_transform import PsiFunction, RateFunction
from .errors import DomainError, EnumerationOverflow, NotInRange, ValidationError
from .flow_dynamics import ChamberPoint, DiagonalFlow, apply_flow
from .lattice_core import (
    DEFAULT_CAP,
    LatticeBasis,
    ShortVec,
    _as_matrix,
    lattice_points_in_box,
    shortest_vector,
)

CHECK_RTOL = 1e-9


@dataclass(frozen=True)
class ApproxWitness:
    v: ShortVec
    m: int
    n: int
    slack: float

    @property
    def upper(self) -> np.ndarray:
        return self.v.embed[: self.m]

    @property
    def lower(self) -> np.ndarray:
        return self.v.embed[self.m:]

    @property
    def zero_block(self) -> bool:
        """True when the first ``m`` coordinates vanish (rational-type degeneracy)."""
        return bool(np.all(self.upper == 0))


@dataclass(frozen=True)
class MAWitness:
    v: ShortVec
    product: float
    slack: float

    @property
    def has_zero(self) -> bool:
        return self.product == 0.0


@dataclass(frozen=True)
class Degenerate:
    """Returned instead of a time or chamber point when a witness has a vanishing block."""

    v: np.ndarray
    reason: str


def _sup(x: np.ndarray) -> np.ndarray:
    return np.max(np.abs(x), axis=-1)


def _shortvec(W: np.ndarray, c: np.ndarray) -> ShortVec:
    v = W @ c.astype(np.float64)
    return ShortVec(tuple(int(x) for x in c), v, float(np.max(np.abs(v))))


# ---------------------------------------------------------------------------
# matrix form
# ---------------------------------------------------------------------------

def _half_box(n: int, Q: int) -> np.ndarray:
    """Integer vectors with ``1 <= |q| <= Q`` and first nonzero entry positive."""
    size = (2 * Q + 1) ** n // 2
    if size > DEFAULT_CAP:
        raise EnumerationOverflow(f"{size} candidate q vectors exceed cap {DEFAULT_CAP}")
    if n == 1:
        return np.arange(1, Q + 1, dtype=np.int64)[:, None]
    g = np.arange(-Q, Q + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1).reshape(-1, n)
    nz = grid != 0
    first = np.argmax(nz, axis=1)
    lead = grid[np.arange(len(grid)), first]
    return grid[lead > 0]


def psi_approx_witnesses(A, psi: PsiFunction, Qmax: float) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All ``(p, q)`` with ``1 <= |q| <= Qmax`` and ``|Aq + p|^m <= psi(|q|^n)``.

    ``q`` is listed once per sign class (first nonzero entry positive) and
    ``p`` is the nearest integer vector to ``-Aq`` (ties to even).  Sorted by
    ``|q|`` then lexicographically.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    m, n = A.shape
    Q = int(math.floor(Qmax))
    if Q < 1:
        return []
    q = _half_box(n, Q)
    Aq = q.astype(np.float64) @ A.T
    p = -np.rint(Aq)
    err = _sup(Aq + p)
    qn = _sup(q).astype(np.float64)
    rhs = psi(qn**n)
    keep = err**m <= rhs
    q, p, qn = q[keep], p[keep].astype(np.int64), qn[keep]
    order = np.lexsort(tuple(q.T[::-1]) + (qn,))
    return [(tuple(int(x) for x in p[i]), tuple(int(x) for x in q[i])) for i in order]


def count_psi_witnesses(alphas, psi: PsiFunction, Qmax: int, ladder=None) -> np.ndarray:
    """Witness counts for many scalars ``alpha`` (m = n = 1).

    Returns shape (len(alphas),) or, with ``ladder``, counts up to each
    ladder value, shape (len(alphas), len(ladder)).
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    q = np.arange(1, int(Qmax) + 1, dtype=np.float64)
    rhs = psi(q)
    out = np.zeros((len(alphas), len(q)), dtype=bool)
    for i, a in enumerate(alphas):
        aq = a * q
        out[i] = np.abs(aq - np.rint(aq)) <= rhs
    if ladder is None:
        return out.sum(axis=1)
    csum = np.cumsum(out, axis=1)
    return np.stack([csum[:, int(L) - 1] for L in ladder], axis=1)


# ---------------------------------------------------------------------------
# lattice form
# ---------------------------------------------------------------------------

def lattice_psi_approx_witnesses(B, psi: PsiFunction, m: int, n: int, Rmax: float,
                                 cap: int = DEFAULT_CAP) -> list[ApproxWitness]:
    """Lattice vectors with ``1 <= |v_low| <= Rmax`` and ``|v_up|^m <= psi(|v_low|^n)``.

    ``v_up`` is the first ``m`` coordinates and ``v_low`` the last ``n``.
    Both ``v`` and ``-v`` are listed.
    """
    W = _as_matrix(B)
    k = W.shape[0]
    if m < 1 or n < 1 or m + n != k:
        raise DomainError(f"m + n must equal the lattice dimension {k}")
    if Rmax < 1:
        return []
    top = float(psi(1.0)) ** (1.0 / m) * (1 + 1e-12)
    hi = np.array([top] * m + [Rmax * (1 + 1e-12)] * n)
    coords = lattice_points_in_box(W, -hi, hi, cap=cap)
    if len(coords) == 0:
        return []
    v = coords @ W.T
    up, low = _sup(v[:, :m]), _sup(v[:, m:])
    rhs = psi(np.maximum(low, 1.0) ** n)
    keep = (low >= 1.0) & (low <= Rmax) & (up**m <= rhs)
    coords, up, low, rhs = coords[keep], up[keep], low[keep], rhs[keep]
    order = np.lexsort(tuple(coords.T[::-1]) + (low,))
    return [ApproxWitness(_shortvec(W, coords[i]), m, n, float(rhs[i] - up[i] ** m)) for i in order]


def witness_to_time(w: ApproxWitness, r: RateFunction, m: int, n: int) -> float:
    """Time ``t`` with ``|v_low|^n = exp(t - n r(t))``; the scaled vector then has norm ``<= exp(-r(t))``."""
    if (m, n) != (r.m, r.n) or (m, n) != (w.m, w.n):
        raise DomainError("witness, rate function and (m, n) disagree")
    low = float(_sup(w.lower))
    if low <= 0:
        raise NotInRange("witness has a vanishing lower block")
    lam = n * math.log(low)
    try:
        t = float(r.time_of_lambda(lam))
    except DomainError as exc:
        raise NotInRange(f"excursion not yet defined at |v_low| = {low:g}") from exc
    bound = math.exp(-float(r(t)))
    up_scaled = math.exp(t / m) * float(_sup(w.upper))
    low_scaled = math.exp(-t / n) * low
    if up_scaled > bound * (1 + CHECK_RTOL) or low_scaled > bound * (1 + CHECK_RTOL):
        raise ValidationError(f"witness does not give an excursion at t = {t:g}")
    return t


def time_to_witness(B, r: RateFunction, m: int, n: int, t: float):
    """Read off an approximation witness from an excursion ``Delta(f_t B) >= r(t)``.

    Returns an :class:`ApproxWitness`, or :class:`Degenerate` when the short
    vector has a vanishing upper block.
    """
    basis = B if isinstance(B, LatticeBasis) else LatticeBasis(B)
    if (m, n) != (r.m, r.n) or m + n != basis.dim:
        raise DomainError("rate function, (m, n) and lattice dimension disagree")
    rt = float(r(t))
    moved = apply_flow(DiagonalFlow.from_mn(m, n), t, basis)
    sv = shortest_vector(moved)
    if -math.log(sv.norm_value) < rt - CHECK_RTOL:
        raise DomainError(f"no excursion at t = {t:g}")
    v = _shortvec(basis.cols, np.asarray(sv.coords, dtype=np.int64))
    up = float(_sup(v.embed[:m]))
    low = float(_sup(v.embed[m:]))
    if up == 0.0:
        return Degenerate(v.embed, "upper block vanishes")
    rhs = float(r.psi_value(max(low, 1e-300) ** n))
    slack = rhs - up**m
    if slack < -CHECK_RTOL * rhs:
        raise ValidationError(f"extracted vector violates the approximation inequality (slack {slack:g})")
    return ApproxWitness(v, m, n, max(slack, 0.0))


# ---------------------------------------------------------------------------
# multiplicative form
# ---------------------------------------------------------------------------

def _hyperbolic_boxes(R: float, E: float, k: int):
    """Half-widths of boxes covering ``{|v| <= R, prod |v_i| <= E}``.

    The smallest coordinate ("star") is bounded by ``E`` over the dyadic
    lower bounds of the others; the others are binned dyadically from ``R``
    down to a level where the whole box is small.
    """
    if E >= R**k:
        yield np.full(k, R)
        return
    J = max(1, math.ceil(math.log2(R / E ** (1.0 / k))))
    for levels in itertools.product(range(J + 1), repeat=k - 1):
        upper = np.array([R * 2.0 ** -l for l in levels])
        lower = np.array([0.0 if l == J else R * 2.0 ** (-l - 1) for l in levels])
        star = upper.min()
        if np.all(lower > 0):
            star = min(star, E / float(np.prod(lower)))
        for pos in range(k):
            yield np.insert(upper, pos, star)


def ma_witnesses(B, psi: PsiFunction, Rmax: float, cap: int = DEFAULT_CAP) -> list[MAWitness]:
    """All nonzero ``v`` with ``|v| <= Rmax`` and ``prod |v_i| <= |v| psi(|v|)``."""
    W = _as_matrix(B)
    k = W.shape[0]
    if k < 2:
        raise DomainError("need dimension at least 2")
    if Rmax <= 0:
        return []
    floor_r = max(2.0 * psi.x0, 1.0)
    found = []
    total = 0
    hi_r = Rmax * (1 + 1e-12)
    while True:
        lo_r = hi_r / 2 if hi_r / 2 >= floor_r else 0.0
        # on this shell |v| psi(|v|) <= hi_r * psi(lo_r) (psi is non-increasing)
        E = hi_r * float(psi(max(lo_r, 1e-300))) * (1 + 1e-12)
        for half in _hyperbolic_boxes(hi_r, E, k):
            c = lattice_points_in_box(W, -half, half, cap=cap)
            total += len(c)
            if total > cap:
                raise EnumerationOverflow(f"multiplicative witness search exceeded cap {cap}")
            if len(c):
                found.append(c)
        if lo_r == 0.0:
            break
        hi_r = lo_r
    if not found:
        return []
    coords = np.unique(np.concatenate(found), axis=0)
    v = coords @ W.T
    norms = _sup(v)
    prod = np.prod(np.abs(v), axis=1)
    rhs = norms * psi(norms)
    keep = (norms <= Rmax) & (prod <= rhs)
    coords, norms, prod, rhs = coords[keep], norms[keep], prod[keep], rhs[keep]
    order = np.lexsort(tuple(coords.T[::-1]) + (norms,))
    return [MAWitness(_shortvec(W, coords[i]), float(prod[i]), float(rhs[i] - prod[i])) for i in order]


def ma_witness_to_chamber(w: MAWitness, r: RateFunction, k: int):
    """Chamber point ``t`` with ``|t|_- = s`` and ``exp(t_i)|v_i| <= exp(-r(s))`` for every ``i``.

    ``r`` must come from ``dani_forward(psi, k - 1, 1)``.  The scalar ``s``
    solves ``|v| = exp(s - r(s))``; the coordinates are filled greedily in
    order of decreasing ``|v_i|`` and returned in the original order.
    Returns :class:`Degenerate` if some coordinate of ``v`` vanishes.
    """
    v = np.asarray(w.v.embed, dtype=np.float64)
    if len(v) != k or (r.m, r.n) != (k - 1, 1):
        raise DomainError("rate function must be built for (k - 1, 1)")
    if np.any(v == 0):
        return Degenerate(v, "zero coordinate")
    absv = np.abs(v)
    norm = float(absv.max())
    try:
        s = float(r.time_of_lambda(math.log(norm)))
    except DomainError as exc:
        raise NotInRange(f"|v| = {norm:g} is below the range of the correspondence") from exc
    if s < 0:
        raise NotInRange(f"scalar time {s:g} is negative")
    rs = float(r(s))
    order = np.argsort(-absv, kind="stable")
    a = -rs - np.log(absv[order])
    t_sorted = np.empty(k)
    t_sorted[0] = -s
    acc = -s
    for i in range(1, k - 1):
        t_sorted[i] = min(a[i], -acc)
        acc += t_sorted[i]
    t_sorted[k - 1] = -acc
    t = np.empty(k)
    t[order] = t_sorted
    point = ChamberPoint(tuple(t))
    tol = CHECK_RTOL * max(1.0, s)
    if np.any(t + np.log(absv) > -rs + tol):
        raise ValidationError("greedy chamber point violates the coordinate bounds")
    if abs(point.minus_norm - s) > tol:
        raise ValidationError("chamber point has the wrong negative part")
    return point


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def witnesses_to_csv(witnesses: Iterable, fh: IO[str]) -> None:
    """Rows of coordinates, embedded vector, norm, slack and a degeneracy flag."""
    writer = csv.writer(fh)
    rows = list(witnesses)
    if not rows:
        writer.writerow(["coords", "vector", "norm", "slack", "degenerate"])
        return
    k = len(rows[0].v.coords)
    writer.writerow([f"c{i}" for i in range(k)] + [f"v{i}" for i in range(k)]
                    + ["norm", "slack", "degenerate"])
    for w in rows:
        flag = w.zero_block if isinstance(w, ApproxWitness) else w.has_zero
        writer.writerow(list(w.v.coords) + [repr(float(x)) for x in w.v.embed]
                        + [repr(w.v.norm_value), repr(w.slack), int(flag)])
