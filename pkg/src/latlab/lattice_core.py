"""Exact geometry of unimodular lattices in R^k, 2 <= k <= 6.

A lattice is stored through a basis matrix whose *columns* generate it,
``Lambda = B @ Z^k``.  Reduction is LLL with delta = 0.99, shortest vectors
come from Fincke-Pohst enumeration over the reduced basis, and the sup norm
is handled by enumerating the circumscribed Euclidean ball and filtering.

The module also carries vectorised kernels for the planar case (batches of
2x2 bases), which the Monte-Carlo and orbit code leans on.  Those kernels are
cross-checked against the general routines in the test-suite.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DomainError, EnumerationOverflow, ValidationError

DET_TOL = 1e-9
LLL_DELTA = 0.99
DEFAULT_CAP = 10**7
# relative slack for "norm <= R" decisions and enumeration radii
NORM_RTOL = 1e-12


class NormKind(str, enum.Enum):
    SUP = "sup"
    EUCLIDEAN = "euclidean"


def vector_norm(x: np.ndarray, norm: NormKind | str = NormKind.SUP, axis: int = -1) -> np.ndarray:
    norm = NormKind(norm)
    if norm is NormKind.SUP:
        return np.max(np.abs(x), axis=axis)
    return np.sqrt(np.sum(np.square(x), axis=axis))


@dataclass(frozen=True)
class LatticeBasis:
    """Unimodular lattice ``cols @ Z^k`` with ``det(cols) = 1``."""

    cols: np.ndarray

    def __post_init__(self):
        cols = np.array(self.cols, dtype=np.float64)
        if cols.ndim != 2 or cols.shape[0] != cols.shape[1]:
            raise ValidationError(f"basis must be square, got shape {cols.shape}")
        k = cols.shape[0]
        if not 2 <= k <= 6:
            raise ValidationError(f"dimension {k} outside supported range 2..6")
        if not np.all(np.isfinite(cols)):
            raise ValidationError("basis has non-finite entries")
        if not np.isfinite(np.linalg.cond(cols)):
            raise ValidationError("basis columns are linearly dependent")
        det = np.linalg.det(cols)
        if abs(det - 1.0) > DET_TOL:
            raise ValidationError(f"basis is not unimodular: det = {det!r}")
        cols.setflags(write=False)
        object.__setattr__(self, "cols", cols)

    @property
    def dim(self) -> int:
        return self.cols.shape[0]

    def vector(self, coords) -> np.ndarray:
        return self.cols @ np.asarray(coords, dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "cols": self.cols.ravel().tolist()})

    @classmethod
    def from_json(cls, text: str | dict) -> "LatticeBasis":
        data = json.loads(text) if isinstance(text, str) else text
        k = int(data["dim"])
        flat = np.asarray(data["cols"], dtype=np.float64)
        if flat.size != k * k:
            raise ValidationError(f"expected {k * k} entries for dim {k}, got {flat.size}")
        return cls(flat.reshape(k, k))

    @classmethod
    def identity(cls, k: int) -> "LatticeBasis":
        return cls(np.eye(k))

    @classmethod
    def normalized(cls, cols) -> "LatticeBasis":
        """Rescale an arbitrary nonsingular basis to determinant one.

        A negative determinant is fixed by negating the last column, which
        leaves the lattice unchanged.
        """
        cols = np.array(cols, dtype=np.float64)
        det = np.linalg.det(cols)
        if det == 0 or not np.isfinite(det):
            raise ValidationError("cannot normalise a singular basis")
        if det < 0:
            cols[:, -1] = -cols[:, -1]
            det = -det
        return cls(cols / det ** (1.0 / cols.shape[0]))


@dataclass(frozen=True)
class ShortVec:
    coords: tuple[int, ...]
    embed: np.ndarray
    norm_value: float


def _as_matrix(B) -> np.ndarray:
    if isinstance(B, LatticeBasis):
        return B.cols
    return np.asarray(B, dtype=np.float64)


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------

def lll_reduce(B, delta: float = LLL_DELTA, max_iter: int = 100_000):
    """LLL-reduce the columns of ``B``.

    Returns ``(B_red, U)`` with ``B_red = B @ U`` recomputed exactly from the
    integer transform and ``det U = +1``.
    """
    B0 = np.array(_as_matrix(B), dtype=np.float64)
    k = B0.shape[1]
    U = np.eye(k, dtype=np.int64)
    W = B0.copy()
    R = np.linalg.qr(W, mode="r")
    i = 1
    it = 0
    while i < k:
        it += 1
        if it > max_iter:
            raise EnumerationOverflow("LLL did not terminate; basis is pathologically conditioned")
        for j in range(i - 1, -1, -1):
            q = round(R[j, i] / R[j, j])
            if q:
                if abs(q) > 2**50:
                    raise EnumerationOverflow("LLL size-reduction coefficient overflow")
                W[:, i] -= q * W[:, j]
                U[:, i] -= q * U[:, j]
                R[: j + 1, i] -= q * R[: j + 1, j]
        if delta * R[i - 1, i - 1] ** 2 > R[i - 1, i] ** 2 + R[i, i] ** 2:
            W[:, [i - 1, i]] = W[:, [i, i - 1]]
            U[:, [i - 1, i]] = U[:, [i, i - 1]]
            W = B0 @ U
            R = np.linalg.qr(W, mode="r")
            i = max(i - 1, 1)
        else:
            i += 1
    if round(np.linalg.det(U.astype(np.float64))) < 0:
        U[:, -1] = -U[:, -1]
    return B0 @ U, U


def reduce_basis(B: LatticeBasis) -> LatticeBasis:
    """Lovasz-reduced basis (delta = 0.99) of the same lattice."""
    if not isinstance(B, LatticeBasis):
        B = LatticeBasis(B)
    red, _ = lll_reduce(B.cols)
    return LatticeBasis(red)


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def _positive_r(W: np.ndarray) -> np.ndarray:
    R = np.linalg.qr(W, mode="r")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return R * signs[:, None]


def _fp_enumerate(R: np.ndarray, radius: float, cap: int) -> np.ndarray:
    """All integer ``c`` (including 0) with ``|R c|_2 <= radius`` for upper-triangular ``R``."""
    k = R.shape[0]
    r2 = radius * radius * (1.0 + 1e-9)
    c = np.zeros(k, dtype=np.int64)
    blocks: list[np.ndarray] = []
    count = 0
    nodes = 0

    def rec(i: int, rem: float):
        nonlocal count, nodes
        nodes += 1
        if nodes > cap:
            raise EnumerationOverflow(f"enumeration tree exceeded cap {cap}")
        center = -float(R[i, i + 1:] @ c[i + 1:]) / R[i, i] if i + 1 < k else 0.0
        span = math.sqrt(max(rem, 0.0)) / R[i, i]
        lo = math.ceil(center - span)
        hi = math.floor(center + span)
        if hi < lo:
            return
        if i == 0:
            n = hi - lo + 1
            count += n
            if count > cap:
                raise EnumerationOverflow(f"enumeration exceeded cap {cap} candidates")
            blk = np.empty((n, k), dtype=np.int64)
            blk[:, 0] = np.arange(lo, hi + 1)
            blk[:, 1:] = c[1:]
            blocks.append(blk)
            return
        for x in range(lo, hi + 1):
            d = R[i, i] * (x - center)
            c[i] = x
            rec(i - 1, rem - d * d)
        c[i] = 0

    rec(k - 1, r2)
    if not blocks:
        return np.zeros((0, k), dtype=np.int64)
    return np.concatenate(blocks)


def enumerate_ball(B, radius: float, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Nonzero coordinate vectors ``c`` (w.r.t. ``B``) with ``|B c|_2 <= radius`` (up to slack).

    The caller filters by its exact predicate; this routine only guarantees
    that nothing inside the ball is missed.
    """
    W = _as_matrix(B)
    k = W.shape[0]
    if radius <= 0:
        return np.zeros((0, k), dtype=np.int64)
    red, U = lll_reduce(W)
    R = _positive_r(red)
    cr = _fp_enumerate(R, radius, cap)
    cr = cr[np.any(cr != 0, axis=1)]
    return cr @ U.T


def _canonical_sign(coords: np.ndarray) -> np.ndarray:
    """Flip rows so that the first nonzero entry is positive."""
    nz = coords != 0
    first = np.argmax(nz, axis=1)
    s = np.sign(coords[np.arange(len(coords)), first])
    s[s == 0] = 1
    return coords * s[:, None]


def _pick_minimizer(coords: np.ndarray, norms: np.ndarray) -> int:
    best = norms.min()
    tied = np.flatnonzero(norms <= best * (1.0 + NORM_RTOL))
    canon = _canonical_sign(coords[tied])
    order = np.lexsort(canon.T[::-1])
    return int(tied[order[0]])


def shortest_vector(B, norm: NormKind | str = NormKind.SUP, cap: int = DEFAULT_CAP) -> ShortVec:
    """Global minimiser of ``|B c|`` over nonzero integer ``c``.

    Ties (relative 1e-12) are broken toward the lexicographically smallest
    coordinate vector with positive first nonzero entry.
    """
    norm = NormKind(norm)
    W = _as_matrix(B)
    k = W.shape[0]
    red, U = lll_reduce(W)
    col_norms = vector_norm(red.T, norm)
    best = float(col_norms.min())
    radius = best * (math.sqrt(k) if norm is NormKind.SUP else 1.0) * (1.0 + 1e-9)
    R = _positive_r(red)
    cr = _fp_enumerate(R, radius, cap)
    cr = cr[np.any(cr != 0, axis=1)]
    coords = cr @ U.T
    vecs = coords @ W.T
    norms = vector_norm(vecs, norm)
    idx = _pick_minimizer(coords, norms)
    c = _canonical_sign(coords[idx: idx + 1])[0]
    v = W @ c.astype(np.float64)
    return ShortVec(tuple(int(x) for x in c), v, float(vector_norm(v, norm)))


def delta(B, norm: NormKind | str = NormKind.SUP) -> float:
    """Height function ``max_{v != 0} log(1/|v|)``."""
    return -math.log(shortest_vector(B, norm).norm_value)


def lattice_points_in_box(B, lo, hi, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Coordinates of all nonzero lattice points ``v`` with ``lo <= v <= hi`` componentwise.

    The box is circumscribed by an axis-aligned ellipsoid, which becomes a
    Euclidean ball after rescaling the coordinates.
    """
    W = _as_matrix(B)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi < lo):
        return np.zeros((0, W.shape[0]), dtype=np.int64)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    half = np.where(half > 0, half, 1e-300)
    if np.any(center != 0):
        raise DomainError("only origin-centred boxes are supported")
    scaled = W / half[:, None]
    k = W.shape[0]
    coords = enumerate_ball(scaled, math.sqrt(k), cap=cap)
    if len(coords) == 0:
        return coords
    v = coords @ W.T
    tol = NORM_RTOL * np.maximum(np.abs(lo), np.abs(hi))
    inside = np.all((v >= lo - tol) & (v <= hi + tol), axis=1)
    return coords[inside]


def _sort_by_norm(coords: np.ndarray, norms: np.ndarray):
    order = np.lexsort(tuple(coords.T[::-1]) + (norms,))
    return coords[order], norms[order]


def primitive_vectors_in_ball(B, R: float, norm: NormKind | str = NormKind.SUP,
                              cap: int = 10**6) -> list[ShortVec]:
    """Every primitive ``v`` with ``|v| <= R``; both ``v`` and ``-v`` appear."""
    if R <= 0:
        raise DomainError("radius must be positive")
    norm = NormKind(norm)
    W = _as_matrix(B)
    k = W.shape[0]
    radius = R * (math.sqrt(k) if norm is NormKind.SUP else 1.0)
    coords = enumerate_ball(W, radius * (1 + 1e-9), cap=cap * 4)
    if len(coords) == 0:
        return []
    norms = vector_norm(coords @ W.T, norm)
    keep = norms <= R * (1.0 + NORM_RTOL)
    coords, norms = coords[keep], norms[keep]
    g = np.gcd.reduce(np.abs(coords), axis=1)
    coords, norms = coords[g == 1], norms[g == 1]
    if len(coords) > cap:
        raise EnumerationOverflow(f"{len(coords)} primitive vectors exceed cap {cap}")
    coords, norms = _sort_by_norm(coords, norms)
    out = []
    for c, nv in zip(coords, norms):
        v = W @ c.astype(np.float64)
        out.append(ShortVec(tuple(int(x) for x in c), v, float(nv)))
    return out


# ---------------------------------------------------------------------------
# primitivity of tuples
# ---------------------------------------------------------------------------

def smith_divisors(C) -> list[int]:
    """Nonzero elementary divisors of an integer matrix, by row/column elimination."""
    M = [[int(x) for x in row] for row in np.atleast_2d(np.asarray(C)).tolist()]
    rows = len(M)
    cols = len(M[0]) if rows else 0
    divisors = []
    for t in range(min(rows, cols)):
        while True:
            nz = [(abs(M[i][j]), i, j) for i in range(t, rows) for j in range(t, cols) if M[i][j]]
            if not nz:
                return divisors
            _, pi, pj = min(nz)
            M[t], M[pi] = M[pi], M[t]
            for row in M:
                row[t], row[pj] = row[pj], row[t]
            p = M[t][t]
            changed = False
            for i in range(t + 1, rows):
                q = M[i][t] // p
                if q:
                    M[i] = [a - q * b for a, b in zip(M[i], M[t])]
                changed |= M[i][t] != 0
            for j in range(t + 1, cols):
                q = M[t][j] // p
                if q:
                    for row in M:
                        row[j] -= q * row[t]
                changed |= M[t][j] != 0
            if changed:
                continue
            bad = next((i for i in range(t + 1, rows) for j in range(t + 1, cols) if M[i][j] % p), None)
            if bad is None:
                divisors.append(abs(p))
                break
            M[t] = [a + b for a, b in zip(M[t], M[bad])]
    return divisors


def tuple_is_primitive(C) -> bool:
    """Whether the rows of ``C`` (a d x k integer matrix, d < k) extend to a basis of Z^k."""
    C = np.atleast_2d(np.asarray(C, dtype=np.int64))
    d, k = C.shape
    if d >= k:
        raise DomainError(f"tuple length d={d} must be smaller than the dimension k={k}")
    divs = smith_divisors(C)
    return len(divs) == d and all(x == 1 for x in divs)


def _maximal_minor_gcd(C: np.ndarray) -> np.ndarray:
    """gcd of the 2x2 minors for a batch of 2 x k coordinate pairs, shape (..., 2, k)."""
    k = C.shape[-1]
    g = np.zeros(C.shape[:-2], dtype=np.int64)
    for a, b in combinations(range(k), 2):
        minor = C[..., 0, a] * C[..., 1, b] - C[..., 0, b] * C[..., 1, a]
        g = np.gcd(g, np.abs(minor))
    return g


def primitive_pairs_in_ball(B, R: float, norm: NormKind | str = NormKind.SUP,
                            cap: int = 10**7) -> int:
    """Number of ordered primitive pairs ``(v1, v2)`` with both norms ``<= R``.

    For k >= 3 primitivity of the pair is the unit-gcd of its 2x2 coordinate
    minors (equivalently Smith form ``[I_2 | 0]``); for k = 2 it is
    ``|det| = 1``, the same criterion.
    """
    W = _as_matrix(B)
    if R <= 0:
        return 0
    vecs = primitive_vectors_in_ball(W, R, norm)
    m = len(vecs)
    if m * m > cap:
        raise EnumerationOverflow(f"{m * m} candidate pairs exceed cap {cap}")
    if m == 0:
        return 0
    coords = np.array([v.coords for v in vecs], dtype=np.int64)
    pairs = np.stack(np.broadcast_arrays(coords[:, None, :], coords[None, :, :]), axis=-2)
    return int(np.count_nonzero(_maximal_minor_gcd(pairs) == 1))


# ---------------------------------------------------------------------------
# planar batch kernels
# ---------------------------------------------------------------------------

def gauss_reduce_batch(b1: np.ndarray, b2: np.ndarray, max_iter: int = 10_000):
    """Lagrange-Gauss reduction for a batch of planar bases, arrays of shape (S, 2).

    Returns reduced ``(b1, b2)`` with ``|b1| <= |b2|`` and ``|<b1,b2>| <= |b1|^2 / 2``.
    """
    b1 = np.array(b1, dtype=np.float64)
    b2 = np.array(b2, dtype=np.float64)
    active = np.arange(len(b1))
    for _ in range(max_iter):
        if active.size == 0:
            return b1, b2
        x, y = b1[active], b2[active]
        nx = np.einsum("ij,ij->i", x, x)
        ny = np.einsum("ij,ij->i", y, y)
        swap = ny < nx
        x[swap], y[swap] = y[swap].copy(), x[swap].copy()
        nx = np.where(swap, ny, nx)
        mu = np.rint(np.einsum("ij,ij->i", x, y) / nx)
        y = y - mu[:, None] * x
        b1[active], b2[active] = x, y
        ny = np.einsum("ij,ij->i", y, y)
        active = active[(mu != 0) | (ny < nx)]
    raise EnumerationOverflow("Gauss reduction did not converge")


_PLANAR_CANDIDATES = np.array([[1, 0], [0, 1], [1, 1], [1, -1]], dtype=np.float64)


def sup_minimum_batch(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Sup-norm first minimum of Gauss-reduced planar bases.

    For a reduced basis every sup-norm minimiser has coefficients in
    {-1, 0, 1}^2, so four candidates (up to sign) suffice.
    """
    vx = _PLANAR_CANDIDATES[:, 0][None, :, None] * b1[:, None, :] \
        + _PLANAR_CANDIDATES[:, 1][None, :, None] * b2[:, None, :]
    return np.min(np.max(np.abs(vx), axis=2), axis=1)


def bases_to_pairs(bases: np.ndarray):
    """Split a stack of 2x2 column bases (S, 2, 2) into column arrays b1, b2."""
    return bases[:, :, 0].copy(), bases[:, :, 1].copy()


def planar_delta_batch(bases: np.ndarray) -> np.ndarray:
    """Sup-norm height ``Delta`` for a stack (S, 2, 2) of planar unimodular bases."""
    b1, b2 = gauss_reduce_batch(*bases_to_pairs(bases))
    return -np.log(sup_minimum_batch(b1, b2))


def _unimodular_pairs(inside: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Per row of ``inside``, ordered pairs of selected coefficient vectors with determinant +-1."""
    width = int(inside.sum(axis=1).max()) if inside.size else 0
    if width < 2:
        return np.zeros(len(inside), dtype=np.int64)
    # left-pack the selected columns of each row into a padded (S, width) index array
    order = np.argsort(~inside, axis=1, kind="stable")[:, :width]
    valid = np.take_along_axis(inside, order, axis=1)
    a, b = c1[order], c2[order]
    det = a[:, :, None] * b[:, None, :] - b[:, :, None] * a[:, None, :]
    ok = (np.abs(det) == 1) & valid[:, :, None] & valid[:, None, :]
    return ok.sum(axis=(1, 2)).astype(np.int64)


def planar_primitive_counts(bases: np.ndarray, rho: float, pairs: bool = False,
                            max_span: int = 64):
    """Counts of primitive vectors (and optionally ordered primitive pairs) with sup norm <= rho.

    Works on Gauss-reduced bases: ``|c2| <= sqrt(2) rho |b1|`` and
    ``|c1 + mu c2| <= sqrt(2) rho / |b1|``.  Samples needing a coefficient
    span above ``max_span`` fall back to :func:`primitive_vectors_in_ball`.
    """
    b1, b2 = gauss_reduce_batch(*bases_to_pairs(bases))
    S = len(b1)
    n1 = np.sqrt(np.einsum("ij,ij->i", b1, b1))
    mu = np.einsum("ij,ij->i", b1, b2) / n1**2
    c2max = np.floor(math.sqrt(2) * rho * n1 * (1 + 1e-9)).astype(np.int64)
    c1max = np.ceil(math.sqrt(2) * rho / n1 + np.abs(mu) * c2max + 1).astype(np.int64)
    span = np.maximum(c1max, c2max)
    counts = np.zeros(S, dtype=np.int64)
    pair_counts = np.zeros(S, dtype=np.int64)
    slow = span > max_span
    for s in np.flatnonzero(slow):
        basis = np.column_stack([b1[s], b2[s]])
        counts[s] = len(primitive_vectors_in_ball(basis, rho))
        if pairs:
            pair_counts[s] = primitive_pairs_in_ball(basis, rho)
    fast = ~slow
    for m in np.unique(span[fast]):
        idx = np.flatnonzero(fast & (span == m))
        g = np.arange(-m, m + 1)
        c1, c2 = np.meshgrid(g, g, indexing="ij")
        c1, c2 = c1.ravel(), c2.ravel()
        prim = np.gcd(c1, c2) == 1
        c1, c2 = c1[prim], c2[prim]
        vx = c1[None, :] * b1[idx, 0][:, None] + c2[None, :] * b2[idx, 0][:, None]
        vy = c1[None, :] * b1[idx, 1][:, None] + c2[None, :] * b2[idx, 1][:, None]
        inside = np.maximum(np.abs(vx), np.abs(vy)) <= rho * (1 + NORM_RTOL)
        counts[idx] = inside.sum(axis=1)
        if pairs and rho * rho * 2 >= 1:
            pair_counts[idx] = _unimodular_pairs(inside, c1, c2)
    if pairs:
        return counts, pair_counts
    return counts
