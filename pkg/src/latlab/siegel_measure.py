"""Random unimodular lattices and Monte-Carlo averages over them.

Two samplers:

``exact2``
    Haar measure on planar unimodular lattices.  The shape ``tau = x + iy``
    is drawn from the standard fundamental domain with density proportional
    to ``dx dy / y^2`` and the lattice is rotated by a uniform angle.
``orbit_surrogate``
    For ``k >= 3`` there is no such closed form.  Samples are consecutive
    unit-time points on a long orbit of ``diag(e^{t/(k-1)}, ..., e^{-t})``
    started at a random ``Lambda_A``; this equidistributes in the limit but
    neighbouring samples are correlated.  Every number derived from it is
    tagged ``"surrogate"``.

Work is split into fixed-size blocks, block ``b`` drawing from the stream
``SeedSequence(seed, spawn_key=(b,))``.  Results therefore do not depend on
how many threads process the blocks.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Callable

import numpy as np
from scipy.special import zeta

from .errors import DomainError, ValidationError
from .flow_dynamics import DiagonalFlow, lattice_of_matrix, orbit_bases
from .lattice_core import (
    LatticeBasis,
    delta,
    planar_delta_batch,
    planar_primitive_counts,
    primitive_pairs_in_ball,
    primitive_vectors_in_ball,
)

EXACT_BLOCK = 10_000
SURROGATE_BLOCK = 2_000
SURROGATE_BURN_IN = 20
REJECTION_ROUNDS = 64
MIN_TAIL_HITS = 10
Z95 = 1.959963984540054


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(stream,))))


def provenance(mode: str) -> str:
    return "exact2" if mode == "exact2" else "surrogate"


@dataclass
class LatticeSampler:
    """Seeded source of random unimodular lattices.

    ``batch(N, stream)`` is a pure function of ``(dim, mode, seed, stream, N)``;
    :func:`sample_lattice` walks through the blocks one lattice at a time.
    """

    dim: int
    mode: str = "auto"
    seed: int = 0
    _buffer: list = field(default_factory=list, repr=False, compare=False)
    _next_stream: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if not 2 <= self.dim <= 6:
            raise ValidationError("dimension must be between 2 and 6")
        if self.mode == "auto":
            self.mode = "exact2" if self.dim == 2 else "orbit_surrogate"
        if self.mode not in ("exact2", "orbit_surrogate"):
            raise ValidationError(f"unknown sampler mode {self.mode!r}")
        if self.mode == "exact2" and self.dim != 2:
            raise ValidationError("the exact sampler exists only in dimension 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        self.seed = int(self.seed)

    @property
    def provenance(self) -> str:
        return provenance(self.mode)

    @property
    def block_size(self) -> int:
        return EXACT_BLOCK if self.mode == "exact2" else SURROGATE_BLOCK

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "mode": self.mode, "seed": self.seed})

    @classmethod
    def from_json(cls, text: str | dict) -> "LatticeSampler":
        data = json.loads(text) if isinstance(text, str) else text
        return cls(int(data["dim"]), data.get("mode", "auto"), int(data["seed"]))

    def batch(self, N: int, stream: int = 0) -> np.ndarray:
        """``N`` bases of shape (N, k, k) from the given stream."""
        rng = stream_rng(self.seed, stream)
        if self.mode == "exact2":
            return _exact2_bases(rng, N)
        return _surrogate_bases(rng, self.dim, N)

    def next(self) -> LatticeBasis:
        if not self._buffer:
            self._buffer = list(self.batch(self.block_size, self._next_stream))[::-1]
            self._next_stream += 1
        return LatticeBasis(self._buffer.pop())


def sample_lattice(s: LatticeSampler) -> LatticeBasis:
    return s.next()


def _fundamental_domain_points(rng: np.random.Generator, N: int):
    """``(x, y)`` with density ``(3/pi) dx dy / y^2`` on ``|x| <= 1/2, x^2 + y^2 >= 1``."""
    xs, ys = [], []
    need = N
    y_min = math.sqrt(3) / 2
    for _ in range(REJECTION_ROUNDS):
        if need <= 0:
            break
        draw = int(need * 1.15) + 16
        x = rng.uniform(-0.5, 0.5, draw)
        y = y_min / (1.0 - rng.random(draw))
        ok = x * x + y * y >= 1.0
        xs.append(x[ok])
        ys.append(y[ok])
        need -= int(ok.sum())
    else:
        if need > 0:
            raise RuntimeError("rejection sampler did not converge")
    return np.concatenate(xs)[:N], np.concatenate(ys)[:N]


def _exact2_bases(rng: np.random.Generator, N: int) -> np.ndarray:
    x, y = _fundamental_domain_points(rng, N)
    theta = rng.uniform(0.0, 2 * math.pi, N)
    sy = np.sqrt(y)
    shape = np.zeros((N, 2, 2))
    shape[:, 0, 0] = 1.0 / sy
    shape[:, 0, 1] = x / sy
    shape[:, 1, 1] = sy
    c, s = np.cos(theta), np.sin(theta)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    return rot @ shape


def _surrogate_bases(rng: np.random.Generator, k: int, N: int) -> np.ndarray:
    A = rng.random((k - 1, 1))
    start = lattice_of_matrix(A)
    flow = DiagonalFlow.from_mn(k - 1, 1)
    times = SURROGATE_BURN_IN + np.arange(N, dtype=np.float64)
    return np.array([b.cols for b in orbit_bases(start, flow, times)])


# ---------------------------------------------------------------------------
# block runner
# ---------------------------------------------------------------------------

def _blocks(N: int, size: int) -> list[tuple[int, int]]:
    full, rest = divmod(N, size)
    out = [(b, size) for b in range(full)]
    if rest:
        out.append((full, rest))
    return out


def map_blocks(s: LatticeSampler, N: int, fn: Callable[[np.ndarray], object], threads: int = 1) -> list:
    """Apply ``fn`` to every block of bases; results are in block order."""

    def run(job):
        stream, size = job
        return fn(s.batch(size, stream))

    jobs = _blocks(N, s.block_size)
    if threads <= 1 or len(jobs) == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


def deltas(s: LatticeSampler, N: int, threads: int = 1) -> np.ndarray:
    """Sup-norm ``Delta`` of ``N`` sampled lattices."""
    if s.dim == 2:
        fn = planar_delta_batch
    else:
        def fn(bases):
            return np.array([delta(b) for b in bases])
    return np.concatenate(map_blocks(s, N, fn, threads))


# ---------------------------------------------------------------------------
# Siegel averages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCMean:
    mean: float
    sem: float
    n: int
    provenance: str

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean - target) <= sigmas * self.sem


def _mean(values: np.ndarray, s: LatticeSampler) -> MCMean:
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    sem = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return MCMean(float(values.mean()), sem, n, s.provenance)


def siegel_constant(k: int, d: int = 1) -> float:
    """``1 / (zeta(k) zeta(k-1) ... zeta(k-d+1))``."""
    if not 1 <= d < k or (d == 1 and k < 2):
        raise DomainError("need 1 <= d < k")
    return 1.0 / math.prod(float(zeta(k - j)) for j in range(d))


def siegel_mc(s: LatticeSampler, R: float, N: int, threads: int = 1) -> MCMean:
    """Mean number of primitive vectors of sup norm at most ``R``."""
    if N < 2:
        raise DomainError("need at least two samples")
    if s.dim == 2:
        def fn(bases):
            return planar_primitive_counts(bases, R)
    else:
        def fn(bases):
            return np.array([len(primitive_vectors_in_ball(b, R)) for b in bases])
    return _mean(np.concatenate(map_blocks(s, N, fn, threads)), s)


def siegel_pair_mc(s: LatticeSampler, R: float, N: int, threads: int = 1) -> MCMean:
    """Mean number of ordered primitive pairs with both vectors of sup norm at most ``R``.

    In dimension 2 a pair counts when its determinant is +-1.
    """
    if N < 2:
        raise DomainError("need at least two samples")
    if s.dim == 2:
        def fn(bases):
            return planar_primitive_counts(bases, R, pairs=True)[1]
    else:
        def fn(bases):
            return np.array([primitive_pairs_in_ball(b, R) for b in bases])
    return _mean(np.concatenate(map_blocks(s, N, fn, threads)), s)


# ---------------------------------------------------------------------------
# tail distribution
# ---------------------------------------------------------------------------

def tail_constants(k: int) -> tuple[float, float]:
    """``(C_k, C'_k)`` for the sup norm (ball volume ``2^k``).

    ``C'_k`` uses the pair constant of dimension ``k``; it is undefined for
    ``k = 2`` and returned as ``nan``.
    """
    nu = 2.0**k
    C = 0.5 * siegel_constant(k) * nu
    Cp = 0.25 * siegel_constant(k, 2) * nu * nu if k >= 3 else float("nan")
    return C, Cp


@dataclass(frozen=True)
class TailEstimate:
    z: np.ndarray
    phi_hat: np.ndarray
    ci: np.ndarray
    n: int
    upper_bound: np.ndarray
    lower_bound: np.ndarray
    dim: int = 2
    provenance: str = "exact2"
    norm: str = "sup"

    @property
    def hits(self) -> np.ndarray:
        return np.rint(self.phi_hat * self.n).astype(np.int64)

    @property
    def sigma(self) -> np.ndarray:
        return self.ci / Z95

    def scored(self) -> np.ndarray:
        """Grid points with enough tail hits to be used in assertions."""
        return self.hits >= MIN_TAIL_HITS

    def to_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh)
        w.writerow(["z", "phi_hat", "ci", "upper_bound", "lower_bound", "provenance"])
        for row in zip(self.z, self.phi_hat, self.ci, self.upper_bound, self.lower_bound):
            w.writerow([repr(float(x)) for x in row] + [self.provenance])


def _binomial_ci(p: np.ndarray, n: int) -> np.ndarray:
    return Z95 * np.sqrt(p * (1.0 - p) / n)


def tail_from_deltas(d: np.ndarray, zgrid, dim: int = 2, provenance_tag: str = "exact2",
                     pair_means: np.ndarray | None = None) -> TailEstimate:
    z = np.asarray(zgrid, dtype=np.float64)
    if np.any(np.diff(z) < 0):
        raise DomainError("z grid must be sorted")
    d = np.sort(np.asarray(d, dtype=np.float64))
    n = len(d)
    phi = (n - np.searchsorted(d, z, side="left")) / n
    C, Cp = tail_constants(dim)
    upper = C * np.exp(-dim * z)
    if dim == 2:
        corr = 0.25 * pair_means if pair_means is not None else np.zeros_like(z)
        lower = upper - corr
    else:
        lower = upper - Cp * np.exp(-2 * dim * z)
    return TailEstimate(z, phi, _binomial_ci(phi, n), n, upper, lower, dim, provenance_tag)


def tail_distribution(s: LatticeSampler, zgrid, N: int, threads: int = 1) -> TailEstimate:
    """Empirical ``mu(Delta >= z)`` with 95% normal-approximation intervals.

    In dimension 2 the lower envelope subtracts a quarter of the mean number
    of unimodular primitive pairs in the ball of radius ``e^{-z}``, estimated
    on the same samples (this vanishes once ``e^{-z} < 1/sqrt(2)``).
    """
    z = np.asarray(zgrid, dtype=np.float64)
    if s.dim == 2:
        needs_pairs = np.exp(-z) ** 2 * 2 >= 1

        def fn(bases):
            d = planar_delta_batch(bases)
            pc = np.zeros(len(z))
            for j in np.flatnonzero(needs_pairs):
                pc[j] = planar_primitive_counts(bases, float(np.exp(-z[j])), pairs=True)[1].sum()
            return d, pc

        parts = map_blocks(s, N, fn, threads)
        d = np.concatenate([p[0] for p in parts])
        pair_means = np.sum([p[1] for p in parts], axis=0) / N
        return tail_from_deltas(d, z, 2, s.provenance, pair_means)
    return tail_from_deltas(deltas(s, N, threads), z, s.dim, s.provenance)


def dl_check_detail(est: TailEstimate, delta_z: float) -> tuple[float, bool, float]:
    """``(c_hat, passed, sigma)``; see :func:`dl_check`."""
    if delta_z < 0:
        raise DomainError("delta must be non-negative")
    z = est.z
    step = np.min(np.diff(z)) if len(z) > 1 else math.inf
    if delta_z > 0 and delta_z < step - 1e-12:
        raise DomainError("grid is too coarse for this delta")
    ratios, sigmas = [], []
    hits = est.hits
    for i, zi in enumerate(z):
        j = np.flatnonzero(np.abs(z - (zi + delta_z)) <= 1e-9)
        if len(j) == 0:
            continue
        j = j[0]
        if hits[j] < MIN_TAIL_HITS or est.phi_hat[i] <= 0:
            continue
        c = est.phi_hat[j] / est.phi_hat[i]
        ratios.append(c)
        sigmas.append(math.sqrt(max(c * (1 - c), 0.0) / max(hits[i], 1)))
    if not ratios:
        raise DomainError("no grid pair is separated by delta with enough tail hits")
    i = int(np.argmin(ratios))
    c_hat, sig = float(ratios[i]), float(sigmas[i])
    return c_hat, bool(c_hat - 3 * sig > 0), sig


def dl_check(est: TailEstimate, delta_z: float) -> tuple[float, bool]:
    """``c_hat = min_z phi(z + delta) / phi(z)`` over the grid and whether it is clearly positive."""
    c_hat, passed, _ = dl_check_detail(est, delta_z)
    return c_hat, passed
