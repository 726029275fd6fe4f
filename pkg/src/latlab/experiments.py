"""Seeded experiment drivers.

Every driver takes an :class:`ExperimentConfig` and returns a :class:`Report`
whose rows carry the provenance tag of the sampler that produced them.
Independent replicas ("seeds") use streams ``0, 1, 2, ...`` of the master
seed, so a replica's output does not depend on how many replicas run or on
the thread count.
"""

from __future__ import annotations

import csv
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, Callable

import numpy as np

from .dani_transform import PsiFunction
from .diophantine import count_psi_witnesses, ma_witnesses, psi_approx_witnesses
from .errors import DomainError, ValidationError
from .flow_dynamics import DiagonalFlow, lattice_of_matrix
from .lattice_core import LatticeBasis, gauss_reduce_batch, planar_delta_batch
from .flow_dynamics import planar_orbit_deltas
from .siegel_measure import LatticeSampler, stream_rng, tail_constants

DELTA_TOL = 1e-12


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int
    dim: int = 2
    flow: str = "1:1"
    psi: str = "power_log:c=1,a=1,q=0,x0=1"
    rate: str = "log:c=0.5"
    horizon: int = 10_000
    samples: int = 20
    out: str | None = None
    norm: str = "sup"
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed is None:
            raise ValidationError("a seed is required")
        self.seed = int(self.seed)
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        for name in ("dim", "horizon", "samples", "threads"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.norm != "sup":
            raise ValidationError("experiments are defined for the sup norm only")

    @classmethod
    def from_json(cls, text: str | dict, **overrides) -> "ExperimentConfig":
        data = json.loads(text) if isinstance(text, str) else dict(text)
        data.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        extra = {k: v for k, v in data.items() if k not in known}
        base = {k: v for k, v in data.items() if k in known}
        base.setdefault("extra", {}).update(extra)
        return cls(**base)

    def get(self, key: str, default):
        return self.extra.get(key, default)


@dataclass
class Report:
    name: str
    provenance: str
    rows: list[dict]
    summary: dict

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "provenance": self.provenance,
                           "summary": _plain(self.summary), "rows": _plain(self.rows)}, indent=1)

    def to_csv(self, fh: IO[str]) -> None:
        if not self.rows:
            return
        cols = list(self.rows[0].keys())
        w = csv.DictWriter(fh, fieldnames=cols + ["provenance"])
        w.writeheader()
        for row in self.rows:
            w.writerow({**{k: _plain(v) for k, v in row.items()}, "provenance": self.provenance})


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def parse_rate(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Target sequences ``r_t``: ``"zero"``, ``"log:c=0.5"`` (c log t) or ``"const:c=0.3"``."""
    m = re.fullmatch(r"\s*(\w+)\s*(?::\s*c\s*=\s*([-+0-9.eE]+))?\s*", spec)
    if not m:
        raise ValidationError(f"cannot parse rate {spec!r}")
    kind, c = m.group(1), float(m.group(2)) if m.group(2) else 1.0
    if kind == "zero":
        return lambda t: np.zeros_like(np.asarray(t, dtype=np.float64))
    if kind == "log":
        return lambda t: c * np.log(np.asarray(t, dtype=np.float64))
    if kind == "const":
        return lambda t: np.full(np.shape(t), c, dtype=np.float64)
    raise ValidationError(f"unknown rate family {kind!r}")


def tail_model(k: int) -> Callable[[np.ndarray], np.ndarray]:
    """``min(1, C_k e^{-k r})``; for ``k = 2`` this is the exact tail once ``r > log sqrt 2``."""
    C, _ = tail_constants(k)
    return lambda r: np.minimum(1.0, C * np.exp(-k * np.asarray(r, dtype=np.float64)))


def start_bases(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """One Haar-random planar basis per replica; replica ``j`` uses stream ``offset + j``."""
    s = LatticeSampler(2, "exact2", seed)
    return np.concatenate([s.batch(1, offset + j) for j in range(count)])


def orbit_deltas(bases: np.ndarray, exponents, steps: int, threads: int = 1) -> np.ndarray:
    """``Delta(f_t Lambda)`` for ``t = 1..steps``, rows processed independently."""
    if threads <= 1 or len(bases) < 2:
        return planar_orbit_deltas(bases, exponents, steps)
    parts = np.array_split(np.arange(len(bases)), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        out = list(pool.map(lambda idx: planar_orbit_deltas(bases[idx], exponents, steps), parts))
    return np.concatenate(out)


def _flow_exponents(cfg: ExperimentConfig) -> np.ndarray:
    a = np.asarray(DiagonalFlow.parse(cfg.flow).exponents)
    if a.shape != (2,):
        raise DomainError("planar experiments need a two-dimensional flow")
    return a


def _log_grid(lo: int, hi: int, num: int) -> np.ndarray:
    return np.unique(np.rint(np.geomspace(lo, hi, num)).astype(np.int64))


# ---------------------------------------------------------------------------
# Borel-Cantelli counts
# ---------------------------------------------------------------------------

def bc_trajectories(d: np.ndarray, r: np.ndarray, phi: np.ndarray):
    """Cumulative hit counts ``S`` and expectations ``E`` (shapes (S, N) and (N,))."""
    hits = d >= r[None, :] - DELTA_TOL
    return np.cumsum(hits, axis=1), np.cumsum(phi)


def bc_count(cfg: ExperimentConfig) -> Report:
    """Hit counts ``S_N`` of ``Delta(f_t L) >= r_t`` against ``E_N = sum_t Phi(r_t)``."""
    if cfg.dim != 2:
        raise DomainError("bc_count runs on the exact planar sampler only")
    N = cfg.horizon
    t = np.arange(1, N + 1, dtype=np.float64)
    r = parse_rate(cfg.rate)(t)
    phi = tail_model(2)(r)
    d = orbit_deltas(start_bases(cfg.seed, cfg.samples), _flow_exponents(cfg), N, cfg.threads)
    S, E = bc_trajectories(d, r, phi)
    ratio = S / E[None, :]
    decade = slice(max(N // 10, 1) - 1, N)
    logE = np.log(E)
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.abs(S - E) / (np.sqrt(E) * logE**2)
    resid[:, logE <= 1] = np.nan
    rows = []
    for j in range(cfg.samples):
        for n in _log_grid(1, N, int(cfg.get("rows", 60))):
            i = n - 1
            rows.append({"replica": j, "N": int(n), "S_N": int(S[j, i]), "E_N": float(E[i]),
                         "ratio": float(ratio[j, i]), "residual": float(resid[j, i])})
    endpoints = ratio[:, -1]
    decade_gain = E[-1] - E[decade.start]
    summary = {
        "endpoints": endpoints,
        "median_endpoint": float(np.median(endpoints)),
        "liminf_proxy": ratio[:, decade].min(axis=1),
        "limsup_proxy": ratio[:, decade].max(axis=1),
        "final_decade_increments": S[:, -1] - S[:, decade.start],
        "S_N": S[:, -1],
        "E_N": float(E[-1]),
        "tag": "convergent regime: finite total count expected" if decade_gain < 1.0 else "divergent regime",
        "band_note": "the [0.5, 2] ratio band is a calibration choice; the theory only gives some constant c",
    }
    return Report("bc-count", "exact2", rows, summary)


def bc_variance_probe(cfg: ExperimentConfig) -> Report:
    """Variance of window sums ``sum_{t=M}^{N} h_t`` over random starts, relative to ``sum mu(h_t)``.

    A shuffled-time control reassigns the targets ``r_t`` inside each window
    by a fixed random permutation.
    """
    windows = [tuple(w) for w in cfg.get("windows", [(1, 100), (100, 1000)])]
    horizon = max(n for _, n in windows)
    t = np.arange(1, horizon + 1, dtype=np.float64)
    r = parse_rate(cfg.rate)(t)
    phi = tail_model(2)(r)
    d = orbit_deltas(start_bases(cfg.seed, cfg.samples), _flow_exponents(cfg), horizon, cfg.threads)
    perm_rng = stream_rng(cfg.seed, 2**31)
    rows = []
    for M, N in windows:
        sl = slice(M - 1, N)
        mean_mu = float(phi[sl].sum())
        h = d[:, sl] >= r[None, sl] - DELTA_TOL
        perm = perm_rng.permutation(N - M + 1)
        h_shuf = d[:, sl][:, perm] >= r[None, sl] - DELTA_TOL
        var = float(h.sum(axis=1).var(ddof=1))
        var_shuf = float(h_shuf.sum(axis=1).var(ddof=1))
        rows.append({"M": M, "N": N, "sum_mu": mean_mu, "variance": var, "ratio": var / mean_mu,
                     "variance_shuffled": var_shuf, "ratio_shuffled": var_shuf / mean_mu})
    summary = {"max_ratio": max(row["ratio"] for row in rows),
               "max_ratio_shuffled": max(row["ratio_shuffled"] for row in rows)}
    return Report("bc-variance", "exact2", rows, summary)


# ---------------------------------------------------------------------------
# logarithm law
# ---------------------------------------------------------------------------

def running_max_slope(d: np.ndarray, lo: int, hi: int, num: int = 200) -> np.ndarray:
    """Least-squares slope of ``max_{t<=T} Delta_t`` against ``log T`` on a geometric T grid."""
    M = np.maximum.accumulate(d, axis=1)
    T = _log_grid(lo, hi, num)
    x = np.log(T)
    return np.array([np.polyfit(x, row[T - 1], 1)[0] for row in M])


def loglaw(cfg: ExperimentConfig) -> Report:
    """Growth rate of running maxima of ``Delta`` along unit-time orbit samples."""
    T = cfg.horizon
    lo = int(cfg.get("fit_from", 100))
    if T <= lo:
        raise DomainError("horizon must exceed the start of the fit window")
    d = orbit_deltas(start_bases(cfg.seed, cfg.samples), _flow_exponents(cfg), T, cfg.threads)
    slopes = running_max_slope(d, lo, T)
    rows = [{"replica": j, "slope": float(s), "final_max": float(d[j].max())} for j, s in enumerate(slopes)]
    summary = {"slopes": slopes, "target": 0.5, "median_slope": float(np.median(slopes))}
    return Report("loglaw", "exact2", rows, summary)


# ---------------------------------------------------------------------------
# Khinchin counts
# ---------------------------------------------------------------------------

def khinchin(cfg: ExperimentConfig) -> Report:
    """Witness counts ``#{1 <= q <= Q : |q alpha + p| <= psi(q)}`` for random ``alpha``.

    ``q`` is counted once per sign.  The predicted mean is
    ``sum_q min(1, 2 psi(q))``.
    """
    psi = PsiFunction.parse(cfg.psi)
    Q = cfg.horizon
    m, n = int(cfg.get("m", 1)), int(cfg.get("n", 1))
    ladder = [L for L in (10**j for j in range(1, 12)) if L < Q] + [Q]
    if (m, n) == (1, 1):
        alphas = np.array([stream_rng(cfg.seed, j).random() for j in range(cfg.samples)])
        counts = count_psi_witnesses(alphas, psi, Q, ladder)
    else:
        counts = np.zeros((cfg.samples, len(ladder)), dtype=np.int64)
        for j in range(cfg.samples):
            A = stream_rng(cfg.seed, j).random((m, n))
            qs = np.array([max(abs(x) for x in q) for _, q in psi_approx_witnesses(A, psi, Q)])
            counts[j] = [(qs <= L).sum() for L in ladder]
    q = np.arange(1, Q + 1, dtype=np.float64)
    predicted = np.cumsum(np.minimum(1.0, 2.0 * psi(q))) if (m, n) == (1, 1) else None
    mean = counts.mean(axis=0)
    rows = []
    for i, L in enumerate(ladder):
        row = {"Qmax": int(L), "mean_count": float(mean[i]), "median_count": float(np.median(counts[:, i]))}
        if predicted is not None:
            row["predicted"] = float(predicted[L - 1])
        rows.append(row)
    final_inc = counts[:, -1] - counts[:, -2] if len(ladder) > 1 else counts[:, -1]
    summary = {"mean_count": float(mean[-1]), "final_decade_increment": float(final_inc.mean()),
               "two_log_Q": 2 * math.log(Q)}
    if predicted is not None:
        summary["predicted"] = float(predicted[-1])
    return Report("khinchin", "exact2", rows, summary)


# ---------------------------------------------------------------------------
# multiplicative threshold
# ---------------------------------------------------------------------------

def skriganov_psi(q: float, x0: float = math.e) -> PsiFunction:
    """``1 / (x (log x)^q)`` on ``[x0, inf)``."""
    return PsiFunction.power_log(c=1.0, a=1.0, q=q, x0=x0)


def ma_count_ladder(B, psi: PsiFunction, ladder) -> np.ndarray:
    ws = ma_witnesses(B, psi, max(ladder))
    norms = np.array([w.v.norm_value for w in ws])
    return np.array([(norms <= R).sum() for R in ladder])


def skriganov(cfg: ExperimentConfig) -> Report:
    """Multiplicative witness counts along a radius ladder for ``psi_q(x) = 1/(x (log x)^q)``."""
    k = cfg.dim
    if k not in (2, 3):
        raise DomainError("skriganov runs in dimension 2 or 3")
    qs = [float(x) for x in cfg.get("qs", [0.5, 2.0])]
    default_ladder = [1e2, 1e3, 1e4] if k == 2 else [10.0, 10**1.5, 100.0]
    ladder = [float(x) for x in cfg.get("ladder", default_ladder)]
    sampler = LatticeSampler(k, "auto", cfg.seed)
    bases = [LatticeBasis(sampler.batch(1, j)[0]) for j in range(cfg.samples)]
    if cfg.get("control", False):
        bases = [LatticeBasis.identity(k)] * cfg.samples
    psis = {q: skriganov_psi(q) for q in qs}

    def run(B):
        return np.array([ma_count_ladder(B, psis[q], ladder) for q in qs])

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            counts = np.array(list(pool.map(run, bases)))
    else:
        counts = np.array([run(B) for B in bases])
    # counts has shape (samples, len(qs), len(ladder))
    rows = []
    summary = {"ladder": ladder}
    for iq, q in enumerate(qs):
        c = counts[:, iq, :]
        growing = np.all(np.diff(c, axis=1) > 0, axis=1)
        stagnant = c[:, -1] == c[:, -2]
        for j in range(len(bases)):
            rows.append({"replica": j, "q": q, **{f"count_R{R:g}": int(x) for R, x in zip(ladder, c[j])}})
        summary[f"q={q:g}"] = {"growing_fraction": float(growing.mean()),
                               "stagnant_fraction": float(stagnant.mean()),
                               "median_counts": np.median(c, axis=0),
                               "median_final_increment": float(np.median(c[:, -1] - c[:, -2]))}
    summary["threshold"] = k - 1
    return Report("skriganov", sampler.provenance, rows, summary)


# ---------------------------------------------------------------------------
# correlation probe
# ---------------------------------------------------------------------------

def _bump(x: np.ndarray, center: float, width: float) -> np.ndarray:
    u = (x - center) / width
    return np.where(np.abs(u) < 1, np.exp(-1.0 / np.maximum(1 - u * u, 1e-300)), 0.0)


def shape_height(bases: np.ndarray) -> np.ndarray:
    """Imaginary part of the reduced shape ``tau`` of each planar lattice."""
    b1, b2 = gauss_reduce_batch(bases[:, :, 0].copy(), bases[:, :, 1].copy())
    n1 = np.einsum("ij,ij->i", b1, b1)
    return np.abs(b1[:, 0] * b2[:, 1] - b1[:, 1] * b2[:, 0]) / n1


def mixing_probe(cfg: ExperimentConfig) -> Report:
    """Correlations ``<phi o f_t, psi> - mu(phi) mu(psi)`` for bumps in ``Delta`` and ``log y``.

    Qualitative only: no rate is asserted.
    """
    steps = int(cfg.get("steps", 8))
    center_d, center_y, width = cfg.get("phi", [0.3, 0.3, 0.6])
    bases = LatticeSampler(2, "exact2", cfg.seed).batch(cfg.samples, 0)
    psi_vals = _bump(np.log(shape_height(bases)), center_y, width)
    d0 = planar_delta_batch(bases)
    d = np.column_stack([d0, orbit_deltas(bases, _flow_exponents(cfg), steps, cfg.threads)])
    phi_vals = _bump(d, center_d, width)
    if cfg.get("constant", False):
        phi_vals = np.ones_like(phi_vals)
        psi_vals = np.ones_like(psi_vals)
    mean_psi = psi_vals.mean()
    rows = []
    for t in range(steps + 1):
        cov = float(np.mean(phi_vals[:, t] * psi_vals) - phi_vals[:, t].mean() * mean_psi)
        rows.append({"t": t, "correlation": cov})
    c = np.array([abs(r["correlation"]) for r in rows])
    noise = float(np.std(phi_vals[:, 0]) * np.std(psi_vals) / math.sqrt(cfg.samples))
    usable = np.flatnonzero((c > 3 * noise) & (np.arange(steps + 1) >= 1))
    rate = float(-np.polyfit(usable, np.log(c[usable]), 1)[0]) if len(usable) >= 2 else float("nan")
    summary = {"decay_rate": rate, "noise_level": noise, "qualitative": True}
    return Report("mixing-probe", "exact2", rows, summary)


EXPERIMENTS = {
    "bc-count": bc_count,
    "bc-variance": bc_variance_probe,
    "loglaw": loglaw,
    "khinchin": khinchin,
    "skriganov": skriganov,
    "mixing-probe": mixing_probe,
}
