import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from latlab import LatticeBasis, delta
from latlab.errors import DomainError, ValidationError
from latlab.lattice_core import planar_primitive_counts
from latlab.siegel_measure import (
    LatticeSampler,
    TailEstimate,
    deltas,
    dl_check,
    dl_check_detail,
    sample_lattice,
    siegel_constant,
    siegel_mc,
    siegel_pair_mc,
    tail_constants,
    tail_distribution,
    tail_from_deltas,
)


def test_sampler_validation_and_json():
    with pytest.raises(ValidationError):
        LatticeSampler(3, "exact2")
    with pytest.raises(ValidationError):
        LatticeSampler(7)
    with pytest.raises(ValidationError):
        LatticeSampler(2, seed=-1)
    s = LatticeSampler(3, seed=9)
    assert s.mode == "orbit_surrogate" and s.provenance == "surrogate"
    assert json.loads(s.to_json()) == {"dim": 3, "mode": "orbit_surrogate", "seed": 9}
    assert LatticeSampler.from_json(s.to_json()) == s


@pytest.mark.parametrize("dim", [2, 3])
def test_samples_are_unimodular_and_deterministic(dim):
    a = LatticeSampler(dim, seed=11).batch(50, 3)
    b = LatticeSampler(dim, seed=11).batch(50, 3)
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.det(a), 1.0, atol=1e-9)
    assert not np.array_equal(a, LatticeSampler(dim, seed=12).batch(50, 3))


def test_next_walks_through_blocks():
    s = LatticeSampler(2, seed=5)
    first = [sample_lattice(s).cols for _ in range(3)]
    block = s.batch(s.block_size, 0)[:3]
    assert all(np.array_equal(f, b) for f, b in zip(first, block))
    assert isinstance(sample_lattice(s), LatticeBasis)


def test_shape_distribution_matches_invariant_density():
    s = LatticeSampler(2, seed=21)
    B = s.batch(200_000, 0)
    # recover tau = x + iy of the row-reduced shape: Gram entries are rotation invariant
    g = np.einsum("nki,nkj->nij", B, B)
    y = 1.0 / g[:, 0, 0]
    x = g[:, 0, 1] * y
    assert np.all(np.abs(x) <= 0.5 + 1e-12) and np.all(x * x + y * y >= 1 - 1e-12)
    # P(y > Y) from the normalised measure (3/pi) dx dy / y^2
    for Y in (0.95, 1.2, 2.0, 5.0):
        def inner(xx):
            lo = max(Y, math.sqrt(max(1 - xx * xx, 0.0)))
            return 1.0 / lo
        want = 3 / math.pi * integrate.quad(inner, -0.5, 0.5, points=[0.0])[0]
        got = float(np.mean(y > Y))
        sd = math.sqrt(want * (1 - want) / len(y))
        assert abs(got - want) <= 4 * sd
    assert np.mean(y > 3.0) == pytest.approx(1 / math.pi, rel=0.03)


def test_rotation_is_uniform():
    B = LatticeSampler(2, seed=22).batch(100_000, 0)
    angle = np.arctan2(B[:, 1, 0], B[:, 0, 0])
    hist, _ = np.histogram(angle, bins=8, range=(-math.pi, math.pi))
    expected = len(angle) / 8
    assert np.max(np.abs(hist - expected)) <= 4 * math.sqrt(expected)


def test_streams_are_uncorrelated():
    s = LatticeSampler(2, seed=23)
    a, b = s.batch(20_000, 0), s.batch(20_000, 1)
    r = np.corrcoef(a[:, 0, 0], b[:, 0, 0])[0, 1]
    assert abs(r) < 0.02


def test_siegel_constant_values():
    assert siegel_constant(2) == pytest.approx(6 / math.pi**2)
    assert siegel_constant(3, 2) == pytest.approx(1 / (1.2020569031595942 * math.pi**2 / 6))
    with pytest.raises(DomainError):
        siegel_constant(2, 2)
    C, Cp = tail_constants(2)
    assert C == pytest.approx(12 / math.pi**2) and math.isnan(Cp)


@pytest.mark.parametrize("R", [0.8, 1.5])
def test_siegel_mean_planar(R):
    s = LatticeSampler(2, seed=31)
    est = siegel_mc(s, R, 40_000)
    assert est.provenance == "exact2"
    assert est.within(4 * R * R * siegel_constant(2), 4.0)


def test_counts_are_even_and_scale():
    B = LatticeSampler(2, seed=32).batch(5000, 0)
    c = planar_primitive_counts(B, 1.3)
    assert np.all(c % 2 == 0)
    small = siegel_mc(LatticeSampler(2, seed=33), 1.0, 40_000)
    large = siegel_mc(LatticeSampler(2, seed=33), 2.0, 40_000)
    assert large.mean / small.mean == pytest.approx(4.0, rel=0.05)


def test_surrogate_siegel_mean_k3():
    est = siegel_mc(LatticeSampler(3, seed=34), 1.0, 2000)
    assert est.provenance == "surrogate"
    assert est.mean == pytest.approx(8 * siegel_constant(3), rel=0.25)


def test_surrogate_pair_mean_k3():
    est = siegel_pair_mc(LatticeSampler(3, seed=35), 1.0, 1000)
    assert est.mean == pytest.approx(64 * siegel_constant(3, 2), rel=0.25)


def test_tail_starts_at_one_and_decreases():
    est = tail_distribution(LatticeSampler(2, seed=41), np.arange(0.0, 2.01, 0.1), 20_000)
    assert est.phi_hat[0] == 1.0
    assert np.all(np.diff(est.phi_hat) <= 0)
    assert np.all(est.ci >= 0)
    ok = est.scored() & (est.z >= 0.5)
    assert np.all(est.phi_hat[ok] <= est.upper_bound[ok] + 4 * est.sigma[ok])
    assert np.all(est.phi_hat[ok] >= est.lower_bound[ok] - 4 * est.sigma[ok])


def test_tail_matches_delta_sample():
    s = LatticeSampler(2, seed=42)
    z = np.linspace(0, 1, 6)
    est = tail_distribution(s, z, 5000)
    d = deltas(s, 5000)
    assert np.allclose(est.phi_hat, [(d >= zi).mean() for zi in z])
    assert np.all(d >= -1e-12)


def test_tail_thread_invariance():
    s = LatticeSampler(2, seed=43)
    z = np.linspace(0, 1.5, 7)
    a = tail_distribution(s, z, 25_000, threads=1)
    b = tail_distribution(s, z, 25_000, threads=3)
    assert np.array_equal(a.phi_hat, b.phi_hat)
    assert np.array_equal(a.lower_bound, b.lower_bound)


def test_tail_csv_and_grid_checks():
    est = tail_from_deltas(np.array([0.1, 0.5, 0.9]), [0.0, 0.5])
    buf = io.StringIO()
    est.to_csv(buf)
    rows = buf.getvalue().strip().splitlines()
    assert rows[0].startswith("z,phi_hat") and rows[1].endswith("exact2")
    with pytest.raises(DomainError):
        tail_from_deltas(np.array([0.1]), [0.5, 0.0])


def _synthetic(z, phi, n=10**9):
    phi = np.asarray(phi, dtype=float)
    return TailEstimate(np.asarray(z, float), phi, np.zeros_like(phi), n, phi, phi)


def test_dl_check_on_exact_exponential():
    z = np.arange(0.0, 3.01, 0.25)
    est = _synthetic(z, np.exp(-2 * z))
    c, ok = dl_check(est, 0.5)
    assert c == pytest.approx(math.exp(-1.0), rel=1e-6) and ok
    c0, ok0 = dl_check(est, 0.0)
    assert c0 == 1.0 and ok0
    with pytest.raises(DomainError):
        dl_check(est, 0.1)
    with pytest.raises(DomainError):
        dl_check(est, -1.0)


def test_dl_check_detects_collapse():
    z = np.arange(0.0, 2.01, 0.5)
    est = _synthetic(z, [1.0, 0.5, 0.25, 1e-9, 0.0], n=10**6)
    with pytest.raises(DomainError):
        dl_check(est, 1.5)
    c, ok, sig = dl_check_detail(_synthetic(z, [1.0, 0.5, 0.25, 0.1, 0.05], n=1000), 0.5)
    assert c == pytest.approx(0.4) and ok and sig > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 4.0), st.floats(0.1, 1.0))
def test_dl_check_exponential_property(k, dz):
    z = np.round(np.arange(0.0, 2.0 + 1e-9, dz), 12)
    est = _synthetic(z, np.exp(-k * z))
    c, ok = dl_check(est, dz)
    assert c == pytest.approx(math.exp(-k * dz), rel=1e-6) and ok


def test_delta_of_samples_is_nonnegative_k3():
    B = LatticeSampler(3, seed=44).batch(30, 0)
    assert all(delta(b) >= -1e-12 for b in B)
