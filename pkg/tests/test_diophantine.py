import io
import math

import numpy as np
import pytest

from latlab import LatticeBasis, delta
from latlab.dani_transform import PsiFunction, dani_forward
from latlab.diophantine import (
    ApproxWitness,
    Degenerate,
    MAWitness,
    count_psi_witnesses,
    lattice_psi_approx_witnesses,
    ma_witness_to_chamber,
    ma_witnesses,
    psi_approx_witnesses,
    time_to_witness,
    witness_to_time,
    witnesses_to_csv,
)
from latlab.errors import DomainError, NotInRange
from latlab.flow_dynamics import DiagonalFlow, apply_flow, apply_multiflow, lattice_of_matrix
from latlab.lattice_core import ShortVec
from oracles import box_coords, continued_fraction, random_unimodular_basis

INV = PsiFunction.power_log(a=1.0)


def test_rational_alpha_even_q():
    ws = psi_approx_witnesses([[0.5]], INV, 20)
    qs = [q[0] for _, q in ws]
    assert all(q % 2 == 0 for q in qs[1:]) and set(range(2, 21, 2)) <= set(qs)
    p, q = ws[[q for _, q in ws].index((2,))]
    assert p == (-1,)


def test_golden_ratio_has_no_witnesses():
    alpha = (math.sqrt(5) - 1) / 2
    assert continued_fraction(alpha, 30)[1:] == [1] * 29
    assert psi_approx_witnesses([[alpha]], PsiFunction.power_log(c=1 / 3, a=1.0), 1e5) == []


def test_e_minus_two_has_witnesses():
    alpha = math.e - 2
    cf = continued_fraction(alpha, 12)
    assert cf[:7] == [0, 1, 2, 1, 1, 4, 1]
    ws = psi_approx_witnesses([[alpha]], PsiFunction.power_log(c=1 / 5, a=1.0), 1e5)
    assert ws
    for p, q in ws:
        assert abs(q[0] * alpha + p[0]) <= 1 / (5 * q[0])


def _brute_matrix_witnesses(A, psi, Q):
    A = np.atleast_2d(A)
    m, n = A.shape
    out = set()
    for q in box_coords(n, Q):
        nz = np.flatnonzero(q)
        if q[nz[0]] < 0:
            continue
        Aq = A @ q
        p = -np.rint(Aq)
        lhs = np.max(np.abs(Aq + p)) ** m
        if lhs <= psi(float(np.max(np.abs(q))) ** n):
            out.add((tuple(int(x) for x in p), tuple(int(x) for x in q)))
    return out


def test_matrix_witnesses_match_brute_force():
    rng = np.random.default_rng(0)
    psi = PsiFunction.power_log(c=0.8, a=1.0)
    for m, n in [(1, 1), (2, 1), (1, 2)]:
        for _ in range(5):
            A = rng.random((m, n))
            got = psi_approx_witnesses(A, psi, 12)
            assert set(got) == _brute_matrix_witnesses(A, psi, 12)
            norms = [max(abs(x) for x in q) for _, q in got]
            assert norms == sorted(norms)


def test_batch_counts_match_single():
    rng = np.random.default_rng(1)
    alphas = rng.random(10)
    counts = count_psi_witnesses(alphas, INV, 500)
    assert list(counts) == [len(psi_approx_witnesses([[a]], INV, 500)) for a in alphas]


def test_lattice_form_matches_matrix_form():
    rng = np.random.default_rng(2)
    psi = PsiFunction.power_log(c=0.3, a=1.0)
    for m, n in [(1, 1), (2, 1), (1, 2)]:
        A = rng.random((m, n))
        B = lattice_of_matrix(A)
        lat = {w.v.coords for w in lattice_psi_approx_witnesses(B, psi, m, n, 15)}
        mat = set()
        for p, q in psi_approx_witnesses(A, psi, 15):
            c = tuple(p) + tuple(q)
            mat.add(c)
            mat.add(tuple(-x for x in c))
        assert lat == mat


def test_standard_lattice_zero_block():
    ws = lattice_psi_approx_witnesses(LatticeBasis.identity(2), INV, 1, 1, 6)
    zero = [w for w in ws if w.zero_block]
    assert sorted(w.v.coords for w in zero) == sorted([(0, j) for j in range(-6, 7) if j])


def test_lattice_witnesses_match_brute_force():
    rng = np.random.default_rng(3)
    psi = PsiFunction.power_log(c=0.5, a=1.0)
    for trial in range(20):
        k = 2 + trial % 2
        m = 1 if k == 2 else 1 + trial % 2
        W = random_unimodular_basis(rng, k)
        got = lattice_psi_approx_witnesses(W, psi, m, k - m, 3.0)
        C = box_coords(k, 20)
        V = C @ W.T
        up = np.max(np.abs(V[:, :m]), axis=1)
        low = np.max(np.abs(V[:, m:]), axis=1)
        ok = (low >= 1) & (low <= 3.0) & (up**m <= psi(np.maximum(low, 1) ** (k - m)))
        brute = {tuple(int(x) for x in c) for c in C[ok]}
        got_set = {w.v.coords for w in got}
        assert brute <= got_set
        assert all(max(map(abs, c)) > 20 for c in got_set - brute)
        assert all(w.slack >= 0 for w in got)


def test_witness_to_time_closed_forms():
    r0 = dani_forward(INV, 1, 1)
    s = 2.5
    w = ApproxWitness(ShortVec((0, 0), np.array([0.5 * math.exp(-s), math.exp(s)]), 0.0), 1, 1, 0.0)
    assert witness_to_time(w, r0, 1, 1) == pytest.approx(s, abs=1e-9)
    r_half = dani_forward(PsiFunction.power_log(a=3.0), 1, 1)
    low = 7.0
    w = ApproxWitness(ShortVec((0, 0), np.array([low**-3 * 0.5, low]), 0.0), 1, 1, 0.0)
    assert witness_to_time(w, r_half, 1, 1) == pytest.approx(2 * math.log(low), abs=1e-9)


def test_witness_to_time_out_of_range():
    r = dani_forward(PsiFunction.power_log(c=1, a=1, q=2, x0=5), 1, 1)
    w = ApproxWitness(ShortVec((0, 0), np.array([0.01, 1.5]), 0.0), 1, 1, 0.0)
    with pytest.raises(NotInRange):
        witness_to_time(w, r, 1, 1)


def test_witnesses_give_excursions():
    rng = np.random.default_rng(4)
    psi = PsiFunction.power_log(c=0.5, a=1.0)
    for m, n in [(1, 1), (2, 1)]:
        r = dani_forward(psi, m, n)
        flow = DiagonalFlow.from_mn(m, n)
        for _ in range(4):
            B = lattice_of_matrix(rng.random((m, n)))
            for w in lattice_psi_approx_witnesses(B, psi, m, n, 200):
                if w.zero_block:
                    continue
                t = witness_to_time(w, r, m, n)
                assert delta(apply_flow(flow, t, B)) >= float(r(t)) - 1e-9


def test_time_to_witness_standard_lattice():
    r = dani_forward(INV, 1, 1)
    out = time_to_witness(LatticeBasis.identity(2), r, 1, 1, 1.5)
    assert isinstance(out, Degenerate)
    assert np.allclose(np.abs(out.v), [0.0, 1.0])


def test_time_to_witness_round_trip():
    rng = np.random.default_rng(5)
    psi = PsiFunction.power_log(c=0.5, a=1.0)
    r = dani_forward(psi, 1, 1)
    flow = DiagonalFlow.from_mn(1, 1)
    found = 0
    for _ in range(10):
        B = lattice_of_matrix(rng.random((1, 1)))
        for t in np.arange(0.5, 12, 0.25):
            if delta(apply_flow(flow, t, B)) < float(r(t)):
                with pytest.raises(DomainError):
                    time_to_witness(B, r, 1, 1, t)
                continue
            w = time_to_witness(B, r, 1, 1, t)
            if isinstance(w, Degenerate):
                continue
            found += 1
            assert w.slack >= 0
            up, low = abs(w.upper[0]), abs(w.lower[0])
            assert up <= psi(low) * (1 + 1e-12)
            t2 = witness_to_time(w, r, 1, 1)
            assert delta(apply_flow(flow, t2, B)) >= float(r(t2)) - 1e-9
    assert found > 10


def _brute_ma(W, psi, R, bound):
    C = box_coords(W.shape[0], bound)
    V = C @ W.T
    n = np.max(np.abs(V), axis=1)
    ok = (n <= R) & (np.prod(np.abs(V), axis=1) <= n * psi(n))
    return {tuple(int(x) for x in c) for c in C[ok]}


def test_ma_witnesses_match_brute_force():
    rng = np.random.default_rng(6)
    psi = PsiFunction.power_log(a=1.0, q=0.5, x0=2.0)
    for trial in range(20):
        k = 2 + trial % 2
        W = random_unimodular_basis(rng, k)
        got = {w.v.coords for w in ma_witnesses(W, psi, 4.0)}
        brute = _brute_ma(W, psi, 4.0, 20)
        assert brute <= got
        assert all(max(map(abs, c)) > 20 for c in got - brute)


def test_ma_standard_lattice_axes():
    psi = PsiFunction.power_log(a=1.0, q=2.0, x0=2.0)
    ws = ma_witnesses(LatticeBasis.identity(3), psi, 30)
    axis = {w.v.coords for w in ws if w.has_zero}
    for j in range(1, 31):
        assert (j, 0, 0) in axis and (0, 0, -j) in axis
    for w in ws:
        assert w.product == pytest.approx(float(np.prod(np.abs(w.v.embed))), abs=1e-12)
        assert (w.product == 0) == any(c == 0 for c in w.v.embed)


def test_pell_lattice_has_no_small_product_vectors():
    # {(p + q sqrt2, p - q sqrt2)} scaled to covolume one; |p^2 - 2 q^2| >= 1 for nonzero (p, q)
    s2 = math.sqrt(2)
    raw = np.array([[1.0, s2], [1.0, -s2]])
    scale = 1 / math.sqrt(abs(np.linalg.det(raw)))
    W = raw * scale
    floor = scale**2
    eps = 0.9 * floor
    psi = PsiFunction.power_log(c=eps, a=1.0)
    assert ma_witnesses(W, psi, 1e4) == []
    assert ma_witnesses(W, PsiFunction.power_log(c=1.1 * floor, a=1.0), 1e3)


def test_ma_monotone_in_psi():
    rng = np.random.default_rng(7)
    small = PsiFunction.power_log(c=0.2, a=1.0)
    large = PsiFunction.power_log(c=0.6, a=1.0)
    for _ in range(5):
        W = random_unimodular_basis(rng, 2)
        a = {w.v.coords for w in ma_witnesses(W, small, 200)}
        b = {w.v.coords for w in ma_witnesses(W, large, 200)}
        assert a <= b


def test_chamber_closed_form():
    r = dani_forward(INV, 1, 1)
    s = 1.7
    v = np.array([math.exp(-s), math.exp(s)])
    w = MAWitness(ShortVec((1, 1), v, float(v.max())), 1.0, 0.0)
    t = ma_witness_to_chamber(w, r, 2)
    assert t.t == pytest.approx((s, -s), abs=1e-9)
    assert t.minus_norm == pytest.approx(s, abs=1e-9)


def test_chamber_degenerate_and_range():
    r = dani_forward(INV, 2, 1)
    zero = MAWitness(ShortVec((1, 0, 0), np.array([1.0, 0.0, 0.0]), 1.0), 0.0, 1.0)
    assert isinstance(ma_witness_to_chamber(zero, r, 3), Degenerate)
    tiny = MAWitness(ShortVec((1, 1, 1), np.array([0.1, 0.2, 0.3]), 0.3), 0.006, 0.0)
    with pytest.raises(NotInRange):
        ma_witness_to_chamber(tiny, r, 3)


@pytest.mark.parametrize("k", [2, 3])
def test_chamber_points_give_excursions(k):
    rng = np.random.default_rng(8 + k)
    psi = PsiFunction.power_log(c=1.0, a=1.0, q=0.5, x0=2.0)
    r = dani_forward(psi, k - 1, 1)
    checked = 0
    for _ in range(6):
        W = random_unimodular_basis(rng, k)
        for w in ma_witnesses(W, psi, 60 if k == 2 else 12):
            if w.has_zero or w.v.norm_value < psi.x0:
                continue
            t = ma_witness_to_chamber(w, r, k)
            s = t.minus_norm
            assert abs(sum(t.t)) <= 1e-9
            moved = apply_multiflow(t, LatticeBasis(W))
            assert delta(moved) >= float(r(s)) - 1e-9
            checked += 1
    assert checked > 5


def test_csv_export_flags():
    ws = lattice_psi_approx_witnesses(LatticeBasis.identity(2), INV, 1, 1, 2)
    buf = io.StringIO()
    witnesses_to_csv(ws, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "c0,c1,v0,v1,norm,slack,degenerate"
    assert any(line.endswith(",1") for line in lines[1:])
