import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from twophase.analytic import (
    HazardTable,
    build_scale,
    closed_forms,
    criterion_H,
    cumulative_hazard,
    damping,
    exit_time_limit,
    exit_time_vN,
    hitting_prob,
    onset_hazard,
    onset_tail,
    scale_increment,
)
from twophase.errors import AnchorViolation, DegenerateGamma, DomainTooLarge
from twophase.model import Constant, IteratedLog, Provenance, Tabulated, TwoPhaseModel

mp.mp.dps = 40

THR = 16.0


def boundary_loglog_drift(k=1.0, gamma=1.0):
    return IteratedLog(THR, {2: 1 / (2 * gamma), 3: k / (2 * gamma)})


def model(bT=Constant(1.0), bR=Constant(0.0), gamma=Constant(1.0), **kw):
    return TwoPhaseModel(bT, bR, gamma, **kw)


def _cumulative_trapezoid(f, x):
    return np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])


# --------------------------------------------------------------------------
# scale functions

@pytest.mark.parametrize("b", [-1.5, 0.3, 2.0])
def test_constant_scale_closed_form(b):
    s = build_scale(Constant(b), z0=0.5, domain=(-5, 5))
    x = np.linspace(-5, 5, 21)
    assert s.provenance == Provenance.CLOSED_FORM
    np.testing.assert_allclose(s.u(x), (1 - np.exp(-2 * b * (x - 0.5))) / (2 * b), rtol=1e-13, atol=1e-15)


def test_zero_drift_scale_is_identity_shift():
    s = build_scale(Constant(0.0), z0=-2.0, domain=(-10, 10))
    x = np.linspace(-10, 10, 11)
    np.testing.assert_allclose(s.u(x), x + 2.0, rtol=1e-15, atol=1e-15)


def test_iterated_log_scale_vs_riemann_sum():
    # nested midpoint sums with 1e6 panels; z0 below the threshold exercises the kink
    drift, z0 = boundary_loglog_drift(k=1.0), 10.0
    s = build_scale(drift, z0=z0, domain=(z0, z0 + 10))
    n = 1_000_000
    edges = np.linspace(z0, z0 + 10, n + 1)
    h = edges[1] - edges[0]
    inner = np.concatenate([[0.0], np.cumsum(2 * drift(edges[:-1] + h / 2) * h)])
    du = np.exp(-inner)
    oracle = float(np.sum(0.5 * (du[1:] + du[:-1])) * h)
    assert s.provenance == Provenance.QUADRATURE
    assert s.u(z0 + 10) == pytest.approx(oracle, rel=1e-6)


def test_domain_too_large():
    with pytest.raises(DomainTooLarge):
        build_scale(Constant(1.0), z0=0.0, domain=(0, 1000))


def test_scale_increment_constant():
    for b, g in ((1.0, 1.0), (0.3, 2.5), (4.0, 0.25)):
        assert scale_increment(Constant(b), 7.0, 7.0, 7.0 + g) == pytest.approx(
            (1 - math.exp(-2 * b * g)) / (2 * b), rel=1e-14)
    assert scale_increment(Constant(0.0), 3.0, -1.5, 4.25) == pytest.approx(5.75, rel=1e-15)


@settings(max_examples=15)
@given(st.floats(20, 60), st.floats(0.1, 8), st.floats(-3, 3))
def test_scale_increment_iterated_log_vs_direct_quadrature(start, width, shift):
    drift = IteratedLog(THR, {1: 0.3, 2: 0.5, 3: 1.0})
    base = start + shift
    inner = lambda y: integrate.quad(lambda r: 2 * drift(r), base, y, epsabs=1e-14, epsrel=1e-13)[0]
    oracle = integrate.quad(lambda y: math.exp(-inner(y)), start, start + width, epsabs=0, epsrel=1e-12)[0]
    assert scale_increment(drift, base, start, start + width) == pytest.approx(oracle, rel=1e-9)


# --------------------------------------------------------------------------
# onset hazard and tail

def test_constant_hazard_value():
    lam = float(onset_hazard(model(), 3.0))
    oracle = 2 / (mp.e**2 - 1)
    assert lam == pytest.approx(float(oracle), rel=1e-14)
    assert lam == pytest.approx(0.31304, abs=5e-6)
    assert lam == pytest.approx(1 / closed_forms(1, 1, 1).d_b_gamma, rel=1e-14)


def test_closed_form_and_quadrature_hazard_agree():
    grid = tuple(np.linspace(-5, 50, 12))
    tab = model(bT=Tabulated(grid, (0.7,) * 12), gamma=Constant(1.3))
    const = model(bT=Constant(0.7), gamma=Constant(1.3))
    z = np.linspace(0, 40, 9)
    np.testing.assert_allclose(onset_hazard(tab, z), onset_hazard(const, z), rtol=1e-9)


@pytest.mark.parametrize("k", [1.0, 2.0])
@pytest.mark.parametrize("b", [0.5, 1.0])
def test_hazard_for_iterated_log_gamma(k, b):
    gamma = IteratedLog(THR, {2: 1 / (2 * b), 3: k / (2 * b)})
    m = model(bT=Constant(b), gamma=gamma, x0=30.0)
    z = np.array([30.0, 100.0, 1e4, 1e8])
    expected = 2 * b / (np.log(z) * np.log(np.log(z)) ** k - 1)
    np.testing.assert_allclose(onset_hazard(m, z), expected, rtol=1e-12)


def test_degenerate_gamma():
    m = model(gamma=Tabulated((0.0, 10.0), (1.0, 2.0)), x0=5.0)
    with pytest.raises(DegenerateGamma):
        onset_hazard(m.replace(gamma=Constant(-1.0)), 1.0)


def test_onset_tail_basics():
    m = model()
    d = closed_forms(1, 1, 1).d_b_gamma
    assert onset_tail(m, 0.0, 0.0) == 1.0
    for y in (0.5, 3.0, 11.0):
        assert onset_tail(m, 0.0, y) == pytest.approx(math.exp(-y / d), rel=1e-13)


def _hazard_oracle(drift, z, gamma=1.0, nodes=24):
    """1 / int_{z-gamma}^z exp(int_y^z 2b), with both integrals by fixed Gauss-Legendre."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    ys = z[:, None] - gamma * (1 - t[None, :]) / 2          # outer nodes in [z-gamma, z]
    wy = w * gamma / 2
    # inner integral int_y^z 2b(r) dr on each (z, y)
    span = (z[:, None] - ys)
    rs = ys[:, :, None] + span[:, :, None] * (1 + t[None, None, :]) / 2
    inner = np.sum(2 * drift(rs.ravel()).reshape(rs.shape) * w, axis=2) * span / 2
    return 1.0 / np.sum(np.exp(inner) * wy, axis=1)


def test_onset_tail_iterated_log_vs_trapezoid():
    drift = boundary_loglog_drift(k=1.0)
    m = model(bT=drift, x0=20.0)
    x, y = math.e**math.e + 10, 5.0
    z = np.linspace(x, x + y, 1_000_001)
    lam = np.concatenate([_hazard_oracle(drift, c) for c in np.array_split(z, 20)])
    oracle = math.exp(-integrate.trapezoid(lam, z))
    assert onset_tail(m, x, y) == pytest.approx(oracle, rel=1e-6)
    assert float(onset_hazard(m, x)) == pytest.approx(float(_hazard_oracle(drift, np.array([x]))[0]), rel=1e-12)


@given(st.floats(0.01, 30), st.floats(0.01, 30))
def test_onset_tail_log_additive(y1, y2):
    m = model(bT=boundary_loglog_drift(k=2.0), x0=20.0)
    x = 25.0
    whole = cumulative_hazard(m, x, y1 + y2)
    parts = cumulative_hazard(m, x, y1) + cumulative_hazard(m, x + y1, y2)
    assert whole == pytest.approx(parts, rel=1e-11)


def test_onset_tail_monotone_and_continuous():
    m = model(bT=boundary_loglog_drift(k=2.0), x0=20.0)
    tab = HazardTable(m, 20.0)
    y = np.linspace(20, 300, 2001)
    c = tab.cumulative(y)
    assert abs(c[0]) < 1e-15 and np.all(np.diff(c) > 0)
    # Lipschitz with the largest hazard as constant, so no jumps
    lam_max = float(np.max(onset_hazard(m, y)))
    assert np.all(np.abs(np.diff(np.exp(-c))) <= lam_max * np.diff(y) * (1 + 1e-9))
    back = tab.invert(c[1:])
    np.testing.assert_allclose(back, y[1:], rtol=1e-12)


# --------------------------------------------------------------------------
# hitting probability and the criterion function

def test_hitting_trivial_cases():
    m = model(bT=Constant(0.0), z0=-1.0)
    assert hitting_prob(m, 0.5, 0.0) == 0.0
    for z, c in ((0.5, 1.0), (3.0, 0.2), (10.0, 50.0)):
        assert hitting_prob(m, z, c) == pytest.approx(c / ((z + 1.0) + c), abs=1e-12)


def test_hitting_exact_for_tabulated_recurrent_drift():
    grid = np.linspace(-2.0, 8.0, 4001)
    m = model(bR=Tabulated(tuple(grid), tuple(0.5 / (1 + np.abs(grid)))), x0=7.0, z0=0.0)
    # bR = 1/(2(1+x)) gives u_R = log(1+x); bT = 1 above z
    wT = (1 - mp.e**-2) / (2 * 6)
    exact = wT / (mp.log(6) + wT)
    assert float(hitting_prob(m, 5.0, 1.0)) == pytest.approx(float(exact), rel=1e-6)


@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.01, 3), st.floats(-1, 1), st.floats(0.01, 2))
def test_hitting_monotone(dz, dz_extra, c, bR, dc):
    m = model(bT=Constant(0.8), bR=Constant(bR), z0=-1.0)
    z = -1.0 + dz
    p = float(hitting_prob(m, z, c))
    assert 0.0 <= p <= 1.0
    assert float(hitting_prob(m, z, c + dc)) > p
    farther = m.replace(z0=-1.0 - dz_extra)
    assert float(hitting_prob(farther, z, c)) < p


def test_criterion_H_constant_bR_formula():
    b, c, g, z0 = 1.0, 0.5, 1.0, -3.0
    m = model(bT=Constant(b), bR=Constant(c), gamma=Constant(g), z0=z0)
    cbg = (1 - math.exp(-2 * b * g)) / (2 * b)
    for s in (0.0, 2.0, 9.0):
        y = s - g
        uR = (1 - math.exp(-2 * c * (y - z0))) / (2 * c)
        duR = math.exp(-2 * c * (y - z0))
        assert float(criterion_H(m, s)) == pytest.approx(cbg * duR / (uR + cbg * duR), rel=1e-12)


def test_criterion_H_variable_gamma_formula():
    b = 1.0
    gamma = IteratedLog(THR, {2: 0.5, 3: 0.5})
    m = model(bT=Constant(b), gamma=gamma, x0=20.0, z0=0.0)
    for s in (20.0, 100.0, 1e5):
        g = float(gamma(s))
        e = -math.expm1(-2 * b * g)
        assert float(criterion_H(m, s)) == pytest.approx(e / (2 * b * (s - g) + e), rel=1e-12)


def test_criterion_H_reference_value():
    m = model(z0=0.0, x0=5.0)
    e = 1 - mp.e**-2
    assert float(criterion_H(m, 10.0)) == pytest.approx(float(e / (18 + e)), rel=1e-13)
    assert float(criterion_H(m, 10.0)) == pytest.approx(0.04584, abs=5e-6)


@given(st.floats(0.05, 3), st.floats(0, 3), st.floats(0.2, 3), st.lists(st.floats(0.01, 50), min_size=2, max_size=10))
def test_criterion_H_in_unit_interval_and_nonincreasing(b, c, g, offsets):
    m = model(bT=Constant(b), bR=Constant(c), gamma=Constant(g), z0=0.0, x0=g + 1)
    s = np.sort(g + np.asarray(offsets))
    H = np.asarray(criterion_H(m, s))
    assert np.all((H > 0) & (H < 1))
    assert np.all(np.diff(H) <= 1e-15)


def test_criterion_H_anchor():
    with pytest.raises(AnchorViolation):
        criterion_H(model(z0=0.0, x0=5.0), 0.5)


# --------------------------------------------------------------------------
# closed forms

def _mp_bundle(b, c, g, a):
    b, c, g, a = (mp.mpf(v) for v in (b, c, g, a))
    x = 2 * b * g / a
    em, ep = mp.e**x - 1, 1 - mp.e**-x
    d = c * em / (c * em + (b - c) * ep)
    return {"damping": d, "expected_sigma": a * (mp.e**x - 1 - x) / (2 * b * b),
            "expected_return": g / b + a * (b - c) * ep / (2 * b * b * c),
            "expected_L_increment": a * em / (2 * b)}


def test_closed_form_reference_values():
    cf = closed_forms(1.0, 0.5, 1.0, 1.0)
    ref = _mp_bundle(1, 0.5, 1, 1)
    for k, v in ref.items():
        assert getattr(cf, k) == pytest.approx(float(v), rel=1e-14)
    assert cf.damping == pytest.approx(0.88080, abs=5e-6)
    assert cf.expected_sigma == pytest.approx(2.19453, abs=5e-6)
    assert cf.expected_return == pytest.approx(1.43233, abs=5e-6)
    assert cf.expected_L_increment == pytest.approx(3.19453, abs=5e-6)
    assert cf.speed == cf.damping * 1.0


@given(st.floats(0.05, 6), st.floats(0.05, 6), st.floats(0.05, 6), st.floats(0.2, 3))
def test_closed_forms_vs_extended_precision(b, c, g, a):
    cf = closed_forms(b, c, g, a)
    ref = _mp_bundle(b, c, g, a)
    for k, v in ref.items():
        assert getattr(cf, k) == pytest.approx(float(v), rel=1e-11)
    lhs = cf.damping * b * (cf.expected_sigma + cf.expected_return)
    assert lhs == pytest.approx(cf.expected_L_increment, rel=1e-12)


def test_damping_limits():
    assert damping(1.3, 1.3, 0.7, 1.1) == 1.0
    r1, r2 = damping(1, 1e-6, 1, 1) / 1e-6, damping(1, 1e-8, 1, 1) / 1e-8
    assert r1 == pytest.approx(r2, rel=1e-5)
    # b -> inf: 1 - d decays like exp(-2 b gamma / a)
    gaps = [1 - damping(b, 0.5, 1, 1) for b in (5.0, 10.0)]
    assert gaps[1] / gaps[0] == pytest.approx(math.exp(-10) * 9.5 / 4.5, rel=1e-3)
    assert 1 - damping(1, 0.5, 30, 1) < 1e-20
    # three regimes of c exp(2 b gamma / a)
    b, g = 1.0, 20.0
    x = 2 * b * g
    for K in (1e-3, 1.0, 7.0):
        c = K * math.exp(-x)
        assert damping(b, c, g, 1) == pytest.approx(K / (K + b - c), rel=1e-9)
    assert damping(b, 1e-12 * math.exp(-x), g, 1) < 1e-11
    assert 1 - damping(b, 1e6 * math.exp(-x), g, 1) < 1e-5


def test_reflecting_limit_value():
    ref = (mp.e**2 - 1) / (mp.e**2 + mp.e**-2 - 2)
    assert damping(1, math.inf, 1, 1) == pytest.approx(float(ref), rel=1e-14)
    assert damping(1, math.inf, 1, 1) == pytest.approx(1.156518, abs=1e-6)
    # the displayed formula tends to 1 as gamma grows
    assert damping(1, math.inf, 40, 1) == pytest.approx(1.0, abs=1e-12)
    cf = closed_forms(1, math.inf, 1, 1)
    assert cf.damping * (cf.expected_sigma + cf.expected_return) == pytest.approx(cf.expected_L_increment, rel=1e-12)


# --------------------------------------------------------------------------
# exit time

def _exit_time_oracle(a, b, c, g, N, y):
    """Solve (a/2) v'' + drift v' = -1 on (-N, g), v(-N) = v(g) = 0, exactly in mpmath.

    On each side v = A + B exp(-2 k y / a) - y / k with k the local drift; the
    four constants follow from the boundary values and C^1 matching at 0.
    """
    a, b, c, g, N = (mp.mpf(v) for v in (a, b, c, g, N))
    M = mp.matrix([[1, mp.e**(2 * c * N / a), 0, 0],
                   [0, 0, 1, mp.e**(-2 * b * g / a)],
                   [1, 1, -1, -1],
                   [0, -2 * c / a, 0, 2 * b / a]])
    rhs = mp.matrix([-N / c, g / b, 0, 1 / c - 1 / b])
    A1, B1, A2, B2 = mp.lu_solve(M, rhs)
    y = mp.mpf(y)
    if y <= 0:
        return A1 + B1 * mp.e**(-2 * c * y / a) - y / c
    return A2 + B2 * mp.e**(-2 * b * y / a) - y / b


@pytest.mark.parametrize("params", [(1, 1, 0.5, 1), (0.5, 2, 0.3, 1.5), (2, 0.7, 1.2, 0.4)])
@pytest.mark.parametrize("N", [1.0, 5.0, 20.0])
def test_exit_time_vs_linear_solve(params, N):
    a, b, c, g = params
    for y in (-N, -N / 2, 0.0, g / 3, g):
        assert float(exit_time_vN(a, b, c, g, N, y)) == pytest.approx(
            float(_exit_time_oracle(a, b, c, g, N, y)), rel=1e-11, abs=1e-13)


def test_exit_time_boundary_and_limit():
    assert exit_time_vN(1, 1, 0.5, 1, 20, 1.0) == pytest.approx(0.0, abs=1e-14)
    lim = exit_time_limit(1, 1, 0.5, 1)
    assert lim == pytest.approx(1.43233, abs=5e-6)
    assert lim == pytest.approx(closed_forms(1, 0.5, 1).expected_return, rel=1e-15)
    assert float(exit_time_vN(1, 1, 0.5, 1, 400, 0.0)) == pytest.approx(lim, rel=1e-15)
    Ns = np.arange(5, 35, 5.0)  # beyond N = 30 the gap is below round-off
    gaps = [abs(float(exit_time_vN(1, 1, 0.5, 1, N, 0.0)) - lim) for N in Ns]
    assert np.all(np.diff(gaps) < 0)
