import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.interpolate import CubicSpline

from agmrf.graph import TemporalConfig, temporal_graph
from agmrf.priors import (
    PcPrecisionPrior,
    PriorError,
    d_phi,
    d_phi_slope,
    d_theta,
    d_theta_slope,
    default_phi_prior,
    default_theta_prior,
    kl_distance_phi_direct,
    kl_distance_theta_direct,
    pc_phi_calibrate,
    pc_precision_calibrate,
    pc_theta_calibrate,
    phi_distance_s,
    phi_gamma_tilde,
    prior_mass,
    prior_quantiles,
    theta_eigenvalues,
)
from agmrf.structmat import (
    DegenerateStructureWarning,
    conflict_arw1_parts,
    multicountry_aicar_parts,
    scale_parts,
    single_part,
)

from conftest import random_connected_graph


def scaled_conflict(n, conflict):
    return scale_parts(conflict_arw1_parts(temporal_graph(n, conflict)))


@pytest.fixture(scope="module")
def rwanda_parts():
    cfg = TemporalConfig(n_periods=35, start_year=1985, conflict_years=tuple(range(1993, 2000)))
    return scale_parts(conflict_arw1_parts(cfg.graph()))


# ------------------------------------------------------------------ tau


def test_precision_calibration_values():
    assert math.isclose(pc_precision_calibrate(1.0, 0.01).lam, -math.log(0.01), rel_tol=1e-15)
    assert math.isclose(pc_precision_calibrate(1.0, math.exp(-1)).lam, 1.0, rel_tol=1e-15)
    assert math.isclose(pc_precision_calibrate(1.0, 0.01).lam, 4.6052, abs_tol=1e-4)
    with pytest.raises(PriorError):
        pc_precision_calibrate(0.0, 0.01)
    with pytest.raises(PriorError):
        pc_precision_calibrate(1.0, 1.0)


def test_precision_tail_by_quadrature():
    p = pc_precision_calibrate(1.0, 0.01)
    # integrate the density directly in tau, independent of prior_mass
    val, _ = integrate.quad(lambda t: float(p.pdf(t)), 0.0, 1.0, epsabs=1e-12, limit=200)
    assert abs(val - 0.01) < 1e-6
    assert abs(prior_mass(p) - 1.0) < 1e-6


def test_precision_quantile_round_trip():
    p = pc_precision_calibrate(1.0, 0.01)
    q = prior_quantiles(p, [0.01, 0.5])
    assert abs(q[0] - 1.0) < 1e-6
    assert abs(prior_mass(p, (0.0, q[1])) - 0.5) < 1e-6


# ---------------------------------------------------------------- theta


def test_d_theta_examples():
    assert float(d_theta(1.0, [0.2, 0.9])) == 0.0
    assert float(d_theta(0.3, [0.0, 0.0])) == 0.0
    expected = math.sqrt(1 / 0.75 - 1 + math.log(0.75))
    assert math.isclose(float(d_theta(0.5, [0.5])), expected, rel_tol=1e-12)
    assert abs(expected - 0.2137) < 1e-4
    with pytest.raises(PriorError):
        d_theta(1.5, [0.5])


def test_theta_eigenvalues_endpoints():
    with pytest.warns(DegenerateStructureWarning):
        no_shock = scale_parts(conflict_arw1_parts(temporal_graph(6, [])))
    np.testing.assert_allclose(theta_eigenvalues(no_shock), 0.0, atol=1e-12)
    with pytest.warns(DegenerateStructureWarning):
        all_shock = scale_parts(conflict_arw1_parts(temporal_graph(6, range(1, 7))))
    np.testing.assert_allclose(theta_eigenvalues(all_shock), 1.0, atol=1e-12)


def test_theta_eigenvalues_deletion_invariance():
    parts = scaled_conflict(4, [3])
    ref = theta_eigenvalues(parts, 1)
    for r in range(2, 5):
        np.testing.assert_allclose(theta_eigenvalues(parts, r), ref, atol=1e-10)
    assert np.all((ref >= 0) & (ref <= 1))
    with pytest.raises(PriorError):
        theta_eigenvalues(parts, 5)


def _random_adaptive_parts(rng):
    """Small (n <= 6) two-part structures with both classes non-empty."""
    while True:
        if rng.random() < 0.5:
            n = int(rng.integers(3, 7))
            conflict = sorted(set(rng.integers(1, n + 1, int(rng.integers(1, n)))))
            with warnings.catch_warnings():
                warnings.simplefilter("error", DegenerateStructureWarning)
                try:
                    return scaled_conflict(n, conflict)
                except DegenerateStructureWarning:
                    continue
        g = random_connected_graph(rng, int(rng.integers(3, 7)), countries=2)
        with warnings.catch_warnings():
            warnings.simplefilter("error", DegenerateStructureWarning)
            try:
                return scale_parts(multicountry_aicar_parts(g))
            except DegenerateStructureWarning:
                continue


def test_theta_deletion_invariance_random(rng):
    for _ in range(10):
        parts = _random_adaptive_parts(rng)
        ref = theta_eigenvalues(parts, 1)
        for r in range(2, parts.n + 1):
            np.testing.assert_allclose(theta_eigenvalues(parts, r), ref, atol=1e-10)


def test_d_theta_matches_brute_force_kl(rng):
    for _ in range(25):
        parts = _random_adaptive_parts(rng)
        eps = theta_eigenvalues(parts)
        for theta in rng.uniform(0.02, 1.0, 4):
            r = int(rng.integers(1, parts.n + 1))
            assert abs(float(d_theta(theta, eps)) - kl_distance_theta_direct(parts, theta, r)) < 1e-8


def test_d_theta_slope_finite_difference(rng):
    h = 1e-6
    for _ in range(10):
        eps = theta_eigenvalues(_random_adaptive_parts(rng))
        for theta in np.linspace(0.05, 0.95, 7):
            fd = (float(d_theta(theta + h, eps)) - float(d_theta(theta - h, eps))) / (2 * h)
            an = float(d_theta_slope(theta, eps))
            assert abs(an - fd) <= 1e-5 * abs(fd)


def test_d_theta_slope_limit_at_one():
    eps = np.array([0.2, 0.5, 0.9])
    near = float(d_theta_slope(1 - 1e-7, eps))
    assert math.isclose(float(d_theta_slope(1.0, eps)), near, rel_tol=1e-5)


def test_theta_calibration_statement():
    parts = scaled_conflict(30, range(9, 16))
    eps = theta_eigenvalues(parts)
    p = pc_theta_calibrate(0.75, 0.75, eps)
    assert math.isclose(p.lam, -math.log(0.75) / float(d_theta(0.75, eps)), rel_tol=1e-14)
    assert math.isclose(-math.log(0.75), 0.287682, abs_tol=1e-6)
    assert abs(prior_mass(p, (0.0, 0.75)) - 0.75) < 1e-4
    assert abs(prior_mass(p) - 1.0) < 1e-3
    with pytest.raises(PriorError):
        pc_theta_calibrate(0.75, 0.75, np.zeros(5))


def test_theta_tail_identity_random_u(rng):
    p = default_theta_prior(scaled_conflict(20, range(6, 11)))
    for U in rng.uniform(0.01, 0.99, 20):
        assert abs(prior_mass(p, (0.0, U)) - math.exp(-p.lam * float(d_theta(U, p.eps)))) < 1e-6


def test_theta_density_nonnegative():
    p = default_theta_prior(scaled_conflict(30, range(9, 16)))
    grid = np.linspace(1e-6, 1.0, 10_000)
    dens = p.pdf(grid)
    assert np.all(np.isfinite(dens)) and np.all(dens >= 0)


def test_rwanda_theta_interval(rwanda_parts):
    p = default_theta_prior(rwanda_parts)
    lo, hi = prior_quantiles(p, [0.025, 0.975])
    assert abs(lo - 0.09) <= 0.03
    assert abs(hi - 0.97) <= 0.03


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8).filter(lambda e: max(e) > 1e-3))
def test_d_theta_strictly_decreasing(eps):
    grid = np.linspace(0.01, 1.0, 200)
    d = d_theta(grid, eps)
    assert np.all(np.diff(d) < 0)
    assert d[-1] == 0.0


# ------------------------------------------------------------------ phi


def test_d_phi_examples():
    assert float(d_phi(0.0, [0.0, 2.0])) == 0.0
    assert float(d_phi(0.7, [1.0, 1.0, 1.0])) == 0.0
    d2 = 0.3 * (-1 + 1) - math.log(0.7) - math.log(1.3)
    assert math.isclose(float(d_phi(0.3, [0.0, 2.0])) ** 2, d2, rel_tol=1e-12)
    assert abs(math.sqrt(d2) - 0.3071) < 1e-4
    # direct trace/log-det oracle on the 2x2 covariance
    S = np.diag([0.7 + 0.3 * 0.0, 0.7 + 0.3 * 2.0])
    assert math.isclose(np.trace(S) - 2 - math.log(np.linalg.det(S)), d2, rel_tol=1e-12)


def test_d_phi_matches_brute_force_kl(rng):
    for _ in range(25):
        g = random_connected_graph(rng, int(rng.integers(2, 7)))
        Q = scale_parts(single_part(g)).combine([1.0])
        gt = phi_gamma_tilde(Q)
        for phi in rng.uniform(0.0, 0.98, 4):
            assert abs(float(d_phi(phi, gt)) - kl_distance_phi_direct(Q, phi)) < 1e-8


def test_d_phi_slope_finite_difference(rng):
    h = 1e-6
    for _ in range(10):
        g = random_connected_graph(rng, int(rng.integers(2, 7)))
        gt = phi_gamma_tilde(scale_parts(single_part(g)).combine([1.0]))
        for phi in np.linspace(0.05, 0.95, 7):
            fd = (float(d_phi(phi + h, gt)) - float(d_phi(phi - h, gt))) / (2 * h)
            assert abs(float(d_phi_slope(phi, gt)) - fd) <= 1e-5 * abs(fd)


def test_phi_s_coordinate_consistent():
    gt = phi_gamma_tilde(scale_parts(single_part(temporal_graph(12))).combine([1.0]))
    s = np.array([0.01, 0.5, 2.0, 8.0])
    d, slope = phi_distance_s(s, gt)
    phi = -np.expm1(-s)
    np.testing.assert_allclose(d, d_phi(phi, gt), rtol=1e-10)
    # dd/ds = dd/dphi * (1 - phi)
    np.testing.assert_allclose(slope, d_phi_slope(phi, gt) * (1 - phi), rtol=1e-9)


def test_phi_calibration_statement():
    parts = scale_parts(single_part(temporal_graph(30)))
    p = default_phi_prior(parts)
    assert abs(prior_mass(p, (0.0, 0.5)) - 2 / 3) < 1e-4
    assert abs(prior_mass(p) - 1.0) < 1e-3
    with pytest.raises(PriorError):
        pc_phi_calibrate(0.5, 2 / 3, np.ones(4))


def test_phi_lambda_vanishes_as_alpha_shrinks():
    gt = [0.0, 0.5, 3.0]
    lams = [pc_phi_calibrate(0.5, a, gt).lam for a in (1e-2, 1e-4, 1e-8)]
    assert lams[0] > lams[1] > lams[2] > 0 and lams[2] < 1e-6


def test_phi_density_matches_numerical_pipeline():
    """Spline through brute-force KL distances, differentiated numerically."""
    Q = scale_parts(single_part(temporal_graph(10))).combine([1.0])
    p = pc_phi_calibrate(0.5, 2 / 3, phi_gamma_tilde(Q))
    knots = np.linspace(1e-4, 0.995, 3000)
    spline = CubicSpline(knots, [kl_distance_phi_direct(Q, x) for x in knots])
    grid = np.linspace(0.01, 0.98, 100)
    numeric = p.lam * np.exp(-p.lam * spline(grid)) * np.abs(spline(grid, 1))
    analytic = p.pdf(grid)
    assert np.max(np.abs(numeric - analytic) / np.maximum(analytic, 1.0)) < 1e-3


def test_phi_monotone_on_rw1():
    gt = phi_gamma_tilde(scale_parts(single_part(temporal_graph(25))).combine([1.0]))
    d = d_phi(np.linspace(0.0, 0.999, 2000), gt)
    assert np.all(np.diff(d) >= 0)


def test_phi_quantile_round_trip():
    p = default_phi_prior(scale_parts(single_part(temporal_graph(15))))
    for prob in (0.1, 0.5, 2 / 3):
        q = prior_quantiles(p, [prob])[0]
        assert abs(prior_mass(p, (0.0, q)) - prob) < 1e-6
    assert abs(prior_quantiles(p, [2 / 3])[0] - 0.5) < 1e-6


def test_phi_logit_density_integrates():
    p = default_phi_prior(scale_parts(single_part(temporal_graph(15))))
    val, _ = integrate.quad(lambda z: math.exp(float(p.logpdf_logit(z))), -60, 200, limit=400, points=[0.0, 10.0])
    tail, _ = integrate.quad(lambda z: math.exp(float(p.logpdf_logit(z))), 200, np.inf, limit=400)
    assert abs(val + tail - 1.0) < 1e-3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 20.0), min_size=2, max_size=8).filter(lambda g: max(abs(x - 1) for x in g) > 1e-2))
def test_d_phi_strictly_increasing(gt):
    d = d_phi(np.linspace(0.0, 0.99, 200), gt)
    assert np.all(np.diff(d) > 0)
    assert d[0] == 0.0


def test_phi_mass_beyond_double_precision_is_kept():
    """A sizeable share of the literal prior sits where 1 - phi < 1e-12."""
    p = default_phi_prior(scale_parts(single_part(temporal_graph(30))))
    near_one = 1.0 - prior_mass(p, (0.0, 1.0 - 1e-12))
    assert 0.05 < near_one < 0.5
    assert math.isclose(near_one + prior_mass(p, (0.0, 1.0 - 1e-12)), prior_mass(p), rel_tol=1e-9)


def test_precision_prior_rejects_bad_lambda():
    with pytest.raises(PriorError):
        PcPrecisionPrior(0.0)
