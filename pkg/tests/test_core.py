import numpy as np
import pytest
from conftest import envelope_pair, random_pair
from oracles import eig_logdet, fg_value, random_spd, random_stiefel, sphere_grid_min

from envdim import (
    EnvelopeBasis,
    MomentPair,
    OptimizerSettings,
    SingularMatrixError,
    deflate,
    envelope_fit_from_basis,
    objective_1d_gradient,
    objective_1d_step,
    objective_fg,
    quasi_loglik,
    solve_grassmann,
    subspace_distance,
)

LOG4 = np.log(4.0)


@pytest.fixture
def diag_pair():
    return MomentPair(np.eye(2), np.diag([3.0, 0.0]), 100)


# --- types -------------------------------------------------------------------


def test_basis_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        EnvelopeBasis(np.array([[1.0], [1.0]]))


def test_empty_basis():
    b = EnvelopeBasis.empty(4)
    assert (b.p, b.k) == (4, 0)
    assert np.array_equal(b.projection, np.zeros((4, 4)))
    assert b.complement().k == 4


def test_basis_is_immutable():
    b = EnvelopeBasis(np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        b.gamma[0, 0] = 2.0


def test_moment_pair_validation(rng):
    m = random_spd(3, rng)
    with pytest.raises(ValueError):
        MomentPair(m, np.eye(2), 10)
    with pytest.raises(ValueError):
        MomentPair(m, -np.eye(3), 10)
    with pytest.raises(SingularMatrixError):
        MomentPair(np.diag([1.0, 1.0, -1.0]), np.zeros((3, 3)), 10)
    asym = m.copy()
    asym[0, 1] += 1e-3
    with pytest.raises(ValueError):
        MomentPair(asym, np.zeros((3, 3)), 10)
    with pytest.raises(ValueError):
        MomentPair(m, np.zeros((3, 3)), 10, theta_hat=np.ones((3, 1)))


def test_moment_pair_rejects_ill_conditioned():
    with pytest.raises(SingularMatrixError):
        MomentPair(np.diag([1.0, 1e-13]), np.zeros((2, 2)), 10)


def test_moment_pair_theta_tolerance(rng):
    theta = rng.standard_normal((4, 2))
    u = theta @ theta.T
    MomentPair(random_spd(4, rng), u * (1 + 1e-12), 10, theta_hat=theta)


# --- objective_fg ------------------------------------------------------------


def test_objective_fg_diagonal_examples(diag_pair):
    assert objective_fg(EnvelopeBasis(np.array([1.0, 0.0])), diag_pair) == pytest.approx(-LOG4, abs=1e-14)
    assert objective_fg(EnvelopeBasis(np.array([0.0, 1.0])), diag_pair) == pytest.approx(0.0, abs=1e-14)


def test_objective_fg_k0_and_kp(rng):
    mp = random_pair(rng, 5, 2)
    assert objective_fg(EnvelopeBasis.empty(5), mp) == 0.0
    expected = eig_logdet(mp.m_hat) - eig_logdet(mp.m_hat + mp.u_hat)
    assert objective_fg(EnvelopeBasis(np.eye(5)), mp) == pytest.approx(expected, abs=1e-10)


def test_objective_fg_matches_eigen_oracle(rng):
    for _ in range(20):
        p = int(rng.integers(3, 9))
        k = int(rng.integers(1, p))
        mp = random_pair(rng, p, int(rng.integers(1, 3)))
        g = random_stiefel(p, k, rng)
        assert objective_fg(g, mp) == pytest.approx(fg_value(g, mp.m_hat, mp.u_hat), abs=1e-10)


def test_objective_fg_singular_restriction_raises():
    # a basis whose restriction G'MG is numerically zero
    mp = MomentPair(np.diag([1.0, 1.0, 1.0]), np.zeros((3, 3)), 10)
    bad = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]) / np.sqrt(2)
    with pytest.raises((SingularMatrixError, ValueError)):
        objective_fg(EnvelopeBasis(bad, check=False), mp)


def test_objective_fg_rotation_invariance(rng):
    for _ in range(20):
        p, k = 6, 3
        mp = random_pair(rng, p, 2)
        g = random_stiefel(p, k, rng)
        o = random_stiefel(k, k, rng)
        assert objective_fg(g @ o, mp) == pytest.approx(objective_fg(g, mp), abs=1e-10)


def test_objective_fg_nonnegative_without_u(rng):
    for _ in range(50):
        p = int(rng.integers(2, 8))
        mp = MomentPair(random_spd(p, rng), np.zeros((p, p)), 10)
        g = random_stiefel(p, int(rng.integers(1, p + 1)), rng)
        assert objective_fg(g, mp) >= -1e-10


def test_objective_fg_solver_matches_sphere_grid(rng):
    m = random_spd(3, rng, cond=10)
    theta = rng.standard_normal((3, 1))
    mp = MomentPair.from_theta(m, theta, 100)
    basis = solve_grassmann(mp, 1)
    _, polished = sphere_grid_min(m, mp.u_hat, 1_000_000)
    assert objective_fg(basis, mp) == pytest.approx(polished, abs=1e-4)


# --- 1D step ------------------------------------------------------------------


def test_1d_step_diagonal_example():
    a = np.linalg.inv(np.diag([4.0, 1.0]))
    assert objective_1d_step(np.array([1.0, 0.0]), np.eye(2), a) == pytest.approx(-LOG4, abs=1e-14)


def test_1d_step_even(rng):
    for _ in range(20):
        d = int(rng.integers(2, 7))
        m, a = random_spd(d, rng), random_spd(d, rng)
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        assert objective_1d_step(w, m, a) == objective_1d_step(-w, m, a)


def test_1d_step_rejects_bad_direction():
    with pytest.raises(ValueError):
        objective_1d_step(np.zeros(2), np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        objective_1d_step(np.array([1.0, 1.0]), np.eye(2), np.eye(2))


def test_1d_population_minimum_is_floor(rng):
    mp, gamma = envelope_pair(rng, 4, 1)
    a = mp.a_inv
    w = gamma[:, 0]
    assert objective_1d_step(w, mp.m_hat, a) == pytest.approx(mp.floor, abs=1e-12)
    # no unit vector beats the floor
    for _ in range(200):
        v = rng.standard_normal(4)
        v /= np.linalg.norm(v)
        assert objective_1d_step(v, mp.m_hat, a) >= mp.floor - 1e-12


def test_1d_gradient_identity_case(rng):
    w = rng.standard_normal(5)
    w /= np.linalg.norm(w)
    g = objective_1d_gradient(w, np.eye(5), np.eye(5))
    assert np.allclose(g, 4 * w)
    assert np.linalg.norm(g - w * (w @ g)) < 1e-14


def test_1d_gradient_finite_difference(rng):
    m, a = random_spd(5, rng), random_spd(5, rng)
    w = rng.standard_normal(5)
    w /= np.linalg.norm(w)
    # phi extended off the sphere: log(w'Mw) + log(w'Aw) (not scale-invariant)
    f = lambda v: np.log(v @ m @ v) + np.log(v @ a @ v)
    h = 1e-6
    fd = np.array([(f(w + h * e) - f(w - h * e)) / (2 * h) for e in np.eye(5)])
    g = objective_1d_gradient(w, m, a)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_1d_gradient_stationary_point():
    m = np.diag([1.0, 2.0, 3.0])
    a = np.diag([0.5, 0.2, 0.1])
    for e in np.eye(3):
        g = objective_1d_gradient(e, m, a)
        assert np.linalg.norm(g - e * (e @ g)) <= 1e-8


# --- deflation ------------------------------------------------------------------


def test_deflate_empty(rng):
    mp = random_pair(rng, 4, 1)
    m0, u0, g0 = deflate(mp, EnvelopeBasis.empty(4))
    assert g0.k == 4
    assert np.allclose(g0.gamma @ m0 @ g0.gamma.T, mp.m_hat, atol=1e-12)
    assert np.allclose(g0.gamma @ u0 @ g0.gamma.T, mp.u_hat, atol=1e-12)


def test_deflate_coordinate_case(rng):
    mp = random_pair(rng, 2, 1)
    m1, _, _ = deflate(mp, EnvelopeBasis(np.array([1.0, 0.0])))
    assert m1.shape == (1, 1)
    assert m1[0, 0] == pytest.approx(mp.m_hat[1, 1], abs=1e-14)


def test_deflate_interlacing(rng):
    mp = random_pair(rng, 6, 2)
    g = random_stiefel(6, 3, rng)
    m_k, _, g0 = deflate(mp, EnvelopeBasis(g))
    assert np.linalg.norm(g0.gamma.T @ g) <= 1e-10
    lam = np.linalg.eigvalsh(mp.m_hat)  # ascending
    mu = np.linalg.eigvalsh(m_k)
    # Cauchy: lam[j] <= mu[j] <= lam[j + k]
    for j in range(3):
        assert lam[j] - 1e-10 <= mu[j] <= lam[j + 3] + 1e-10


def test_deflate_full_basis_errors(rng):
    mp = random_pair(rng, 3, 1)
    with pytest.raises(ValueError):
        deflate(mp, EnvelopeBasis(np.eye(3)))


# --- quasi-likelihood and its plug-in minimizers ----------------------------------------


def test_quasi_loglik_plugins(rng):
    mp = random_pair(rng, 5, 2)
    assert quasi_loglik(mp.m_hat, mp.theta_hat, mp) == pytest.approx(eig_logdet(mp.m_hat) + 5, abs=1e-10)
    assert quasi_loglik(np.eye(5), mp.theta_hat, mp) == pytest.approx(np.trace(mp.m_hat), abs=1e-10)


def test_quasi_loglik_singular_raises(rng):
    mp = random_pair(rng, 3, 1)
    with pytest.raises(SingularMatrixError):
        quasi_loglik(np.diag([1.0, 1.0, 0.0]), mp.theta_hat, mp)


def _completion(gamma):
    q_full, _ = np.linalg.qr(gamma, mode="complete")
    return q_full[:, gamma.shape[1] :]


def _loglik_eq5(gamma, omega, omega0, eta, mp):
    """Quasi-likelihood in the envelope parametrization, evaluated directly."""
    g0 = _completion(gamma)
    m = gamma @ omega @ gamma.T + g0 @ omega0 @ g0.T
    d = mp.theta_hat - gamma @ eta
    return eig_logdet(m) + np.trace(np.linalg.solve(m, mp.m_hat + d @ d.T))


def test_plugins_minimize_quasi_loglik(rng):
    p, k = 5, 2
    mp = random_pair(rng, p, 2)
    g = random_stiefel(p, k, rng)
    g0 = _completion(g)
    omega = g.T @ mp.m_hat @ g
    omega0 = g0.T @ (mp.m_hat + mp.u_hat) @ g0
    eta = g.T @ mp.theta_hat
    target = fg_value(g, mp.m_hat, mp.u_hat) + eig_logdet(mp.m_hat + mp.u_hat) + p
    base = _loglik_eq5(g, omega, omega0, eta, mp)
    assert base == pytest.approx(target, abs=1e-8)
    fit = envelope_fit_from_basis(EnvelopeBasis(g), mp)
    assert np.allclose(fit.m_env, g @ omega @ g.T + g0 @ omega0 @ g0.T, atol=1e-12)
    assert np.allclose(fit.eta_hat, eta, atol=1e-14)
    # any perturbation of the plug-ins does no better
    for _ in range(50):
        e = 0.05 * rng.standard_normal((k, k))
        e0 = 0.05 * rng.standard_normal((p - k, p - k))
        pert = _loglik_eq5(g, omega + e @ e.T, omega0 + e0 @ e0.T, eta + 0.05 * rng.standard_normal(eta.shape), mp)
        assert pert >= base - 1e-10


# --- envelope_fit_from_basis ------------------------------------------------------


def test_fit_full_and_empty(rng):
    mp = random_pair(rng, 4, 2)
    full = envelope_fit_from_basis(EnvelopeBasis(np.eye(4)), mp)
    assert np.array_equal(full.theta_env, mp.theta_hat)
    empty = envelope_fit_from_basis(EnvelopeBasis.empty(4), mp)
    assert np.array_equal(empty.theta_env, np.zeros((4, 2)))
    assert empty.objective == 0.0
    # at k = 0 the quasi-likelihood minimum is log|M+U| + p
    target = eig_logdet(mp.m_hat + mp.u_hat) + 4
    assert quasi_loglik(empty.m_env, empty.theta_env, mp) == pytest.approx(target, abs=1e-10)


def test_fit_fields(rng):
    mp = random_pair(rng, 6, 3)
    g = random_stiefel(6, 2, rng)
    fit = envelope_fit_from_basis(EnvelopeBasis(g), mp)
    assert np.array_equal(fit.theta_env, fit.basis.gamma @ fit.eta_hat)
    assert fit.objective == objective_fg(fit.basis, mp)
    p_mat = fit.basis.projection
    assert np.linalg.norm(p_mat @ p_mat - p_mat) <= 1e-10
    assert np.allclose(fit.theta_env, p_mat @ mp.theta_hat, atol=1e-12)
    target = fit.objective + eig_logdet(mp.m_hat + mp.u_hat) + 6
    assert quasi_loglik(fit.m_env, fit.theta_env, mp) == pytest.approx(target, abs=1e-8)


def test_fit_without_theta(rng):
    m = random_spd(3, rng)
    mp = MomentPair(m, np.diag([1.0, 0.0, 0.0]), 10)
    fit = envelope_fit_from_basis(EnvelopeBasis(np.eye(3)[:, :1]), mp)
    assert fit.theta_env is None and fit.eta_hat is None


# --- subspace distance --------------------------------------------------------------


def test_subspace_distance_examples(rng):
    a = EnvelopeBasis(random_stiefel(5, 2, rng))
    assert subspace_distance(a, a) == 0.0
    e1, e2 = EnvelopeBasis(np.array([1.0, 0.0])), EnvelopeBasis(np.array([0.0, 1.0]))
    assert subspace_distance(e1, e2) == pytest.approx(np.sqrt(2), abs=1e-15)
    o = random_stiefel(2, 2, rng)
    assert subspace_distance(a, EnvelopeBasis(a.gamma @ o)) <= 1e-12


def test_solver_settings_defaults():
    s = OptimizerSettings()
    assert (s.max_iterations, s.gradient_tolerance, s.num_multistarts) == (500, 1e-8, 10)
