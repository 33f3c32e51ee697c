import numpy as np
import pytest
from conftest import random_pair
from oracles import envelope_from_eigvecs, random_spd, random_stiefel, sphere_grid_min

from envdim import (
    EnvelopeBasis,
    MomentPair,
    OptimizerSettings,
    SingularMatrixError,
    objective_1d_step,
    objective_fg,
    run_1d_algorithm,
    solve_grassmann,
    solve_sphere,
    subspace_distance,
)
from envdim.manifold import grassmann_descent, grassmann_gradient, sphere_descent, sphere_gradient
from envdim.simulate import gen_generic, make_rng


def test_sphere_dim_one():
    w, value = solve_sphere(np.array([[2.0]]), np.array([[6.0]]))
    assert np.array_equal(w, np.ones(1))
    assert value == pytest.approx(np.log(2.0) - np.log(8.0), abs=1e-15)


def test_sphere_diagonal_case():
    w, value = solve_sphere(np.eye(2), np.diag([3.0, 0.0]))
    assert np.allclose(np.abs(w), [1.0, 0.0], atol=1e-8)
    assert value == pytest.approx(-np.log(4.0), abs=1e-12)


def test_sphere_unit_norm_and_value(rng):
    for _ in range(10):
        d = int(rng.integers(2, 7))
        m, u = random_spd(d, rng), np.outer(*(2 * [rng.standard_normal(d)]))
        w, value = solve_sphere(m, u)
        assert abs(np.linalg.norm(w) - 1) < 1e-12
        assert value == pytest.approx(objective_1d_step(w, m, np.linalg.inv(m + u)), abs=1e-12)


def test_sphere_matches_grid_4d(rng):
    for _ in range(3):
        m = random_spd(4, rng, cond=10)
        t = rng.standard_normal(4)
        u = np.outer(t, t)
        _, value = solve_sphere(m, u)
        grid, _ = sphere_grid_min(m, u, 100_000)
        assert value <= grid + 1e-4


def test_sphere_singular_raises():
    with pytest.raises(SingularMatrixError):
        solve_sphere(np.diag([1.0, 0.0]), np.zeros((2, 2)))


def test_sphere_gradient_stationary_at_solution(rng):
    m = random_spd(5, rng)
    t = rng.standard_normal(5)
    u = np.outer(t, t)
    w, _ = solve_sphere(m, u)
    g = sphere_gradient(w[None], m, np.linalg.inv(m + u))[0]
    assert np.linalg.norm(g) < 1e-6


def test_grassmann_population_model_ii():
    spec = gen_generic("II", p=6, u=2, rng=make_rng(11))
    mp = spec.population(1000)
    oracle = envelope_from_eigvecs(spec.m, spec.u_factor)
    assert oracle.shape[1] == 2
    basis = solve_grassmann(mp, 2)
    assert subspace_distance(basis, EnvelopeBasis(oracle)) <= 1e-5


def test_grassmann_k1_matches_sphere(rng):
    for _ in range(5):
        mp = random_pair(rng, 3, 1)
        basis = solve_grassmann(mp, 1)
        _, value = solve_sphere(mp.m_hat, mp.u_hat)
        assert objective_fg(basis, mp) == pytest.approx(value, abs=1e-6)


def test_grassmann_improves_on_warm_start(rng):
    for _ in range(10):
        p = int(rng.integers(4, 8))
        k = int(rng.integers(2, p))
        mp = random_pair(rng, p, 2)
        init = run_1d_algorithm(mp, k).basis(k)
        basis = solve_grassmann(mp, k, init=init)
        assert objective_fg(basis, mp) <= objective_fg(init, mp) + 1e-12


def test_grassmann_rejects_closed_form_dims(rng):
    mp = random_pair(rng, 4, 1)
    for k in (0, 4):
        with pytest.raises(ValueError):
            solve_grassmann(mp, k)


def test_descent_monotone_and_retraction(rng):
    mp = random_pair(rng, 7, 2)
    starts = random_stiefel(7, 3, rng)[None].repeat(4, axis=0)
    starts[1:] = np.stack([random_stiefel(7, 3, rng) for _ in range(3)])
    res = grassmann_descent(mp.m_hat, mp.a_inv, starts, OptimizerSettings(), record=True)
    hist = np.array(res.history)
    assert np.all(np.diff(hist, axis=0) <= 0)
    for g in res.x:
        assert np.linalg.norm(g.T @ g - np.eye(3)) <= 1e-10


def test_sphere_descent_monotone(rng):
    m = random_spd(6, rng)
    t = rng.standard_normal(6)
    a = np.linalg.inv(m + np.outer(t, t))
    res = sphere_descent(m, a, rng.standard_normal((5, 6)), record=True)
    assert np.all(np.diff(np.array(res.history), axis=0) <= 0)
    assert np.allclose(np.linalg.norm(res.x, axis=1), 1.0, atol=1e-12)


def test_every_iterate_is_orthonormal(rng, monkeypatch):
    from envdim import _linalg, manifold

    iterates = []
    orig = _linalg.qr_positive

    def spy(a, mode="reduced"):
        out = orig(a, mode)
        iterates.append(out)
        return out

    monkeypatch.setattr(manifold._linalg, "qr_positive", spy)
    mp = random_pair(rng, 6, 2)
    solve_grassmann(mp, 3, settings=OptimizerSettings(num_multistarts=3))
    assert iterates
    for stack in iterates:
        g = stack.reshape((-1,) + stack.shape[-2:])
        gtg = np.swapaxes(g, -1, -2) @ g
        assert np.max(np.linalg.norm(gtg - np.eye(g.shape[-1]), axis=(1, 2))) <= 1e-10


def test_riemannian_gradient_finite_differences(rng):
    for _ in range(10):
        p = int(rng.integers(4, 9))
        k = int(rng.integers(1, p))
        mp = random_pair(rng, p, 2)
        g = random_stiefel(p, k, rng)
        grad = grassmann_gradient(g[None], mp.m_hat, mp.a_inv)[0]
        for _ in range(20):
            z = rng.standard_normal((p, k))
            xi = z - g @ (g.T @ z)
            h = 1e-6
            fp = objective_fg(np.linalg.qr(g + h * xi)[0], mp)
            fm = objective_fg(np.linalg.qr(g - h * xi)[0], mp)
            fd = (fp - fm) / (2 * h)
            an = float(np.sum(grad * xi))
            assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-3)


def test_solvers_deterministic(rng):
    mp = random_pair(rng, 6, 2)
    s = OptimizerSettings(seed=42)
    a = solve_grassmann(mp, 3, settings=s)
    b = solve_grassmann(mp, 3, settings=s)
    assert np.array_equal(a.gamma, b.gamma)
    w1, v1 = solve_sphere(mp.m_hat, mp.u_hat, s)
    w2, v2 = solve_sphere(mp.m_hat, mp.u_hat, s)
    assert np.array_equal(w1, w2) and v1 == v2


def test_settings_validation():
    with pytest.raises(ValueError):
        OptimizerSettings(num_multistarts=0)
    with pytest.raises(ValueError):
        OptimizerSettings(gradient_tolerance=-1.0)


def test_singular_pair_propagates():
    # M + U singular cannot happen for SPD M, so probe the restriction error path
    mp = MomentPair(np.eye(3), np.zeros((3, 3)), 10)
    with pytest.raises((SingularMatrixError, ValueError)):
        objective_fg(EnvelopeBasis(np.zeros((3, 1)), check=False), mp)
