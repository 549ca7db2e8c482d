import json
import math

import numpy as np
import pytest

from safeproj.envs import (
    AttenuatingL2Disturbance,
    BoundFit,
    CartPoleParams,
    ConfigError,
    QuadrotorParams,
    bound_coverage,
    build_env,
    cartpole_dynamics,
    find_safe_init_region,
    fit_norm_bounds,
    gen_synthetic_hinf,
    gen_synthetic_nldi,
    gen_synthetic_pldi,
    make_disturbance,
    microgrid_from_config,
    quadrotor_dynamics,
    rng_stream,
    sample_initial_state,
    step,
    write_trajectory_csv,
)


def test_synthetic_nldi_determinism_and_dims():
    e1 = gen_synthetic_nldi(3)
    e2 = gen_synthetic_nldi(3)
    assert np.array_equal(e1.system.A, e2.system.A)
    assert np.array_equal(e1.Q, e2.Q)
    assert (e1.system.s, e1.system.a, e1.system.d, e1.system.k) == (5, 3, 2, 2)
    assert e1.dt == 0.01 and e1.horizon == 200
    e0 = gen_synthetic_nldi(3, d_zero=True)
    assert not np.any(e0.system.D)


def test_synthetic_r_positive_definite():
    for seed in range(5):
        env = gen_synthetic_nldi(seed)
        assert np.all(np.linalg.eigvalsh(env.R) > 0)
        assert np.all(np.linalg.eigvalsh(env.Q) > -1e-12)


def test_synthetic_pldi_weights_on_simplex():
    env = gen_synthetic_pldi(0)
    assert env.system.n_vertices == 3
    dist = make_disturbance(env)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        w = dist(0, rng.normal(size=5), np.zeros(3))
        assert np.all(w >= 0)
        assert np.isclose(np.sum(w), 1.0)


def test_hinf_schedule_values():
    env = gen_synthetic_hinf(0)
    dist = make_disturbance(env)
    assert isinstance(dist, AttenuatingL2Disturbance)
    # t = T/2 means the pdf argument is 1; t = 0 gives the mode
    assert abs(dist.norm_at(1.0) - 4.83941) < 1e-4
    assert abs(dist.norm_at(0.0) - 7.97885) < 1e-4
    rng = np.random.default_rng(1)
    for t in (0, 7, 99, 199):
        w = dist(t, rng.normal(size=5), np.zeros(3))
        assert np.isclose(np.linalg.norm(w), dist.norm_at(t * env.dt))
    # finite, seed-stable energy
    total = sum(np.linalg.norm(dist(t, np.ones(5), np.zeros(3))) ** 2 * env.dt
                for t in range(env.horizon))
    assert np.isfinite(total)


def test_nldi_disturbance_admissible_over_rollout():
    env = gen_synthetic_nldi(1)
    dist = make_disturbance(env)
    rng = np.random.default_rng(2)
    x = sample_initial_state(env, rng)
    for t in range(500):
        u = 0.1 * rng.normal(size=3)
        w = dist(t, x, u)
        bound = np.linalg.norm(env.system.C @ x + env.system.D @ u)
        assert np.linalg.norm(w) <= bound + 1e-9
        x = step(env, x, u, w)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e3:
            break


def test_step_euler_arithmetic():
    env = gen_synthetic_nldi(0)
    env.system.A = np.zeros((5, 5))
    env.system.B = np.zeros((5, 3))
    env.system.G = np.zeros((5, 2))
    x = np.ones(5)
    assert np.allclose(step(env, x, np.zeros(3), np.zeros(2)), x)
    # scalar xdot = -x at dt=0.01 from 1.0 -> 0.99
    env.system.A = -np.eye(5)
    out = step(env, x, np.zeros(3), np.zeros(2))
    assert np.allclose(out, 0.99)


def test_cartpole_equilibrium_and_jacobian_entries():
    xdot, jac = cartpole_dynamics(np.zeros(4), np.zeros(1))
    assert np.allclose(xdot, 0.0)
    p = CartPoleParams()
    assert np.isclose(jac[1, 2], -p.m_p * p.g / p.m_c)
    assert np.isclose(jac[3, 2], p.g * (p.m_c + p.m_p) / (p.length * p.m_c))
    # three parameter sets against the closed forms
    for m_c, m_p, ell in ((1.0, 0.1, 0.5), (2.0, 0.3, 1.0), (1.5, 0.2, 0.7)):
        pp = CartPoleParams(m_c=m_c, m_p=m_p, length=ell)
        _, jj = cartpole_dynamics(np.zeros(4), np.zeros(1), pp)
        assert abs(jj[1, 2] - (-m_p * 9.81 / m_c)) < 1e-10
        assert abs(jj[3, 2] - (9.81 * (m_c + m_p) / (ell * m_c))) < 1e-10
        assert abs(jj[1, 4] - 1.0 / m_c) < 1e-10
        assert abs(jj[3, 4] - (-1.0 / (ell * m_c))) < 1e-10


def test_cartpole_jacobian_matches_fd():
    rng = np.random.default_rng(3)
    box = np.array([1.5, 2.0, 0.2, 1.5])
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-1, 1, 4) * box
        u = rng.uniform(-10, 10, 1)
        _, jac = cartpole_dynamics(x, u)
        xi = np.concatenate([x, u])
        for j in range(5):
            e = np.zeros(5)
            e[j] = 1e-6
            fp = cartpole_dynamics((xi + e)[:4], (xi + e)[4:])[0]
            fm = cartpole_dynamics((xi - e)[:4], (xi - e)[4:])[0]
            fd = (fp - fm) / 2e-6
            worst = max(worst, np.max(np.abs(fd - jac[:, j])) / max(1.0, np.max(np.abs(fd))))
    assert worst <= 1e-6


def test_quadrotor_equilibrium_and_jacobian():
    xdot, jac = quadrotor_dynamics(np.zeros(6), np.zeros(2))
    assert np.allclose(xdot, 0.0)
    assert np.isclose(jac[3, 2], -9.81)
    rng = np.random.default_rng(4)
    box = np.array([1, 1, 0.15, 0.6, 0.6, 1.3])
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-1, 1, 6) * box
        u = rng.uniform(-2, 2, 2)
        _, jac = quadrotor_dynamics(x, u)
        xi = np.concatenate([x, u])
        for j in range(8):
            e = np.zeros(8)
            e[j] = 1e-6
            fp = quadrotor_dynamics((xi + e)[:6], (xi + e)[6:])[0]
            fm = quadrotor_dynamics((xi - e)[:6], (xi - e)[6:])[0]
            fd = (fp - fm) / 2e-6
            worst = max(worst, np.max(np.abs(fd - jac[:, j])) / max(1.0, np.max(np.abs(fd))))
    assert worst <= 1e-6


def test_fit_linear_dynamics_gives_zero_bounds():
    def lin(x, u):
        A = np.array([[0.0, 1.0], [-1.0, -1.0]])
        B = np.array([[0.0], [1.0]])
        return A @ x + B @ u, np.hstack([A, B])

    fit = fit_norm_bounds(lin, [1.0, 1.0], [1.0], grid_points_per_var=9)
    assert not np.any(fit.C)
    assert not np.any(fit.D)
    assert fit.coverage_train == 1.0


def test_fit_cartpole_small_grid_covers():
    fit = fit_norm_bounds(lambda x, u: cartpole_dynamics(x, u),
                          [1.5, 2.0, 0.2, 1.5], [10.0], grid_points_per_var=9)
    assert fit.coverage_train == 1.0
    assert np.any(fit.D)  # force enters the residual rows
    held = bound_coverage(fit, lambda x, u: cartpole_dynamics(x, u), 18)
    assert held >= 0.99
    # the two linear rows have empty active sets
    assert fit.active_vars[0] == [] and fit.active_vars[2] == []


def test_fit_quadrotor_small_grid_d_exactly_zero():
    fit = fit_norm_bounds(lambda x, u: quadrotor_dynamics(x, u),
                          [1, 1, 0.15, 0.6, 0.6, 1.3], [2.0, 2.0],
                          grid_points_per_var=7)
    assert not np.any(fit.D)
    assert fit.coverage_train == 1.0


def test_bound_fit_json_roundtrip():
    def lin(x, u):
        A = -np.eye(2)
        B = np.eye(2)[:, :1]
        return A @ x + B @ u, np.hstack([A, B])

    fit = fit_norm_bounds(lin, [1.0, 1.0], [1.0], grid_points_per_var=5)
    loaded = BoundFit.from_json(fit.to_json())
    assert np.array_equal(loaded.C, fit.C)
    assert np.array_equal(loaded.D, fit.D)
    assert loaded.grid_points == 5


def test_find_safe_init_region_identity_cube():
    class Cert:
        P = np.eye(2)

    c, x_init = find_safe_init_region(Cert, [1.0, 1.0])
    assert abs(c - 1.0) < 1e-9
    assert np.allclose(x_init, 1.0 / math.sqrt(2.0), atol=1e-9)


def test_find_safe_init_region_invariants():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(4, 4))
    class Cert:
        P = a @ a.T + 0.5 * np.eye(4)

    box = np.array([1.0, 2.0, 0.5, 1.5])
    c, x_init = find_safe_init_region(Cert, box)
    corners = np.array(np.meshgrid(*[[-v, v] for v in x_init], indexing="ij"))
    corners = corners.reshape(4, -1).T
    for corner in corners:
        assert corner @ Cert.P @ corner <= c + 1e-9
    # shrinking the box never increases the level
    c2, _ = find_safe_init_region(Cert, 0.5 * box)
    assert c2 <= c + 1e-12


def test_microgrid_config_validation_and_roundtrip():
    good = {
        "matrices": {
            "A": [[-1.0, 0.2, 0.0], [0.0, -2.0, 0.1], [0.3, 0.0, -1.5]],
            "B": [[1.0, 0.0], [0.0, 1.0], [0.2, 0.1]],
            "G": [[0.1], [0.0], [0.2]],
        },
        "perf_indices": [0, 1],
        "seed": 7,
        "k": 2,
    }
    env = microgrid_from_config(good)
    assert env.system.s == 3 and env.system.a == 2
    assert not np.any(env.system.D)
    assert np.allclose(np.diag(env.Q), [1.0, 1.0, 0.1])
    assert np.allclose(np.diag(env.R), 0.1)
    env2 = microgrid_from_config(good)
    assert np.array_equal(env.system.C, env2.system.C)

    bad = {k: v for k, v in good.items()}
    bad["matrices"] = dict(good["matrices"])
    bad["matrices"]["B"] = [[1.0], [0.0]]  # 2 rows against a 3x3 A
    with pytest.raises(ConfigError):
        microgrid_from_config(bad)


def test_sample_initial_state_families():
    env = gen_synthetic_nldi(0)
    rng = rng_stream(0, 1)
    xs = np.array([sample_initial_state(env, rng) for _ in range(2000)])
    assert abs(np.mean(xs)) < 0.1
    assert abs(np.std(xs) - 1.0) < 0.1

    from safeproj.envs import EnvInstance, InitSampler, DisturbanceSpec
    env.init = InitSampler("box", np.array([-1, 0, -0.1, 0, 0.0]),
                           np.array([1, 0, 0.1, 0, 0.0]))
    for _ in range(1000):
        x = sample_initial_state(env, rng)
        assert -1 <= x[0] <= 1
        assert x[1] == 0.0 and x[3] == 0.0 and x[4] == 0.0
        assert -0.1 <= x[2] <= 0.1


def test_build_env_from_config_and_overrides():
    env = build_env({"family": "nldi", "seed": 4, "d_zero": True,
                     "dt": 0.005, "horizon": 50})
    assert env.dt == 0.005 and env.horizon == 50
    assert not np.any(env.system.D)
    with pytest.raises(ConfigError):
        build_env({"family": "no-such-family"})


def test_trajectory_csv_format(tmp_path):
    env = gen_synthetic_nldi(0)
    states = np.zeros((3, 5))
    states[1] = 1.0
    actions = np.zeros((2, 3))
    dists = np.zeros((2, 2))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, env, states, actions, dists)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,x1,x2,x3,x4,x5,u1,u2,u3,w1,w2,V,cost_inc"
    assert len(lines) == 3
