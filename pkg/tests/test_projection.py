import numpy as np
import pytest

from safeproj.conic import ConeProgram, ConeSettings, ConeSpec, solve_cone_program
from safeproj.projection import (
    ProjectionSettings,
    project_halfspace,
    project_halfspace_backward,
    project_polyhedron_backward,
    project_polyhedron_forward,
    project_soc_backward,
    project_soc_forward,
    soc_cone_point_projection,
)
from safeproj.safesets import Halfspace, Polyhedron, SocConstraint

TIGHT = ProjectionSettings(tol=1e-12, max_iters=300_000, feas_tol=1e-11)


def soc_projection_oracle(y, con, eps=1e-10):
    """Pose the projection as a cone program (independent route)."""
    a = y.size
    m = con.A_c.shape[0]
    n = a + 1
    c = np.zeros(n)
    c[-1] = 1.0
    a1 = np.zeros((m + 1, n))
    a1[:m, :a] = -con.A_c
    a1[m, :a] = -con.c_c
    b1 = np.concatenate([con.b_c, [con.d_c]])
    a2 = np.zeros((a + 2, n))
    a2[:a, :a] = -2.0 * np.eye(a)
    a2[a, -1] = -1.0
    a2[a + 1, -1] = -1.0
    b2 = np.concatenate([-2.0 * y, [-1.0, 1.0]])
    prog = ConeProgram(c, np.vstack([a1, a2]), np.concatenate([b1, b2]),
                       ConeSpec((("soc", m + 1), ("soc", a + 2))))
    sol = solve_cone_program(prog, ConeSettings(eps=eps))
    assert sol.status == "optimal"
    return sol.x[:a]


def poly_projection_oracle(y, poly, eps=1e-10):
    a = y.size
    L = poly.H.shape[0]
    n = a + 1
    c = np.zeros(n)
    c[-1] = 1.0
    a1 = np.zeros((L, n))
    a1[:, :a] = poly.H
    b1 = poly.g.copy()
    a2 = np.zeros((a + 2, n))
    a2[:a, :a] = -2.0 * np.eye(a)
    a2[a, -1] = -1.0
    a2[a + 1, -1] = -1.0
    b2 = np.concatenate([-2.0 * y, [-1.0, 1.0]])
    prog = ConeProgram(c, np.vstack([a1, a2]), np.concatenate([b1, b2]),
                       ConeSpec((("nonneg", L), ("soc", a + 2))))
    sol = solve_cone_program(prog, ConeSettings(eps=eps))
    assert sol.status == "optimal"
    return sol.x[:a]


def random_soc(rng, a=None, m=None):
    a = a or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 6))
    ac = rng.normal(size=(m, a))
    bc = rng.normal(size=m)
    cc = rng.normal(size=a)
    dc = float(np.linalg.norm(bc) + abs(rng.normal()) + 0.1)
    return SocConstraint(ac, bc, cc, dc)


def test_point_projection_closed_form_cases():
    w, t = soc_cone_point_projection(np.array([3.0, 4.0]), 0.0)
    assert np.allclose(w, [1.5, 2.0]) and np.isclose(t, 2.5)
    w, t = soc_cone_point_projection(np.array([0.3, 0.4]), 1.0)
    assert np.allclose(w, [0.3, 0.4]) and t == 1.0
    w, t = soc_cone_point_projection(np.array([0.3, 0.4]), -1.0)
    assert np.allclose(w, 0.0) and t == 0.0


def test_point_projection_matches_numeric_minimization():
    from scipy.optimize import minimize

    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(size=4) * 2
        w_p, t_p = soc_cone_point_projection(v[:-1], v[-1])

        def dist(z):
            return np.sum((z[:-1] - v[:-1]) ** 2) + (z[-1] - v[-1]) ** 2

        r = minimize(dist, np.concatenate([w_p, [t_p]]),
                     constraints=[{"type": "ineq",
                                   "fun": lambda z: z[-1] - np.linalg.norm(z[:-1])}],
                     method="SLSQP", options={"ftol": 1e-14, "maxiter": 200})
        assert dist(np.concatenate([w_p, [t_p]])) <= r.fun + 1e-8


def test_soc_forward_identity_when_feasible():
    rng = np.random.default_rng(1)
    for _ in range(20):
        con = random_soc(rng)
        a = con.c_c.size
        y = rng.normal(size=a)
        if con.violation(y) <= -1e-9:
            res = project_soc_forward(y, con, TIGHT)
            assert np.allclose(res.u, y, atol=1e-9)
            assert np.allclose(res.mu, 0.0, atol=1e-9)


def test_soc_forward_matches_conic_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(150):
        con = random_soc(rng)
        a = con.c_c.size
        y = 2.0 * rng.normal(size=a)
        res = project_soc_forward(y, con)
        assert res.converged
        worst = max(worst, float(np.linalg.norm(res.u - soc_projection_oracle(y, con))))
    assert worst <= 1e-5


def test_soc_forward_primal_recovery_invariant():
    rng = np.random.default_rng(3)
    for _ in range(50):
        con = random_soc(rng)
        y = 2.0 * rng.normal(size=con.c_c.size)
        res = project_soc_forward(y, con, TIGHT)
        G = np.vstack([con.A_c, con.c_c[None, :]])
        assert np.linalg.norm(res.u - (y + G.T @ res.mu)) <= 1e-8


def test_soc_forward_feasibility_and_idempotence():
    rng = np.random.default_rng(4)
    for _ in range(50):
        con = random_soc(rng)
        y = 3.0 * rng.normal(size=con.c_c.size)
        res = project_soc_forward(y, con)
        assert con.violation(res.u) <= 1e-6
        res2 = project_soc_forward(res.u, con)
        assert np.linalg.norm(res2.u - res.u) <= 2e-6


def test_soc_forward_nonexpansive():
    rng = np.random.default_rng(5)
    con = random_soc(rng, a=4, m=3)
    for _ in range(30):
        y1 = 2 * rng.normal(size=4)
        y2 = 2 * rng.normal(size=4)
        u1 = project_soc_forward(y1, con, TIGHT).u
        u2 = project_soc_forward(y2, con, TIGHT).u
        assert np.linalg.norm(u1 - u2) <= np.linalg.norm(y1 - y2) + 1e-8


def test_soc_reduced_to_halfspace_matches_closed_form():
    rng = np.random.default_rng(6)
    for _ in range(30):
        a = 4
        cc = rng.normal(size=a)
        dc = float(abs(rng.normal()) + 0.1)
        con = SocConstraint(np.zeros((1, a)), np.zeros(1), cc, dc)
        y = 3.0 * rng.normal(size=a)
        res = project_soc_forward(y, con, TIGHT)
        hs = Halfspace(-cc, dc)
        u_hs, _ = project_halfspace(y, hs)
        assert np.linalg.norm(res.u - u_hs) <= 1e-8


def test_soc_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    checked = 0
    for trial in range(60):
        con = random_soc(rng, a=3, m=2)
        y = 3.0 * rng.normal(size=3)
        if abs(con.violation(y)) < 1e-2:
            continue  # too close to the activation boundary for FD
        res = project_soc_forward(y, con, TIGHT)
        g = rng.normal(size=3)
        d_A, d_b, d_c, d_d, d_y = project_soc_backward(res, g)
        eps = 1e-5
        checked += 1

        def loss(ac, bc, cc, dc, yy):
            return float(g @ project_soc_forward(
                yy, SocConstraint(ac, bc, cc, dc), TIGHT).u)

        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            fd = (loss(con.A_c, con.b_c, con.c_c, con.d_c, y + e)
                  - loss(con.A_c, con.b_c, con.c_c, con.d_c, y - e)) / (2 * eps)
            assert abs(fd - d_y[j]) <= 1e-4 * max(1.0, abs(fd))
            fd = (loss(con.A_c, con.b_c, con.c_c + e, con.d_c, y)
                  - loss(con.A_c, con.b_c, con.c_c - e, con.d_c, y)) / (2 * eps)
            assert abs(fd - d_c[j]) <= 1e-4 * max(1.0, abs(fd))
        for idx in np.ndindex(2, 3):
            em = np.zeros((2, 3))
            em[idx] = eps
            fd = (loss(con.A_c + em, con.b_c, con.c_c, con.d_c, y)
                  - loss(con.A_c - em, con.b_c, con.c_c, con.d_c, y)) / (2 * eps)
            assert abs(fd - d_A[idx]) <= 1e-4 * max(1.0, abs(fd))
        for j in range(2):
            e = np.zeros(2)
            e[j] = eps
            fd = (loss(con.A_c, con.b_c + e, con.c_c, con.d_c, y)
                  - loss(con.A_c, con.b_c - e, con.c_c, con.d_c, y)) / (2 * eps)
            assert abs(fd - d_b[j]) <= 1e-4 * max(1.0, abs(fd))
        fd = (loss(con.A_c, con.b_c, con.c_c, con.d_c + eps, y)
              - loss(con.A_c, con.b_c, con.c_c, con.d_c - eps, y)) / (2 * eps)
        assert abs(fd - d_d) <= 1e-4 * max(1.0, abs(fd))
    assert checked >= 30


def test_soc_backward_inactive_shortcut():
    rng = np.random.default_rng(8)
    con = random_soc(rng, a=3, m=2)
    # pick an interior point
    y = np.zeros(3)
    assert con.violation(y) < 0
    res = project_soc_forward(y, con, TIGHT)
    g = rng.normal(size=3)
    d_A, d_b, d_c, d_d, d_y = project_soc_backward(res, g)
    assert np.allclose(d_y, g)
    assert np.allclose(d_b, 0.0) and np.isclose(d_d, 0.0)


def test_scalar_loss_chain_rule():
    # gradient of ||u*||^2 wrt y equals 2 u*' du*/dy
    rng = np.random.default_rng(9)
    con = random_soc(rng, a=3, m=2)
    y = 4.0 * rng.normal(size=3)
    res = project_soc_forward(y, con, TIGHT)
    _, _, _, _, d_y = project_soc_backward(res, 2.0 * res.u)
    eps = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = eps
        up = project_soc_forward(y + e, con, TIGHT).u
        um = project_soc_forward(y - e, con, TIGHT).u
        fd = (up @ up - um @ um) / (2 * eps)
        assert abs(fd - d_y[j]) <= 1e-4 * max(1.0, abs(fd))


def test_halfspace_projection_and_identity():
    hs = Halfspace([1.0, 0.0], 0.0)
    u, tape = project_halfspace(np.array([2.0, 3.0]), hs)
    assert np.allclose(u, [0.0, 3.0])
    assert tape.active
    u2, tape2 = project_halfspace(np.array([-1.0, 3.0]), hs)
    assert np.allclose(u2, [-1.0, 3.0])
    assert not tape2.active


def test_halfspace_degenerate_identity():
    hs = Halfspace(np.zeros(3), 0.0)
    y = np.array([1.0, -2.0, 3.0])
    u, tape = project_halfspace(y, hs)
    assert np.allclose(u, y)


def test_halfspace_backward_both_branches_fd():
    rng = np.random.default_rng(10)
    for trial in range(60):
        a = 4
        eta = rng.normal(size=a)
        zeta = float(rng.normal())
        u_hat = 2.0 * rng.normal(size=a)
        if abs(eta @ u_hat - zeta) < 1e-3:
            continue
        hs = Halfspace(eta, zeta)
        _, tape = project_halfspace(u_hat, hs)
        g = rng.normal(size=a)
        d_u, d_eta, d_zeta = project_halfspace_backward(tape, g)
        eps = 1e-7

        def loss(et, zt, uh):
            return float(g @ project_halfspace(uh, Halfspace(et, zt))[0])

        for j in range(a):
            e = np.zeros(a)
            e[j] = eps
            fd = (loss(eta, zeta, u_hat + e) - loss(eta, zeta, u_hat - e)) / (2 * eps)
            assert abs(fd - d_u[j]) <= 1e-5 * max(1.0, abs(fd))
            fd = (loss(eta + e, zeta, u_hat) - loss(eta - e, zeta, u_hat)) / (2 * eps)
            assert abs(fd - d_eta[j]) <= 1e-5 * max(1.0, abs(fd))
        fd = (loss(eta, zeta + eps, u_hat) - loss(eta, zeta - eps, u_hat)) / (2 * eps)
        assert abs(fd - d_zeta) <= 1e-5 * max(1.0, abs(fd))


def test_poly_single_row_matches_halfspace():
    rng = np.random.default_rng(11)
    for _ in range(20):
        eta = rng.normal(size=3)
        zeta = float(rng.normal())
        y = 2.0 * rng.normal(size=3)
        res = project_polyhedron_forward(y, Polyhedron(eta[None, :], [zeta]), TIGHT)
        u_hs, _ = project_halfspace(y, Halfspace(eta, zeta))
        assert np.linalg.norm(res.u - u_hs) <= 1e-8


def test_poly_forward_matches_conic_oracle():
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(60):
        H = rng.normal(size=(4, 3))
        gvec = rng.normal(size=4) + 2.0
        y = 2.0 * rng.normal(size=3)
        poly = Polyhedron(H, gvec)
        res = project_polyhedron_forward(y, poly)
        worst = max(worst, float(np.linalg.norm(res.u - poly_projection_oracle(y, poly))))
    assert worst <= 1e-5


def test_poly_backward_matches_finite_differences():
    rng = np.random.default_rng(13)
    checked = 0
    for trial in range(50):
        H = rng.normal(size=(4, 3))
        gvec = rng.normal(size=4) + 2.0
        y = 2.0 * rng.normal(size=3)
        poly = Polyhedron(H, gvec)
        res = project_polyhedron_forward(y, poly, TIGHT)
        slack = gvec - H @ res.u
        # skip degenerate active sets (weakly active rows break FD)
        if np.any((np.abs(slack) < 1e-6) & (res.mu < 1e-3)):
            continue
        if np.any((np.abs(slack) > 1e-6) & (np.abs(slack) < 1e-3)):
            continue
        checked += 1
        g = rng.normal(size=3)
        d_H, d_g, d_y = project_polyhedron_backward(res, g)
        eps = 1e-5

        def loss(h, gg, yy):
            return float(g @ project_polyhedron_forward(yy, Polyhedron(h, gg), TIGHT).u)

        for idx in np.ndindex(4, 3):
            em = np.zeros((4, 3))
            em[idx] = eps
            fd = (loss(H + em, gvec, y) - loss(H - em, gvec, y)) / (2 * eps)
            assert abs(fd - d_H[idx]) <= 1e-4 * max(1.0, abs(fd))
        for j in range(4):
            e = np.zeros(4)
            e[j] = eps
            fd = (loss(H, gvec + e, y) - loss(H, gvec - e, y)) / (2 * eps)
            assert abs(fd - d_g[j]) <= 1e-4 * max(1.0, abs(fd))
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            fd = (loss(H, gvec, y + e) - loss(H, gvec, y - e)) / (2 * eps)
            assert abs(fd - d_y[j]) <= 1e-4 * max(1.0, abs(fd))
    assert checked >= 20


def test_zero_constraint_identity_shortcut():
    con = SocConstraint(np.zeros((2, 3)), np.zeros(2), np.zeros(3), 0.0)
    y = np.array([1.0, 2.0, 3.0])
    res = project_soc_forward(y, con)
    assert np.allclose(res.u, y)
    d_A, d_b, d_c, d_d, d_y = project_soc_backward(res, np.ones(3))
    assert np.allclose(d_y, 1.0)
    assert np.allclose(d_A, 0.0)
