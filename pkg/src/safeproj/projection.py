"""Differentiable Euclidean projections onto safe action sets.

Three projection flavors, matching the safe-set forms:

* halfspace: single ReLU-style closed form;
* second-order cone constraint ``||A u + b|| <= c'u + d``: an accelerated
  projected dual gradient method with an exact-at-the-fixed-point backward
  pass via the implicit function theorem;
* polyhedron ``H u <= g``: the same dual scheme with the cone projection
  replaced by nonnegative clamping of the dual.

For the iterative flavors, the constraint rows are stacked as
``G = [A; c']``, ``h = [b; d]`` so feasibility reads ``G u + h in F`` with
F the second-order cone (or the nonnegative orthant for polyhedra).  The
dual of the projection problem is

    minimize_{mu in F}  (1/2) mu'GG'mu + mu'(G y + h),

iterated with Nesterov momentum at step 1/L, L = lambda_max(GG'), and the
momentum schedule switching on m = lambda_min(GG') = 0 versus > 0.  The
primal solution is recovered as ``u* = y + G'mu*``.

The backward pass differentiates the fixed point
``mu* = P_F(mu* - grad f(mu*)/L)``: with M the generalized Jacobian of
P_F at the pre-projection point and J = I - M + MGG'/L,

    d_mu   = -J^{-T} (dl/dmu*)',          dl/dmu* = dl/du* G'
    dl/dG  = mu* dl/du* + ((M d_mu)(G'mu* + y)' + mu*(G'M d_mu)') / L
    dl/dh  = M d_mu / L
    dl/dy  = dl/du* + G'M d_mu / L

which includes the direct dependence of u* on G and y through the
recovery equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import sym_eig
from .safesets import Halfspace, Polyhedron, SocConstraint


class ProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProjectionSettings:
    """Stopping rule: successive dual iterates must differ by at most
    ``tol``, measured against both the previous iterate and the
    extrapolated point the step was taken from (the latter is the
    fixed-point residual of the unaccelerated map, which momentum
    reversals cannot fake), AND the primal violation must not exceed
    ``feas_tol``."""

    tol: float = 1e-9
    max_iters: int = 20000
    feas_tol: float = 1e-9


DEFAULT_SETTINGS = ProjectionSettings()

_RANK_EPS = 1e-12  # lambda_min below this counts as zero (momentum branch)


def soc_cone_point_projection(w, t: float) -> tuple[np.ndarray, float]:
    """Three-case Euclidean projection of ``(w, t)`` onto ``||w|| <= t``."""
    w = np.asarray(w, dtype=float)
    r = float(np.linalg.norm(w))
    if r <= t:
        return w.copy(), float(t)
    if r <= -t:
        return np.zeros_like(w), 0.0
    beta = 0.5 * (r + t)
    return (beta / r) * w, beta


def _soc_projection_jacobian(v: np.ndarray) -> np.ndarray:
    """Generalized Jacobian of the cone projection at ``v = (w, t)``.

    At the non-differentiable boundaries the interior-branch limit is
    taken (identity on the cone boundary, zero on the polar boundary),
    a deterministic measure-zero choice.
    """
    w, t = v[:-1], float(v[-1])
    r = float(np.linalg.norm(w))
    n = v.size
    if r <= t:
        return np.eye(n)
    if r <= -t:
        return np.zeros((n, n))
    what = w / r
    beta = 0.5 * (r + t)
    jac = np.empty((n, n))
    jac[:-1, :-1] = (beta / r) * (np.eye(n - 1) - np.outer(what, what)) \
        + 0.5 * np.outer(what, what)
    jac[:-1, -1] = 0.5 * what
    jac[-1, :-1] = 0.5 * what
    jac[-1, -1] = 0.5
    return jac


# ---------------------------------------------------------------------------
# halfspace projection (closed form)


@dataclass
class HalfspaceTape:
    eta: np.ndarray
    zeta: float
    u_hat: np.ndarray
    active: bool


def project_halfspace(u_hat, hs: Halfspace) -> tuple[np.ndarray, HalfspaceTape]:
    """Exact projection onto ``eta'u <= zeta``; identity when degenerate."""
    u_hat = np.asarray(u_hat, dtype=float)
    if hs.degenerate:
        if hs.zeta < 0:
            raise ProjectionError("empty halfspace: eta = 0 with zeta < 0")
        return u_hat.copy(), HalfspaceTape(hs.eta.copy(), hs.zeta, u_hat.copy(), False)
    excess = float(hs.eta @ u_hat - hs.zeta)
    if excess <= 0:
        return u_hat.copy(), HalfspaceTape(hs.eta.copy(), hs.zeta, u_hat.copy(), False)
    out = u_hat - (excess / float(hs.eta @ hs.eta)) * hs.eta
    return out, HalfspaceTape(hs.eta.copy(), hs.zeta, u_hat.copy(), True)


def project_halfspace_backward(tape: HalfspaceTape, d_u):
    """Gradients (d_u_hat, d_eta, d_zeta) of a loss through the projection."""
    d_u = np.asarray(d_u, dtype=float)
    if not tape.active:
        return d_u.copy(), np.zeros_like(tape.eta), 0.0
    eta = tape.eta
    nn = float(eta @ eta)
    excess = float(eta @ tape.u_hat - tape.zeta)
    q = excess / nn
    ge = float(d_u @ eta)
    d_u_hat = d_u - (ge / nn) * eta
    d_zeta = ge / nn
    d_eta = -q * d_u - ge * (tape.u_hat - 2.0 * q * eta) / nn
    return d_u_hat, d_eta, d_zeta


# ---------------------------------------------------------------------------
# iterative dual projections (second-order cone and polyhedron)


@dataclass
class ProjectionResult:
    u: np.ndarray
    mu: np.ndarray
    iterations: int
    converged: bool
    primal_residual: float
    # saved context for the backward pass (the constraint rows are stored
    # jointly normalized; `row_scale` maps gradients back to the caller's
    # parameterization)
    kind: str = field(default="soc", repr=False)
    G: np.ndarray = field(default=None, repr=False)
    h: np.ndarray = field(default=None, repr=False)
    y: np.ndarray = field(default=None, repr=False)
    L: float = field(default=0.0, repr=False)
    M: np.ndarray = field(default=None, repr=False)
    row_scale: float = field(default=1.0, repr=False)
    identity_shortcut: bool = field(default=False, repr=False)
    lstsq_fallback: bool = False


def _dual_project(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "soc":
        w, t = soc_cone_point_projection(v[:-1], float(v[-1]))
        return np.concatenate([w, [t]])
    return np.maximum(v, 0.0)


def _dual_jacobian(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "soc":
        return _soc_projection_jacobian(v)
    # Orthant: diagonal 0/1 active-set matrix; boundary takes the
    # interior-branch (active) limit.
    return np.diag((v >= 0.0).astype(float))


def _run_dual(y, G, h, kind, settings: ProjectionSettings) -> ProjectionResult:
    y = np.asarray(y, dtype=float)

    g_norm = float(np.linalg.norm(G, 2)) if np.any(G) else 0.0
    if g_norm == 0.0:
        # Constraint does not involve u (all-zero rows): feasibility is a
        # property of h alone and the projection is the identity.
        hp = _dual_project(h, kind)
        if float(np.linalg.norm(hp - h)) > 1e-9 * (1.0 + float(np.linalg.norm(h))):
            raise ProjectionError("infeasible constraint with no action dependence")
        mu = np.zeros(G.shape[0])
        return ProjectionResult(
            y.copy(), mu, 0, True, 0.0, kind, G, h, y.copy(), 1.0,
            np.zeros((G.shape[0],) * 2), identity_shortcut=True,
        )

    # The feasible set is invariant under joint positive scaling of
    # (G, h); normalizing the rows makes the step size, the stopping
    # tolerances and the dual magnitudes scale-free.
    row_scale = 1.0 / g_norm
    G = row_scale * G
    h = row_scale * h
    gram = G @ G.T
    eigs = sym_eig(gram).eigenvalues
    L = float(eigs[-1])
    m_strong = float(eigs[0])
    if m_strong < _RANK_EPS:
        m_strong = 0.0

    q = G @ y + h

    def _violation(u):
        if kind == "soc":
            return float(np.linalg.norm(G[:-1] @ u + h[:-1]) - (G[-1] @ u + h[-1]))
        return float(np.max(-(G @ u + h)))

    mu_prev = np.zeros(G.shape[0])
    mu = np.zeros(G.shape[0])
    if m_strong > 0.0:
        beta_const = (np.sqrt(L) - np.sqrt(m_strong)) / (np.sqrt(L) + np.sqrt(m_strong))
    converged = False
    it = 0
    for k in range(settings.max_iters):
        beta = beta_const if m_strong > 0.0 else (k - 1.0) / (k + 2.0)
        nu = mu + beta * (mu - mu_prev)
        step = nu - (gram @ nu + q) / L
        mu_next = _dual_project(step, kind)
        mu_prev, mu = mu, mu_next
        it = k + 1
        if (
            float(np.linalg.norm(mu - mu_prev)) <= settings.tol
            and float(np.linalg.norm(mu - nu)) <= settings.tol
            and _violation(y + G.T @ mu) <= settings.feas_tol
        ):
            converged = True
            break

    u = y + G.T @ mu
    fixed_point_arg = mu - (gram @ mu + q) / L
    M = _dual_jacobian(fixed_point_arg, kind)
    resid = max(0.0, _violation(u)) / row_scale
    # Store context in the caller's units: u = y + G'mu holds with the
    # unnormalized rows and the rescaled dual.
    return ProjectionResult(u, row_scale * mu, it, converged, resid, kind,
                            G / row_scale, h / row_scale, y.copy(),
                            L, M, row_scale)


def project_soc_forward(
    y, constraint: SocConstraint, settings: ProjectionSettings = DEFAULT_SETTINGS
) -> ProjectionResult:
    """Project ``y`` onto ``||A_c u + b_c|| <= c_c'u + d_c``."""
    G = np.vstack([constraint.A_c, constraint.c_c[None, :]])
    h = np.concatenate([constraint.b_c, [constraint.d_c]])
    return _run_dual(y, G, h, "soc", settings)


def project_polyhedron_forward(
    y, poly: Polyhedron, settings: ProjectionSettings = DEFAULT_SETTINGS
) -> ProjectionResult:
    """Project ``y`` onto ``H u <= g``."""
    # Feasibility of G u + h >= 0 with G = -H, h = g.
    return _run_dual(y, -poly.H, poly.g.copy(), "nonneg", settings)


def _backward(res: ProjectionResult, d_u):
    d_u = np.asarray(d_u, dtype=float)
    if res.identity_shortcut:
        return (
            np.zeros_like(res.G),
            np.zeros_like(res.h),
            d_u.copy(),
            False,
        )
    # Differentiate the fixed point in the normalized domain the forward
    # pass iterated in, then map back: the projection is invariant along
    # the joint (G, h) scaling direction, so the chain rule through the
    # normalization reduces to the plain scale factor.
    rs = res.row_scale
    G = rs * res.G
    h = rs * res.h
    mu = res.mu / rs
    y, L, M = res.y, res.L, res.M
    g_mu = G @ d_u
    J = np.eye(G.shape[0]) - M + (M @ (G @ G.T)) / L
    lstsq = False
    try:
        d_mu = np.linalg.solve(J.T, -g_mu)
        if not np.all(np.isfinite(d_mu)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        d_mu = np.linalg.lstsq(J.T, -g_mu, rcond=None)[0]
        lstsq = True
    md = M @ d_mu
    d_G = np.outer(mu, d_u) + (
        np.outer(md, G.T @ mu) + np.outer(mu, G.T @ md) + np.outer(md, y)
    ) / L
    d_h = md / L
    d_y = d_u + (G.T @ md) / L
    return rs * d_G, rs * d_h, d_y, lstsq


def project_soc_backward(res: ProjectionResult, d_u):
    """Gradients (d_A_c, d_b_c, d_c_c, d_d_c, d_y) through the projection."""
    if res.kind != "soc":
        raise ValueError("context does not belong to a cone projection")
    d_G, d_h, d_y, lstsq = _backward(res, d_u)
    res.lstsq_fallback = lstsq
    return d_G[:-1, :], d_h[:-1], d_G[-1, :], float(d_h[-1]), d_y


def project_polyhedron_backward(res: ProjectionResult, d_u):
    """Gradients (d_H, d_g, d_y) through the polyhedral projection."""
    if res.kind != "nonneg":
        raise ValueError("context does not belong to a polyhedral projection")
    d_G, d_h, d_y, lstsq = _backward(res, d_u)
    res.lstsq_fallback = lstsq
    return -d_G, d_h, d_y
