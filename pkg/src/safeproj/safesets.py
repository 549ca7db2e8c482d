"""State-dependent safe action sets.

For a certified pair (P, K) and a state x, each constructor returns the
set of actions whose worst-case stability surrogate is nonpositive at x:
``Vdot + alpha*V`` under the worst admissible disturbance for the
differential-inclusion families, or the L2-gain excess for the
H-infinity family.  The parametric forms are exactly what the projection
module consumes (a single second-order cone constraint, a halfspace, or
an intersection of halfspaces).

The second-order cone form is kept division-free: with
``g = ||G'Px||``, membership is expressed as

    || g*(Cx + Du) ||  <=  -x'PBu - x'(2PA + alpha P)x / 2,

which equals the normalized inequality wherever g > 0 and degenerates
correctly (constraint 0 <= 0 at x = 0) where it vanishes.

Each constructor also has a vector-Jacobian helper mapping gradients on
the set parameters back to the state; those feed the policy and
adversary backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import inv_psd, sqrt_psd
from .synthesis import HinfSystem, NldiSystem, PldiSystem, RobustCertificate


class EmptySafeSetError(RuntimeError):
    """The constructed set is empty: the certificate does not cover x."""


_FEAS_TOL = 1e-6


@dataclass
class SocConstraint:
    """``{u : ||A_c u + b_c|| <= c_c'u + d_c}``."""

    A_c: np.ndarray
    b_c: np.ndarray
    c_c: np.ndarray
    d_c: float

    def __post_init__(self):
        self.A_c = np.atleast_2d(np.asarray(self.A_c, dtype=float))
        self.b_c = np.atleast_1d(np.asarray(self.b_c, dtype=float))
        self.c_c = np.atleast_1d(np.asarray(self.c_c, dtype=float))
        self.d_c = float(self.d_c)
        if self.A_c.shape[0] != self.b_c.size:
            raise ValueError("A_c rows and b_c length differ")
        if self.A_c.shape[1] != self.c_c.size:
            raise ValueError("A_c cols and c_c length differ")

    @property
    def m(self) -> int:
        return self.A_c.shape[0]

    def violation(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(
            np.linalg.norm(self.A_c @ u + self.b_c) - (self.c_c @ u + self.d_c)
        )


@dataclass
class Halfspace:
    """``{u : eta'u <= zeta}``; eta = 0 with zeta >= 0 is the whole space."""

    eta: np.ndarray
    zeta: float

    def __post_init__(self):
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        self.zeta = float(self.zeta)

    @property
    def degenerate(self) -> bool:
        return not np.any(self.eta)

    def violation(self, u) -> float:
        return float(self.eta @ np.asarray(u, dtype=float) - self.zeta)


@dataclass
class Polyhedron:
    """``{u : H u <= g}`` with at least one row."""

    H: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if self.H.shape[0] != self.g.size or self.H.shape[0] < 1:
            raise ValueError("H rows and g length differ or empty")

    def violation(self, u) -> float:
        return float(np.max(self.H @ np.asarray(u, dtype=float) - self.g))


@dataclass
class DegenerateSingleton:
    """An ellipsoidal set collapsed to the single action ``u_star``."""

    u_star: np.ndarray

    def __post_init__(self):
        self.u_star = np.atleast_1d(np.asarray(self.u_star, dtype=float))

    def violation(self, u) -> float:
        return float(np.linalg.norm(np.asarray(u, dtype=float) - self.u_star))


# ---------------------------------------------------------------------------
# worst-case stability surrogates


def nldi_surrogate(sys: NldiSystem, cert: RobustCertificate, x, u) -> float:
    """sup over admissible w of Vdot + alpha*V at (x, u)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    P = cert.P
    drift = 2.0 * x @ P @ (sys.A @ x + sys.B @ u) + cert.alpha * (x @ P @ x)
    gain = 2.0 * np.linalg.norm(sys.G.T @ P @ x) * np.linalg.norm(sys.C @ x + sys.D @ u)
    return float(drift + gain)


def pldi_surrogate(sys: PldiSystem, cert: RobustCertificate, x, u) -> float:
    """max over hull vertices of Vdot + alpha*V at (x, u)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    P = cert.P
    alpha_v = cert.alpha * (x @ P @ x)
    return float(
        max(2.0 * x @ P @ (ai @ x + bi @ u) + alpha_v for ai, bi in sys.vertices)
    )


def hinf_excess(sys: HinfSystem, cert: RobustCertificate, x, u) -> float:
    """sup over w of the gain-bound surrogate at (x, u).

    The supremum over the disturbance has the closed form
    w* = G'Px / (sigma gamma^2); substituting it leaves the quadratic
    u'(sigma R)u + 2 (B'Px)'u + x'Wx evaluated below.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    P = cert.P
    sigma = cert.multiplier
    q = sys.B.T @ P @ x
    w_mat = _hinf_state_matrix(sys, cert)
    return float(u @ (sigma * sys.R) @ u + 2.0 * (q @ u) + x @ w_mat @ x)


def _hinf_state_matrix(sys: HinfSystem, cert: RobustCertificate) -> np.ndarray:
    P = cert.P
    sigma = cert.multiplier
    w_mat = (
        P @ sys.A + sys.A.T @ P + cert.alpha * P + sigma * sys.Q
        + (P @ sys.G @ sys.G.T @ P) / (sigma * sys.gamma**2)
    )
    return 0.5 * (w_mat + w_mat.T)


def surrogate(system, cert: RobustCertificate, x, u) -> float:
    """Family dispatch for the worst-case stability surrogate."""
    if cert.kind == "nldi":
        return nldi_surrogate(system, cert, x, u)
    if cert.kind == "pldi":
        return pldi_surrogate(system, cert, x, u)
    if cert.kind == "hinf":
        return hinf_excess(system, cert, x, u)
    raise ValueError(f"unknown certificate kind {cert.kind!r}")


# ---------------------------------------------------------------------------
# constructors


def _check_gain_feasible(made, sys, cert, x, scale):
    kx = cert.K @ x
    if made.violation(kx) > _FEAS_TOL * (1.0 + scale):
        raise EmptySafeSetError(
            f"certified gain violates the safe set at this state "
            f"(violation {made.violation(kx):.3e}); certificate and system disagree"
        )


def nldi_safe_set(cert: RobustCertificate, sys: NldiSystem, x) -> SocConstraint:
    """Second-order cone of safe actions for the general bound (D != 0)."""
    x = np.asarray(x, dtype=float)
    P = cert.P
    px = P @ x
    g = float(np.linalg.norm(sys.G.T @ px))
    a_c = g * sys.D
    b_c = g * (sys.C @ x)
    c_c = -(sys.B.T @ px)
    d_c = -float(x @ P @ sys.A @ x) - 0.5 * cert.alpha * float(x @ px)
    made = SocConstraint(a_c, b_c, c_c, d_c)
    _check_gain_feasible(made, sys, cert, x, float(x @ x))
    return made


def nldi0_halfspace(cert: RobustCertificate, sys: NldiSystem, x) -> Halfspace:
    """Halfspace of safe actions when the bound does not involve u (D = 0)."""
    x = np.asarray(x, dtype=float)
    P = cert.P
    px = P @ x
    eta = 2.0 * (sys.B.T @ px)
    zeta = (
        -float(x @ (2.0 * P @ sys.A) @ x)
        - cert.alpha * float(x @ px)
        - 2.0 * float(np.linalg.norm(sys.G.T @ px)) * float(np.linalg.norm(sys.C @ x))
    )
    made = Halfspace(eta, zeta)
    _check_gain_feasible(made, sys, cert, x, float(x @ x))
    return made


def pldi_polyhedron(cert: RobustCertificate, sys: PldiSystem, x) -> Polyhedron:
    """Intersection of one safe halfspace per hull vertex."""
    x = np.asarray(x, dtype=float)
    P = cert.P
    px = P @ x
    alpha_v = cert.alpha * float(x @ px)
    rows = []
    rhs = []
    for ai, bi in sys.vertices:
        rows.append(2.0 * (bi.T @ px))
        rhs.append(-2.0 * float(x @ P @ ai @ x) - alpha_v)
    made = Polyhedron(np.vstack(rows), np.array(rhs))
    _check_gain_feasible(made, sys, cert, x, float(x @ x))
    return made


_EPS_DEGENERATE = 1e-10


def hinf_soc(cert: RobustCertificate, sys: HinfSystem, x):
    """Ellipsoid of safe actions rewritten as ``||A u + b|| <= 1``.

    Returns a :class:`DegenerateSingleton` when the ellipsoid radius
    (squared) falls below 1e-10, and raises :class:`EmptySafeSetError`
    when the set is empty, which signals a violated certificate.
    """
    x = np.asarray(x, dtype=float)
    P = cert.P
    sigma = cert.multiplier
    p_t = sigma * sys.R
    p_t_inv = inv_psd(p_t)
    q_t = sys.B.T @ P @ x
    r_t = float(x @ _hinf_state_matrix(sys, cert) @ x)
    radius_sq = float(q_t @ p_t_inv @ q_t) - r_t
    if radius_sq < -_FEAS_TOL * (1.0 + float(x @ x)):
        raise EmptySafeSetError(
            f"gain-bound ellipsoid is empty at this state (radius^2 {radius_sq:.3e})"
        )
    if radius_sq <= _EPS_DEGENERATE:
        return DegenerateSingleton(-p_t_inv @ q_t)
    root = sqrt_psd(p_t / radius_sq)
    return SocConstraint(root, root @ p_t_inv @ q_t, np.zeros(sys.a), 1.0)


def build_safe_set(kind: str, cert: RobustCertificate, system, x):
    if kind == "nldi-soc":
        return nldi_safe_set(cert, system, x)
    if kind == "nldi0-halfspace":
        return nldi0_halfspace(cert, system, x)
    if kind == "pldi-poly":
        return pldi_polyhedron(cert, system, x)
    if kind == "hinf-soc":
        return hinf_soc(cert, system, x)
    raise ValueError(f"unknown safe-set kind {kind!r}")


# ---------------------------------------------------------------------------
# state-gradient helpers (vector-Jacobian products through the set params)


def nldi_soc_x_vjp(cert, sys: NldiSystem, x, d_A, d_b, d_c, d_d) -> np.ndarray:
    """Map gradients on (A_c, b_c, c_c, d_c) back to the state."""
    x = np.asarray(x, dtype=float)
    P = cert.P
    px = P @ x
    gpx = sys.G.T @ px
    g = float(np.linalg.norm(gpx))
    # d g / dx; the g = 0 point is a measure-zero kink: use 0 there.
    dg_dx = (P @ sys.G @ gpx) / g if g > 0 else np.zeros_like(x)
    cx = sys.C @ x
    out = float(np.tensordot(d_A, sys.D)) * dg_dx
    out += float(d_b @ cx) * dg_dx + g * (sys.C.T @ d_b)
    out += -(P @ sys.B) @ d_c
    pa = P @ sys.A
    out += float(d_d) * (-(pa + pa.T) @ x - cert.alpha * px)
    return out


def nldi0_halfspace_x_vjp(cert, sys: NldiSystem, x, d_eta, d_zeta) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    P = cert.P
    px = P @ x
    out = 2.0 * (P @ sys.B) @ d_eta
    pa = P @ sys.A
    dz = -2.0 * (pa + pa.T) @ x - 2.0 * cert.alpha * px
    gpx = sys.G.T @ px
    cx = sys.C @ x
    g = float(np.linalg.norm(gpx))
    ncx = float(np.linalg.norm(cx))
    if g > 0 and ncx > 0:
        dz = dz - 2.0 * (ncx * (P @ sys.G @ gpx) / g + g * (sys.C.T @ cx) / ncx)
    out += float(d_zeta) * dz
    return out


def pldi_poly_x_vjp(cert, sys: PldiSystem, x, d_H, d_g) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    P = cert.P
    px = P @ x
    out = np.zeros_like(x)
    for i, (ai, bi) in enumerate(sys.vertices):
        out += 2.0 * (P @ bi) @ d_H[i]
        pa = P @ ai
        out += float(d_g[i]) * (-2.0 * (pa + pa.T) @ x - 2.0 * cert.alpha * px)
    return out


def hinf_soc_x_vjp(cert, sys: HinfSystem, x, d_A, d_b) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    P = cert.P
    sigma = cert.multiplier
    p_t = sigma * sys.R
    p_t_inv = inv_psd(p_t)
    p_t_root = sqrt_psd(p_t)
    q_t = sys.B.T @ P @ x
    z = p_t_inv @ q_t
    w_mat = _hinf_state_matrix(sys, cert)
    rho_sq = float(q_t @ z) - float(x @ w_mat @ x)
    rho = float(np.sqrt(max(rho_sq, 1e-300)))
    drho_dx = ((P @ sys.B) @ z - w_mat @ x) / rho
    # A~ = P^{1/2}/rho ; b~ = P^{-1/2} q / rho
    out = -(float(np.tensordot(d_A, p_t_root)) / rho_sq) * drho_dx
    p_root_inv = inv_psd(p_t_root)
    v = p_root_inv @ q_t
    out += (P @ sys.B) @ (p_root_inv @ d_b) / rho
    out += -(float(d_b @ v) / rho_sq) * drho_dx
    return out


def hinf_singleton_x_vjp(cert, sys: HinfSystem, x, d_u) -> np.ndarray:
    # u* = -(sigma R)^-1 B'Px
    p_t_inv = inv_psd(cert.multiplier * sys.R)
    return -(cert.P @ sys.B) @ (p_t_inv @ np.asarray(d_u, dtype=float))
