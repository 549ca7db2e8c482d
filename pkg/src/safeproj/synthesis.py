"""Robust controller synthesis from linear matrix inequalities.

Each dynamics family gets a synthesis routine that assembles a semidefinite
program over the cone-program substrate, solves it, and returns a
:class:`RobustCertificate` holding the Lyapunov matrix P, the gain K, the
stability rate alpha and (where applicable) the S-procedure multiplier.
Every returned certificate is re-verified against its originating matrix
inequality before it leaves this module.

Norm-bounded differential inclusion (NLDI), with S = P^-1 and Y = K S:

    [ AS + SA' + mu GG' + BY + Y'B' + alpha S    SC' + Y'D' ]
    [ CS + DY                                    -mu I      ]  <= 0,
    S > 0, mu > 0.

The LQR-style objective tr(QS) + tr(R^1/2 Y S^-1 Y' R^1/2) is handled via
the epigraph block [[X, R^1/2 Y], [Y'R^1/2, S]] >= 0, minimizing
tr(QS) + tr(X).  To make that objective meaningful the stability block is
augmented with the state covariance of a standard-normal initial state
(identity in the top-left corner), which is exactly the classical primal
SDP form of the LQR problem; without the covariance term the SDP is
positively homogeneous and its infimum is trivially zero.  The certificate
check below always uses the homogeneous inequality, which the augmented
one implies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .conic import ConeProgram, ConeSettings, ConeSpec, ConeSolution, solve_cone_program, svec
from .linalg import inv_psd, sqrt_psd, sym_eig, symmetrize


class SynthesisError(RuntimeError):
    """Synthesis failed for a definite reason."""


class InfeasibleError(SynthesisError):
    """The solver produced an infeasibility certificate."""


class SolverCapError(SynthesisError):
    """Iteration cap reached; infeasibility is NOT proven."""


# ---------------------------------------------------------------------------
# system descriptions


def _as_matrix(m, rows=None, cols=None, name="matrix"):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"{name} has {m.shape[0]} rows, expected {rows}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"{name} has {m.shape[1]} cols, expected {cols}")
    return m


@dataclass
class NldiSystem:
    """dx = Ax + Bu + Gw with ||w|| <= ||Cx + Du||."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = _as_matrix(self.A, name="A")
        s = self.A.shape[0]
        if self.A.shape[1] != s:
            raise ValueError("A must be square")
        self.B = _as_matrix(self.B, rows=s, name="B")
        self.G = _as_matrix(self.G, rows=s, name="G")
        self.C = _as_matrix(self.C, cols=s, name="C")
        self.D = _as_matrix(self.D, rows=self.C.shape[0], cols=self.B.shape[1], name="D")

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def a(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.G.shape[1]

    @property
    def k(self) -> int:
        return self.C.shape[0]

    @property
    def d_is_zero(self) -> bool:
        return not np.any(self.D)


@dataclass
class PldiSystem:
    """dx = A(t)x + B(t)u with (A(t), B(t)) in the hull of the vertices."""

    vertices: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        if len(self.vertices) < 1:
            raise ValueError("need at least one vertex")
        a0 = _as_matrix(self.vertices[0][0])
        s = a0.shape[0]
        fixed = []
        for i, (ai, bi) in enumerate(self.vertices):
            ai = _as_matrix(ai, rows=s, cols=s, name=f"A{i}")
            bi = _as_matrix(bi, rows=s, name=f"B{i}")
            fixed.append((ai, bi))
        if len({b.shape[1] for _, b in fixed}) != 1:
            raise ValueError("all B vertices must share the action dimension")
        self.vertices = tuple(fixed)

    @property
    def s(self) -> int:
        return self.vertices[0][0].shape[0]

    @property
    def a(self) -> int:
        return self.vertices[0][1].shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


@dataclass
class HinfSystem:
    """dx = Ax + Bu + Gw with finite-energy w and L2-gain bound gamma."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    gamma: float
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.A = _as_matrix(self.A, name="A")
        s = self.A.shape[0]
        if self.A.shape[1] != s:
            raise ValueError("A must be square")
        self.B = _as_matrix(self.B, rows=s, name="B")
        self.G = _as_matrix(self.G, rows=s, name="G")
        self.gamma = float(self.gamma)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        self.Q = symmetrize(_as_matrix(self.Q, rows=s, cols=s, name="Q"))
        a = self.B.shape[1]
        self.R = symmetrize(_as_matrix(self.R, rows=a, cols=a, name="R"))
        np.linalg.cholesky(self.R)  # R must be positive definite

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def a(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.G.shape[1]


@dataclass
class RobustCertificate:
    """Lyapunov matrix, gain and multiplier produced by LMI synthesis."""

    kind: str  # "nldi" | "pldi" | "hinf"
    alpha: float
    P: np.ndarray
    K: np.ndarray
    multiplier: float | None = None
    objective: float | None = None

    def __post_init__(self):
        self.P = symmetrize(np.asarray(self.P, dtype=float))
        self.K = _as_matrix(self.K, cols=self.P.shape[0], name="K")

    def lyapunov(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def to_json(self) -> str:
        payload = {
            "kind": self.kind,
            "alpha": self.alpha,
            "P": [float(v) for v in self.P.ravel()],
            "K": [float(v) for v in self.K.ravel()],
            "multiplier": self.multiplier,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RobustCertificate":
        payload = json.loads(text)
        p_flat = np.asarray(payload["P"], dtype=float)
        s = int(round(np.sqrt(p_flat.size)))
        if s * s != p_flat.size:
            raise ValueError("P entry count is not a perfect square")
        k_flat = np.asarray(payload["K"], dtype=float)
        if k_flat.size % s != 0:
            raise ValueError("K entry count is not a multiple of the state dim")
        a = k_flat.size // s
        return RobustCertificate(
            kind=payload["kind"],
            alpha=float(payload["alpha"]),
            P=p_flat.reshape(s, s),
            K=k_flat.reshape(a, s),
            multiplier=payload.get("multiplier"),
        )


def save_certificate(path, cert: RobustCertificate) -> None:
    with open(path, "w") as fh:
        fh.write(cert.to_json())
        fh.write("\n")


def load_certificate(path) -> RobustCertificate:
    with open(path) as fh:
        return RobustCertificate.from_json(fh.read())


# ---------------------------------------------------------------------------
# small SDP builder on top of the cone-program substrate


class _VarTable:
    """Flat variable vector with named symmetric/rectangular/scalar parts."""

    def __init__(self):
        self._parts = []  # (name, kind, shape, slice)
        self.dim = 0

    def _add(self, name, kind, shape, length):
        sl = slice(self.dim, self.dim + length)
        self._parts.append((name, kind, shape, sl))
        self.dim += length
        return sl

    def add_sym(self, name: str, n: int):
        return self._add(name, "sym", (n, n), n * (n + 1) // 2)

    def add_mat(self, name: str, r: int, c: int):
        return self._add(name, "mat", (r, c), r * c)

    def add_scalar(self, name: str):
        return self._add(name, "scalar", (), 1)

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        for name, kind, shape, sl in self._parts:
            v = x[sl]
            if kind == "sym":
                out[name] = _sym_from_tril(v, shape[0])
            elif kind == "mat":
                out[name] = v.reshape(shape)
            else:
                out[name] = float(v[0])
        return out


def _sym_from_tril(v: np.ndarray, n: int) -> np.ndarray:
    # Unscaled lower-triangle packing (plain variable storage; distinct
    # from the cone svec which carries the sqrt(2) factor).
    m = np.zeros((n, n))
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    m[rows[order], cols[order]] = v
    return m + np.tril(m, -1).T


class _SdpBuilder:
    """Assemble ``min c'x  s.t.  blocks(x) in cones`` from affine callables.

    Each block callable maps the unpacked variable dict to a symmetric
    matrix (PSD block) or a vector (nonneg block).  Affinity in the
    variables is assumed; columns of the constraint matrix are extracted
    exactly by evaluating at unit vectors.
    """

    def __init__(self, table: _VarTable):
        self.table = table
        self._blocks = []  # (kind, fn)
        self._objective = None

    def add_psd(self, fn: Callable[[dict], np.ndarray]):
        self._blocks.append(("psd", fn))

    def add_nonneg(self, fn: Callable[[dict], np.ndarray]):
        self._blocks.append(("nonneg", fn))

    def add_zero(self, fn: Callable[[dict], np.ndarray]):
        """Affine equality rows (the zero cone)."""
        self._blocks.append(("zero", fn))

    def set_objective(self, fn: Callable[[dict], float]):
        self._objective = fn

    def build(self) -> ConeProgram:
        n = self.table.dim
        zero = self.table.unpack(np.zeros(n))
        units = [self.table.unpack(e) for e in np.eye(n)]

        cone_blocks = []
        a_rows = []
        b_rows = []
        for kind, fn in self._blocks:
            base = np.asarray(fn(zero), dtype=float)
            if kind == "psd":
                side = base.shape[0]
                b_blk = svec(base)
                cols = [svec(np.asarray(fn(u), dtype=float)) - b_blk for u in units]
                cone_blocks.append(("psd", side))
            else:
                base = np.atleast_1d(base)
                b_blk = base
                cols = [np.atleast_1d(np.asarray(fn(u), dtype=float)) - b_blk for u in units]
                cone_blocks.append((kind, base.size))
            a_rows.append(-np.column_stack(cols) if cols else np.zeros((b_blk.size, 0)))
            b_rows.append(b_blk)

        obj0 = float(self._objective(zero))
        c = np.array([float(self._objective(u)) - obj0 for u in units])
        return ConeProgram(c, np.vstack(a_rows), np.concatenate(b_rows), ConeSpec(tuple(cone_blocks)))


def _solve_or_raise(program: ConeProgram, settings: ConeSettings, what: str) -> ConeSolution:
    sol = solve_cone_program(program, settings)
    if sol.status == "infeasible-detected":
        raise InfeasibleError(f"{what}: {sol.detail}")
    if sol.status == "iteration-cap":
        raise SolverCapError(
            f"{what}: iteration cap after {sol.iterations} iterations "
            f"(residuals p={sol.primal_residual:.2e} d={sol.dual_residual:.2e} "
            f"gap={sol.gap:.2e}); not a proof of infeasibility"
        )
    return sol


# ---------------------------------------------------------------------------
# residual checks (always against the homogeneous inequalities)


def nldi_lmi_block(sys: NldiSystem, alpha: float, S, Y, mu) -> np.ndarray:
    tl = (
        sys.A @ S + S @ sys.A.T + mu * (sys.G @ sys.G.T)
        + sys.B @ Y + Y.T @ sys.B.T + alpha * S
    )
    if sys.k == 0:
        return symmetrize(tl)
    tr = S @ sys.C.T + Y.T @ sys.D.T
    br = -mu * np.eye(sys.k)
    return symmetrize(np.block([[tl, tr], [tr.T, br]]))


def pldi_lmi_blocks(sys: PldiSystem, alpha: float, S, Y) -> list[np.ndarray]:
    out = []
    for ai, bi in sys.vertices:
        out.append(symmetrize(ai @ S + S @ ai.T + bi @ Y + Y.T @ bi.T + alpha * S))
    return out


def hinf_lmi_block(sys: HinfSystem, alpha: float, S, Y, mu) -> np.ndarray:
    qh = sqrt_psd(sys.Q)
    rh = sqrt_psd(sys.R)
    tl = (
        S @ sys.A.T + sys.A @ S + Y.T @ sys.B.T + sys.B @ Y + alpha * S
        + (mu / sys.gamma**2) * (sys.G @ sys.G.T)
    )
    tr = np.hstack([S @ qh, Y.T @ rh])
    br = -mu * np.eye(sys.s + sys.a)
    return symmetrize(np.block([[tl, tr], [tr.T, br]]))


def _max_eig(m: np.ndarray) -> float:
    return float(sym_eig(m).eigenvalues[-1])


def certificate_residual(cert: RobustCertificate, system) -> float:
    """Max eigenvalue of the originating LMI at S=P^-1, Y=KP^-1.

    Nonpositive (up to tolerance) means the certificate is valid.  For
    PLDI certificates the worst vertex block is reported.
    """
    S = inv_psd(cert.P)
    Y = cert.K @ S
    if cert.kind == "nldi":
        return _max_eig(nldi_lmi_block(system, cert.alpha, S, Y, cert.multiplier))
    if cert.kind == "pldi":
        return max(_max_eig(b) for b in pldi_lmi_blocks(system, cert.alpha, S, Y))
    if cert.kind == "hinf":
        mu = 1.0 / cert.multiplier
        return _max_eig(hinf_lmi_block(system, cert.alpha, S, Y, mu))
    raise ValueError(f"unknown certificate kind {cert.kind!r}")


def residual_accepts(resid: float, block_scale: float, tol: float = 1e-6) -> bool:
    """Scale-aware acceptance: resid <= tol * (1 + block Frobenius scale)."""
    return resid <= tol * (1.0 + block_scale)


def _check_certificate(cert: RobustCertificate, system, what: str) -> float:
    resid = certificate_residual(cert, system)
    S = inv_psd(cert.P)
    Y = cert.K @ S
    if cert.kind == "nldi":
        blk = nldi_lmi_block(system, cert.alpha, S, Y, cert.multiplier)
    elif cert.kind == "pldi":
        blk = max(pldi_lmi_blocks(system, cert.alpha, S, Y), key=_max_eig)
    else:
        blk = hinf_lmi_block(system, cert.alpha, S, Y, 1.0 / cert.multiplier)
    if not residual_accepts(resid, float(np.linalg.norm(blk))):
        raise SynthesisError(
            f"{what}: solved program did not yield a valid certificate "
            f"(LMI residual max-eig {resid:.3e})"
        )
    return resid


# ---------------------------------------------------------------------------
# synthesis routines

# Floors keeping the strict inequalities strictly feasible.  The identity
# initial-state covariance added to the LQR-objective stability blocks
# already provides their strict margin, so no extra epsilon is layered on
# top of it: near-duplicate constraints separated by mismatched tiny
# epsilons create degenerate corners that first-order solvers crawl into.
# The explicit margin (used where no covariance term exists, i.e. the
# gain-bounded family) sits well above the solver tolerance for the same
# reason.
_EPS_PD = 1e-6     # floor on the smallest eigenvalue of S
_EPS_MU = 1e-9     # floor on the S-procedure multiplier
_EPS_MARGIN = 1e-4  # explicit margin on the normalized gain-bound block
# Under the tr(S) = s normalization of the gain-bounded synthesis this
# floor is a condition-number cap on S: without it the margin objective
# drives eigenvalues of S to zero and the recovered gain K = Y S^-1 comes
# out too stiff to integrate at practical step sizes.
_EPS_PD_HINF = 2e-2


def _cost_sqrts(Q, R, s, a):
    Q = symmetrize(_as_matrix(Q, rows=s, cols=s, name="Q"))
    R = symmetrize(_as_matrix(R, rows=a, cols=a, name="R"))
    if sym_eig(Q).eigenvalues[0] < -1e-9:
        raise ValueError("Q must be positive semidefinite")
    if sym_eig(R).eigenvalues[0] <= 0:
        raise ValueError("R must be positive definite")
    return sqrt_psd(Q), sqrt_psd(R), Q, R


def synth_nldi(
    sys: NldiSystem,
    alpha: float,
    Q,
    R,
    settings: ConeSettings | None = None,
) -> RobustCertificate:
    """Robust LQR synthesis for a norm-bounded differential inclusion.

    Minimizes tr(QS) + tr(X) over the NLDI stability LMI (with the
    identity initial-state covariance in the top-left corner and the
    epigraph block tying X to R^1/2 Y S^-1 Y' R^1/2).  Raises
    :class:`InfeasibleError` when no certificate exists at this alpha.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    s, a = sys.s, sys.a
    qh, rh, Q, R = _cost_sqrts(Q, R, s, a)

    table = _VarTable()
    table.add_sym("S", s)
    table.add_mat("Y", a, s)
    table.add_scalar("mu")
    table.add_sym("X", a)
    builder = _SdpBuilder(table)

    eye_s = np.eye(s)

    def stability_block(v):
        blk = nldi_lmi_block(sys, alpha, v["S"], v["Y"], v["mu"])
        blk[:s, :s] += eye_s
        return -blk

    builder.add_psd(stability_block)
    builder.add_psd(lambda v: np.block([[v["X"], rh @ v["Y"]], [v["Y"].T @ rh, v["S"]]]))
    builder.add_psd(lambda v: v["S"] - _EPS_PD * eye_s)
    builder.add_nonneg(lambda v: np.array([v["mu"] - _EPS_MU]))
    builder.set_objective(lambda v: float(np.trace(Q @ v["S"])) + float(np.trace(v["X"])))

    sol = _solve_or_raise(builder.build(), settings or ConeSettings(),
                          f"NLDI synthesis (alpha={alpha})")
    v = table.unpack(sol.x)
    S = symmetrize(v["S"])
    P = inv_psd(S)
    # Solver accuracy can leave mu epsilon-negative; the multiplier must
    # stay strictly positive for the S-procedure to make sense.
    mu = max(v["mu"], _EPS_MU)
    cert = RobustCertificate("nldi", float(alpha), P, v["Y"] @ P,
                             multiplier=mu, objective=sol.objective)
    _check_certificate(cert, sys, "NLDI synthesis")
    return cert


def synth_pldi(
    sys: PldiSystem,
    alpha: float,
    Q,
    R,
    settings: ConeSettings | None = None,
) -> RobustCertificate:
    """Robust LQR synthesis for a polytopic differential inclusion.

    One stability block per hull vertex; otherwise identical in shape to
    :func:`synth_nldi`.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    s, a = sys.s, sys.a
    qh, rh, Q, R = _cost_sqrts(Q, R, s, a)

    table = _VarTable()
    table.add_sym("S", s)
    table.add_mat("Y", a, s)
    table.add_sym("X", a)
    builder = _SdpBuilder(table)

    eye_s = np.eye(s)
    for ai, bi in sys.vertices:
        def vertex_block(v, ai=ai, bi=bi):
            blk = ai @ v["S"] + v["S"] @ ai.T + bi @ v["Y"] + v["Y"].T @ bi.T + alpha * v["S"]
            return -(symmetrize(blk) + eye_s)
        builder.add_psd(vertex_block)
    builder.add_psd(lambda v: np.block([[v["X"], rh @ v["Y"]], [v["Y"].T @ rh, v["S"]]]))
    builder.add_psd(lambda v: v["S"] - _EPS_PD * eye_s)
    builder.set_objective(lambda v: float(np.trace(Q @ v["S"])) + float(np.trace(v["X"])))

    sol = _solve_or_raise(builder.build(), settings or ConeSettings(),
                          f"PLDI synthesis (alpha={alpha}, {sys.n_vertices} vertices)")
    v = table.unpack(sol.x)
    P = inv_psd(symmetrize(v["S"]))
    cert = RobustCertificate("pldi", float(alpha), P, v["Y"] @ P, objective=sol.objective)
    _check_certificate(cert, sys, "PLDI synthesis")
    return cert


def synth_hinf(
    sys: HinfSystem,
    alpha: float,
    settings: ConeSettings | None = None,
) -> RobustCertificate:
    """L2-gain-bounded synthesis.

    The stability/performance LMI is jointly homogeneous in (S, Y, mu),
    so the multiplier is normalized out (the cost-channel rescaling below
    fixes it); the scale of S is pinned by tr(S) = s and the objective
    maximizes the margin t with LMI <= -t I, i.e. the most robust
    certificate under the normalization (margin also dilates the safe
    action sets the policy projects onto).  A gamma too small for the
    disturbance gain raises :class:`InfeasibleError` suggesting a larger
    value.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    s, a = sys.s, sys.a
    # The surrogate E is invariant under (Q, R, gamma^2, sigma) ->
    # (Q/c, R/c, gamma^2/c, c*sigma), so the cost channel is normalized to
    # unit scale before solving; this keeps the corner of the stability
    # block commensurate with the rest (diagonal equilibration cannot
    # rebalance the inside of a PSD block).  The recovered multiplier is
    # sigma = 1/c.
    c_scale = max(float(sym_eig(sys.Q).eigenvalues[-1]),
                  float(sym_eig(sys.R).eigenvalues[-1]), 1.0)
    qh = sqrt_psd(sys.Q / c_scale)
    rh = sqrt_psd(sys.R / c_scale)
    ggt = sys.G @ sys.G.T * (c_scale / sys.gamma**2)

    table = _VarTable()
    table.add_sym("S", s)
    table.add_mat("Y", a, s)
    table.add_scalar("t")
    builder = _SdpBuilder(table)

    eye_s = np.eye(s)
    eye_sa = np.eye(s + a)

    def stability_block(v):
        S, Y = v["S"], v["Y"]
        tl = S @ sys.A.T + sys.A @ S + Y.T @ sys.B.T + sys.B @ Y + alpha * S + ggt
        tr = np.hstack([S @ qh, Y.T @ rh])
        blk = symmetrize(np.block([[tl, tr], [tr.T, -eye_sa]]))
        return -blk - v["t"] * np.eye(s + s + a)

    builder.add_psd(stability_block)
    builder.add_psd(lambda v: v["S"] - _EPS_PD_HINF * eye_s)
    builder.add_nonneg(lambda v: np.array([v["t"] - _EPS_MARGIN]))
    builder.add_zero(lambda v: np.array([float(np.trace(v["S"])) - s]))
    builder.set_objective(lambda v: -v["t"])

    try:
        sol = _solve_or_raise(builder.build(), settings or ConeSettings(),
                              f"H-infinity synthesis (alpha={alpha}, gamma={sys.gamma})")
    except InfeasibleError as exc:
        raise InfeasibleError(
            f"{exc}; the gain bound gamma={sys.gamma} may be too small for this system"
        ) from exc
    v = table.unpack(sol.x)
    P = inv_psd(symmetrize(v["S"]))
    cert = RobustCertificate("hinf", float(alpha), P, v["Y"] @ P,
                             multiplier=1.0 / c_scale, objective=sol.objective)
    _check_certificate(cert, sys, "H-infinity synthesis")
    return cert


def solve_lqr_nonrobust(A, B, Q, R, settings: ConeSettings | None = None) -> np.ndarray:
    """Continuous-time LQR gain via the primal SDP form.

    This is the alpha -> 0, G = C = D = 0 specialization of the robust
    NLDI program: minimize tr(QS) + tr(X) subject to
    AS + SA' + BY + Y'B' + I <= 0 and the epigraph block.
    """
    A = _as_matrix(A, name="A")
    s = A.shape[0]
    B = _as_matrix(B, rows=s, name="B")
    a = B.shape[1]
    qh, rh, Q, R = _cost_sqrts(Q, R, s, a)

    table = _VarTable()
    table.add_sym("S", s)
    table.add_mat("Y", a, s)
    table.add_sym("X", a)
    builder = _SdpBuilder(table)
    eye_s = np.eye(s)
    builder.add_psd(
        lambda v: -(symmetrize(A @ v["S"] + v["S"] @ A.T + B @ v["Y"] + v["Y"].T @ B.T) + eye_s)
    )
    builder.add_psd(lambda v: np.block([[v["X"], rh @ v["Y"]], [v["Y"].T @ rh, v["S"]]]))
    builder.add_psd(lambda v: v["S"] - _EPS_PD * eye_s)
    builder.set_objective(lambda v: float(np.trace(Q @ v["S"])) + float(np.trace(v["X"])))

    sol = _solve_or_raise(builder.build(), settings or ConeSettings(), "LQR synthesis")
    v = table.unpack(sol.x)
    P = inv_psd(symmetrize(v["S"]))
    return v["Y"] @ P


def pldi_to_nldi(
    vertices: Sequence[np.ndarray],
    A_center: np.ndarray | None = None,
    settings: ConeSettings | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fit a norm-bound description around a finite set of matrices.

    Finds PSD V, W minimizing tr(V + W) with every block
    ``[[V, (Ak - A)'], [Ak - A, W]]`` PSD, then factors B B' = W and
    C'C = V so that every vertex deviation satisfies
    ``Ak - A in {B Delta C : ||Delta|| <= 1}``.  Returns (A, B, C).
    """
    verts = [_as_matrix(v, name=f"vertex{i}") for i, v in enumerate(vertices)]
    if not verts:
        raise ValueError("need at least one vertex")
    rows, cols = verts[0].shape
    for v in verts:
        if v.shape != (rows, cols):
            raise ValueError("vertices must share a common shape")
    A = np.mean(verts, axis=0) if A_center is None else _as_matrix(A_center, rows, cols)

    table = _VarTable()
    table.add_sym("V", cols)
    table.add_sym("W", rows)
    builder = _SdpBuilder(table)
    for vk in verts:
        dk = vk - A

        def block(v, dk=dk):
            return np.block([[v["V"], dk.T], [dk, v["W"]]])

        builder.add_psd(block)
    builder.set_objective(lambda v: float(np.trace(v["V"])) + float(np.trace(v["W"])))

    sol = _solve_or_raise(builder.build(), settings or ConeSettings(),
                          "hull-to-norm-bound conversion")
    v = table.unpack(sol.x)
    V = symmetrize(v["V"])
    W = symmetrize(v["W"])

    def _psd_factor_right(m):  # m = F'F with F = sqrt(lam) U'
        vals, vecs = sym_eig(m)
        root = np.sqrt(np.clip(vals, 0.0, None))
        return (vecs * root).T

    C = _psd_factor_right(V)          # V = C'C
    B = _psd_factor_right(W).T        # W = B B'
    return A, B, C
