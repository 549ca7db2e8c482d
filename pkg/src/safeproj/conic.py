"""First-order operator-splitting solver for cone programs.

Programs are given in the standard conic form

    minimize    c' x
    subject to  A x + s = b,    s in K,

where K is a Cartesian product of zero, nonnegative, second-order and
positive-semidefinite cone blocks.  The dual problem is

    maximize   -b' y
    subject to  A' y + c = 0,   y in K*.

The solver runs ADMM / Douglas-Rachford splitting on the homogeneous
self-dual embedding of the primal-dual pair, so it returns either a
solution with small KKT residuals, a certificate of primal or dual
infeasibility, or an iteration-cap status.  Iterations are deterministic:
the same program and settings reproduce the same iterate sequence bit for
bit.

PSD blocks use the scaled lower-triangular vectorization (off-diagonal
entries multiplied by sqrt(2)) so that Euclidean inner products of
vectorized matrices equal Frobenius inner products, which keeps the cone
projection an ordinary Euclidean projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .linalg import psd_project

CONE_KINDS = ("zero", "nonneg", "soc", "psd")

_SQRT2 = float(np.sqrt(2.0))


def svec(m: np.ndarray) -> np.ndarray:
    """Scaled lower-triangular vectorization of a symmetric matrix.

    Column-major over the lower triangle; off-diagonal entries are scaled
    by sqrt(2) so that ``svec(a) @ svec(b) == trace(a @ b)``.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    rows, cols = np.tril_indices(n)
    # np.tril_indices is row-major over the triangle; reorder column-major.
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    out = m[rows, cols].copy()
    out[rows != cols] *= _SQRT2
    return out


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`svec` for a matrix of side ``n``."""
    v = np.asarray(v, dtype=float)
    if v.size != n * (n + 1) // 2:
        raise ValueError(f"svec length {v.size} does not match side {n}")
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    m = np.zeros((n, n))
    vals = v.copy()
    off = rows != cols
    vals[off] /= _SQRT2
    m[rows, cols] = vals
    m[cols, rows] = vals
    return m


def _psd_len(side: int) -> int:
    return side * (side + 1) // 2


@dataclass(frozen=True)
class ConeSpec:
    """Ordered cone blocks ``(kind, dim)``.

    For ``zero``/``nonneg``/``soc`` blocks, ``dim`` is the block length in
    the slack vector (an soc block of length d is ``(w, t)`` with ``w`` of
    length d-1 and the cone ``||w|| <= t``, t stored last).  For ``psd``
    blocks, ``dim`` is the matrix side n and the block occupies
    n(n+1)/2 slack entries.
    """

    blocks: tuple[tuple[str, int], ...]

    def __post_init__(self):
        for kind, dim in self.blocks:
            if kind not in CONE_KINDS:
                raise ValueError(f"unknown cone kind {kind!r}")
            if dim < 1:
                raise ValueError(f"cone block dimension must be >= 1, got {dim}")

    @property
    def dim(self) -> int:
        """Total slack dimension."""
        total = 0
        for kind, d in self.blocks:
            total += _psd_len(d) if kind == "psd" else d
        return total

    def slices(self) -> list[tuple[str, int, slice]]:
        """List of ``(kind, dim, slice)`` into the slack vector."""
        out = []
        at = 0
        for kind, d in self.blocks:
            length = _psd_len(d) if kind == "psd" else d
            out.append((kind, d, slice(at, at + length)))
            at += length
        return out


def soc_block_projection(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``(w, t)`` (t last) onto ``||w|| <= t``."""
    w, t = v[:-1], v[-1]
    r = float(np.linalg.norm(w))
    if r <= t:
        return v.copy()
    if r <= -t:
        return np.zeros_like(v)
    beta = 0.5 * (r + t)
    out = np.empty_like(v)
    out[:-1] = (beta / r) * w
    out[-1] = beta
    return out


def project_onto_cones(v: np.ndarray, cones: ConeSpec) -> np.ndarray:
    """Blockwise Euclidean projection of ``v`` onto K."""
    v = np.asarray(v, dtype=float)
    if v.size != cones.dim:
        raise ValueError(f"vector length {v.size} != cone dimension {cones.dim}")
    out = v.copy()
    for kind, d, sl in cones.slices():
        if kind == "zero":
            out[sl] = 0.0
        elif kind == "nonneg":
            out[sl] = np.maximum(out[sl], 0.0)
        elif kind == "soc":
            out[sl] = soc_block_projection(out[sl])
        else:  # psd
            out[sl] = svec(psd_project(smat(out[sl], d)))
    return out


def _project_dual(v: np.ndarray, cones: ConeSpec) -> np.ndarray:
    # K* projection: the zero cone's dual is the free cone; the other
    # three blocks are self-dual.
    out = v.copy()
    for kind, d, sl in cones.slices():
        if kind == "zero":
            continue
        elif kind == "nonneg":
            out[sl] = np.maximum(out[sl], 0.0)
        elif kind == "soc":
            out[sl] = soc_block_projection(out[sl])
        else:
            out[sl] = svec(psd_project(smat(out[sl], d)))
    return out


@dataclass
class ConeProgram:
    """``minimize c'x  s.t.  A x + s = b, s in K``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        m, n = self.A.shape
        if self.c.size != n:
            raise ValueError(f"c has length {self.c.size}, expected {n}")
        if self.b.size != m:
            raise ValueError(f"b has length {self.b.size}, expected {m}")
        if self.cones.dim != m:
            raise ValueError(
                f"cone dimension {self.cones.dim} does not match A rows {m}"
            )
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.c))):
            raise ValueError("program data must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def dump(self) -> str:
        """Plain-text dump for external cross-checking.

        Format: a header line ``conic-program v1``, a dimension line
        ``n <n> m <m>``, a ``cones:`` line of ``kind dim`` pairs, then
        ``c:``/``b:`` lines and one ``A:`` line per row, all entries in
        repr precision.
        """
        lines = ["conic-program v1"]
        m, n = self.A.shape
        lines.append(f"n {n} m {m}")
        lines.append("cones: " + " ".join(f"{k} {d}" for k, d in self.cones.blocks))
        lines.append("c: " + " ".join(repr(float(v)) for v in self.c))
        lines.append("b: " + " ".join(repr(float(v)) for v in self.b))
        for row in self.A:
            lines.append("A: " + " ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @staticmethod
    def loads(text: str) -> "ConeProgram":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if lines[0].strip() != "conic-program v1":
            raise ValueError("not a conic-program v1 dump")
        _, n_s, _, m_s = lines[1].split()
        n, m = int(n_s), int(m_s)
        cone_tokens = lines[2].split(":", 1)[1].split()
        blocks = tuple(
            (cone_tokens[i], int(cone_tokens[i + 1]))
            for i in range(0, len(cone_tokens), 2)
        )
        c = np.array([float(v) for v in lines[3].split(":", 1)[1].split()])
        b = np.array([float(v) for v in lines[4].split(":", 1)[1].split()])
        rows = [
            np.array([float(v) for v in ln.split(":", 1)[1].split()])
            for ln in lines[5:5 + m]
        ]
        return ConeProgram(c, np.vstack(rows).reshape(m, n), b, ConeSpec(blocks))


@dataclass(frozen=True)
class ConeSettings:
    eps: float = 1e-7
    max_iters: int = 100_000
    check_every: int = 25
    over_relaxation: float = 1.5
    restart_period: int = 1000
    ruiz_passes: int = 3


@dataclass
class ConeSolution:
    status: str  # "optimal" | "infeasible-detected" | "iteration-cap"
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    detail: str = ""


def _ruiz_equilibrate(A, b, c, cones: ConeSpec, passes: int):
    """Ruiz row/column scaling of A, uniform within soc/psd blocks, plus
    the usual scalar normalization of b and c to unit-ish norm."""
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    As = A.copy()
    slices = cones.slices()
    for _ in range(passes):
        rnorm = np.max(np.abs(As), axis=1)
        # Uniform scale across each soc/psd block keeps the cone invariant.
        for kind, _, sl in slices:
            if kind in ("soc", "psd"):
                rnorm[sl] = np.max(rnorm[sl], initial=0.0)
        rnorm[rnorm < 1e-12] = 1.0
        cnorm = np.max(np.abs(As), axis=0)
        cnorm[cnorm < 1e-12] = 1.0
        dr = 1.0 / np.sqrt(rnorm)
        dc = 1.0 / np.sqrt(cnorm)
        As = (As * dc[None, :]) * dr[:, None]
        d *= dr
        e *= dc
    sigma = 1.0 / max(float(np.linalg.norm(d * b)), 1e-9)
    rho = 1.0 / max(float(np.linalg.norm(e * c)), 1e-9)
    return As, sigma * d * b, rho * e * c, d, e, sigma, rho


class _HsdeWorkspace:
    """Factorized linear system for the splitting step.

    Solves ``(I + Q) u~ = w`` with the skew matrix
    ``Q = [[0, A', c], [-A, 0, b], [-c', -b', 0]]`` by block elimination:
    only an n-by-n system ``(I + A'A)`` is ever factorized, so the cost
    per iteration is two A-matvecs even when m >> n.
    """

    def __init__(self, A, b, c):
        self.A = A
        self.b = b
        self.c = c
        n = A.shape[1]
        gram = A.T @ A
        self.minv = np.linalg.inv(np.eye(n) + gram)
        self.qx, self.qy = self._solve_m(c, b)
        self.denom = 1.0 + float(c @ self.qx) + float(b @ self.qy)

    def _solve_m(self, r1, r2):
        x = self.minv @ (r1 - self.A.T @ r2)
        y = r2 + self.A @ x
        return x, y

    def apply_inv(self, w, n, m):
        rx, ry, rtau = w[:n], w[n:n + m], w[-1]
        px, py = self._solve_m(rx, ry)
        tau = (rtau + float(self.c @ px) + float(self.b @ py)) / self.denom
        return np.concatenate([px - tau * self.qx, py - tau * self.qy, [tau]])


def solve_cone_program(
    program: ConeProgram, settings: ConeSettings | None = None
) -> ConeSolution:
    """Solve a cone program via operator splitting on the self-dual embedding.

    Returns status ``optimal`` when the unscaled KKT residuals (primal
    feasibility, dual feasibility, duality gap, each relatively scaled)
    are all below ``settings.eps``; ``infeasible-detected`` with a
    certificate description in ``detail``; or ``iteration-cap`` with the
    best candidate found.
    """
    st = settings or ConeSettings()
    A0, b0, c0 = program.A, program.b, program.c
    cones = program.cones
    m, n = A0.shape

    A, b, c, dscale, escale, sigma, rho = _ruiz_equilibrate(
        A0, b0, c0, cones, st.ruiz_passes
    )
    ws = _HsdeWorkspace(A, b, c)

    u = np.zeros(n + m + 1)
    v = np.zeros(n + m + 1)
    u[-1] = 1.0
    v[-1] = 1.0

    alpha = st.over_relaxation
    bnorm = max(1.0, float(np.linalg.norm(b0)))
    cnorm = max(1.0, float(np.linalg.norm(c0)))

    best_metric = np.inf
    best_candidate = None
    restarts = 0

    def _candidate(u, v):
        """Unscaled candidate (x, y, s) and residuals; None if tau ~ 0."""
        tau = u[-1]
        if tau <= 1e-12:
            return None
        x = escale * u[:n] / (sigma * tau)
        y = dscale * u[n:n + m] / (rho * tau)
        s = (v[n:n + m] / dscale) / (sigma * tau)
        pres = float(np.linalg.norm(A0 @ x + s - b0)) / bnorm
        dres = float(np.linalg.norm(A0.T @ y + c0)) / cnorm
        pobj = float(c0 @ x)
        dobj = -float(b0 @ y)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return x, y, s, pres, dres, gap, pobj, dobj

    def _infeas_metrics(u, v):
        # Certificate residuals, each valid regardless of tau.
        y = dscale * u[n:n + m] / rho
        x = escale * u[:n] / sigma
        s = v[n:n + m] / dscale / sigma
        pm = np.inf
        by = float(b0 @ y)
        if by < -1e-12:
            pm = float(np.linalg.norm(A0.T @ y)) * bnorm / (-by)
        dm = np.inf
        cx = float(c0 @ x)
        if cx < -1e-12:
            dm = float(np.linalg.norm(A0 @ x + s)) * cnorm / (-cx)
        return pm, dm, y, x, s

    k = 0
    while k < st.max_iters:
        utild = ws.apply_inv(u + v, n, m)
        t = alpha * utild + (1.0 - alpha) * u
        arg = t - v
        unew = np.empty_like(u)
        unew[:n] = arg[:n]
        unew[n:n + m] = _project_dual(arg[n:n + m], cones)
        unew[-1] = max(arg[-1], 0.0)
        v = v - t + unew
        u = unew
        k += 1

        if k % st.check_every == 0 or k == st.max_iters:
            cand = _candidate(u, v)
            pinf_m, dinf_m, y_cert, x_cert, s_cert = _infeas_metrics(u, v)
            metric = min(pinf_m, dinf_m)
            if cand is not None:
                x, y, s, pres, dres, gap, pobj, dobj = cand
                opt_metric = max(pres, dres, gap)
                metric = min(metric, opt_metric)
                if opt_metric <= st.eps:
                    return ConeSolution(
                        "optimal", x, y, s, pobj, dobj, pres, dres, gap, k
                    )
            if pinf_m <= st.eps:
                ynorm = float(np.linalg.norm(y_cert))
                return ConeSolution(
                    "infeasible-detected",
                    np.full(n, np.nan), y_cert / max(ynorm, 1e-12),
                    np.full(m, np.nan), np.nan, np.nan,
                    np.nan, np.nan, np.nan, k,
                    detail="primal-infeasible (dual improving ray)",
                )
            if dinf_m <= st.eps:
                xnorm = float(np.linalg.norm(x_cert))
                return ConeSolution(
                    "infeasible-detected",
                    x_cert / max(xnorm, 1e-12), np.full(m, np.nan),
                    s_cert / max(xnorm, 1e-12), np.nan, np.nan,
                    np.nan, np.nan, np.nan, k,
                    detail="dual-infeasible (primal improving ray)",
                )
            if metric < best_metric:
                best_metric = metric
                best_candidate = cand
            if st.restart_period and k % st.restart_period == 0:
                if metric > best_metric and alpha > 1.0 + 1e-6:
                    # Stalled or oscillating: damp the over-relaxation
                    # toward plain splitting.  The state is never rewound
                    # (a deterministic rewind of a deterministic map can
                    # lock into a cycle).
                    alpha = 1.0 + 0.5 * (alpha - 1.0)
                    restarts += 1

    cand = best_candidate or _candidate(u, v)
    if cand is not None:
        x, y, s, pres, dres, gap, pobj, dobj = cand
        return ConeSolution(
            "iteration-cap", x, y, s, pobj, dobj, pres, dres, gap, k,
            detail=f"restarts={restarts}",
        )
    return ConeSolution(
        "iteration-cap", np.full(n, np.nan), np.full(m, np.nan),
        np.full(m, np.nan), np.nan, np.nan, np.nan, np.nan, np.nan, k,
        detail="no primal candidate (tau ~ 0)",
    )
