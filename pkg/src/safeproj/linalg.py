"""Dense symmetric linear-algebra kernels shared by the numeric modules.

Everything operates on plain float64 numpy arrays.  The three kernels
(`sym_eig`, `psd_project`, `solve_linear`) verify their own contracts and
raise :class:`LinAlgFailure` when a result cannot be certified, so callers
never have to second-guess a silently bad decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class LinAlgFailure(RuntimeError):
    """An eigendecomposition or linear solve failed its accuracy contract."""


@dataclass(frozen=True)
class Tolerances:
    """Absolute-plus-relative tolerances used by the kernels."""

    symmetry: float = 1e-8
    eig_reconstruct: float = 1e-10
    solve_residual: float = 1e-9


DEFAULT_TOLS = Tolerances()


class SymEig(NamedTuple):
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are ascending; ``eigenvectors`` has orthonormal columns
    so that ``eigenvectors @ diag(eigenvalues) @ eigenvectors.T``
    reconstructs the input.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def symmetrize(m) -> np.ndarray:
    """Return the symmetric matrix obtained by mirroring the lower triangle."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    lower = np.tril(m)
    return lower + np.tril(m, -1).T


def _require_symmetric(m, tols: Tolerances) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    skew = np.abs(m - m.T).max(initial=0.0)
    if skew > tols.symmetry * (1.0 + np.abs(m).max(initial=0.0)):
        raise ValueError(f"matrix is not symmetric (max asymmetry {skew:.3e})")
    # Work on an exactly symmetric copy so downstream results are stable.
    return 0.5 * (m + m.T)


def sym_eig(m, tols: Tolerances = DEFAULT_TOLS) -> SymEig:
    """Eigendecomposition of a symmetric matrix with verified reconstruction.

    Raises
    ------
    LinAlgFailure
        If the decomposition does not converge or the reconstruction error
        exceeds ``tols.eig_reconstruct * max(1, ||m||_F)``.
    """
    m = _require_symmetric(m, tols)
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise LinAlgFailure(f"symmetric eigendecomposition failed: {exc}") from exc
    recon = (vecs * vals) @ vecs.T
    scale = max(1.0, float(np.linalg.norm(m)))
    err = float(np.linalg.norm(recon - m))
    if err > tols.eig_reconstruct * scale:
        raise LinAlgFailure(
            f"eigendecomposition reconstruction error {err:.3e} exceeds "
            f"{tols.eig_reconstruct:.1e} * {scale:.3e}"
        )
    return SymEig(vals, vecs)


def psd_project(m, tols: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Frobenius-nearest positive-semidefinite matrix to a symmetric input.

    Negative eigenvalues are clipped to zero while keeping the eigenvectors.
    """
    vals, vecs = sym_eig(m, tols)
    clipped = np.clip(vals, 0.0, None)
    out = (vecs * clipped) @ vecs.T
    return 0.5 * (out + out.T)


def solve_linear(a, b, tols: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Solve ``a @ x = b`` for a nonsingular square matrix.

    The result is residual-checked: ``||a x - b|| <= tol*(||a|| ||x|| + ||b||)``.
    A matrix that is singular within tolerance raises :class:`LinAlgFailure`.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise LinAlgFailure(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise LinAlgFailure("linear solve produced non-finite entries")
    resid = float(np.linalg.norm(a @ x - b))
    bound = tols.solve_residual * (
        float(np.linalg.norm(a)) * float(np.linalg.norm(x)) + float(np.linalg.norm(b))
    )
    if resid > max(bound, tols.solve_residual):
        raise LinAlgFailure(
            f"linear solve residual {resid:.3e} exceeds tolerance {bound:.3e}; "
            "matrix is singular or severely ill-conditioned"
        )
    return x


def inv_psd(m, tols: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix, symmetrized."""
    m = _require_symmetric(m, tols)
    out = solve_linear(m, np.eye(m.shape[0]), tols)
    return 0.5 * (out + out.T)


def sqrt_psd(m, tols: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Symmetric square root of a positive-semidefinite matrix.

    Eigenvalues below zero (numerical noise) are clipped before the root.
    """
    vals, vecs = sym_eig(m, tols)
    root = np.sqrt(np.clip(vals, 0.0, None))
    out = (vecs * root) @ vecs.T
    return 0.5 * (out + out.T)
