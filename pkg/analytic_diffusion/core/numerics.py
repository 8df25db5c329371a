"""
Dense linear-algebra helpers for the spectral and denoising modules.

Matrices are plain float64 numpy arrays. Softmax and log-sum-exp come from
scipy.special; the symmetric eigensolver is LAPACK's via scipy.linalg.eigh.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from analytic_diffusion.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

# Negative eigenvalues above this are rounding noise of a PSD matrix.
EIGEN_CLAMP = 1e-10


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvectors as orthonormal columns, eigenvalues sorted descending."""

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


def freeze(array: np.ndarray) -> np.ndarray:
    """Return a read-only view so shared arrays cannot be mutated."""
    view = np.asarray(array).view()
    view.flags.writeable = False
    return view


def stable_softmax(logits) -> np.ndarray:
    """Softmax with -inf entries treated as excluded.

    Raises:
        NumericalError: if every logit is -inf or any logit is NaN/+inf.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any() or np.isposinf(logits).any():
        raise NumericalError("softmax logits must be finite or -inf")
    if logits.size == 0 or np.isneginf(logits).all():
        raise NumericalError("empty support")
    return special.softmax(logits)


def log_sum_exp(logits) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or np.isneginf(logits).all():
        raise NumericalError("empty support")
    return float(special.logsumexp(logits))


def sym_eigen(m, check_psd: bool = False) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix.

    The input is symmetrized as (m + m^T) / 2 first. With ``check_psd`` the
    matrix is treated as positive semi-definite: eigenvalues in
    [-1e-10, 0) are clamped to zero and anything lower is an error.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"sym_eigen needs a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NumericalError("sym_eigen input has non-finite entries")

    sym = 0.5 * (m + m.T)
    values, vectors = linalg.eigh(sym)
    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = vectors[:, order]

    if check_psd:
        if values.size and values[-1] < -EIGEN_CLAMP * max(1.0, abs(values[0])):
            raise NumericalError(
                f"matrix is not positive semi-definite (eigenvalue {values[-1]:.3e})"
            )
        values = np.clip(values, 0.0, None)

    return EigenDecomposition(eigenvectors=vectors, eigenvalues=values)


def row_space_projection(a) -> np.ndarray:
    """Orthogonal projector onto the row space of ``a``: A^T (A A^T)^+ A."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if not np.any(a):
        return np.zeros((a.shape[1], a.shape[1]))
    p = np.linalg.pinv(a) @ a
    return 0.5 * (p + p.T)


def orthonormal_completion(basis: np.ndarray, total: int, seed: int = 0) -> np.ndarray:
    """Extend orthonormal columns ``basis`` (d x k) to ``total`` columns.

    Used when zero-variance directions have no data to define them; any
    orthonormal completion spans the same (irrelevant) subspace.
    """
    d, k = basis.shape
    if total <= k:
        return basis[:, :total]
    rng = np.random.Generator(np.random.Philox(seed))
    filler = rng.standard_normal((d, total - k))
    filler -= basis @ (basis.T @ filler)
    q, _ = np.linalg.qr(np.hstack([basis, filler]))
    # QR may flip signs of the leading columns; keep the given basis verbatim.
    q[:, :k] = basis
    return q


def require_finite(array: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(array).all():
        raise NumericalError(f"non-finite values detected in {what}")
    return array
