"""
Dense linear algebra used across the package.
Householder QR, least squares with a ridge fallback, Pearson correlation and 2-component PCA.
All routines are pure functions of float64 numpy arrays.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import linalg as sla

from src.errors import (DegenerateCovarianceError, DimensionMismatchError, NonFiniteError,
                        RankDeficientError, ZeroVarianceError)

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-12
RIDGE_SCALE = 1e-10
RIDGE_REFINEMENTS = 2


@dataclass(frozen=True, eq=False)
class LeastSquaresSolution:
    """
    Minimiser of ||A w - b|| together with its residual norm.
    regularized is True when the ridge fallback produced the weights.
    """
    weights: np.ndarray
    residual_norm: float
    regularized: bool = False


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Mean, two orthonormal principal directions and their variances."""
    mean: np.ndarray
    components: np.ndarray  # shape (2, dim)
    explained_variance: np.ndarray  # shape (2,)

    @property
    def dimension(self) -> int:
        """Ambient dimension of the basis."""
        return self.mean.shape[0]


def as_matrix(data) -> np.ndarray:
    """
    Convert to a finite float64 matrix with at least one row and column.
    Args: data - anything numpy can turn into a 2-D array
    Returns: np.ndarray - validated matrix
    """
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise DimensionMismatchError(f"expected a non-empty 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteError("matrix contains NaN or Inf")
    return matrix


def qr_decompose(a) -> Tuple[np.ndarray, np.ndarray]:
    """
    Thin QR factorisation by Householder reflections.
    Args: a - matrix with rows >= cols
    Returns: (Q, R) - Q is rows x cols with orthonormal columns, R is cols x cols upper triangular
    Raises: RankDeficientError when some |R[k, k]| <= 1e-12 * ||A||_F (factors attached)
    """
    a = as_matrix(a)
    rows, cols = a.shape
    if rows < cols:
        raise DimensionMismatchError(f"QR needs rows >= cols, got {rows}x{cols}")

    r = a.copy()
    reflectors = []
    for k in range(cols):
        x = r[k:, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            reflectors.append(None)
            continue
        # sign chosen to avoid cancellation
        alpha = -np.copysign(norm_x, x[0])
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        reflectors.append(v)

    q = np.eye(rows, cols)
    for k in range(cols - 1, -1, -1):
        v = reflectors[k]
        if v is not None:
            q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    r = np.triu(r[:cols, :])

    threshold = RANK_TOLERANCE * np.linalg.norm(a)
    diagonal = np.abs(np.diag(r))
    weak = np.flatnonzero(diagonal <= threshold)
    if weak.size:
        raise RankDeficientError(int(weak[0]), q, r)
    return q, r


def _ridge_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Ridge normal equations followed by iterated Tikhonov refinement."""
    gram = a.T @ a
    lam = RIDGE_SCALE * float(np.sum(a * a))
    if lam == 0.0:
        return np.zeros((a.shape[1],) + b.shape[1:])
    system = gram + lam * np.eye(a.shape[1])
    weights = sla.solve(system, a.T @ b, assume_a="pos")
    for _ in range(RIDGE_REFINEMENTS):
        weights = weights + sla.solve(system, a.T @ (b - a @ weights), assume_a="pos")
    return weights


def solve_least_squares(a, b) -> LeastSquaresSolution:
    """
    Minimise ||A w - b||_2 via QR and back-substitution.
    Falls back to ridge regularisation when A is rank deficient.
    Args: a - matrix with rows >= cols; b - vector of length rows
    Returns: LeastSquaresSolution
    """
    a = as_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] != a.shape[0]:
        raise DimensionMismatchError(f"b has shape {b.shape}, expected ({a.shape[0]},)")
    if not np.all(np.isfinite(b)):
        raise NonFiniteError("right-hand side contains NaN or Inf")

    try:
        q, r = qr_decompose(a)
    except RankDeficientError as error:
        logger.warning("Rank deficiency at column %d of %dx%d system, using ridge fallback",
                       error.column, a.shape[0], a.shape[1])
        weights = _ridge_solve(a, b)
        regularized = True
    else:
        weights = sla.solve_triangular(r, q.T @ b, lower=False)
        regularized = False

    residual = float(np.linalg.norm(a @ weights - b))
    return LeastSquaresSolution(weights=weights, residual_norm=residual, regularized=regularized)


def solve_least_squares_many(a, b) -> np.ndarray:
    """
    Least-squares coefficients for several right-hand sides sharing one matrix.
    Args: a - matrix with rows >= cols; b - matrix of shape (rows, m)
    Returns: np.ndarray - (cols, m) coefficients, one column per right-hand side
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatchError(f"b has {b.shape[0]} rows, expected {a.shape[0]}")
    try:
        q, r = qr_decompose(a)
    except RankDeficientError as error:
        logger.debug("Rank deficiency at column %d, ridge fallback for %d right-hand sides",
                     error.column, b.shape[1])
        return _ridge_solve(a, b)
    return sla.solve_triangular(r, q.T @ b, lower=False)


def pearson_correlation_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """
    Pairwise Pearson correlation of equally long vectors.
    Args: vectors - at least two vectors of length >= 2
    Returns: np.ndarray - symmetric matrix with unit diagonal, entries in [-1, 1]
    """
    data = np.asarray([np.ravel(v) for v in vectors], dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
        raise DimensionMismatchError("need at least two vectors of length >= 2")
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("correlation input contains NaN or Inf")

    centred = data - data.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centred, axis=1)
    for index, norm in enumerate(norms):
        if norm == 0.0:
            raise ZeroVarianceError(index)
    unit = centred / norms[:, None]
    corr = unit @ unit.T
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def pca_fit(points: Sequence[np.ndarray]) -> PcaBasis:
    """
    Fit the top two principal directions of a point cloud.
    Args: points - at least three points of dimension >= 2
    Returns: PcaBasis - components sign-fixed so their largest-magnitude entry is positive
    """
    data = as_matrix(np.asarray([np.ravel(p) for p in points], dtype=np.float64))
    count, dim = data.shape
    if count < 3 or dim < 2:
        raise DimensionMismatchError(f"PCA needs >= 3 points of dimension >= 2, got {count}x{dim}")

    mean = data.mean(axis=0)
    centred = data - mean
    if not np.any(centred):
        raise DegenerateCovarianceError("all points are identical")
    covariance = centred.T @ centred / (count - 1)
    eigenvalues, eigenvectors = sla.eigh(covariance)

    order = np.argsort(eigenvalues)[::-1][:2]
    components = eigenvectors[:, order].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    variance = np.clip(eigenvalues[order], 0.0, None)
    return PcaBasis(mean=mean, components=components, explained_variance=variance)


def pca_project(basis: PcaBasis, point) -> Tuple[float, float]:
    """
    Project a point onto the two principal directions.
    Args: basis - fitted PcaBasis; point - vector of the basis dimension
    Returns: (pc1, pc2) coordinates
    """
    point = np.ravel(np.asarray(point, dtype=np.float64))
    if point.shape[0] != basis.dimension:
        raise DimensionMismatchError(f"point has dimension {point.shape[0]}, basis {basis.dimension}")
    offset = point - basis.mean
    return float(offset @ basis.components[0]), float(offset @ basis.components[1])
