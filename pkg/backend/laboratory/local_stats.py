"""
Per-matrix local spectral statistics.

Minor convention: wherever a minor is taken it is the top-left one, i.e. the
LAST row and column are removed, and X denotes the last column with its last
entry dropped. Eigenvalue indices are 1-based.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import eigensolve
from .eigensolve import SpectralDecomposition
from .exceptions import ContractViolation, EigenvalueCollision, IdentityDegenerate
from .spectral import semicircle_quantile

logger = logging.getLogger(__name__)

INTERLACING_TOLERANCE = 1e-9
DEGENERATE_PROJECTION = 1e-13
COLLISION_SPACING = 1e-12

SIDE_TOP = 'top'
SIDE_BOTTOM = 'bottom'
SIDES = (SIDE_TOP, SIDE_BOTTOM)

SCALE_W = 'W'
SCALE_A = 'A'


@dataclass(frozen=True, eq=False)
class InterlacingReport:
    """
    Cauchy interlacing of W_n against its top-left (n-1)-minor.

    ``upper_distances[i]`` is lambda_{i+1}(W_n) - lambda_i(W_{n-1}) and
    ``lower_distances[i]`` is lambda_i(W_{n-1}) - lambda_i(W_n), both 0-based
    arrays of length n - 1. The bias pairs compare the distance from the
    extreme eigenvalue to the nearest minor eigenvalue with the distance to
    its own neighbour, at the top and the bottom of the spectrum.
    """
    n: int
    holds: bool
    max_violation: float
    upper_distances: np.ndarray
    lower_distances: np.ndarray
    top_bias: Tuple[float, float]
    bottom_bias: Tuple[float, float]

    def to_dict(self) -> Dict:
        return {
            'n': self.n,
            'holds': self.holds,
            'max_violation': self.max_violation,
            'upper_distances': self.upper_distances.tolist(),
            'lower_distances': self.lower_distances.tolist(),
            'top_bias': list(self.top_bias),
            'bottom_bias': list(self.bottom_bias),
        }


@dataclass(frozen=True, eq=False)
class EdgeStatistic:
    k: int
    values: np.ndarray
    side: str = SIDE_TOP

    def to_dict(self) -> Dict:
        return {'k': self.k, 'side': self.side, 'values': self.values.tolist()}


def _sorted(eigenvalues: Sequence[float]) -> np.ndarray:
    values = np.asarray(eigenvalues, dtype=np.float64)
    if values.size > 1 and np.any(np.diff(values) < 0):
        raise ContractViolation('Eigenvalues must be sorted ascending.')
    return values


def delocalization_sup(decomp: SpectralDecomposition) -> float:
    """max_{i,j} |(u_i)_j|."""
    return float(np.max(np.abs(decomp.eigenvectors)))


def gaps(eigenvalues: Sequence[float], scale: str = SCALE_W) -> np.ndarray:
    """
    Consecutive differences lambda_{i+1} - lambda_i.

    On the A scale (A_n = n W_n) every gap is multiplied by n.
    """
    values = _sorted(eigenvalues)
    diffs = np.diff(values)
    if scale == SCALE_A:
        return diffs * values.shape[0]
    if scale != SCALE_W:
        raise ContractViolation(f'Unknown gap scale {scale!r}; expected W or A.')
    return diffs


def gap_at(eigenvalues: Sequence[float], i: int, scale: str = SCALE_W) -> float:
    """
    Gap at 1-based index i: lambda_{i+1} - lambda_i, or lambda_n - lambda_{n-1}
    when i = n.
    """
    all_gaps = gaps(eigenvalues, scale)
    n = all_gaps.shape[0] + 1
    if not 1 <= i <= n or n < 2:
        raise ContractViolation(f'Gap index {i} out of range 1..{n}.')
    return float(all_gaps[min(i, n - 1) - 1])


def interlacing_check(W: np.ndarray) -> InterlacingReport:
    W = eigensolve.as_array(W)
    n = W.shape[0]
    if n < 2:
        raise ContractViolation('Interlacing needs n >= 2.')
    full = eigensolve.eigenvalues(W)
    minor = eigensolve.eigenvalues(W[:n - 1, :n - 1])
    upper = full[1:] - minor
    lower = minor - full[:-1]
    violation = max(0.0, -float(upper.min()), -float(lower.min()))
    scale = max(1.0, float(np.max(np.abs(full))))
    return InterlacingReport(
        n=n,
        holds=violation <= INTERLACING_TOLERANCE * scale,
        max_violation=violation,
        upper_distances=upper,
        lower_distances=lower,
        top_bias=(float(full[-1] - minor[-1]), float(full[-1] - full[-2])),
        bottom_bias=(float(minor[0] - full[0]), float(full[1] - full[0])),
    )


def _minor_parts(H: np.ndarray) -> Tuple[SpectralDecomposition, np.ndarray]:
    n = H.shape[0]
    if n < 2:
        raise ContractViolation('A minor needs n >= 2.')
    return eigensolve.eigen_full(H[:n - 1, :n - 1]), H[:n - 1, n - 1]


def interlacing_identity_residual(W: np.ndarray, i: Optional[int] = None) -> float:
    """
    Residual of sum_j |u_j(W_{n-1})* X|^2 / (lambda_j(W_{n-1}) - lambda_i(W_n))
    = W_nn - lambda_i(W_n), evaluated at i = n unless another index is given.

    Raises:
        IdentityDegenerate: some projection |u_j* X| is below 1e-13, which
            happens for discrete atoms.
    """
    W = eigensolve.as_array(W)
    n = W.shape[0]
    minor, X = _minor_parts(W)
    i = n if i is None else i
    lam = eigensolve.eigenvalues(W)[i - 1]
    proj = np.abs(minor.eigenvectors.conj().T @ X)
    if proj.min() < DEGENERATE_PROJECTION:
        j = int(np.argmin(proj))
        raise IdentityDegenerate(
            f'Projection of X on minor eigenvector {j + 1} vanishes ({proj[j]:.2e}).',
            {'index': j + 1, 'projection': float(proj[j])},
        )
    lhs = np.sum(proj ** 2 / (minor.eigenvalues - lam))
    rhs = float(np.real(W[n - 1, n - 1])) - lam
    return float(abs(lhs - rhs))


def first_coordinate_residual(H: np.ndarray, i: int) -> float:
    """
    Residual of |x|^2 = 1 / (1 + sum_j |u_j(H_{n-1})* X|^2 / (lambda_j(H_{n-1}) - lambda_i(H))^2)
    where x is the last coordinate of u_i(H). Works on any scale.

    Raises:
        EigenvalueCollision: lambda_i(H) is within 1e-12 of a minor eigenvalue.
    """
    H = eigensolve.as_array(H)
    n = H.shape[0]
    if not 1 <= i <= n:
        raise ContractViolation(f'Eigenvalue index {i} out of range 1..{n}.')
    full = eigensolve.eigen_full(H)
    minor, X = _minor_parts(H)
    lam = full.eigenvalues[i - 1]
    spacing = np.abs(minor.eigenvalues - lam)
    if spacing.min() <= COLLISION_SPACING:
        j = int(np.argmin(spacing))
        raise EigenvalueCollision(
            f'lambda_{i} = {lam:.6g} collides with minor eigenvalue {j + 1}.',
            {'index': i, 'minor_index': j + 1, 'spacing': float(spacing[j])},
        )
    direct = abs(full.vector(i)[n - 1]) ** 2
    proj = np.abs(minor.eigenvectors.conj().T @ X) ** 2
    formula = 1.0 / (1.0 + np.sum(proj / spacing ** 2))
    return float(abs(direct - formula))


def _index_array(index_set: Iterable[int], limit: int) -> np.ndarray:
    indices = np.array(sorted(set(int(k) for k in index_set)), dtype=np.int64)
    if indices.size and (indices[0] < 1 or indices[-1] > limit):
        raise ContractViolation(f'Projection indices must lie in 1..{limit}.')
    return indices


def projection_statistic(decomp: SpectralDecomposition, X: np.ndarray,
                         index_set: Iterable[int]) -> Tuple[float, float]:
    """
    ||pi_H X|| and ||pi_H X|| - sqrt(d) for H spanned by the selected minor
    eigenvectors (d of them). X should have unit-variance entries.
    """
    indices = _index_array(index_set, decomp.n)
    if indices.size == 0:
        return 0.0, 0.0
    basis = decomp.eigenvectors[:, indices - 1]
    norm = float(np.linalg.norm(basis.conj().T @ np.asarray(X)))
    return norm, norm - math.sqrt(indices.size)


def minor_projection(M: np.ndarray, index_set: Iterable[int]) -> Tuple[float, float]:
    """projection_statistic for the minor of an M-scale matrix and its last column."""
    M = eigensolve.as_array(M)
    minor, X = _minor_parts(M)
    return projection_statistic(minor, X, index_set)


def edge_rescale(eigenvalues: Sequence[float], k: int, side: str = SIDE_TOP) -> EdgeStatistic:
    """
    (lambda_{n-j}(W_n) - 2) n^{2/3} for j = 0..k-1 on the top side;
    (-2 - lambda_{j+1}(W_n)) n^{2/3} on the bottom side.
    """
    values = _sorted(eigenvalues)
    n = values.shape[0]
    if not 1 <= k <= n:
        raise ContractViolation(f'Edge count k must lie in 1..{n}, got {k}.')
    factor = n ** (2.0 / 3.0)
    if side == SIDE_TOP:
        rescaled = (values[::-1][:k] - 2.0) * factor
    elif side == SIDE_BOTTOM:
        rescaled = (-2.0 - values[:k]) * factor
    else:
        raise ContractViolation(f'Unknown edge side {side!r}.')
    return EdgeStatistic(k=k, values=rescaled, side=side)


def edge_rescale_index(eigenvalues: Sequence[float], i: int) -> float:
    """
    (lambda_i - t_i) n^{2/3} min(i, n - i)^{1/3}, where t_i is the classical
    location with semicircle mass i/n to its left. min(i, n - i) is floored
    at 1 so i = n reduces to the top-edge rescaling.
    """
    values = _sorted(eigenvalues)
    n = values.shape[0]
    if not 1 <= i <= n:
        raise ContractViolation(f'Eigenvalue index {i} out of range 1..{n}.')
    location = semicircle_quantile(i / n)
    depth = max(1, min(i, n - i))
    return float((values[i - 1] - location) * n ** (2.0 / 3.0) * depth ** (1.0 / 3.0))
