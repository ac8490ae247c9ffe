"""
Semicircle-law reference quantities and Stieltjes-transform checks.

Everything here works on the W_n = M_n / sqrt(n) scale, where the limiting
spectral density is rho_sc(x) = sqrt(4 - x^2) / (2 pi) on [-2, 2].
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.optimize import brentq

from . import eigensolve
from .exceptions import ConfigurationError, ContractViolation, ResolventSolveUnstable

logger = logging.getLogger(__name__)

SOLVE_TOLERANCE = 1e-8
SELF_CONSISTENCY_TOLERANCE = 1e-12
QUANTILE_XTOL = 1e-14


@dataclass(frozen=True)
class Interval:
    """Half-open interval [a, b)."""
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ContractViolation(f'Interval endpoints must satisfy a < b, got [{self.a}, {self.b}).')

    @property
    def length(self) -> float:
        return self.b - self.a

    def count(self, values: np.ndarray) -> int:
        values = np.asarray(values)
        return int(np.count_nonzero((values >= self.a) & (values < self.b)))

    @classmethod
    def parse(cls, text: str) -> 'Interval':
        """Parse ``a,b``."""
        try:
            a, b = (float(part) for part in text.split(','))
        except ValueError as exc:
            raise ConfigurationError(f'Interval must be given as "a,b", got {text!r}.') from exc
        try:
            return cls(a, b)
        except ContractViolation as exc:
            raise ConfigurationError(exc.message) from exc

    def to_dict(self) -> Dict:
        return {'a': self.a, 'b': self.b}


@dataclass(frozen=True)
class StieltjesSample:
    z: complex
    s_n: complex
    s_sc: complex

    @property
    def deviation(self) -> float:
        return abs(self.s_n - self.s_sc)

    def as_row(self) -> Dict:
        return {
            're_z': self.z.real,
            'im_z': self.z.imag,
            're_sn': self.s_n.real,
            'im_sn': self.s_n.imag,
            're_s': self.s_sc.real,
            'im_s': self.s_sc.imag,
            'deviation': self.deviation,
        }


def _require_upper_half_plane(z: complex) -> complex:
    z = complex(z)
    if not z.imag > 0:
        raise ContractViolation(f'Stieltjes transforms need Im z > 0, got z = {z}.')
    return z


def rho_sc(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Semicircle density (1/2pi) sqrt(4 - x^2), zero outside [-2, 2]."""
    arr = np.asarray(x, dtype=np.float64)
    density = np.sqrt(np.clip(4.0 - arr * arr, 0.0, None)) / (2.0 * math.pi)
    return float(density) if density.ndim == 0 else density


def semicircle_antiderivative(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """(1/2pi)(x sqrt(4 - x^2)/2 + 2 arcsin(x/2)) with x clipped to [-2, 2]."""
    arr = np.clip(np.asarray(x, dtype=np.float64), -2.0, 2.0)
    value = (arr * np.sqrt(4.0 - arr * arr) / 2.0 + 2.0 * np.arcsin(arr / 2.0)) / (2.0 * math.pi)
    return float(value) if value.ndim == 0 else value


def semicircle_cdf(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    return semicircle_antiderivative(x) + 0.5


def semicircle_mass(interval: Interval) -> float:
    return float(semicircle_antiderivative(interval.b) - semicircle_antiderivative(interval.a))


def semicircle_quantile(p: float) -> float:
    """The point t in [-2, 2] with semicircle_cdf(t) = p."""
    if not 0.0 <= p <= 1.0:
        raise ContractViolation(f'Quantile level must lie in [0, 1], got {p}.')
    if p == 0.0:
        return -2.0
    if p == 1.0:
        return 2.0
    return float(brentq(lambda t: semicircle_cdf(t) - p, -2.0, 2.0, xtol=QUANTILE_XTOL))


def semicircle_quantiles(n: int) -> np.ndarray:
    """Semicircle quantiles at the levels (k - 1/2)/n, k = 1..n."""
    return np.array([semicircle_quantile((k - 0.5) / n) for k in range(1, n + 1)])


def stieltjes_empirical(eigenvalues: Sequence[float], z: complex) -> complex:
    """s_n(z) = (1/n) sum_i 1/(lambda_i - z)."""
    z = _require_upper_half_plane(z)
    values = np.asarray(eigenvalues, dtype=np.float64)
    return complex(np.mean(1.0 / (values - z)))


def self_consistency_residual(s: complex, z: complex) -> float:
    """|s + 1/(s + z)|; zero for the semicircle transform."""
    return abs(s + 1.0 / (s + z))


def stieltjes_sc(z: complex) -> complex:
    """
    Stieltjes transform of the semicircle law, (-z + sqrt(z^2 - 4))/2.

    The square root is taken as sqrt(z - 2) * sqrt(z + 2) with principal
    branches, which puts the cut on [-2, 2] and makes the root asymptotic to
    z at infinity. The other root of s^2 + z s + 1 = 0 is used only if the
    product ever lands on the wrong side of the real axis.
    """
    z = _require_upper_half_plane(z)
    root = np.sqrt(z - 2.0) * np.sqrt(z + 2.0)
    s = complex((-z + root) / 2.0)
    if s.imag <= 0:
        s = complex((-z - root) / 2.0)
    residual = self_consistency_residual(s, z)
    if residual > SELF_CONSISTENCY_TOLERANCE * max(1.0, abs(z)):
        logger.warning('semicircle transform at z=%s has self-consistency residual %.2e', z, residual)
    return s


def stieltjes_sample(eigenvalues: Sequence[float], z: complex) -> StieltjesSample:
    return StieltjesSample(z=complex(z), s_n=stieltjes_empirical(eigenvalues, z), s_sc=stieltjes_sc(z))


def parse_grid(text: str) -> List[complex]:
    """
    Parse ``re_min:re_max:steps,im_min:im_max:steps`` into grid points.

    Steps count points per axis, endpoints included.
    """
    try:
        re_part, im_part = text.split(',')
        re_min, re_max, re_steps = re_part.split(':')
        im_min, im_max, im_steps = im_part.split(':')
        re_axis = np.linspace(float(re_min), float(re_max), int(re_steps))
        im_axis = np.linspace(float(im_min), float(im_max), int(im_steps))
    except ValueError as exc:
        raise ConfigurationError(
            f'Grid must be given as "re_min:re_max:steps,im_min:im_max:steps", got {text!r}.'
        ) from exc
    if im_axis.size == 0 or im_axis.min() <= 0:
        raise ConfigurationError(f'Grid imaginary parts must be positive, got {text!r}.')
    return [complex(x, y) for y in im_axis for x in re_axis]


def stieltjes_scan(eigenvalues: Sequence[float], grid: Sequence[complex]) -> List[StieltjesSample]:
    return [stieltjes_sample(eigenvalues, z) for z in grid]


def esd_deviation(eigenvalues: Optional[Sequence[float]], interval: Interval,
                  tridiagonal: Optional['eigensolve.Tridiagonal'] = None) -> Tuple[int, float]:
    """
    N_I and |N_I - n * semicircle_mass(I)|.

    With a tridiagonal form the count comes from Sturm sequences instead of
    the eigenvalue list.
    """
    if tridiagonal is not None:
        n = tridiagonal.n
        count = eigensolve.count_in_interval(tridiagonal, interval)
    else:
        values = np.asarray(eigenvalues, dtype=np.float64)
        n = values.shape[0]
        count = interval.count(values)
    return count, abs(count - n * semicircle_mass(interval))


def _solve_shifted(minor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense LU solve with one step of iterative refinement."""
    factors = linalg.lu_factor(minor, check_finite=False)
    y = linalg.lu_solve(factors, rhs, check_finite=False)
    y = y + linalg.lu_solve(factors, rhs - minor @ y, check_finite=False)
    scale = np.linalg.norm(minor, np.inf) * np.linalg.norm(y, np.inf) + np.linalg.norm(rhs, np.inf)
    error = np.linalg.norm(rhs - minor @ y, np.inf) / scale if scale > 0 else 0.0
    if error > SOLVE_TOLERANCE:
        raise ResolventSolveUnstable(
            f'Shifted minor solve has relative residual {error:.2e}.',
            {'residual': float(error)},
        )
    return y


def schur_terms(W: np.ndarray, z: complex) -> np.ndarray:
    """
    Y_k = a_k* (W_k - zI)^{-1} a_k for every k.

    W_k is W with row and column k removed and a_k is column k of W with its
    k-th entry removed.
    """
    z = _require_upper_half_plane(z)
    W = eigensolve.as_array(W)
    n = W.shape[0]
    terms = np.zeros(n, dtype=np.complex128)
    if n == 1:
        return terms
    for k in range(n):
        keep = np.r_[0:k, k + 1:n]
        minor = W[np.ix_(keep, keep)].astype(np.complex128) - z * np.eye(n - 1)
        column = W[keep, k].astype(np.complex128)
        terms[k] = W[k, keep] @ _solve_shifted(minor, column)
    return terms


def schur_stieltjes(W: np.ndarray, z: complex, terms: Optional[np.ndarray] = None) -> complex:
    """(1/n) sum_k 1/(W_kk - z - Y_k)."""
    W = eigensolve.as_array(W)
    if terms is None:
        terms = schur_terms(W, z)
    return complex(np.mean(1.0 / (np.real(np.diagonal(W)) - z - terms)))


def schur_identity_residual(W: np.ndarray, z: complex) -> float:
    """
    |(1/n) sum_k 1/(W_kk - z - Y_k) - s_n(z)|.

    Raises:
        ResolventSolveUnstable: a shifted minor solve failed its residual check.
    """
    z = _require_upper_half_plane(z)
    W = eigensolve.as_array(W)
    s_n = stieltjes_empirical(eigensolve.eigenvalues(W), z)
    return abs(schur_stieltjes(W, z) - s_n)


def stieltjes_minor_gap(W: np.ndarray, z: complex) -> Tuple[float, float]:
    """
    |s_n(z) - (1 - 1/n) s_{n-1}(z)| for the minor without the last row and
    column, with the interlacing bound (pi + 1)/(n Im z).
    """
    z = _require_upper_half_plane(z)
    W = eigensolve.as_array(W)
    n = W.shape[0]
    if n < 2:
        raise ContractViolation('The minor comparison needs n >= 2.')
    full = eigensolve.eigenvalues(W)
    minor = eigensolve.eigenvalues(W[:n - 1, :n - 1])
    gap = abs(stieltjes_empirical(full, z) - (1.0 - 1.0 / n) * stieltjes_empirical(minor, z))
    return gap, (math.pi + 1.0) / (n * z.imag)
