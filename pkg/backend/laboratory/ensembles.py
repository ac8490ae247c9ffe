"""
Atom distributions and Wigner-type Hermitian ensembles.

An ensemble is described by the law of the off-diagonal entries zeta_ij
(i < j, mean zero, variance one), the law of the diagonal entries zeta_ii
(mean zero, variance c) and a truncation policy enforcing |zeta_ij| <= K.
Sampling is a pure function of (spec, n, seed).

Random streams: row i of a matrix draws from its own Philox generator keyed
by ``SeedSequence(seed, spawn_key=(i,))``. The diagonal entry is drawn first,
then the entries j > i in increasing j, so entry (i, j) depends only on
(seed, i, j) and the atoms, never on the traversal order or on n. A matrix
sampled at dimension n - 1 with the same seed is therefore the top-left minor
of the matrix sampled at dimension n.
"""
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ConfigurationError, ContractViolation, MomentUnavailable

logger = logging.getLogger(__name__)

MAX_MOMENT_ORDER = 8
MOMENT_TOLERANCE = 1e-12
MATCH_TOLERANCE = 1e-10
DEFAULT_TRUNCATION_FACTOR = 10.0
RESAMPLE_MAX_ROUNDS = 200
RESAMPLE_PURPOSE = 1
SEED_MASK = (1 << 64) - 1

REAL_GAUSSIAN = 'real_gaussian'
COMPLEX_GAUSSIAN = 'complex_gaussian'
DISCRETE_REAL = 'discrete_real'
DISCRETE_COMPLEX = 'discrete_complex'
SCALED_SUM = 'scaled_sum'
ATOM_KINDS = (REAL_GAUSSIAN, COMPLEX_GAUSSIAN, DISCRETE_REAL, DISCRETE_COMPLEX, SCALED_SUM)

COMPLEX_HERMITIAN = 'complex_hermitian'
REAL_SYMMETRIC = 'real_symmetric'
SYMMETRIES = (COMPLEX_HERMITIAN, REAL_SYMMETRIC)

TRUNCATE_NONE = 'none'
TRUNCATE_CLAMP = 'clamp'
TRUNCATE_RESAMPLE = 'resample'
TRUNCATION_POLICIES = (TRUNCATE_NONE, TRUNCATE_CLAMP, TRUNCATE_RESAMPLE)

BUILTIN_NAMES = (
    'gue',
    'goe',
    'bernoulli_complex',
    'bernoulli_real',
    'three_point_gue_matched',
    'three_point_goe_matched',
)

Number = Union[int, float, Fraction]


def _double_factorial(k: int) -> int:
    """(k)!! with the convention (-1)!! = 0!! = 1."""
    return math.prod(range(k, 0, -2))


def _as_fraction(value: Union[Number, str]) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(value).limit_denominator(10 ** 12)


@dataclass(frozen=True)
class AtomDistribution:
    """
    Law of a single matrix entry.

    Use the constructors ``real_gaussian``, ``complex_gaussian``,
    ``discrete_real``, ``discrete_complex`` and ``scaled_sum`` rather than
    building instances directly. Discrete probabilities are kept as exact
    rationals.

    ``scaled_sum(base, scale)`` is ``scale * (xi_1 + i xi_2)`` for two
    independent copies of a real ``base`` atom, or ``scale * xi_1`` when
    ``complex_sum`` is False.
    """
    kind: str
    variance: float = 0.0
    var_re: float = 0.0
    var_im: float = 0.0
    cov: float = 0.0
    points: Tuple[Tuple[complex, Fraction], ...] = ()
    base: Optional['AtomDistribution'] = None
    scale: float = 1.0
    complex_sum: bool = True
    bound: float = 0.0

    def __post_init__(self):
        if self.kind not in ATOM_KINDS:
            raise ContractViolation(f'Unknown atom kind {self.kind!r}.')
        if self.kind in (DISCRETE_REAL, DISCRETE_COMPLEX):
            if not self.points:
                raise ContractViolation('Discrete atom needs at least one point.')
            if any(p < 0 for _, p in self.points):
                raise ContractViolation('Probabilities must be nonnegative.')
            total = sum(p for _, p in self.points)
            if abs(float(total) - 1.0) > MOMENT_TOLERANCE:
                raise ContractViolation(f'Probabilities sum to {float(total)}, not 1.')
        if self.kind == SCALED_SUM:
            if self.base is None or not self.base.is_real:
                raise ContractViolation('Scaled sums are built from a real base atom.')
        if self.kind in (REAL_GAUSSIAN,) and self.variance <= 0:
            raise ContractViolation('Gaussian variance must be positive.')
        if self.kind == COMPLEX_GAUSSIAN:
            if self.var_re < 0 or self.var_im < 0 or self.cov ** 2 > self.var_re * self.var_im + 1e-15:
                raise ContractViolation('Complex Gaussian covariance is not positive semidefinite.')
        mean_re = moment(self, 1, 0)
        mean_im = moment(self, 0, 1)
        if abs(mean_re) > MOMENT_TOLERANCE or abs(mean_im) > MOMENT_TOLERANCE:
            raise ContractViolation(f'Atom mean is ({mean_re}, {mean_im}), not zero.')

    # constructors

    @classmethod
    def real_gaussian(cls, variance: float = 1.0) -> 'AtomDistribution':
        return cls(kind=REAL_GAUSSIAN, variance=float(variance))

    @classmethod
    def complex_gaussian(cls, var_re: float, var_im: float, cov: float = 0.0) -> 'AtomDistribution':
        return cls(kind=COMPLEX_GAUSSIAN, var_re=float(var_re), var_im=float(var_im), cov=float(cov))

    @classmethod
    def discrete_real(cls, points: Sequence[Tuple[float, Union[Number, str]]]) -> 'AtomDistribution':
        pts = tuple((complex(float(v), 0.0), _as_fraction(p)) for v, p in points)
        bound = max(abs(v) for v, _ in pts)
        return cls(kind=DISCRETE_REAL, points=pts, bound=bound)

    @classmethod
    def discrete_complex(cls, points: Sequence[Tuple[complex, Union[Number, str]]]) -> 'AtomDistribution':
        pts = tuple((complex(v), _as_fraction(p)) for v, p in points)
        bound = max(abs(v) for v, _ in pts)
        return cls(kind=DISCRETE_COMPLEX, points=pts, bound=bound)

    @classmethod
    def scaled_sum(cls, base: 'AtomDistribution', scale: float, complex_sum: bool = True) -> 'AtomDistribution':
        bound = 0.0
        if base.bound > 0:
            bound = abs(scale) * base.bound * (math.sqrt(2.0) if complex_sum else 1.0)
        return cls(kind=SCALED_SUM, base=base, scale=float(scale), complex_sum=complex_sum, bound=bound)

    # queries

    @property
    def is_real(self) -> bool:
        if self.kind in (REAL_GAUSSIAN, DISCRETE_REAL):
            return True
        if self.kind == COMPLEX_GAUSSIAN:
            return self.var_im == 0.0 and self.cov == 0.0
        if self.kind == DISCRETE_COMPLEX:
            return all(v.imag == 0.0 for v, _ in self.points)
        return not self.complex_sum

    @property
    def is_continuous(self) -> bool:
        if self.kind in (REAL_GAUSSIAN, COMPLEX_GAUSSIAN):
            return True
        if self.kind == SCALED_SUM:
            return self.base.is_continuous
        return False

    @property
    def second_moment(self) -> float:
        """E|zeta|^2."""
        return moment(self, 2, 0) + moment(self, 0, 2)

    def sample(self, rng: np.random.Generator, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        """
        Draw independent values; variates are consumed in row-major order so
        a prefix of a larger draw equals a smaller draw.
        """
        shape = (size,) if isinstance(size, int) else tuple(size)
        if self.kind == REAL_GAUSSIAN:
            return rng.normal(0.0, math.sqrt(self.variance), size=shape)
        if self.kind == COMPLEX_GAUSSIAN:
            z = rng.standard_normal(size=shape + (2,))
            l11 = math.sqrt(self.var_re)
            l21 = self.cov / l11 if l11 > 0 else 0.0
            l22 = math.sqrt(max(self.var_im - l21 * l21, 0.0))
            re = l11 * z[..., 0]
            im = l21 * z[..., 0] + l22 * z[..., 1]
            return re + 1j * im
        if self.kind in (DISCRETE_REAL, DISCRETE_COMPLEX):
            values = np.array([v for v, _ in self.points])
            probs = np.array([float(p) for _, p in self.points])
            probs = probs / probs.sum()
            picked = values[rng.choice(len(values), size=shape, p=probs)]
            return picked.real.copy() if self.kind == DISCRETE_REAL else picked
        # scaled sum
        if self.complex_sum:
            pair = self.base.sample(rng, shape + (2,))
            return self.scale * (pair[..., 0] + 1j * pair[..., 1])
        return self.scale * self.base.sample(rng, shape)

    def to_dict(self) -> Dict:
        if self.kind == REAL_GAUSSIAN:
            return {'kind': self.kind, 'variance': self.variance}
        if self.kind == COMPLEX_GAUSSIAN:
            return {'kind': self.kind, 'var_re': self.var_re, 'var_im': self.var_im, 'cov': self.cov}
        if self.kind == DISCRETE_REAL:
            return {'kind': self.kind, 'points': [[v.real, str(p)] for v, p in self.points]}
        if self.kind == DISCRETE_COMPLEX:
            return {'kind': self.kind, 'points': [[[v.real, v.imag], str(p)] for v, p in self.points]}
        return {
            'kind': self.kind,
            'base': self.base.to_dict(),
            'scale': self.scale,
            'complex_sum': self.complex_sum,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'AtomDistribution':
        kind = data.get('kind')
        try:
            if kind == REAL_GAUSSIAN:
                return cls.real_gaussian(data['variance'])
            if kind == COMPLEX_GAUSSIAN:
                return cls.complex_gaussian(data['var_re'], data['var_im'], data.get('cov', 0.0))
            if kind == DISCRETE_REAL:
                return cls.discrete_real([(v, p) for v, p in data['points']])
            if kind == DISCRETE_COMPLEX:
                return cls.discrete_complex([(complex(v[0], v[1]), p) for v, p in data['points']])
            if kind == SCALED_SUM:
                return cls.scaled_sum(
                    cls.from_dict(data['base']), data['scale'], data.get('complex_sum', True)
                )
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigurationError(f'Malformed {kind} atom: {exc}', {'atom': data}) from exc
        raise ConfigurationError(f'Unknown atom kind {kind!r}.', {'atom': data})


def _gaussian_moment(variance: float, m: int) -> float:
    if m % 2:
        return 0.0
    return _double_factorial(m - 1) * variance ** (m // 2)


def _bivariate_gaussian_moment(var_re: float, var_im: float, cov: float, m: int, l: int) -> float:
    # Isserlis: sum over the number j of cross pairings Re-Im.
    total = 0.0
    for j in range(min(m, l) + 1):
        if (m - j) % 2 or (l - j) % 2:
            continue
        pairings = math.comb(m, j) * math.comb(l, j) * math.factorial(j)
        total += (
            pairings
            * _double_factorial(m - j - 1) * var_re ** ((m - j) // 2)
            * _double_factorial(l - j - 1) * var_im ** ((l - j) // 2)
            * cov ** j
        )
    return total


def moment(atom: AtomDistribution, m: int, l: int) -> float:
    """
    Mixed moment E[Re(zeta)^m Im(zeta)^l].

    Discrete atoms are summed in exact rational arithmetic over the stored
    values; Gaussian atoms use the even-moment (Isserlis) formula.

    Raises:
        MomentUnavailable: negative orders or m + l above 8.
    """
    if m < 0 or l < 0 or m + l > MAX_MOMENT_ORDER:
        raise MomentUnavailable(
            f'Moment of order ({m}, {l}) is not available; m + l must be at most {MAX_MOMENT_ORDER}.',
            {'m': m, 'l': l, 'kind': atom.kind},
        )
    if atom.kind == REAL_GAUSSIAN:
        return _gaussian_moment(atom.variance, m) if l == 0 else 0.0
    if atom.kind == COMPLEX_GAUSSIAN:
        return _bivariate_gaussian_moment(atom.var_re, atom.var_im, atom.cov, m, l)
    if atom.kind in (DISCRETE_REAL, DISCRETE_COMPLEX):
        total = Fraction(0)
        for value, prob in atom.points:
            total += prob * Fraction(value.real) ** m * Fraction(value.imag) ** l
        return float(total)
    if atom.kind == SCALED_SUM:
        if atom.complex_sum:
            return atom.scale ** (m + l) * moment(atom.base, m, 0) * moment(atom.base, l, 0)
        return atom.scale ** m * moment(atom.base, m, 0) if l == 0 else 0.0
    raise MomentUnavailable(f'No moments for atom kind {atom.kind!r}.', {'kind': atom.kind})


def moment_table(atom: AtomDistribution, k_max: int) -> Dict[Tuple[int, int], float]:
    """All mixed moments with m + l <= k_max."""
    return {
        (m, k - m): moment(atom, m, k - m)
        for k in range(k_max + 1)
        for m in range(k, -1, -1)
    }


def match_order(a: AtomDistribution, b: AtomDistribution, k_max: int) -> int:
    """
    Largest k <= k_max such that a and b match to order k.

    Two atoms match to order k when E Re^m Im^l agree (within 1e-10) for all
    m + l <= k.
    """
    if k_max > MAX_MOMENT_ORDER:
        raise MomentUnavailable(f'k_max={k_max} exceeds {MAX_MOMENT_ORDER}.', {'k_max': k_max})
    for k in range(1, k_max + 1):
        for m in range(k + 1):
            if abs(moment(a, m, k - m) - moment(b, m, k - m)) > MATCH_TOLERANCE:
                return k - 1
    return k_max


@dataclass(frozen=True)
class Truncation:
    """
    Enforcement of |zeta_ij| <= K.

    ``bound=None`` means K = factor * log n, evaluated at sampling time.
    """
    policy: str = TRUNCATE_RESAMPLE
    bound: Optional[float] = None
    factor: float = DEFAULT_TRUNCATION_FACTOR

    def __post_init__(self):
        if self.policy not in TRUNCATION_POLICIES:
            raise ContractViolation(f'Unknown truncation policy {self.policy!r}.')
        if self.bound is not None and self.bound <= 0:
            raise ContractViolation('Truncation bound K must be positive.')

    def bound_for(self, n: int) -> float:
        if self.policy == TRUNCATE_NONE:
            return math.inf
        if self.bound is not None:
            return float(self.bound)
        return self.factor * math.log(max(n, 2))

    def describe(self, n: int) -> str:
        if self.policy == TRUNCATE_NONE:
            return 'none'
        return f'{self.policy}(K={self.bound_for(n):.6g})'

    def to_dict(self) -> Dict:
        return {'policy': self.policy, 'K': self.bound, 'factor': self.factor}

    @classmethod
    def from_dict(cls, data: Union[None, str, Dict]) -> 'Truncation':
        if data is None:
            return cls()
        if isinstance(data, str):
            return cls(policy=data)
        return cls(
            policy=data.get('policy', TRUNCATE_RESAMPLE),
            bound=data.get('K'),
            factor=data.get('factor', DEFAULT_TRUNCATION_FACTOR),
        )


@dataclass(frozen=True)
class EnsembleSpec:
    """Symmetry class, off-diagonal and diagonal atoms, c, truncation."""
    symmetry: str
    offdiag_atom: AtomDistribution
    diag_atom: AtomDistribution
    diag_variance_c: float
    truncation: Truncation = field(default_factory=Truncation)
    name: Optional[str] = None

    def __post_init__(self):
        if self.symmetry not in SYMMETRIES:
            raise ContractViolation(f'Unknown symmetry {self.symmetry!r}.')
        if self.diag_variance_c <= 0:
            raise ContractViolation('Diagonal variance c must be positive.')
        off_var = self.offdiag_atom.second_moment
        if abs(off_var - 1.0) > MOMENT_TOLERANCE:
            raise ContractViolation(f'Off-diagonal variance is {off_var}, not 1.')
        diag_var = self.diag_atom.second_moment
        if abs(diag_var - self.diag_variance_c) > MOMENT_TOLERANCE:
            raise ContractViolation(f'Diagonal variance is {diag_var}, not c={self.diag_variance_c}.')
        if not self.diag_atom.is_real:
            raise ContractViolation('Diagonal atom must be real-valued.')
        if self.symmetry == REAL_SYMMETRIC and not self.offdiag_atom.is_real:
            raise ContractViolation('Real symmetric ensembles need a real off-diagonal atom.')

    @property
    def is_real(self) -> bool:
        return self.symmetry == REAL_SYMMETRIC

    @property
    def is_continuous(self) -> bool:
        return self.offdiag_atom.is_continuous and self.diag_atom.is_continuous

    @property
    def ensemble_id(self) -> str:
        if self.name:
            return self.name
        return f'custom-{zlib.crc32(self.canonical_json().encode()):08x}'

    def canonical_json(self) -> str:
        payload = self.to_dict()
        payload.pop('name', None)
        return json.dumps(payload, sort_keys=True, separators=(',', ':'))

    def with_truncation(self, truncation: Truncation) -> 'EnsembleSpec':
        return EnsembleSpec(
            symmetry=self.symmetry,
            offdiag_atom=self.offdiag_atom,
            diag_atom=self.diag_atom,
            diag_variance_c=self.diag_variance_c,
            truncation=truncation,
            name=self.name,
        )

    def to_dict(self) -> Dict:
        data = {
            'symmetry': self.symmetry,
            'offdiag_atom': self.offdiag_atom.to_dict(),
            'diag_atom': self.diag_atom.to_dict(),
            'c': self.diag_variance_c,
            'truncation': self.truncation.to_dict(),
        }
        if self.name:
            data['name'] = self.name
        return data

    @classmethod
    def from_dict(cls, data: Union[str, Dict]) -> 'EnsembleSpec':
        """Build a spec from a JSON document or a builtin name."""
        if isinstance(data, str):
            return builtin_ensemble(data)
        if 'builtin' in data:
            spec = builtin_ensemble(data['builtin'])
            if 'truncation' in data:
                spec = spec.with_truncation(Truncation.from_dict(data['truncation']))
            return spec
        try:
            return cls(
                symmetry=data['symmetry'],
                offdiag_atom=AtomDistribution.from_dict(data['offdiag_atom']),
                diag_atom=AtomDistribution.from_dict(data['diag_atom']),
                diag_variance_c=float(data['c']),
                truncation=Truncation.from_dict(data.get('truncation')),
                name=data.get('name'),
            )
        except KeyError as exc:
            raise ConfigurationError(f'Ensemble document is missing {exc}.', {'ensemble': data}) from exc


@dataclass(frozen=True, eq=False)
class HermitianMatrix:
    """
    A sampled matrix M_n on the unnormalised scale (entries of size O(K)).

    W_n = M_n / sqrt(n) and A_n = sqrt(n) M_n are available as views.
    """
    entries: np.ndarray
    ensemble_id: str
    seed: int
    truncation: str = 'none'

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def view(self, scale: str = 'M') -> np.ndarray:
        if scale == 'M':
            return self.entries
        if scale == 'W':
            return self.entries / math.sqrt(self.n)
        if scale == 'A':
            return self.entries * math.sqrt(self.n)
        raise ConfigurationError(f'Unknown scale {scale!r}; expected M, W or A.')

    @property
    def W(self) -> np.ndarray:
        return self.view('W')

    @property
    def A(self) -> np.ndarray:
        return self.view('A')

    def is_hermitian(self) -> bool:
        return bool(np.array_equal(self.entries, self.entries.conj().T))

    @property
    def provenance(self) -> Dict:
        return {'ensemble': self.ensemble_id, 'seed': self.seed, 'n': self.n, 'truncation': self.truncation}


def row_generator(seed: int, row: int) -> np.random.Generator:
    """Philox stream for one matrix row."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed & SEED_MASK, spawn_key=(row,))))


def entry_generator(seed: int, row: int, col: int) -> np.random.Generator:
    """Resampling stream of entry (row, col), independent of every other entry."""
    key = (row, col, RESAMPLE_PURPOSE)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed & SEED_MASK, spawn_key=key)))


def _truncate(values: np.ndarray, atom: AtomDistribution, truncation: Truncation, bound: float,
              seed: int, row: int, first_col: int) -> np.ndarray:
    """Enforce |value| <= bound on entries (row, first_col), (row, first_col + 1), ..."""
    if truncation.policy == TRUNCATE_NONE or values.size == 0:
        return values
    magnitude = np.abs(values)
    over = magnitude > bound
    if not over.any():
        return values
    values = values.copy()
    if truncation.policy == TRUNCATE_CLAMP:
        if np.iscomplexobj(values):
            shrink = bound * (1.0 - 4.0 * np.finfo(float).eps)
            values[over] = values[over] * (shrink / magnitude[over])
        else:
            values[over] = np.clip(values[over], -bound, bound)
        return values
    for offset in np.flatnonzero(over):
        col = first_col + int(offset)
        rng = entry_generator(seed, row, col)
        for _ in range(RESAMPLE_MAX_ROUNDS):
            draw = atom.sample(rng, 1)[0]
            if abs(draw) <= bound:
                values[offset] = draw
                break
        else:
            raise ContractViolation(
                f'Resampling did not bring entry ({row}, {col}) below K={bound} in {RESAMPLE_MAX_ROUNDS} rounds.',
                {'row': row, 'col': col, 'K': bound},
            )
    return values


def sample_matrix(spec: EnsembleSpec, n: int, seed: int) -> HermitianMatrix:
    """
    Sample M_n from ``spec``.

    Upper-triangular entries come from the off-diagonal atom, the diagonal
    from the diagonal atom and the lower triangle by conjugate symmetry, so
    the result is exactly Hermitian.
    """
    if n < 1:
        raise ContractViolation(f'Dimension must be positive, got {n}.')
    bound = spec.truncation.bound_for(n)
    dtype = np.float64 if spec.is_real else np.complex128
    entries = np.zeros((n, n), dtype=dtype)
    for i in range(n):
        rng = row_generator(seed, i)
        diag = spec.diag_atom.sample(rng, 1)
        diag = _truncate(diag, spec.diag_atom, spec.truncation, bound, seed, i, i)
        entries[i, i] = float(np.real(diag[0]))
        if i < n - 1:
            row = spec.offdiag_atom.sample(rng, n - 1 - i)
            row = _truncate(row, spec.offdiag_atom, spec.truncation, bound, seed, i, i + 1)
            entries[i, i + 1:] = row.real if spec.is_real else row
    lower = np.tril_indices(n, -1)
    entries[lower] = entries.conj().T[lower]
    entries.setflags(write=False)
    return HermitianMatrix(
        entries=entries,
        ensemble_id=spec.ensemble_id,
        seed=int(seed),
        truncation=spec.truncation.describe(n),
    )


SQRT3 = math.sqrt(3.0)
SQRT_HALF = math.sqrt(0.5)


def three_point_atom() -> AtomDistribution:
    """xi in {+sqrt3, -sqrt3} w.p. 1/6 each, 0 w.p. 2/3: matches N(0,1) to order 5."""
    return AtomDistribution.discrete_real([
        (SQRT3, Fraction(1, 6)),
        (-SQRT3, Fraction(1, 6)),
        (0.0, Fraction(2, 3)),
    ])


@lru_cache(maxsize=None)
def builtin_ensemble(name: str) -> EnsembleSpec:
    """
    Return one of the builtin ensembles.

    gue/goe are the Gaussian ensembles (c = 1 and c = 2), the Bernoulli
    ensembles have +-1 entries, and the three-point ensembles match the
    Gaussian ones to fourth order off the diagonal and second order on it.

    Raises:
        ConfigurationError: unknown name.
    """
    key = name.lower() if isinstance(name, str) else name
    sign = AtomDistribution.discrete_real([(1.0, Fraction(1, 2)), (-1.0, Fraction(1, 2))])
    if key == 'gue':
        return EnsembleSpec(
            symmetry=COMPLEX_HERMITIAN,
            offdiag_atom=AtomDistribution.complex_gaussian(0.5, 0.5, 0.0),
            diag_atom=AtomDistribution.real_gaussian(1.0),
            diag_variance_c=1.0,
            name='gue',
        )
    if key == 'goe':
        return EnsembleSpec(
            symmetry=REAL_SYMMETRIC,
            offdiag_atom=AtomDistribution.real_gaussian(1.0),
            diag_atom=AtomDistribution.real_gaussian(2.0),
            diag_variance_c=2.0,
            name='goe',
        )
    if key == 'bernoulli_complex':
        corners = [complex(a, b) * SQRT_HALF for a in (1, -1) for b in (1, -1)]
        return EnsembleSpec(
            symmetry=COMPLEX_HERMITIAN,
            offdiag_atom=AtomDistribution.discrete_complex([(v, Fraction(1, 4)) for v in corners]),
            diag_atom=sign,
            diag_variance_c=1.0,
            name='bernoulli_complex',
        )
    if key == 'bernoulli_real':
        return EnsembleSpec(
            symmetry=REAL_SYMMETRIC,
            offdiag_atom=sign,
            diag_atom=sign,
            diag_variance_c=1.0,
            name='bernoulli_real',
        )
    if key == 'three_point_gue_matched':
        return EnsembleSpec(
            symmetry=COMPLEX_HERMITIAN,
            offdiag_atom=AtomDistribution.scaled_sum(three_point_atom(), SQRT_HALF),
            diag_atom=three_point_atom(),
            diag_variance_c=1.0,
            name='three_point_gue_matched',
        )
    if key == 'three_point_goe_matched':
        return EnsembleSpec(
            symmetry=REAL_SYMMETRIC,
            offdiag_atom=three_point_atom(),
            diag_atom=AtomDistribution.scaled_sum(three_point_atom(), math.sqrt(2.0), complex_sum=False),
            diag_variance_c=2.0,
            name='three_point_goe_matched',
        )
    raise ConfigurationError(
        f'Unknown ensemble {name!r}. Must be one of: {", ".join(BUILTIN_NAMES)}',
        {'name': name},
    )


def match_report(a: EnsembleSpec, b: EnsembleSpec) -> Dict[str, int]:
    """Off-diagonal match order (up to 4) and diagonal match order (up to 2)."""
    return {
        'offdiag_order': match_order(a.offdiag_atom, b.offdiag_atom, 4),
        'diag_order': match_order(a.diag_atom, b.diag_atom, 2),
    }


def resolve_ensemble(value: Union[str, Dict, EnsembleSpec]) -> EnsembleSpec:
    """Accept a spec, a builtin name or a JSON document."""
    if isinstance(value, EnsembleSpec):
        return value
    return EnsembleSpec.from_dict(value)


def list_builtins() -> List[EnsembleSpec]:
    return [builtin_ensemble(name) for name in BUILTIN_NAMES]
