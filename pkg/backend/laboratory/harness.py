"""
Seeded Monte Carlo experiment harness.

An experiment samples ``trials`` matrices per dimension from one or two
ensembles, extracts one statistic per matrix and aggregates the results into
empirical distributions, two-sample tests and threshold checks.

Seeds: trial t at dimension n of ensemble E uses

    SeedSequence(master_seed, spawn_key=(crc32(E.ensemble_id), n, t)).generate_state(1, uint64)[0]

so the record set is a pure function of the config, independent of worker
count and scheduling. The second sample of a two-ensemble experiment may use
its own master seed (``master_seed_b``).
"""
import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.polynomial import hermite_e
from scipy.stats import kstwobign

from . import eigensolve, local_stats, spectral
from .ensembles import EnsembleSpec, HermitianMatrix, match_report, resolve_ensemble, sample_matrix
from .exceptions import (
    ConfigurationError,
    ExperimentFailed,
    InsufficientSamples,
    LabError,
)

logger = logging.getLogger(__name__)

KS_MIN_SAMPLES = 10
QUANTILE_LEVELS = (1, 5, 25, 50, 75, 95, 99)
TANH_DERIVATIVE_MAX = 16.0
MAX_DERIVATIVE_ORDER = 5
DEFAULT_GRID = '-3:3:13,0.1:0.1:1'
PROJECTION_TAIL_GRID = (1.0, 2.0, 3.0, 4.0)

EDGE_TOP = 'edge_top_k'
EDGE_BOTTOM = 'edge_bottom_k'
GAP_AT = 'gap_at'
ESD = 'esd'
DELOC_SUP = 'deloc_sup'
STIELTJES_GRID = 'stieltjes_grid'
INTERLACE_BIAS = 'interlace_bias'
PROJECTION = 'projection'
FOUR_MOMENT = 'four_moment'
STATISTICS = (EDGE_TOP, EDGE_BOTTOM, GAP_AT, ESD, DELOC_SUP, STIELTJES_GRID, INTERLACE_BIAS, PROJECTION, FOUR_MOMENT)

CSV_COLUMNS = ['ensemble', 'n', 'trial', 'seed', 'stat_name', 'value_index', 'value', 'wall_ms']

G_COORDINATE = 'coordinate'
G_BUMP = 'bump'
G_TANH_PRODUCT = 'tanh_product'
G_KINDS = (G_COORDINATE, G_BUMP, G_TANH_PRODUCT)


def derive_seed(master_seed: int, ensemble_id: str, n: int, trial: int) -> int:
    key = (zlib.crc32(ensemble_id.encode('utf-8')), int(n), int(trial))
    sequence = np.random.SeedSequence(int(master_seed) & ((1 << 64) - 1), spawn_key=key)
    return int(sequence.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class GSpec:
    """
    A test function G from a small family with known derivative bounds.

    coordinate:   G(y) = scale * y_c
    bump:         G(y) = exp(-((y_c - center) / width)^2 / 2)
    tanh_product: G(y) = prod_c tanh(scale * y_c)

    ``component`` is the 1-based position in the index list. With ``edge``
    the arguments are centred at the edge, y = (lambda(A_n) - 2n) / n^{1/3};
    otherwise y = lambda(A_n).
    """
    kind: str
    component: int = 1
    scale: float = 1.0
    center: float = 0.0
    width: float = 1.0
    edge: bool = False

    def __post_init__(self):
        if self.kind not in G_KINDS:
            raise ConfigurationError(f'Unknown G kind {self.kind!r}. Must be one of: {", ".join(G_KINDS)}')
        if self.component < 1:
            raise ConfigurationError('G component is 1-based.')
        if self.kind == G_BUMP and not self.width > 0:
            raise ConfigurationError('Bump width must be positive.')

    def arguments(self, eigenvalues_a: np.ndarray, n: int) -> np.ndarray:
        if self.edge:
            return (eigenvalues_a - 2.0 * n) / n ** (1.0 / 3.0)
        return eigenvalues_a

    def __call__(self, y: np.ndarray) -> float:
        if self.component > y.shape[0]:
            raise ConfigurationError(f'G component {self.component} exceeds the {y.shape[0]} selected indices.')
        if self.kind == G_COORDINATE:
            return float(self.scale * y[self.component - 1])
        if self.kind == G_BUMP:
            u = (y[self.component - 1] - self.center) / self.width
            return float(math.exp(-0.5 * u * u))
        return float(np.prod(np.tanh(self.scale * y)))

    def derivative_bound(self, j: int, k: int) -> float:
        """sup |nabla^j G| for G of k arguments, j >= 1."""
        if self.kind == G_COORDINATE:
            return abs(self.scale) if j == 1 else 0.0
        if self.kind == G_BUMP:
            u = np.linspace(-12.0, 12.0, 4801)
            coeffs = np.zeros(j + 1)
            coeffs[j] = 1.0
            peak = np.max(np.abs(hermite_e.hermeval(u, coeffs) * np.exp(-0.5 * u * u)))
            return float(peak / self.width ** j)
        if j > MAX_DERIVATIVE_ORDER:
            raise ConfigurationError(f'tanh derivative bounds are tabulated up to order {MAX_DERIVATIVE_ORDER}.')
        return float(abs(self.scale) ** j * TANH_DERIVATIVE_MAX ** min(j, k))

    def to_dict(self) -> Dict:
        return {
            'kind': self.kind,
            'component': self.component,
            'scale': self.scale,
            'center': self.center,
            'width': self.width,
            'edge': self.edge,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'GSpec':
        if not isinstance(data, dict) or 'kind' not in data:
            raise ConfigurationError('G spec must be an object with a "kind".', {'g': data})
        return cls(
            kind=data['kind'],
            component=int(data.get('component', 1)),
            scale=float(data.get('scale', 1.0)),
            center=float(data.get('center', 0.0)),
            width=float(data.get('width', 1.0)),
            edge=bool(data.get('edge', False)),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment: ensembles, dimensions, trial count, master seed, the
    statistic (``statistic`` name plus ``params``) and pass/fail thresholds.
    """
    name: str
    ensembles: Tuple[EnsembleSpec, ...]
    n_values: Tuple[int, ...]
    trials: int
    master_seed: int
    statistic: str
    params: Dict = field(default_factory=dict)
    thresholds: Dict = field(default_factory=dict)
    master_seed_b: Optional[int] = None
    record_timings: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError('trials must be at least 1.')
        if not self.n_values or min(self.n_values) < 2:
            raise ConfigurationError('n_values must be a nonempty list of dimensions >= 2.')
        if self.statistic not in STATISTICS:
            raise ConfigurationError(
                f'Unknown statistic {self.statistic!r}. Must be one of: {", ".join(STATISTICS)}'
            )
        if not 1 <= len(self.ensembles) <= 2:
            raise ConfigurationError('An experiment takes one or two ensembles.')
        if self.is_two_sample and len(self.ensembles) != 2:
            raise ConfigurationError(
                f'Statistic {self.statistic} with these thresholds needs two ensembles.',
                {'statistic': self.statistic, 'ensembles': len(self.ensembles)},
            )
        self._validate_params()

    def _validate_params(self) -> None:
        p = self.params
        smallest = min(self.n_values)
        if self.statistic in (EDGE_TOP, EDGE_BOTTOM):
            k = int(p.get('k', 1))
            if not 1 <= k <= smallest:
                raise ConfigurationError(f'Edge count k must lie in 1..{smallest}.')
        elif self.statistic == GAP_AT:
            if 'i' not in p:
                raise ConfigurationError('gap_at needs an index "i" (integer or fraction of n).')
            c0 = p.get('c0')
            if c0 is not None and not 0 < float(c0) < 1:
                raise ConfigurationError('c0 must lie in (0, 1).')
        elif self.statistic == ESD:
            parse_interval(p.get('interval'))
        elif self.statistic == STIELTJES_GRID:
            spectral.parse_grid(p.get('grid', DEFAULT_GRID))
        elif self.statistic == PROJECTION:
            d = int(p.get('d', 0))
            if not 0 <= d <= smallest - 1:
                raise ConfigurationError(f'Projection dimension d must lie in 0..{smallest - 1}.')
        elif self.statistic == FOUR_MOMENT:
            GSpec.from_dict(p.get('g', {'kind': G_COORDINATE}))
            if not p.get('indices'):
                raise ConfigurationError('four_moment needs a nonempty "indices" list.')
            for n in self.n_values:
                resolve_indices(p['indices'], n)
            c0 = float(p.get('c0', 0.1))
            if not 0 < c0 < 1:
                raise ConfigurationError('c0 must lie in (0, 1).')

    @property
    def is_two_sample(self) -> bool:
        return self.statistic == FOUR_MOMENT or 'ks_alpha' in self.thresholds

    @property
    def interval(self) -> spectral.Interval:
        return parse_interval(self.params.get('interval'))

    @property
    def grid(self) -> List[complex]:
        return spectral.parse_grid(self.params.get('grid', DEFAULT_GRID))

    @property
    def g_spec(self) -> GSpec:
        return GSpec.from_dict(self.params.get('g', {'kind': G_COORDINATE}))

    def seed_for(self, sample: int) -> int:
        if sample == 1 and self.master_seed_b is not None:
            return self.master_seed_b
        return self.master_seed

    def labels(self) -> List[str]:
        ids = [spec.ensemble_id for spec in self.ensembles]
        if len(ids) == 2 and ids[0] == ids[1]:
            return [f'{ids[0]}:a', f'{ids[1]}:b']
        return ids

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'ensembles': [spec.to_dict() for spec in self.ensembles],
            'n_values': list(self.n_values),
            'trials': self.trials,
            'master_seed': self.master_seed,
            'master_seed_b': self.master_seed_b,
            'statistic': dict(self.params, kind=self.statistic),
            'thresholds': self.thresholds,
            'record_timings': self.record_timings,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentConfig':
        """
        Build a config from its JSON document. ``ensembles`` (or a single
        ``ensemble``) accepts builtin names or full ensemble documents;
        ``statistic`` is either a name or an object ``{"kind": ..., params}``.
        """
        if not isinstance(data, dict):
            raise ConfigurationError('Experiment config must be a JSON object.')
        try:
            raw_ensembles = data.get('ensembles')
            if raw_ensembles is None:
                raw_ensembles = [data['ensemble']]
            statistic = data['statistic']
            if isinstance(statistic, str):
                statistic = {'kind': statistic}
            params = {key: value for key, value in statistic.items() if key != 'kind'}
            return cls(
                name=str(data.get('name', statistic['kind'])),
                ensembles=tuple(resolve_ensemble(value) for value in raw_ensembles),
                n_values=tuple(int(n) for n in data['n_values']),
                trials=int(data['trials']),
                master_seed=int(data['master_seed']),
                statistic=statistic['kind'],
                params=params,
                thresholds=dict(data.get('thresholds') or {}),
                master_seed_b=None if data.get('master_seed_b') is None else int(data['master_seed_b']),
                record_timings=bool(data.get('record_timings', False)),
            )
        except KeyError as exc:
            raise ConfigurationError(f'Experiment config is missing {exc}.') from exc
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f'Invalid experiment config: {exc}') from exc


@dataclass(frozen=True)
class TrialRecord:
    ensemble: str
    n: int
    trial: int
    seed: int
    payload: Dict[str, List[float]]
    wall_ms: Optional[float] = None
    error: Optional[str] = None
    sample: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def sort_key(self) -> Tuple[str, int, int]:
        return self.ensemble, self.n, self.trial


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Sorted sample with a right-continuous ECDF."""
    samples: np.ndarray

    @classmethod
    def from_values(cls, values: Sequence[float]) -> 'EmpiricalDistribution':
        return cls(samples=np.sort(np.asarray(values, dtype=np.float64)))

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])

    def ecdf_count(self, x: Union[float, np.ndarray]) -> np.ndarray:
        return np.searchsorted(self.samples, x, side='right')

    def ecdf(self, x: Union[float, np.ndarray]) -> np.ndarray:
        return self.ecdf_count(x) / self.count

    def ecdf_fraction(self, x: float) -> Fraction:
        return Fraction(int(self.ecdf_count(x)), self.count)

    def quantile(self, p: Union[float, Sequence[float]]) -> np.ndarray:
        return np.quantile(self.samples, p, method='linear')

    @staticmethod
    def pool(components: Sequence['EmpiricalDistribution']) -> Tuple['EmpiricalDistribution', List[Fraction]]:
        """Pooled sample and the exact mixture weights count_i / total."""
        total = sum(c.count for c in components)
        pooled = EmpiricalDistribution.from_values(np.concatenate([c.samples for c in components]))
        return pooled, [Fraction(c.count, total) for c in components]


@dataclass(frozen=True)
class KSResult:
    statistic: float
    m: int
    n: int
    alpha: float
    critical_value: float
    reject: bool
    p_value: float

    def to_dict(self) -> Dict:
        return {
            'D': self.statistic,
            'm': self.m,
            'n': self.n,
            'alpha': self.alpha,
            'critical_value': self.critical_value,
            'reject': self.reject,
            'p_value': self.p_value,
        }


def ks_coefficient(alpha: float) -> float:
    """c(alpha) = sqrt(-ln(alpha/2)/2); c(0.05) is about 1.358."""
    return math.sqrt(-math.log(alpha / 2.0) / 2.0)


def ks_two_sample(a: EmpiricalDistribution, b: EmpiricalDistribution, alpha: float = 0.05) -> KSResult:
    """
    Two-sample Kolmogorov-Smirnov test.

    D is evaluated exactly from integer ECDF counts at every sample point.

    Raises:
        InsufficientSamples: either sample has fewer than 10 points.
    """
    m, n = a.count, b.count
    if m < KS_MIN_SAMPLES or n < KS_MIN_SAMPLES:
        raise InsufficientSamples(
            f'Two-sample test needs at least {KS_MIN_SAMPLES} points per sample, got {m} and {n}.',
            {'m': m, 'n': n},
        )
    points = np.concatenate([a.samples, b.samples])
    gap = np.abs(a.ecdf_count(points) * n - b.ecdf_count(points) * m)
    statistic = float(Fraction(int(gap.max()), m * n))
    critical = ks_coefficient(alpha) * math.sqrt((m + n) / (m * n))
    p_value = float(kstwobign.sf(math.sqrt(m * n / (m + n)) * statistic))
    return KSResult(
        statistic=statistic,
        m=m,
        n=n,
        alpha=alpha,
        critical_value=critical,
        reject=statistic > critical,
        p_value=p_value,
    )


def summarize(dist: EmpiricalDistribution) -> Dict:
    """Mean, unbiased variance and linear-interpolation quantiles."""
    if dist.count < 1:
        raise InsufficientSamples('Cannot summarize an empty sample.')
    variance = float(np.var(dist.samples, ddof=1)) if dist.count > 1 else 0.0
    quantiles = dist.quantile([level / 100.0 for level in QUANTILE_LEVELS])
    return {
        'count': dist.count,
        'mean': float(np.mean(dist.samples)),
        'variance': variance,
        'quantiles': {str(level): float(q) for level, q in zip(QUANTILE_LEVELS, quantiles)},
    }


def resolve_index(i: Union[int, float, str], n: int) -> int:
    """
    Turn an index rule into a 1-based index: integers are taken as is
    (negative ones count from the top, -1 = n), fractions f in (0, 1) map to
    max(1, round(f n)).
    """
    if isinstance(i, str):
        i = float(i) if '.' in i else int(i)
    if isinstance(i, float) and not i.is_integer():
        if not 0 < i < 1:
            raise ConfigurationError(f'Fractional index must lie in (0, 1), got {i}.')
        return max(1, int(round(i * n)))
    i = int(i)
    if i < 0:
        i = n + 1 + i
    if not 1 <= i <= n:
        raise ConfigurationError(f'Index {i} out of range 1..{n}.')
    return i


def resolve_indices(indices: Sequence, n: int) -> List[int]:
    resolved = [resolve_index(i, n) for i in indices]
    if any(b <= a for a, b in zip(resolved, resolved[1:])):
        raise ConfigurationError(f'Indices must be strictly increasing, got {resolved}.')
    return resolved


def parse_interval(value: Union[str, Sequence[float], None]) -> spectral.Interval:
    """Accept ``"a,b"`` or a two-element list."""
    if value is None:
        raise ConfigurationError('esd needs an "interval".')
    if isinstance(value, str):
        return spectral.Interval.parse(value)
    try:
        a, b = value
        return spectral.Interval(float(a), float(b))
    except (LabError, TypeError, ValueError) as exc:
        raise ConfigurationError(f'Invalid interval {value!r}.') from exc


def truncation_scale(spec: EnsembleSpec, n: int) -> float:
    bound = spec.truncation.bound_for(n)
    return bound if math.isfinite(bound) and bound > 0 else 1.0


def extract_statistic(statistic: str, params: Dict, spec: EnsembleSpec, matrix: HermitianMatrix) -> Dict[str, List[float]]:
    """Compute one trial's payload from a sampled matrix."""
    n = matrix.n
    W = matrix.W
    if statistic in (EDGE_TOP, EDGE_BOTTOM):
        side = local_stats.SIDE_TOP if statistic == EDGE_TOP else local_stats.SIDE_BOTTOM
        edge = local_stats.edge_rescale(eigensolve.eigenvalues(W), int(params.get('k', 1)), side)
        return {f'edge_{side}': edge.values.tolist()}
    if statistic == GAP_AT:
        values = eigensolve.eigenvalues(W)
        i = resolve_index(params['i'], n)
        return {
            'gap_a': [local_stats.gap_at(values, i, local_stats.SCALE_A)],
            'gap_w': [local_stats.gap_at(values, i, local_stats.SCALE_W)],
        }
    if statistic == ESD:
        interval = parse_interval(params['interval'])
        T = eigensolve.tridiagonalize(W, accumulate=False)
        count, deviation = spectral.esd_deviation(None, interval, tridiagonal=T)
        return {
            'n_i': [float(count)],
            'fraction': [count / n],
            'deviation': [deviation],
            'relative_deviation': [deviation / (n * interval.length)],
        }
    if statistic == DELOC_SUP:
        sup = local_stats.delocalization_sup(eigensolve.eigen_full(W))
        power = float(params.get('log_power', 1.0))
        return {'deloc_sup': [sup], 'deloc_normalized': [sup * math.sqrt(n) / math.log(n) ** power]}
    if statistic == STIELTJES_GRID:
        values = eigensolve.eigenvalues(W)
        samples = spectral.stieltjes_scan(values, spectral.parse_grid(params.get('grid', DEFAULT_GRID)))
        return {'stieltjes_deviation': [s.deviation for s in samples]}
    if statistic == INTERLACE_BIAS:
        report = local_stats.interlacing_check(W)
        return {
            'top_minor_gap': [report.top_bias[0]],
            'top_own_gap': [report.top_bias[1]],
            'bottom_minor_gap': [report.bottom_bias[0]],
            'bottom_own_gap': [report.bottom_bias[1]],
            'max_violation': [report.max_violation],
        }
    if statistic == PROJECTION:
        d = int(params.get('d', 0))
        indices = params.get('indices') or range(1, d + 1)
        norm, centered = local_stats.minor_projection(matrix.entries, indices)
        return {'projection_norm': [norm], 'projection_centered': [centered]}
    if statistic == FOUR_MOMENT:
        g = GSpec.from_dict(params.get('g', {'kind': G_COORDINATE}))
        indices = resolve_indices(params['indices'], n)
        values_a = eigensolve.eigenvalues(W)[np.array(indices) - 1] * n
        return {'g': [g(g.arguments(values_a, n))], 'lambda_a': values_a.tolist()}
    raise ConfigurationError(f'Unknown statistic {statistic!r}.')


def _run_trial(task: Tuple) -> TrialRecord:
    statistic, params, spec, label, sample, n, trial, seed, timed = task
    start = time.perf_counter()
    try:
        matrix = sample_matrix(spec, n, seed)
        payload = extract_statistic(statistic, params, spec, matrix)
        error = None
    except Exception as exc:
        payload = {}
        code = exc.code if isinstance(exc, LabError) else type(exc).__name__
        error = f'{code}: {exc}'
    wall_ms = (time.perf_counter() - start) * 1000.0 if timed else None
    return TrialRecord(
        ensemble=label, n=n, trial=trial, seed=seed, payload=payload,
        wall_ms=wall_ms, error=error, sample=sample,
    )


def _tasks(config: ExperimentConfig) -> List[Tuple]:
    tasks = []
    for sample, (spec, label) in enumerate(zip(config.ensembles, config.labels())):
        master = config.seed_for(sample)
        for n in config.n_values:
            for trial in range(config.trials):
                seed = derive_seed(master, spec.ensemble_id, n, trial)
                tasks.append((config.statistic, config.params, spec, label, sample, n, trial, seed,
                              config.record_timings))
    return tasks


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None,
                   progress: Optional[Callable[[int, int], None]] = None) -> List[TrialRecord]:
    """
    Run every trial of ``config`` and return the records sorted by
    (ensemble, n, trial). ``threads`` caps the worker pool (None: all cores,
    1: run inline). Per-trial failures are recorded on the record.

    Raises:
        ExperimentFailed: every trial failed.
    """
    tasks = _tasks(config)
    total = len(tasks)
    workers = threads or os.cpu_count() or 1
    logger.info('experiment %s: %d trials on %d worker(s)', config.name, total, workers)
    records = []
    if workers == 1:
        results = map(_run_trial, tasks)
        for record in results:
            records.append(record)
            if progress:
                progress(len(records), total)
    else:
        chunksize = max(1, total // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for record in executor.map(_run_trial, tasks, chunksize=chunksize):
                records.append(record)
                if progress:
                    progress(len(records), total)

    failures = [r for r in records if not r.ok]
    for record in failures:
        logger.warning('trial %s n=%d #%d (seed %d) failed: %s',
                       record.ensemble, record.n, record.trial, record.seed, record.error)
    if failures and len(failures) == total:
        raise ExperimentFailed(
            f'All {total} trials of {config.name} failed.',
            {'causes': [{'ensemble': r.ensemble, 'n': r.n, 'trial': r.trial, 'seed': r.seed, 'error': r.error}
                        for r in failures]},
        )
    records.sort(key=lambda r: r.sort_key)
    logger.info('experiment %s finished: %d ok, %d failed', config.name, total - len(failures), len(failures))
    return records


def collect(records: Sequence[TrialRecord], stat_name: str, sample: Optional[int] = None,
            n: Optional[int] = None, value_index: Optional[int] = 0) -> EmpiricalDistribution:
    """Distribution of one payload entry across successful trials."""
    values = []
    for record in records:
        if not record.ok or stat_name not in record.payload:
            continue
        if sample is not None and record.sample != sample:
            continue
        if n is not None and record.n != n:
            continue
        entry = record.payload[stat_name]
        values.extend(entry if value_index is None else [entry[value_index]])
    return EmpiricalDistribution.from_values(values)


def primary_stat_name(config: ExperimentConfig) -> str:
    return {
        EDGE_TOP: 'edge_top',
        EDGE_BOTTOM: 'edge_bottom',
        GAP_AT: 'gap_a',
        ESD: 'fraction',
        DELOC_SUP: 'deloc_sup',
        STIELTJES_GRID: 'stieltjes_deviation',
        INTERLACE_BIAS: 'top_minor_gap',
        PROJECTION: 'projection_centered',
        FOUR_MOMENT: 'g',
    }[config.statistic]


@dataclass(frozen=True)
class FourMomentResult:
    diff: float
    mc_stderr: float
    mean_a: float
    mean_b: float
    count_a: int
    count_b: int
    offdiag_order: int
    diag_order: int
    derivative_check: List[Dict]

    def to_dict(self) -> Dict:
        return {
            'diff': self.diff,
            'mc_stderr': self.mc_stderr,
            'mean_a': self.mean_a,
            'mean_b': self.mean_b,
            'count_a': self.count_a,
            'count_b': self.count_b,
            'offdiag_order': self.offdiag_order,
            'diag_order': self.diag_order,
            'derivative_check': self.derivative_check,
        }


def derivative_budget(g: GSpec, k: int, n: int, c0: float, third_order_only: bool = False,
                      exponent: float = 1.0) -> List[Dict]:
    """
    Check sup |nabla^j G| against n^{c0} for j = 1..5, or against
    n^{-C j c0} when the atoms only match to third order.
    """
    rows = []
    for j in range(1, MAX_DERIVATIVE_ORDER + 1):
        bound = g.derivative_bound(j, k)
        limit = n ** (-exponent * j * c0) if third_order_only else n ** c0
        rows.append({'order': j, 'bound': bound, 'limit': limit, 'ok': bound <= limit})
    return rows


def four_moment_compare(config: ExperimentConfig,
                        records: Optional[Sequence[TrialRecord]] = None,
                        threads: Optional[int] = None) -> FourMomentResult:
    """
    Monte Carlo estimate of |E G(lambda_{i_1}(A_n), ...) - E G(lambda_{i_1}(A'_n), ...)|
    with the pooled standard error sqrt(var_a/m + var_b/n).

    Raises:
        ConfigurationError: the config is not a two-ensemble four_moment experiment.
    """
    if config.statistic != FOUR_MOMENT:
        raise ConfigurationError('four_moment_compare needs a four_moment experiment.')
    if records is None:
        records = run_experiment(config, threads=threads)
    a = collect(records, 'g', sample=0)
    b = collect(records, 'g', sample=1)
    if a.count == 0 or b.count == 0:
        raise InsufficientSamples('Both samples need at least one successful trial.')
    var_a = float(np.var(a.samples, ddof=1)) if a.count > 1 else 0.0
    var_b = float(np.var(b.samples, ddof=1)) if b.count > 1 else 0.0
    mean_a, mean_b = float(np.mean(a.samples)), float(np.mean(b.samples))
    orders = match_report(config.ensembles[0], config.ensembles[1])
    g = config.g_spec
    c0 = float(config.params.get('c0', 0.1))
    budget = derivative_budget(
        g, len(config.params['indices']), max(config.n_values), c0,
        third_order_only=orders['offdiag_order'] == 3,
        exponent=float(config.params.get('C', 1.0)),
    )
    return FourMomentResult(
        diff=abs(mean_a - mean_b),
        mc_stderr=math.sqrt(var_a / a.count + var_b / b.count),
        mean_a=mean_a,
        mean_b=mean_b,
        count_a=a.count,
        count_b=b.count,
        offdiag_order=orders['offdiag_order'],
        diag_order=orders['diag_order'],
        derivative_check=budget,
    )


def gap_tail_frequency(spectra: Sequence[Sequence[float]], i: Union[int, float], c0: float) -> float:
    """Fraction of spectra whose A-scale gap at index i is below n^{-c0}."""
    if not 0 < c0 < 1:
        raise ConfigurationError('c0 must lie in (0, 1).')
    hits = 0
    for values in spectra:
        n = len(values)
        gap = local_stats.gap_at(values, resolve_index(i, n), local_stats.SCALE_A)
        hits += gap < n ** (-c0)
    return hits / len(spectra)


def gap_tail_experiment(config: ExperimentConfig, records: Optional[Sequence[TrialRecord]] = None,
                        threads: Optional[int] = None) -> float:
    """Fraction of successful trials whose A-scale gap at the configured index is below n^{-c0}."""
    if config.statistic != GAP_AT:
        raise ConfigurationError('gap_tail_experiment needs a gap_at experiment.')
    c0 = float(config.params.get('c0', config.thresholds.get('c0', 0.5)))
    if not 0 < c0 < 1:
        raise ConfigurationError('c0 must lie in (0, 1).')
    if records is None:
        records = run_experiment(config, threads=threads)
    hits = total = 0
    for record in records:
        if record.ok:
            total += 1
            hits += record.payload['gap_a'][0] < record.n ** (-c0)
    if total == 0:
        raise InsufficientSamples('No successful trials.')
    return hits / total


def projection_tail(records: Sequence[TrialRecord], K: float) -> List[Dict]:
    """Empirical P(|centered| >= t) against 10 exp(-t^2 / (10 K^2))."""
    centered = np.abs(collect(records, 'projection_centered').samples)
    if centered.size == 0:
        return []
    return [
        {'t': t, 'frequency': float(np.mean(centered >= t)), 'bound': 10.0 * math.exp(-t * t / (10.0 * K * K))}
        for t in PROJECTION_TAIL_GRID
    ]


def _check(name: str, value: float, limit: float, passed: bool) -> Dict:
    return {'name': name, 'value': value, 'limit': limit, 'passed': bool(passed)}


def evaluate_thresholds(config: ExperimentConfig, records: Sequence[TrialRecord]) -> Tuple[List[Dict], Dict]:
    """
    Apply the configured thresholds. Returns (checks, extras) where extras
    carries statistic-specific reports (KS, four-moment, tail tables).
    """
    t = config.thresholds
    checks: List[Dict] = []
    extras: Dict = {}
    ok = [r for r in records if r.ok]

    if 'ks_alpha' in t:
        alpha = float(t['ks_alpha'])
        name = primary_stat_name(config)
        result = ks_two_sample(collect(ok, name, sample=0), collect(ok, name, sample=1), alpha)
        extras['ks'] = result.to_dict()
        checks.append(_check('ks_no_reject', result.statistic, result.critical_value, not result.reject))

    if config.statistic == FOUR_MOMENT:
        result = four_moment_compare(config, ok)
        extras['four_moment'] = result.to_dict()
        if 'stderr_multiple' in t:
            limit = float(t['stderr_multiple']) * result.mc_stderr
            checks.append(_check('four_moment_diff', result.diff, limit, result.diff <= limit))

    if config.statistic == GAP_AT and 'max_frequency' in t:
        frequency = gap_tail_experiment(config, ok)
        extras['gap_tail_frequency'] = frequency
        checks.append(_check('gap_tail_frequency', frequency, float(t['max_frequency']),
                             frequency <= float(t['max_frequency'])))

    if config.statistic == ESD:
        interval = config.interval
        mass = spectral.semicircle_mass(interval)
        extras['semicircle_mass'] = mass
        extras['regime'] = [
            {'ensemble': spec.ensemble_id, 'n': n, 'K': spec.truncation.bound_for(n), 'delta': t.get('delta')}
            for spec in config.ensembles for n in config.n_values
        ]
        if 'max_fraction_error' in t:
            worst = max(abs(r.payload['fraction'][0] - mass) for r in ok)
            checks.append(_check('esd_fraction_error', worst, float(t['max_fraction_error']),
                                 worst <= float(t['max_fraction_error'])))
        if 'delta' in t:
            worst = max(r.payload['relative_deviation'][0] for r in ok)
            checks.append(_check('esd_relative_deviation', worst, float(t['delta']), worst <= float(t['delta'])))

    if config.statistic == DELOC_SUP and 'constant' in t:
        constant = float(t['constant'])
        passing = sum(r.payload['deloc_normalized'][0] <= constant for r in ok)
        fraction = passing / len(ok)
        required = float(t.get('min_pass_fraction', 0.99))
        checks.append(_check('deloc_pass_fraction', fraction, required, fraction >= required))

    if config.statistic == STIELTJES_GRID and 'max_deviation' in t:
        worst = max(max(r.payload['stieltjes_deviation']) for r in ok)
        checks.append(_check('stieltjes_sup_deviation', worst, float(t['max_deviation']),
                             worst <= float(t['max_deviation'])))

    if config.statistic == INTERLACE_BIAS:
        minor_gap = float(np.median(collect(ok, 'top_minor_gap').samples))
        own_gap = float(np.median(collect(ok, 'top_own_gap').samples))
        extras['median_top_minor_gap'] = minor_gap
        extras['median_top_own_gap'] = own_gap
        if 'bias_ratio' in t:
            limit = float(t['bias_ratio']) * own_gap
            checks.append(_check('edge_bias', minor_gap, limit, minor_gap <= limit))
        if 'max_violation' in t:
            worst = max(r.payload['max_violation'][0] for r in ok)
            checks.append(_check('interlacing_violation', worst, float(t['max_violation']),
                                 worst <= float(t['max_violation'])))

    if config.statistic == PROJECTION:
        K = float(config.params.get('K', truncation_scale(config.ensembles[0], max(config.n_values))))
        extras['projection_tail'] = projection_tail(ok, K)
        if 'constant' in t:
            constant = float(t['constant'])
            passing = sum(
                abs(r.payload['projection_centered'][0]) <= constant * K * math.log(r.n) for r in ok
            )
            fraction = passing / len(ok)
            required = float(t.get('min_pass_fraction', 0.99))
            checks.append(_check('projection_pass_fraction', fraction, required, fraction >= required))

    return checks, extras


def build_summary(config: ExperimentConfig, records: Sequence[TrialRecord]) -> Dict:
    """JSON summary: per-(ensemble, n, stat) summaries, failures, checks and extras."""
    statistics: Dict = {}
    for label in config.labels():
        per_n = {}
        for n in config.n_values:
            subset = [r for r in records if r.ok and r.ensemble == label and r.n == n]
            names = []
            for record in subset:
                names.extend(name for name in record.payload if name not in names)
            per_n[str(n)] = {
                name: summarize(collect(subset, name, value_index=None)) for name in names
            }
        statistics[label] = per_n
    checks, extras = evaluate_thresholds(config, records)
    failures = [
        {'ensemble': r.ensemble, 'n': r.n, 'trial': r.trial, 'seed': r.seed, 'error': r.error}
        for r in records if not r.ok
    ]
    return {
        'experiment': config.name,
        'config': config.to_dict(),
        'statistics': statistics,
        'failures': failures,
        'checks': checks,
        'extras': extras,
        'passed': all(check['passed'] for check in checks),
    }


def records_frame(records: Sequence[TrialRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        if not record.ok:
            continue
        for stat_name, values in record.payload.items():
            for index, value in enumerate(values):
                rows.append({
                    'ensemble': record.ensemble,
                    'n': record.n,
                    'trial': record.trial,
                    'seed': str(record.seed),
                    'stat_name': stat_name,
                    'value_index': index,
                    'value': value,
                    'wall_ms': record.wall_ms,
                })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_csv(records: Sequence[TrialRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(path, index=False, na_rep='', float_format='%.17g')
    return path


def write_json(document: Dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n')
    return path


@dataclass(frozen=True)
class ExperimentOutcome:
    records: List[TrialRecord]
    summary: Dict

    @property
    def passed(self) -> bool:
        return self.summary['passed']


def execute(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None,
            threads: Optional[int] = None,
            progress: Optional[Callable[[int, int], None]] = None) -> ExperimentOutcome:
    """Run, summarize and (with ``out_dir``) write ``<name>.csv`` and ``<name>.json``."""
    records = run_experiment(config, threads=threads, progress=progress)
    summary = build_summary(config, records)
    if out_dir is not None:
        write_csv(records, Path(out_dir) / f'{config.name}.csv')
        write_json(summary, Path(out_dir) / f'{config.name}.json')
    return ExperimentOutcome(records=records, summary=summary)
