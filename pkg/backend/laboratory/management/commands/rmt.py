"""
``python manage.py rmt <subcommand>``: experiment recipes and single-matrix
diagnostics.

Exit codes: 0 success (all thresholds pass), 1 a threshold failed, 2 usage or
configuration error, 3 runtime error.
"""
import argparse
import json
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser

from laboratory import eigensolve, harness, local_stats, spectral
from laboratory.ensembles import Truncation, resolve_ensemble, sample_matrix
from laboratory.exceptions import ConfigurationError, LabError
from laboratory.serializers import ExperimentConfigSerializer

EXIT_THRESHOLD = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

IDENTITY_TOLERANCE = 1e-8

# Fourth moment differs from the Gaussian ensemble of the same symmetry class.
NEGATIVE_CONTROLS = {True: 'bernoulli_real', False: 'bernoulli_complex'}

# Flags whose values may start with "-" (intervals, grids); they are glued to
# their flag as --flag=value before argparse sees them.
DASH_VALUE_FLAGS = ('--interval', '--grid', '--z')


class UsageParser(CommandParser):
    """Subcommand parser whose errors are usage errors (exit code 2)."""

    def error(self, message):
        if self.called_from_command_line:
            super(CommandParser, self).error(message)
        else:
            raise CommandError(f'Error: {message}', returncode=EXIT_USAGE)


def attach_dash_values(argv: List[str]) -> List[str]:
    result = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token in DASH_VALUE_FLAGS and i + 1 < len(argv):
            result.append(f'{token}={argv[i + 1]}')
            i += 2
            continue
        result.append(token)
        i += 1
    return result


def parse_n_values(text: str) -> List[int]:
    try:
        values = [int(part) for part in str(text).split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected a dimension or comma list of dimensions, got {text!r}')
    if min(values) < 2:
        raise argparse.ArgumentTypeError('dimensions must be at least 2')
    return values


def parse_index(text: str):
    try:
        return float(text) if '.' in text else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected an integer index or a fraction of n, got {text!r}')


def parse_interval(text: str) -> spectral.Interval:
    try:
        return spectral.Interval.parse(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(exc.message)


def parse_complex(text: str) -> complex:
    try:
        re_part, im_part = (float(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected "re,im", got {text!r}')
    return complex(re_part, im_part)


class Command(BaseCommand):
    help = 'Wigner ensemble laboratory: sampling, spectral diagnostics and Monte Carlo experiments.'

    def run_from_argv(self, argv):
        super().run_from_argv(attach_dash_values(list(argv)))

    def add_arguments(self, parser):
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('--seed', type=int, default=0, help='master seed (unsigned 64-bit)')
        common.add_argument('--out', type=Path, default=None, help='output directory')
        common.add_argument('--threads', type=int, default=None, help='worker processes (default: logical cores)')
        common.add_argument('--format', choices=['csv', 'json'], default='csv', help='primary output format')

        ensemble = argparse.ArgumentParser(add_help=False)
        ensemble.add_argument('--ensemble', default='gue', help='builtin ensemble name or path to an ensemble JSON')
        ensemble.add_argument('--truncation', choices=['none', 'clamp', 'resample'], default=None,
                              help='override the truncation policy (K from --K or the configured log factor)')
        ensemble.add_argument('--K', type=float, default=None, help='truncation bound K')

        trials = argparse.ArgumentParser(add_help=False)
        trials.add_argument('--n', type=parse_n_values, required=True, help='dimension or comma list of dimensions')
        trials.add_argument('--trials', type=int, default=1, help='trials per dimension')

        single = argparse.ArgumentParser(add_help=False)
        single.add_argument('--n', type=int, required=True, help='dimension')

        subparsers = parser.add_subparsers(dest='subcommand', required=True, parser_class=UsageParser)

        def add(name, help_text, parents):
            return subparsers.add_parser(
                name, help=help_text, description=help_text, parents=parents,
                called_from_command_line=parser.called_from_command_line,
            )

        add('sample', 'Sample one matrix M_n and dump its entries.', [common, ensemble, single])

        sub = add('spectrum', 'Full eigendecomposition of one sampled matrix (residual and Gram error included).',
                  [common, ensemble, single])
        sub.add_argument('--view', choices=['W', 'A', 'M'], default='W', help='matrix scale')

        sub = add('esd', 'Eigenvalue counts N_I against n times the semicircle mass of I '
                         '(concentration of the empirical spectral distribution).', [common, ensemble, trials])
        sub.add_argument('--interval', type=parse_interval, required=True, help='half-open interval a,b')
        sub.add_argument('--delta', type=float, default=None, help='pass if |N_I - n mass| <= delta n |I| in every trial')
        sub.add_argument('--max-fraction-error', type=float, default=None, help='pass if |N_I/n - mass| <= value in every trial')

        sub = add('stieltjes', 'Empirical Stieltjes transform s_n(z) against the semicircle transform on a grid '
                               '(s solves s + 1/(s + z) = 0).', [common, ensemble, trials])
        sub.add_argument('--grid', default=harness.DEFAULT_GRID, help='re_min:re_max:steps,im_min:im_max:steps')
        sub.add_argument('--max-deviation', type=float, default=None, help='pass if sup |s_n - s| <= value')

        sub = add('deloc', 'Eigenvector delocalization: max_ij |u_i(j)| against C n^{-1/2} log^p n.',
                  [common, ensemble, trials])
        sub.add_argument('--constant', type=float, default=10.0, help='constant C')
        sub.add_argument('--log-power', type=float, default=1.0, help='log power p')
        sub.add_argument('--min-pass', type=float, default=0.99, help='required fraction of passing trials')

        sub = add('interlace', 'Cauchy interlacing of W_n against its top-left minor, with the edge bias '
                               '(minor eigenvalue near lambda_n at distance ~1/n, lambda_{n-1} at ~n^{-2/3}).',
                  [common, ensemble, single])
        sub.add_argument('--trials', type=int, default=1, help='trials for the edge-bias experiment (> 1 runs it)')
        sub.add_argument('--bias-ratio', type=float, default=0.2,
                         help='pass if median minor gap <= ratio * median top gap')

        sub = add('identities', 'Exact identities: Schur complement resolvent, interlacing identity at i = n and '
                                'the last-coordinate formula.', [common, ensemble, single])
        sub.add_argument('--z', type=parse_complex, default=complex(0.3, 0.5), help='spectral parameter re,im (im > 0)')
        sub.add_argument('--indices', default=None, help='comma list of indices for the coordinate identity')

        sub = add('edge', 'Edge statistics (lambda_n - 2) n^{2/3}; with two ensembles a two-sample KS test '
                          '(edge universality under moment matching).', [common, trials])
        sub.add_argument('--ensemble-a', '--ensemble', dest='ensemble_a', default='gue', help='first ensemble')
        sub.add_argument('--ensemble-b', default=None, help='second ensemble (enables the KS test)')
        sub.add_argument('--k', type=int, default=1, help='number of extreme eigenvalues')
        sub.add_argument('--side', choices=['top', 'bottom'], default='top', help='spectral edge')
        sub.add_argument('--alpha', type=float, default=None,
                         help='KS level (default LABORATORY["KS_DEFAULT_ALPHA"], 0.01)')
        sub.add_argument('--seed-b', type=int, default=None, help='master seed of the second sample')
        sub.add_argument('--negative-control', action='store_true',
                         help='also compare ensemble a with a Bernoulli ensemble whose fourth moment differs '
                              '(informational; does not change the exit code)')

        sub = add('gaps', 'Lower tail of A-scale gaps: frequency of lambda_{i+1}(A_n) - lambda_i(A_n) < n^{-c0}.',
                  [common, ensemble, trials])
        sub.add_argument('--i', type=parse_index, required=True, help='index (negative counts from the top) or fraction of n')
        sub.add_argument('--c0', type=float, default=0.5, help='exponent c0 in (0, 1)')
        sub.add_argument('--max-frequency', type=float, default=None, help='pass if frequency <= value')

        sub = add('fourmoment', 'Four-moment comparison of E G(lambda_{i_1}(A_n), ...) between two ensembles.',
                  [common, trials])
        sub.add_argument('--ensemble-a', default='gue', help='first ensemble')
        sub.add_argument('--ensemble-b', required=True, help='second ensemble')
        sub.add_argument('--indices', required=True, help='comma list of indices (negative counts from the top)')
        sub.add_argument('--g', choices=list(harness.G_KINDS), default=harness.G_COORDINATE, help='test function family')
        sub.add_argument('--component', type=int, default=1, help='argument position used by coordinate and bump')
        sub.add_argument('--g-scale', type=float, default=1.0, help='scale of coordinate / tanh functions')
        sub.add_argument('--center', type=float, default=0.0, help='bump center')
        sub.add_argument('--width', type=float, default=1.0, help='bump width')
        sub.add_argument('--edge', action='store_true', help='centre arguments at the edge: (lambda - 2n)/n^{1/3}')
        sub.add_argument('--c0', type=float, default=0.1, help='derivative budget exponent')
        sub.add_argument('--stderr-multiple', type=float, default=3.0, help='pass if diff <= value * stderr')
        sub.add_argument('--seed-b', type=int, default=None, help='master seed of the second sample')

        sub = add('run', 'Run a full experiment config (JSON).', [common])
        sub.add_argument('--config', type=Path, required=True, help='experiment config file')

    # plumbing

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        self.options = options
        self.out_dir = Path(options['out'] or settings.LABORATORY['DEFAULT_OUTPUT_DIR'])
        try:
            passed = getattr(self, f'handle_{subcommand}')(options)
        except ConfigurationError as exc:
            raise CommandError(exc.message, returncode=EXIT_USAGE)
        except LabError as exc:
            raise CommandError(f'{exc.code}: {exc.message}', returncode=EXIT_RUNTIME)
        except CommandError:
            raise
        except Exception as exc:
            raise CommandError(f'{type(exc).__name__}: {exc}', returncode=EXIT_RUNTIME)
        if passed is False:
            raise CommandError('One or more thresholds failed.', returncode=EXIT_THRESHOLD)

    def ensemble(self, value: str, options: Dict):
        path = Path(value)
        if value.endswith('.json') and path.exists():
            spec = resolve_ensemble(json.loads(path.read_text()))
        else:
            spec = resolve_ensemble(value)
        if options.get('truncation'):
            spec = spec.with_truncation(Truncation(
                policy=options['truncation'],
                bound=options.get('K'),
                factor=settings.LABORATORY['TRUNCATION_LOG_FACTOR'],
            ))
        return spec

    def progress(self, done: int, total: int) -> None:
        every = settings.LABORATORY['PROGRESS_EVERY']
        if done == total or done % every == 0:
            self.stderr.write(f'[{done}/{total}] trials')

    def write_document(self, document, stem: str) -> Path:
        return harness.write_json(document, self.out_dir / f'{stem}.json')

    def write_rows(self, rows: List[Dict], stem: str) -> Path:
        if self.options['format'] == 'json':
            return harness.write_json({'rows': rows}, self.out_dir / f'{stem}.json')
        path = self.out_dir / f'{stem}.csv'
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(path, index=False, float_format='%.17g')
        return path

    def run_config(self, document: Dict) -> bool:
        serializer = ExperimentConfigSerializer(data=document)
        if not serializer.is_valid():
            raise ConfigurationError(f'Invalid experiment config: {json.dumps(serializer.errors, default=str)}')
        config = serializer.validated_data['config']
        threads = self.options['threads'] or settings.LABORATORY['DEFAULT_THREADS']
        outcome = harness.execute(config, threads=threads, progress=self.progress)
        summary_path = harness.write_json(outcome.summary, self.out_dir / f'{config.name}-summary.json')
        if self.options['format'] == 'json':
            records = [
                {'ensemble': r.ensemble, 'n': r.n, 'trial': r.trial, 'seed': str(r.seed),
                 'payload': r.payload, 'wall_ms': r.wall_ms, 'error': r.error}
                for r in outcome.records
            ]
            records_path = harness.write_json({'records': records}, self.out_dir / f'{config.name}.json')
        else:
            records_path = harness.write_csv(outcome.records, self.out_dir / f'{config.name}.csv')
        self.report(outcome.summary)
        self.stdout.write(f'records: {records_path}')
        self.stdout.write(f'summary: {summary_path}')
        return outcome.passed

    def report(self, summary: Dict) -> None:
        for label, per_n in summary['statistics'].items():
            for n, stats in per_n.items():
                for name, stat in stats.items():
                    q = stat['quantiles']
                    self.stdout.write(
                        f'{label:<28} n={n:<6} {name:<22} mean={stat["mean"]:.6g} '
                        f'median={q["50"]:.6g} p95={q["95"]:.6g} count={stat["count"]}'
                    )
        for key, value in summary['extras'].items():
            self.stdout.write(f'{key}: {json.dumps(value, default=str)}')
        for check in summary['checks']:
            verdict = 'PASS' if check['passed'] else 'FAIL'
            self.stdout.write(f'{verdict} {check["name"]}: {check["value"]:.6g} (limit {check["limit"]:.6g})')
        if summary['failures']:
            self.stderr.write(f'{len(summary["failures"])} trial(s) failed; see the summary file.')

    def experiment(self, options: Dict, name: str, ensembles: List, statistic: Dict,
                   thresholds: Dict, seed_b: Optional[int] = None) -> bool:
        return self.run_config({
            'name': name,
            'ensembles': [spec.to_dict() for spec in ensembles],
            'n_values': options['n'],
            'trials': options['trials'],
            'master_seed': options['seed'],
            'master_seed_b': seed_b,
            'statistic': statistic,
            'thresholds': thresholds,
        })

    def stem(self, sub: str, labels: List[str], options: Dict) -> str:
        n = options['n']
        dims = '-'.join(str(v) for v in n) if isinstance(n, list) else str(n)
        return f'{sub}-{"-".join(labels)}-n{dims}-s{options["seed"]}'

    # subcommands

    def handle_sample(self, options):
        spec = self.ensemble(options['ensemble'], options)
        matrix = sample_matrix(spec, options['n'], options['seed'])
        stem = self.stem('sample', [spec.ensemble_id], options)
        entries = matrix.entries
        if options['format'] == 'json':
            path = self.write_document({
                'provenance': matrix.provenance,
                'real': entries.real.tolist(),
                'imag': entries.imag.tolist(),
            }, stem)
        else:
            rows = [
                {'i': i + 1, 'j': j + 1, 're': float(entries[i, j].real), 'im': float(entries[i, j].imag)}
                for i in range(matrix.n) for j in range(matrix.n)
            ]
            path = self.write_rows(rows, stem)
        self.stdout.write(f'{spec.ensemble_id} n={matrix.n} seed={matrix.seed} '
                          f'truncation={matrix.truncation} hermitian={matrix.is_hermitian()}')
        self.stdout.write(f'matrix: {path}')
        return True

    def handle_spectrum(self, options):
        spec = self.ensemble(options['ensemble'], options)
        matrix = sample_matrix(spec, options['n'], options['seed'])
        decomp = eigensolve.eigen_full(matrix.view(options['view']))
        stem = self.stem('spectrum', [spec.ensemble_id], options)
        if options['format'] == 'json':
            path = self.write_document(dict(decomp.to_dict(), provenance=matrix.provenance), stem)
        else:
            path = self.write_rows(eigensolve.decomposition_rows(decomp), stem)
        self.stdout.write(f'lambda_1={decomp.eigenvalues[0]:.12g} lambda_n={decomp.eigenvalues[-1]:.12g} '
                          f'residual={decomp.residual:.3e} gram_error={decomp.gram_error:.3e} '
                          f'iterations={decomp.iterations}')
        self.stdout.write(f'decomposition: {path}')
        return True

    def handle_esd(self, options):
        spec = self.ensemble(options['ensemble'], options)
        interval = options['interval']
        thresholds = {}
        if options['delta'] is not None:
            thresholds['delta'] = options['delta']
        if options['max_fraction_error'] is not None:
            thresholds['max_fraction_error'] = options['max_fraction_error']
        return self.experiment(
            options, self.stem('esd', [spec.ensemble_id], options), [spec],
            {'kind': harness.ESD, 'interval': [interval.a, interval.b]}, thresholds,
        )

    def handle_stieltjes(self, options):
        spec = self.ensemble(options['ensemble'], options)
        grid = spectral.parse_grid(options['grid'])
        stem = self.stem('stieltjes', [spec.ensemble_id], options)
        n = options['n'][0]
        seed = harness.derive_seed(options['seed'], spec.ensemble_id, n, 0)
        values = eigensolve.eigenvalues(sample_matrix(spec, n, seed).W)
        rows = [sample.as_row() for sample in spectral.stieltjes_scan(values, grid)]
        self.stdout.write(f'grid: {self.write_rows(rows, stem + "-grid")}')
        thresholds = {}
        if options['max_deviation'] is not None:
            thresholds['max_deviation'] = options['max_deviation']
        return self.experiment(
            options, stem, [spec], {'kind': harness.STIELTJES_GRID, 'grid': options['grid']}, thresholds,
        )

    def handle_deloc(self, options):
        spec = self.ensemble(options['ensemble'], options)
        return self.experiment(
            options, self.stem('deloc', [spec.ensemble_id], options), [spec],
            {'kind': harness.DELOC_SUP, 'log_power': options['log_power']},
            {'constant': options['constant'], 'min_pass_fraction': options['min_pass']},
        )

    def handle_interlace(self, options):
        spec = self.ensemble(options['ensemble'], options)
        matrix = sample_matrix(spec, options['n'], options['seed'])
        report = local_stats.interlacing_check(matrix.W)
        stem = self.stem('interlace', [spec.ensemble_id], options)
        path = self.write_document(dict(report.to_dict(), provenance=matrix.provenance), stem)
        self.stdout.write(f'holds={report.holds} max_violation={report.max_violation:.3e} '
                          f'top_bias={report.top_bias} bottom_bias={report.bottom_bias}')
        self.stdout.write(f'report: {path}')
        passed = report.holds
        if options['trials'] > 1:
            passed = self.experiment(
                dict(options, n=[options['n']]), stem + '-bias', [spec],
                {'kind': harness.INTERLACE_BIAS},
                {'bias_ratio': options['bias_ratio']},
            ) and passed
        return passed

    def handle_identities(self, options):
        spec = self.ensemble(options['ensemble'], options)
        matrix = sample_matrix(spec, options['n'], options['seed'])
        W = matrix.W
        n = matrix.n
        if options['indices']:
            indices = [harness.resolve_index(parse_index(part), n) for part in options['indices'].split(',')]
        else:
            indices = sorted({1, max(1, n // 2), n})
        results: Dict = {}

        def record(name, check):
            try:
                value = check()
                results[name] = {'residual': value, 'passed': value <= IDENTITY_TOLERANCE}
            except LabError as exc:
                results[name] = {'error': exc.code, 'message': exc.message, 'passed': True}

        record('schur', lambda: spectral.schur_identity_residual(W, options['z']))
        record('interlacing', lambda: local_stats.interlacing_identity_residual(W))
        for i in indices:
            record(f'first_coordinate_{i}', lambda i=i: local_stats.first_coordinate_residual(W, i))
        gap, bound = spectral.stieltjes_minor_gap(W, options['z'])
        results['minor_stieltjes_gap'] = {'value': gap, 'bound': bound, 'passed': gap <= bound}
        terms = spectral.schur_terms(W, options['z'])
        s_n = spectral.stieltjes_empirical(eigensolve.eigenvalues(W), options['z'])
        results['schur_terms_max_deviation'] = {'value': float(max(abs(terms - s_n))), 'passed': True}

        stem = self.stem('identities', [spec.ensemble_id], options)
        path = self.write_document({'provenance': matrix.provenance, 'z': [options['z'].real, options['z'].imag],
                                    'results': results}, stem)
        for name, result in results.items():
            value = result.get('residual', result.get('value'))
            shown = result.get('error') if value is None else f'{value:.3e}'
            self.stdout.write(f'{name:<28} {shown}')
        self.stdout.write(f'report: {path}')
        return all(result['passed'] for result in results.values())

    def handle_edge(self, options):
        specs = [self.ensemble(options['ensemble_a'], options)]
        thresholds = {}
        alpha = options['alpha'] or settings.LABORATORY['KS_DEFAULT_ALPHA']
        if options['ensemble_b']:
            specs.append(self.ensemble(options['ensemble_b'], options))
            thresholds['ks_alpha'] = alpha
        kind = harness.EDGE_TOP if options['side'] == 'top' else harness.EDGE_BOTTOM
        statistic = {'kind': kind, 'k': options['k']}
        passed = self.experiment(
            options, self.stem('edge', [s.ensemble_id for s in specs], options), specs,
            statistic, thresholds, seed_b=options['seed_b'],
        )
        if options['negative_control']:
            self.negative_control(options, specs[0], statistic, alpha)
        return passed

    def negative_control(self, options, spec, statistic: Dict, alpha: float) -> None:
        control = resolve_ensemble(NEGATIVE_CONTROLS[spec.is_real])
        labels = [spec.ensemble_id, control.ensemble_id]
        self.stdout.write(f'negative control (informational): {labels[0]} vs {labels[1]}')
        self.experiment(
            options, self.stem('edge-control', labels, options), [spec, control],
            statistic, {'ks_alpha': alpha}, seed_b=options['seed_b'],
        )

    def handle_gaps(self, options):
        spec = self.ensemble(options['ensemble'], options)
        thresholds = {}
        if options['max_frequency'] is not None:
            thresholds['max_frequency'] = options['max_frequency']
        outcome = self.experiment(
            options, self.stem('gaps', [spec.ensemble_id], options), [spec],
            {'kind': harness.GAP_AT, 'i': options['i'], 'c0': options['c0']}, thresholds,
        )
        return outcome

    def handle_fourmoment(self, options):
        specs = [self.ensemble(options['ensemble_a'], options), self.ensemble(options['ensemble_b'], options)]
        indices = [parse_index(part) for part in options['indices'].split(',')]
        g = {
            'kind': options['g'],
            'component': options['component'],
            'scale': options['g_scale'],
            'center': options['center'],
            'width': options['width'],
            'edge': options['edge'],
        }
        return self.experiment(
            options, self.stem('fourmoment', [s.ensemble_id for s in specs], options), specs,
            {'kind': harness.FOUR_MOMENT, 'indices': indices, 'g': g, 'c0': options['c0']},
            {'stderr_multiple': options['stderr_multiple']}, seed_b=options['seed_b'],
        )

    def handle_run(self, options):
        path = options['config']
        try:
            document = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigurationError(f'Cannot read config {path}: {exc}')
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f'Config {path} is not valid JSON: {exc}')
        if isinstance(document, dict) and self.options['seed'] and 'master_seed' not in document:
            document['master_seed'] = self.options['seed']
        return self.run_config(document)
