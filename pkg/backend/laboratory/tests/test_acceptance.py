import json
import shutil
import tempfile
import time
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.test import SimpleTestCase, tag

from laboratory import harness
from laboratory.harness import ExperimentConfig

EXPERIMENTS_DIR = Path(__file__).resolve().parent.parent / 'experiments'


def shipped_config(stem):
    return ExperimentConfig.from_dict(json.loads((EXPERIMENTS_DIR / f'{stem}.json').read_text()))


class ShippedConfigTests(SimpleTestCase):
    """The experiment files under experiments/ parse and carry fixed seeds."""

    def test_all_configs_parse(self):
        """Every shipped file is a valid config with master seed 42."""
        paths = sorted(EXPERIMENTS_DIR.glob('*.json'))
        self.assertGreaterEqual(len(paths), 11)
        for path in paths:
            config = ExperimentConfig.from_dict(json.loads(path.read_text()))
            self.assertEqual(config.master_seed, 42, path.name)
            self.assertTrue(config.thresholds, path.name)

    def test_edge_configs_are_two_sample(self):
        """Edge and four-moment files compare two ensembles."""
        for stem in ('edge_universality', 'edge_negative_control', 'four_moment_edge'):
            self.assertTrue(shipped_config(stem).is_two_sample, stem)


@tag('statistical')
class AcceptanceExperimentTests(SimpleTestCase):
    """Shipped experiments at full size; each must pass its thresholds."""

    def run_shipped(self, stem):
        outcome = harness.execute(shipped_config(stem))
        self.assertFalse(outcome.summary['failures'], stem)
        self.assertTrue(outcome.passed, f'{stem}: {outcome.summary["checks"]}')
        return outcome.summary

    def test_edge_universality(self):
        """GUE vs matched three-point atoms, n = 200, 500 trials: no KS rejection at 0.01."""
        ks = self.run_shipped('edge_universality')['extras']['ks']
        self.assertEqual(ks['alpha'], 0.01)
        self.assertEqual((ks['m'], ks['n']), (500, 500))
        self.assertFalse(ks['reject'])

    def test_four_moment_edge(self):
        """Edge coordinate, n = 200, 500 trials: diff within 3 Monte Carlo standard errors."""
        result = self.run_shipped('four_moment_edge')['extras']['four_moment']
        self.assertLessEqual(result['diff'], 3.0 * result['mc_stderr'])
        self.assertGreater(result['mc_stderr'], 0.0)

    def test_esd_concentration(self):
        """GUE n = 2000, 20 seeds: |N_I/n - 0.6090| <= 0.02 in every trial, in under 5 minutes."""
        started = time.perf_counter()
        summary = self.run_shipped('esd_concentration')
        elapsed = time.perf_counter() - started
        self.assertAlmostEqual(summary['extras']['semicircle_mass'], 0.6090, places=4)
        self.assertEqual(summary['statistics']['gue']['2000']['fraction']['count'], 20)
        self.assertLess(elapsed, 300.0)

    def test_stieltjes_convergence(self):
        """GUE n = 1000, 10 seeds: sup over the grid of |s_n - s| at most 0.05."""
        check = self.run_shipped('stieltjes_convergence')['checks'][0]
        self.assertEqual(check['name'], 'stieltjes_sup_deviation')

    def test_delocalization(self):
        """GUE and bernoulli_real, n = 500: deloc_sup <= 10 log n / sqrt(n) in 99 of 100 trials."""
        for stem in ('deloc_gue', 'deloc_bernoulli_real'):
            check = self.run_shipped(stem)['checks'][0]
            self.assertGreaterEqual(check['value'], 0.99, stem)

    def test_interlace_edge_bias(self):
        """GUE n = 200, 100 seeds: median minor gap at most 1/5 of the median own gap."""
        extras = self.run_shipped('interlace_edge_bias')['extras']
        self.assertLessEqual(extras['median_top_minor_gap'], 0.2 * extras['median_top_own_gap'])

    def test_gap_tails(self):
        """GUE n = 100, 200 trials: A-scale gaps below n^{-1/2} at most 5% at n/2, n - 1 and n."""
        for stem in ('gap_tail_bulk', 'gap_tail_below_top', 'gap_tail_top'):
            self.assertLessEqual(self.run_shipped(stem)['extras']['gap_tail_frequency'], 0.05, stem)

    def test_negative_control_reports_ks(self):
        """The unmatched comparison runs to completion; its verdict is informational."""
        outcome = harness.execute(shipped_config('edge_negative_control'))
        ks = outcome.summary['extras']['ks']
        self.assertEqual((ks['m'], ks['n'], ks['alpha']), (500, 500, 0.01))
        self.assertIsInstance(ks['reject'], bool)

    def test_run_command_exits_cleanly(self):
        """rmt run on a shipped file finishes with exit code 0 and writes its outputs."""
        out_dir = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, out_dir, True)
        call_command('rmt', 'run', '--config', str(EXPERIMENTS_DIR / 'gap_tail_top.json'),
                     '--out', str(out_dir), stdout=StringIO(), stderr=StringIO())
        summary = json.loads((out_dir / 'gap-tail-top-summary.json').read_text())
        self.assertTrue(summary['passed'])
        self.assertTrue((out_dir / 'gap-tail-top.csv').exists())
