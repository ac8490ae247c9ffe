import math

import numpy as np
from django.test import SimpleTestCase, tag

from laboratory.eigensolve import eigen_full, eigenvalues
from laboratory.ensembles import BUILTIN_NAMES, builtin_ensemble, sample_matrix
from laboratory.exceptions import ContractViolation, EigenvalueCollision, IdentityDegenerate
from laboratory.local_stats import (
    delocalization_sup,
    edge_rescale,
    edge_rescale_index,
    first_coordinate_residual,
    gap_at,
    gaps,
    interlacing_check,
    interlacing_identity_residual,
    minor_projection,
    projection_statistic,
)
from laboratory.spectral import schur_identity_residual, semicircle_quantile


class DelocalizationTests(SimpleTestCase):
    """max |(u_i)_j| over a decomposition."""

    def test_identity_is_localized(self):
        """Standard basis vectors have sup 1."""
        self.assertEqual(delocalization_sup(eigen_full(np.eye(5))), 1.0)

    def test_swap_matrix(self):
        """[[0,1],[1,0]] has eigenvectors with entries of size 1/sqrt2."""
        self.assertAlmostEqual(delocalization_sup(eigen_full(np.array([[0.0, 1.0], [1.0, 0.0]]))),
                               2 ** -0.5, places=14)

    def test_lower_bound(self):
        """A unit vector has a coordinate of size at least n^{-1/2}."""
        decomp = eigen_full(sample_matrix(builtin_ensemble('gue'), 50, 3).W)
        self.assertGreaterEqual(delocalization_sup(decomp), 50 ** -0.5)
        self.assertLessEqual(delocalization_sup(decomp), 1.0 + 1e-12)


class GapTests(SimpleTestCase):
    """Consecutive eigenvalue gaps."""

    def test_simple_gaps(self):
        """{1, 2, 4} has gaps {1, 2}."""
        self.assertEqual(gaps([1.0, 2.0, 4.0]).tolist(), [1.0, 2.0])
        self.assertEqual(gaps(np.zeros(3)).tolist(), [0.0, 0.0])

    def test_a_scale_multiplies_by_n(self):
        """A-scale gaps are n times the W-scale ones."""
        values = eigenvalues(sample_matrix(builtin_ensemble('goe'), 30, 2).W)
        self.assertTrue(np.array_equal(gaps(values, 'A'), gaps(values, 'W') * 30))

    def test_gap_at_last_index(self):
        """The gap at i = n is lambda_n - lambda_{n-1}."""
        self.assertEqual(gap_at([1.0, 2.0, 4.0], 3), 2.0)
        self.assertEqual(gap_at([1.0, 2.0, 4.0], 1), 1.0)
        with self.assertRaises(ContractViolation):
            gap_at([1.0, 2.0, 4.0], 4)

    def test_unsorted_rejected(self):
        """Eigenvalues must come in ascending order."""
        with self.assertRaises(ContractViolation):
            gaps([2.0, 1.0])
        with self.assertRaises(ContractViolation):
            gaps([1.0, 2.0], 'M')


class InterlacingTests(SimpleTestCase):
    """Cauchy interlacing and the identities built on the minor."""

    def test_diagonal_matrix(self):
        """diag(1, 2, 3) interlaces with no violation."""
        report = interlacing_check(np.diag([1.0, 2.0, 3.0]))
        self.assertTrue(report.holds)
        self.assertEqual(report.max_violation, 0.0)
        self.assertTrue(np.all(report.upper_distances >= 0))
        self.assertTrue(np.all(report.lower_distances >= 0))
        self.assertEqual(report.top_bias, (1.0, 1.0))

    def test_every_builtin_interlaces(self):
        """Sampled matrices of every builtin ensemble interlace."""
        for name in BUILTIN_NAMES:
            for seed in range(3):
                report = interlacing_check(sample_matrix(builtin_ensemble(name), 30, seed).W)
                self.assertTrue(report.holds, f'{name} seed={seed}')
                self.assertEqual(len(report.to_dict()['upper_distances']), 29)

    def test_needs_two_rows(self):
        """A 1x1 matrix has no minor."""
        with self.assertRaises(ContractViolation):
            interlacing_check(np.array([[1.0]]))

    def test_identity_two_by_two(self):
        """The eigenvalue identity is exact up to rounding for a generic 2x2."""
        W = np.array([[0.3, 0.7 + 0.2j], [0.7 - 0.2j, -0.4]])
        self.assertLessEqual(interlacing_identity_residual(W), 1e-12)

    def test_identity_gue(self):
        """A 20x20 GUE sample satisfies the identity at i = n to 1e-8."""
        W = sample_matrix(builtin_ensemble('gue'), 20, 6).W
        self.assertLessEqual(interlacing_identity_residual(W), 1e-8)
        self.assertLessEqual(interlacing_identity_residual(W, 7), 1e-8)

    def test_identity_discrete_ensemble(self):
        """Discrete atoms either satisfy the identity or report degeneracy."""
        W = sample_matrix(builtin_ensemble('three_point_goe_matched'), 20, 6).W
        try:
            self.assertLessEqual(interlacing_identity_residual(W), 1e-8)
        except IdentityDegenerate as exc:
            self.assertEqual(exc.code, 'identity-degenerate')

    def test_identity_degenerate_on_decoupled_row(self):
        """A last column with no weight on some minor eigenvector is degenerate."""
        W = np.array([[1.0, 0.0, 0.5], [0.0, 2.0, 0.0], [0.5, 0.0, 3.0]])
        with self.assertRaises(IdentityDegenerate):
            interlacing_identity_residual(W)


class FirstCoordinateTests(SimpleTestCase):
    """|last coordinate of u_i|^2 against the minor formula."""

    def test_two_by_two(self):
        """A generic 2x2 matches to 1e-12."""
        H = np.array([[0.5, 0.9 - 0.1j], [0.9 + 0.1j, -0.2]])
        self.assertLessEqual(first_coordinate_residual(H, 2), 1e-12)
        self.assertLessEqual(first_coordinate_residual(H, 1), 1e-12)

    def test_continuous_ensembles(self):
        """Continuous builtins satisfy the formula to 1e-8 across the spectrum."""
        for name in ('gue', 'goe'):
            W = sample_matrix(builtin_ensemble(name), 30, 12).W
            for i in (1, 15, 30):
                self.assertLessEqual(first_coordinate_residual(W, i), 1e-8, f'{name} i={i}')

    def test_collision_detected(self):
        """diag(1, 2, 1) has lambda_1 sitting on a minor eigenvalue."""
        with self.assertRaises(EigenvalueCollision) as ctx:
            first_coordinate_residual(np.diag([1.0, 2.0, 1.0]), 1)
        self.assertEqual(ctx.exception.details['minor_index'], 1)

    def test_index_range(self):
        """i must lie in 1..n."""
        with self.assertRaises(ContractViolation):
            first_coordinate_residual(np.eye(3), 0)


class ProjectionTests(SimpleTestCase):
    """Norm of the projection of X onto minor eigenvectors."""

    def setUp(self):
        """A GOE sample split into its minor decomposition and last column."""
        self.M = sample_matrix(builtin_ensemble('goe'), 12, 21).entries
        self.decomp = eigen_full(self.M[:11, :11])
        self.X = self.M[:11, 11]

    def test_full_index_set_keeps_norm(self):
        """Projecting on every eigenvector preserves ||X||."""
        norm, centered = projection_statistic(self.decomp, self.X, range(1, 12))
        self.assertAlmostEqual(norm, float(np.linalg.norm(self.X)), places=12)
        self.assertAlmostEqual(centered, norm - math.sqrt(11), places=14)

    def test_empty_index_set(self):
        """No eigenvectors gives (0, 0)."""
        self.assertEqual(projection_statistic(self.decomp, self.X, []), (0.0, 0.0))

    def test_minor_projection_matches(self):
        """minor_projection splits the matrix itself."""
        direct = projection_statistic(self.decomp, self.X, [2, 5, 9])
        self.assertAlmostEqual(minor_projection(self.M, [9, 5, 2])[0], direct[0], places=12)

    def test_out_of_range_index(self):
        """Indices outside 1..n-1 are contract violations."""
        with self.assertRaises(ContractViolation):
            projection_statistic(self.decomp, self.X, [12])


class EdgeRescaleTests(SimpleTestCase):
    """Edge eigenvalues on the n^{2/3} scale."""

    def test_edge_at_two(self):
        """lambda_n = 2 rescales to 0; lambda_n = 2 + n^{-2/3} to 1."""
        self.assertEqual(edge_rescale([-1.0, 0.0, 1.0, 2.0], 1).values.tolist(), [0.0])
        n = 8
        values = np.linspace(-1.0, 1.0, n)
        values[-1] = 2.0 + n ** (-2.0 / 3.0)
        self.assertAlmostEqual(float(edge_rescale(values, 1).values[0]), 1.0, places=12)

    def test_top_values_descend(self):
        """The top-k list starts from the largest eigenvalue."""
        values = eigenvalues(sample_matrix(builtin_ensemble('gue'), 100, 4).W)
        top = edge_rescale(values, 3).values
        self.assertTrue(np.all(np.diff(top) <= 0))

    def test_bottom_side(self):
        """The bottom side mirrors the top one."""
        self.assertEqual(edge_rescale([-2.0, 0.0, 1.0], 1, 'bottom').values.tolist(), [0.0])
        with self.assertRaises(ContractViolation):
            edge_rescale([-2.0, 0.0], 1, 'left')

    def test_k_range(self):
        """k must lie in 1..n."""
        with self.assertRaises(ContractViolation):
            edge_rescale([0.0, 1.0], 3)

    def test_index_rescale_at_classical_location(self):
        """An eigenvalue at its classical location rescales to 0."""
        n = 20
        values = np.array([semicircle_quantile(k / n) for k in range(1, n + 1)])
        for i in (1, 10, 20):
            self.assertAlmostEqual(edge_rescale_index(values, i), 0.0, places=10)
        self.assertEqual(edge_rescale_index(values, 20), float(edge_rescale(values, 1).values[0]))


@tag('statistical')
class EdgeBiasTests(SimpleTestCase):
    """The largest eigenvalue sits much closer to the minor than to its neighbour."""

    def test_median_bias_ratio(self):
        """GUE n = 200, 100 seeds: median minor gap at most 1/5 of the median own gap."""
        minor_gaps, own_gaps = [], []
        for seed in range(100):
            minor_gap, own_gap = interlacing_check(sample_matrix(builtin_ensemble('gue'), 200, seed).W).top_bias
            minor_gaps.append(minor_gap)
            own_gaps.append(own_gap)
        self.assertLessEqual(float(np.median(minor_gaps)), 0.2 * float(np.median(own_gaps)))


@tag('statistical')
class IdentitySweepTests(SimpleTestCase):
    """Exact identities and interlacing over many seeds."""

    def test_identities_on_continuous_ensembles(self):
        """Continuous builtins, n in {5, 20, 50}, 50 seeds: all three identities within 1e-8."""
        z = complex(0.3, 0.5)
        for name in BUILTIN_NAMES:
            spec = builtin_ensemble(name)
            if not spec.is_continuous:
                continue
            for n in (5, 20, 50):
                for seed in range(50):
                    W = sample_matrix(spec, n, seed).W
                    label = f'{name} n={n} seed={seed}'
                    self.assertLessEqual(schur_identity_residual(W, z), 1e-8, label)
                    self.assertLessEqual(interlacing_identity_residual(W), 1e-8, label)
                    for i in (1, n // 2, n):
                        self.assertLessEqual(first_coordinate_residual(W, i), 1e-8, f'{label} i={i}')

    def test_every_builtin_interlaces_across_seeds(self):
        """Every builtin, n in {5, 50, 200}, 50 seeds: max violation at most 1e-9."""
        for name in BUILTIN_NAMES:
            spec = builtin_ensemble(name)
            for n in (5, 50, 200):
                for seed in range(50):
                    report = interlacing_check(sample_matrix(spec, n, seed).W)
                    self.assertTrue(report.holds, f'{name} n={n} seed={seed}')
                    self.assertLessEqual(report.max_violation, 1e-9, f'{name} n={n} seed={seed}')
