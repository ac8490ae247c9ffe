import time
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings as hypothesis_settings, strategies as st

from laboratory import eigensolve
from laboratory.eigensolve import (
    Tridiagonal,
    count_in_interval,
    eigen_full,
    eigenvalues,
    eigenvalues_bisect,
    ql_implicit,
    sturm_count,
    top_eigenvalues,
    tridiagonalize,
)
from laboratory.ensembles import BUILTIN_NAMES, builtin_ensemble, sample_matrix
from laboratory.exceptions import ContractViolation, EigensolverNoConvergence
from laboratory.spectral import Interval


def random_hermitian(seed, n, complex_entries=True):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    if complex_entries:
        X = X + 1j * rng.standard_normal((n, n))
    return (X + X.conj().T) / 2.0


class TridiagonalizeTests(SimpleTestCase):
    """Householder reduction H = Q T Q*."""

    def test_diagonal_input_is_unchanged(self):
        """A diagonal matrix reduces to itself with Q = I."""
        T = tridiagonalize(np.diag([3.0, -1.0, 2.0, 5.0]))
        self.assertTrue(np.array_equal(T.diag, [3.0, -1.0, 2.0, 5.0]))
        self.assertTrue(np.array_equal(T.offdiag, np.zeros(3)))
        self.assertTrue(np.array_equal(T.transform, np.eye(4)))

    def test_two_by_two(self):
        """[[0,1],[1,0]] is already tridiagonal."""
        T = tridiagonalize(np.array([[0.0, 1.0], [1.0, 0.0]]))
        self.assertTrue(np.array_equal(T.diag, [0.0, 0.0]))
        self.assertTrue(np.array_equal(T.offdiag, [1.0]))

    def test_reconstruction_complex(self):
        """Q T Q* reproduces H and Q is unitary."""
        H = random_hermitian(8, 8)
        T = tridiagonalize(H)
        scale = max(1.0, float(np.max(np.abs(H))))
        self.assertLessEqual(float(np.max(np.abs(T.reconstruct() - H))), 1e-12 * scale)
        Q = T.transform
        self.assertLessEqual(float(np.max(np.abs(Q.conj().T @ Q - np.eye(8)))), 1e-10)

    def test_offdiagonal_is_real_nonnegative(self):
        """Subdiagonal phases are absorbed into Q."""
        T = tridiagonalize(random_hermitian(3, 12))
        self.assertEqual(T.offdiag.dtype, np.float64)
        self.assertTrue(np.all(T.offdiag >= 0))

    def test_non_hermitian_rejected(self):
        """Input asymmetry above 1e-12 is a contract violation."""
        with self.assertRaises(ContractViolation) as ctx:
            tridiagonalize(np.array([[0.0, 1.0], [0.5, 0.0]]))
        self.assertEqual(ctx.exception.code, 'contract-violation')

    def test_reconstruction_blocked_sizes(self):
        """Real and complex inputs past the LAPACK block size reconstruct to 1e-12."""
        for n, complex_entries in ((3, True), (3, False), (60, True), (60, False), (130, True)):
            H = random_hermitian(n, n, complex_entries)
            T = tridiagonalize(H)
            scale = max(1.0, float(np.max(np.abs(H))))
            self.assertLessEqual(float(np.max(np.abs(T.reconstruct() - H))), 1e-12 * scale * n, n)
            Q = T.transform
            self.assertLessEqual(float(np.max(np.abs(Q.conj().T @ Q - np.eye(n)))), 1e-10, n)
            self.assertTrue(np.all(T.offdiag >= 0), n)

    def test_accumulation_does_not_change_t(self):
        """T is the same whether or not Q is accumulated."""
        H = random_hermitian(21, 40)
        with_q = tridiagonalize(H)
        without_q = tridiagonalize(H, accumulate=False)
        self.assertTrue(np.array_equal(with_q.diag, without_q.diag))
        self.assertTrue(np.array_equal(with_q.offdiag, without_q.offdiag))

    def test_reconstruct_needs_transform(self):
        """Without accumulation there is no Q to rebuild from."""
        T = tridiagonalize(random_hermitian(1, 5), accumulate=False)
        self.assertIsNone(T.transform)
        with self.assertRaises(ContractViolation):
            T.reconstruct()


class SturmCountTests(SimpleTestCase):
    """Eigenvalue counting by negative pivots."""

    def setUp(self):
        """diag(1, 2, 3) as a tridiagonal."""
        self.T = Tridiagonal(diag=np.array([1.0, 2.0, 3.0]), offdiag=np.zeros(2))

    def test_diagonal_counts(self):
        """Test 1: [1.5, 3.5) holds two eigenvalues, [4, 5) none."""
        self.assertEqual(count_in_interval(self.T, (1.5, 3.5)), 2)
        self.assertEqual(count_in_interval(self.T, (4.0, 5.0)), 0)

    def test_half_open_endpoints(self):
        """Test 2: the left endpoint is included and the right excluded."""
        self.assertEqual(count_in_interval(self.T, (1.0, 2.0)), 1)
        self.assertEqual(count_in_interval(self.T, Interval(2.0, 3.0)), 1)

    def test_empty_interval_rejected(self):
        """Test 3: a >= b is a contract violation."""
        with self.assertRaises(ContractViolation):
            count_in_interval(self.T, (2.0, 2.0))

    def test_counts_agree_with_full_solve(self):
        """Test 4: counts on a 50x50 GUE sample match the sorted eigenvalues."""
        H = sample_matrix(builtin_ensemble('gue'), 50, 99).W
        T = tridiagonalize(H, accumulate=False)
        values = eigen_full(H).eigenvalues
        for a, b in ((-2.5, -1.0), (-0.3, 0.4), (0.0, 2.5), (1.9, 3.0)):
            expected = int(np.sum((values >= a) & (values < b)))
            self.assertEqual(count_in_interval(T, (a, b)), expected)

    def test_partition_is_additive(self):
        """Test 5: counts over a partition of [-|T|-1, |T|+1) sum to n."""
        T = tridiagonalize(random_hermitian(5, 30), accumulate=False)
        edges = np.linspace(-T.norm - 1.0, T.norm + 1.0, 9)
        total = sum(count_in_interval(T, (a, b)) for a, b in zip(edges[:-1], edges[1:]))
        self.assertEqual(total, 30)

    def test_vectorised_shifts(self):
        """Test 6: sturm_count accepts an array of shifts."""
        counts = sturm_count(self.T, [0.0, 1.5, 2.5, 10.0])
        self.assertEqual(counts.tolist(), [0, 1, 2, 3])


class EigenvalueTests(SimpleTestCase):
    """QL, bisection and the full decomposition."""

    def test_swap_matrix(self):
        """[[0,1],[1,0]] has eigenvalues (-1, 1)."""
        decomp = eigen_full(np.array([[0.0, 1.0], [1.0, 0.0]]))
        self.assertAlmostEqual(decomp.eigenvalues[0], -1.0, places=14)
        self.assertAlmostEqual(decomp.eigenvalues[1], 1.0, places=14)
        self.assertAlmostEqual(abs(decomp.vector(2)[0]), 2 ** -0.5, places=14)

    def test_identity(self):
        """I_5 has all eigenvalues 1 and zero residual."""
        decomp = eigen_full(np.eye(5))
        self.assertTrue(np.array_equal(decomp.eigenvalues, np.ones(5)))
        self.assertEqual(decomp.residual, 0.0)
        self.assertEqual(decomp.gram_error, 0.0)

    def test_residual_and_orthonormality(self):
        """Sampled matrices decompose with residual and Gram error below 1e-10."""
        for name in BUILTIN_NAMES:
            decomp = eigen_full(sample_matrix(builtin_ensemble(name), 20, 4).W)
            self.assertLessEqual(decomp.residual, 1e-10, name)
            self.assertLessEqual(decomp.gram_error, 1e-10, name)
            self.assertTrue(np.all(np.diff(decomp.eigenvalues) >= 0), name)

    def test_degenerate_cluster_is_orthonormal(self):
        """Repeated eigenvalues still get an orthonormal basis."""
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))
        H = Q @ np.diag([1.0, 1.0, 1.0, 2.0, 3.0, 3.0]) @ Q.T
        H = (H + H.T) / 2.0
        decomp = eigen_full(H)
        self.assertLessEqual(decomp.gram_error, 1e-10)
        self.assertLessEqual(decomp.residual, 1e-10)

    def test_phase_convention(self):
        """The largest coordinate of each eigenvector is real and positive."""
        decomp = eigen_full(random_hermitian(2, 10))
        vectors = decomp.eigenvectors
        lead = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(10)]
        self.assertTrue(np.all(np.abs(lead.imag) <= 1e-14))
        self.assertTrue(np.all(lead.real > 0))

    def test_bisection_matches_ql(self):
        """Both eigenvalue paths agree within 1e-9 ||H||."""
        for name in BUILTIN_NAMES:
            for seed in range(3):
                H = sample_matrix(builtin_ensemble(name), 40, seed).W
                T = tridiagonalize(H, accumulate=False)
                ql, _ = ql_implicit(T.diag, T.offdiag)
                bisect = eigenvalues_bisect(T)
                self.assertLessEqual(float(np.max(np.abs(np.sort(ql) - bisect))), 1e-9 * max(1.0, T.norm))

    def test_bisection_selected_indices(self):
        """Selected indices come back in the requested order."""
        H = random_hermitian(6, 15)
        T = tridiagonalize(H, accumulate=False)
        full = eigenvalues_bisect(T)
        picked = eigenvalues_bisect(T, [15, 1, 8])
        self.assertTrue(np.allclose(picked, full[[14, 0, 7]], atol=1e-12))
        with self.assertRaises(ContractViolation):
            eigenvalues_bisect(T, [0])

    def test_top_and_bottom(self):
        """top_eigenvalues returns the k extreme eigenvalues ascending."""
        H = random_hermitian(7, 25)
        full = eigenvalues(H)
        self.assertTrue(np.allclose(top_eigenvalues(H, 3, 'top'), full[-3:], atol=1e-11))
        self.assertTrue(np.allclose(top_eigenvalues(H, 2, 'bottom'), full[:2], atol=1e-11))

    def test_shift_equivariance(self):
        """Eigenvalues of H + tI are those of H shifted by t."""
        H = random_hermitian(11, 16)
        shifted = eigenvalues(H + 2.5 * np.eye(16))
        self.assertLessEqual(float(np.max(np.abs(shifted - eigenvalues(H) - 2.5))), 1e-10)

    def test_no_convergence_is_reported(self):
        """Running out of sweeps raises with the converged prefix attached."""
        with mock.patch.object(eigensolve, 'MAX_SWEEPS', 0):
            with self.assertRaises(EigensolverNoConvergence) as ctx:
                eigen_full(np.array([[0.0, 1.0], [1.0, 0.0]]))
        self.assertEqual(ctx.exception.details['index'], 1)
        self.assertEqual(ctx.exception.code, 'eigensolver-no-convergence')

    def test_decomposition_document(self):
        """to_dict splits eigenvectors into real and imaginary parts."""
        data = eigen_full(random_hermitian(4, 3)).to_dict()
        self.assertEqual(data['n'], 3)
        self.assertEqual(len(data['eigenvectors_real']), 3)
        self.assertEqual(len(data['eigenvectors_imag'][0]), 3)

    @hypothesis_settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.integers(min_value=1, max_value=24),
           st.booleans())
    def test_matches_reference_eigenvalues(self, seed, n, complex_entries):
        """Property: eigenvalues agree with LAPACK on random Hermitian inputs."""
        H = random_hermitian(seed, n, complex_entries)
        reference = np.linalg.eigvalsh(H)
        scale = max(1.0, float(np.max(np.abs(reference))))
        self.assertLessEqual(float(np.max(np.abs(eigenvalues(H) - reference))), 1e-10 * scale)
        self.assertLessEqual(eigen_full(H).residual, 1e-10)


@tag('statistical')
class SolverAgreementSweepTests(SimpleTestCase):
    """Bisection against QL over many seeds and dimensions."""

    def test_hundred_seeds(self):
        """Every builtin, n in {10, 50, 200}, 100 seeds: agreement within 1e-9 ||H||."""
        for name in BUILTIN_NAMES:
            spec = builtin_ensemble(name)
            for n in (10, 50, 200):
                for seed in range(100):
                    T = tridiagonalize(sample_matrix(spec, n, seed).W, accumulate=False)
                    ql, _ = ql_implicit(T.diag, T.offdiag)
                    gap = float(np.max(np.abs(np.sort(ql) - eigenvalues_bisect(T))))
                    self.assertLessEqual(gap, 1e-9 * max(1.0, T.norm), f'{name} n={n} seed={seed}')

    def test_decomposition_and_counts_sweep(self):
        """Every builtin, n in {5, 50, 200}, 50 seeds: residual, Gram error and additive counts."""
        for name in BUILTIN_NAMES:
            spec = builtin_ensemble(name)
            for n in (5, 50, 200):
                for seed in range(50):
                    W = sample_matrix(spec, n, seed).W
                    label = f'{name} n={n} seed={seed}'
                    decomp = eigen_full(W)
                    self.assertLessEqual(decomp.residual, 1e-10, label)
                    self.assertLessEqual(decomp.gram_error, 1e-10, label)
                    T = tridiagonalize(W, accumulate=False)
                    edges = np.linspace(-T.norm - 1.0, T.norm + 1.0, 9)
                    total = sum(count_in_interval(T, (a, b)) for a, b in zip(edges[:-1], edges[1:]))
                    self.assertEqual(total, n, label)

    def test_large_reduction_is_fast(self):
        """A 2000x2000 GUE sample reduces without Q in well under a minute."""
        W = sample_matrix(builtin_ensemble('gue'), 2000, 1).W
        started = time.perf_counter()
        T = tridiagonalize(W, accumulate=False)
        elapsed = time.perf_counter() - started
        self.assertEqual(count_in_interval(T, (-T.norm - 1.0, T.norm + 1.0)), 2000)
        self.assertLess(elapsed, 60.0)
