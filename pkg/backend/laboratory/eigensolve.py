"""
Hermitian eigensolver.

Householder reduction (LAPACK ?sytrd/?hetrd) to a real symmetric
tridiagonal matrix (complex phases absorbed so the off-diagonal is
nonnegative), implicit-shift QL with eigenvector accumulation,
Sturm-sequence counting and a bisection-only eigenvalue solve on the
tridiagonal form.

Eigenvalue indices follow the usual convention lambda_1 <= ... <= lambda_n;
arrays are ordered ascending.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .ensembles import HermitianMatrix
from .exceptions import ContractViolation, EigensolverNoConvergence

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-12
MAX_SWEEPS = 50
CLUSTER_TOLERANCE = 1e-10
BISECTION_MAX_STEPS = 200
QL_DIMENSION_LIMIT = 200
LAPACK_BLOCK = 64

EPS = np.finfo(float).eps
SAFMIN = np.finfo(float).tiny

MatrixLike = Union[np.ndarray, HermitianMatrix]


@dataclass(frozen=True, eq=False)
class Tridiagonal:
    """
    Real symmetric tridiagonal T with H = Q T Q*.

    ``transform`` is None when the reduction was run without accumulating Q.
    """
    diag: np.ndarray
    offdiag: np.ndarray
    transform: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    @property
    def norm(self) -> float:
        """Gershgorin bound on the spectral radius."""
        if self.n == 0:
            return 0.0
        off = np.abs(self.offdiag)
        radius = np.abs(self.diag).copy()
        radius[:-1] += off
        radius[1:] += off
        return float(radius.max())

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def reconstruct(self) -> np.ndarray:
        if self.transform is None:
            raise ContractViolation('Tridiagonal form was computed without its transform.')
        Q = self.transform
        return Q @ self.to_dense() @ Q.conj().T


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """
    Ascending eigenvalues, matching orthonormal eigenvectors (columns) and
    accuracy metadata: ``residual`` is max_i ||H u_i - lambda_i u_i|| / max(1, ||H||)
    and ``gram_error`` is max |U*U - I|.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual: float
    gram_error: float
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def vector(self, i: int) -> np.ndarray:
        """u_i, 1-based."""
        return self.eigenvectors[:, i - 1]

    def to_dict(self) -> Dict:
        vectors = self.eigenvectors
        return {
            'n': self.n,
            'eigenvalues': self.eigenvalues.tolist(),
            'eigenvectors_real': vectors.real.tolist(),
            'eigenvectors_imag': (vectors.imag if np.iscomplexobj(vectors) else np.zeros_like(vectors)).tolist(),
            'residual': self.residual,
            'gram_error': self.gram_error,
            'iterations': self.iterations,
        }


def as_array(H: MatrixLike) -> np.ndarray:
    if isinstance(H, HermitianMatrix):
        return H.entries
    return np.asarray(H)


def hermitian_defect(H: np.ndarray) -> float:
    if H.size == 0:
        return 0.0
    return float(np.max(np.abs(H - H.conj().T)))


def check_hermitian(H: np.ndarray) -> None:
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ContractViolation(f'Expected a square matrix, got shape {H.shape}.')
    defect = hermitian_defect(H)
    if defect > HERMITIAN_TOLERANCE:
        raise ContractViolation(
            f'Matrix is not Hermitian (asymmetry {defect:.3e}).',
            {'asymmetry': defect},
        )


def _householder_blocks(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    LAPACK ``?sytrd``/``?hetrd`` on the lower triangle: packed reflectors,
    diagonal, subdiagonal and the reflector scalars tau.
    """
    names = ('hetrd',) if np.iscomplexobj(A) else ('sytrd',)
    reduce, = linalg.get_lapack_funcs(names, (A,))
    n = A.shape[0]
    packed, diag, sub, tau, info = reduce(A, lower=1, lwork=max(1, LAPACK_BLOCK * n))
    if info != 0:
        raise ContractViolation(f'Householder reduction failed (LAPACK info={info}).', {'info': int(info)})
    return packed, np.asarray(diag, dtype=np.float64), np.asarray(sub), np.asarray(tau)


def _accumulate_reflectors(packed: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """
    Q = H_1 H_2 ... H_{n-1} with H_k = I - tau_k v_k v_k*, built backwards so
    each reflector only touches the trailing block it acts on.
    """
    n = packed.shape[0]
    Q = np.eye(n, dtype=packed.dtype)
    for k in range(n - 2, -1, -1):
        if tau[k] == 0:
            continue
        v = np.empty(n - k - 1, dtype=packed.dtype)
        v[0] = 1.0
        v[1:] = packed[k + 2:, k]
        block = Q[k + 1:, k + 1:]
        block -= tau[k] * np.outer(v, v.conj() @ block)
    return Q


def tridiagonalize(H: MatrixLike, accumulate: bool = True) -> Tridiagonal:
    """
    Householder reduction H = Q T Q*.

    The reflectors come from LAPACK's blocked reduction of the lower
    triangle; Q is accumulated from them only when asked for. The resulting
    subdiagonal phases are absorbed into a diagonal unitary so the returned
    off-diagonal is real and nonnegative.

    Raises:
        ContractViolation: the input is not Hermitian.
    """
    H = as_array(H)
    check_hermitian(H)
    n = H.shape[0]
    dtype = np.complex128 if np.iscomplexobj(H) else np.float64

    if n < 3:
        diag = np.real(np.diagonal(H)).astype(np.float64)
        sub = np.array(H[1:, 0] if n == 2 else [], dtype=dtype)
        Q = np.eye(n, dtype=dtype) if accumulate else None
    else:
        A = np.array(H, dtype=dtype, order='F', copy=True)
        packed, diag, sub, tau = _householder_blocks(A)
        Q = _accumulate_reflectors(packed, tau) if accumulate else None

    magnitudes = np.abs(sub)
    phases = np.ones(n, dtype=dtype)
    for k in range(n - 1):
        if magnitudes[k] > 0:
            phases[k + 1] = phases[k] * sub[k] / magnitudes[k]
        else:
            phases[k + 1] = phases[k]
    if Q is not None:
        Q = Q * phases[np.newaxis, :]

    return Tridiagonal(diag=diag, offdiag=magnitudes.astype(np.float64), transform=Q)


def _pivot_floor(T: Tridiagonal) -> float:
    return SAFMIN * max(1.0, T.norm ** 2)


def sturm_count(T: Tridiagonal, shifts: Union[float, Sequence[float], np.ndarray]) -> np.ndarray:
    """
    Number of eigenvalues strictly below each shift.

    Counts negative pivots of the LDL* factorisation of T - xI. A pivot that
    is exactly zero is replaced by +pivmin so an eigenvalue sitting on the
    shift is not counted as below it.
    """
    x = np.atleast_1d(np.asarray(shifts, dtype=np.float64))
    n = T.n
    counts = np.zeros(x.shape, dtype=np.int64)
    if n == 0:
        return counts
    pivmin = _pivot_floor(T)
    e2 = T.offdiag.astype(np.float64) ** 2
    with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
        q = T.diag[0] - x
        for k in range(n):
            if k > 0:
                q = (T.diag[k] - x) - e2[k - 1] / q
            small = np.abs(q) < pivmin
            if small.any():
                q = np.where(small, np.where(q < 0, -pivmin, pivmin), q)
            counts += q < 0
    return counts


def _endpoints(interval) -> Tuple[float, float]:
    if hasattr(interval, 'a') and hasattr(interval, 'b'):
        return float(interval.a), float(interval.b)
    a, b = interval
    return float(a), float(b)


def count_in_interval(T: Tridiagonal, interval) -> int:
    """
    Number of eigenvalues of T in the half-open interval [a, b).

    Raises:
        ContractViolation: a >= b.
    """
    a, b = _endpoints(interval)
    if not a < b:
        raise ContractViolation(f'Interval endpoints must satisfy a < b, got [{a}, {b}).')
    below = sturm_count(T, [a, b])
    return int(below[1] - below[0])


def eigenvalues_bisect(T: Tridiagonal, indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Eigenvalues of T by Sturm bisection, vectorised over the requested
    (1-based) indices. With no indices, the whole spectrum ascending.
    """
    n = T.n
    if n == 0:
        return np.zeros(0)
    wanted = np.arange(n) if indices is None else np.asarray(indices, dtype=np.int64) - 1
    if wanted.size and (wanted.min() < 0 or wanted.max() >= n):
        raise ContractViolation(f'Eigenvalue indices must lie in 1..{n}.')
    radius = T.norm
    pad = 2.0 * EPS * max(radius, 1.0) + 4.0 * _pivot_floor(T)
    lo = np.full(wanted.shape, -radius - pad)
    hi = np.full(wanted.shape, radius + pad)
    for _ in range(BISECTION_MAX_STEPS):
        width = hi - lo
        scale = np.maximum(np.abs(lo), np.abs(hi))
        active = width > 2.0 * EPS * scale + SAFMIN
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        below = sturm_count(T, mid)
        go_left = below > wanted
        hi = np.where(active & go_left, mid, hi)
        lo = np.where(active & ~go_left, mid, lo)
    return 0.5 * (lo + hi)


def ql_implicit(diag: Sequence[float], offdiag: Sequence[float],
                vectors: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
    """
    Implicit-shift QL iteration on a symmetric tridiagonal matrix.

    ``vectors`` holds eigenvector candidates as ROWS and is rotated in place
    (pass Q^T to obtain the eigenvectors of H = Q T Q*). Returns the
    unsorted eigenvalues and the total number of iterations.

    Raises:
        EigensolverNoConvergence: an eigenvalue needed more than MAX_SWEEPS
            iterations.
    """
    d = [float(v) for v in diag]
    n = len(d)
    e = [float(v) for v in offdiag] + [0.0]
    total = 0
    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= EPS * dd:
                    break
                m += 1
            if m == l:
                break
            if sweeps == MAX_SWEEPS:
                raise EigensolverNoConvergence(
                    f'QL iteration did not converge for eigenvalue {l + 1} after {MAX_SWEEPS} sweeps.',
                    {'index': l + 1, 'converged': d[:l], 'offdiag_remaining': e[l:n - 1]},
                )
            sweeps += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            deflated = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if vectors is not None:
                    upper = vectors[i + 1].copy()
                    vectors[i + 1] = s * vectors[i] + c * upper
                    vectors[i] = c * vectors[i] - s * upper
                i -= 1
            if deflated:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
        total += sweeps
    return np.array(d), total


def _orthonormalize_clusters(eigenvalues: np.ndarray, vectors: np.ndarray, scale: float) -> None:
    n = eigenvalues.shape[0]
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and eigenvalues[stop] - eigenvalues[stop - 1] <= CLUSTER_TOLERANCE * scale:
            stop += 1
        if stop - start > 1:
            for j in range(start, stop):
                v = vectors[:, j]
                for k in range(start, j):
                    v -= np.vdot(vectors[:, k], v) * vectors[:, k]
                v /= np.linalg.norm(v)
        start = stop


def _fix_phases(vectors: np.ndarray) -> None:
    """Make the largest-magnitude coordinate of each column real positive."""
    n = vectors.shape[1]
    pivots = np.argmax(np.abs(vectors), axis=0)
    lead = vectors[pivots, np.arange(n)]
    vectors *= (np.conj(lead) / np.abs(lead))[np.newaxis, :]


def eigen_full(H: MatrixLike) -> SpectralDecomposition:
    """
    Full eigendecomposition of a Hermitian matrix.

    Householder tridiagonalisation followed by implicit QL with eigenvector
    accumulation; output sorted ascending with vectors permuted to match,
    clusters re-orthonormalised by modified Gram-Schmidt and phases fixed.

    Raises:
        ContractViolation: the input is not Hermitian.
        EigensolverNoConvergence: see ``ql_implicit``.
    """
    H = as_array(H)
    n = H.shape[0]
    T = tridiagonalize(H, accumulate=True)
    rows = np.ascontiguousarray(T.transform.T)
    values, iterations = ql_implicit(T.diag, T.offdiag, rows)
    order = np.argsort(values, kind='stable')
    eigenvalues = values[order]
    vectors = np.ascontiguousarray(rows[order].T)

    scale = max(1.0, float(np.max(np.abs(eigenvalues)))) if n else 1.0
    _orthonormalize_clusters(eigenvalues, vectors, scale)
    if n:
        _fix_phases(vectors)

    residual_matrix = H @ vectors - vectors * eigenvalues[np.newaxis, :]
    residual = float(np.max(np.linalg.norm(residual_matrix, axis=0))) / scale if n else 0.0
    gram = vectors.conj().T @ vectors
    gram_error = float(np.max(np.abs(gram - np.eye(n)))) if n else 0.0
    logger.debug('eigen_full n=%d iterations=%d residual=%.2e gram=%.2e', n, iterations, residual, gram_error)
    return SpectralDecomposition(
        eigenvalues=eigenvalues,
        eigenvectors=vectors,
        residual=residual,
        gram_error=gram_error,
        iterations=iterations,
    )


def eigenvalues(H: MatrixLike) -> np.ndarray:
    """
    Ascending eigenvalues without eigenvectors.

    Small problems run QL on the tridiagonal form; larger ones use the
    vectorised bisection, which is cheaper than scalar QL sweeps.
    """
    T = tridiagonalize(H, accumulate=False)
    if T.n <= QL_DIMENSION_LIMIT:
        values, _ = ql_implicit(T.diag, T.offdiag)
        return np.sort(values)
    return eigenvalues_bisect(T)


def top_eigenvalues(H: MatrixLike, k: int, side: str = 'top') -> np.ndarray:
    """The k largest (side='top') or smallest (side='bottom') eigenvalues, ascending."""
    T = tridiagonalize(H, accumulate=False)
    n = T.n
    k = min(k, n)
    indices = range(n - k + 1, n + 1) if side == 'top' else range(1, k + 1)
    return eigenvalues_bisect(T, list(indices))


def decomposition_rows(decomp: SpectralDecomposition) -> List[Dict]:
    """Flat rows (index, eigenvalue, coordinate, re, im) for CSV dumps."""
    rows = []
    vectors = decomp.eigenvectors
    for i in range(decomp.n):
        for j in range(decomp.n):
            value = vectors[j, i]
            rows.append({
                'index': i + 1,
                'eigenvalue': float(decomp.eigenvalues[i]),
                'coordinate': j + 1,
                're': float(np.real(value)),
                'im': float(np.imag(value)),
            })
    return rows
