"""Dense linear algebra and signal kernels shared by the rest of the package.

Matrices are plain ``float64`` numpy arrays. Every function validates its
input, never mutates it, and returns fresh arrays.
"""
from __future__ import annotations

import logging
import math
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-8
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class NumericsError(ValueError):
    pass


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns are unit eigenvectors


class SVDResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray  # descending, non-negative
    v: np.ndarray  # columns are right singular vectors


class PCAResult(NamedTuple):
    components: np.ndarray  # k x kept features, orthonormal rows
    projected: np.ndarray  # samples x k
    explained_variance: np.ndarray  # k, non-increasing
    explained_variance_ratio: np.ndarray
    kept_columns: np.ndarray  # indices of non-constant input columns


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise NumericsError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericsError(f"{name} has non-finite entries")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    a = np.array(x, dtype=np.float64).reshape(-1) if np.ndim(x) else np.array([x], float)
    if not np.all(np.isfinite(a)):
        raise NumericsError(f"{name} has non-finite entries")
    return a


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def asymmetry(m: np.ndarray) -> float:
    return max_abs(m - m.T)


def check_symmetric(m, name: str = "matrix") -> np.ndarray:
    """Validate ``m`` as square, finite and symmetric within tolerance; return (M+Mᵀ)/2."""
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise NumericsError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, max_abs(a))
    if asymmetry(a) > SYMMETRY_RTOL * scale:
        raise NumericsError(
            f"{name} is not symmetric: max |M - M^T| = {asymmetry(a):.3e}"
        )
    return 0.5 * (a + a.T)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every column made positive; first index wins ties
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray, int]:
    """Cyclic Jacobi rotations on a symmetric matrix.

    Returns unsorted eigenvalues, the accumulated rotation matrix and the
    number of sweeps used. Stops once the off-diagonal Frobenius norm falls
    to ``tol * ||a||_F`` or after ``max_sweeps`` sweeps.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    target = tol * np.linalg.norm(a)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= target:
            sweeps -= 1
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) <= 1e-18 * (abs(a[p, p]) + abs(a[q, q])):
                    a[p, q] = a[q, p] = 0.0
                    continue
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff  # tan of the tiny rotation angle
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, sweeps


def sym_eigendecompose(m, method: str = "lapack") -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    ``method="jacobi"`` runs the cyclic Jacobi solver above; ``"lapack"``
    (default) calls ``numpy.linalg.eigh``, which is far faster on the
    hundreds-to-thousands sized Hessians produced during training. Both
    return the same sign-fixed, ascending layout.
    """
    a = check_symmetric(m)
    n = a.shape[0]
    if n == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0)))
    if method == "jacobi":
        w, v, _ = jacobi_eigh(a)
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
    elif method == "lapack":
        w, v = np.linalg.eigh(a)
    else:
        raise NumericsError(f"unknown eigensolver {method!r}")
    return EigenDecomposition(w, _fix_signs(v))


def sym_eigenvalues(m, method: str = "lapack") -> np.ndarray:
    a = check_symmetric(m)
    if method == "lapack":
        return np.linalg.eigvalsh(a) if a.size else np.zeros(0)
    return sym_eigendecompose(a, method).eigenvalues


def svd(m) -> SVDResult:
    """Thin SVD through the eigendecomposition of the smaller Gram matrix.

    Right singular vectors follow the largest-entry-positive sign rule so
    results are reproducible run to run.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if rows < cols:
        t = svd(a.T)
        v = _fix_signs(t.u)
        flip = np.sign(np.sum(v * t.u, axis=0))
        flip[flip == 0] = 1.0
        return SVDResult(t.v * flip, t.s, v)
    k = cols
    if k == 0:
        return SVDResult(np.zeros((rows, 0)), np.zeros(0), np.zeros((0, 0)))
    w, v = sym_eigendecompose(a.T @ a)
    w, v = w[::-1], v[:, ::-1]
    s = np.sqrt(np.clip(w, 0.0, None))
    av = a @ v
    tol = max(rows, cols) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    u = np.zeros((rows, k))
    good = s > tol
    u[:, good] = av[:, good] / s[good]
    if not np.all(good):
        # complete U with an orthonormal basis of the complement
        q, _ = np.linalg.qr(np.hstack([u[:, good], np.eye(rows)[:, : rows]]))
        u[:, ~good] = q[:, int(good.sum()): int(good.sum()) + int((~good).sum())]
        s = np.where(good, s, 0.0)
    return SVDResult(u, s, v)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def real_fft_power(signal) -> np.ndarray:
    """|FFT|² for bins 0..n/2 of a real signal whose length is a power of two."""
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    n = x.size
    if n < 2 or not _is_power_of_two(n):
        raise NumericsError(f"signal length must be a power of two >= 2, got {n}")
    if not np.all(np.isfinite(x)):
        raise NumericsError("signal has non-finite samples")
    spec = np.fft.rfft(x)
    return spec.real ** 2 + spec.imag ** 2


def pearson_corr(x, y) -> float:
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.size != y.size:
        raise NumericsError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise NumericsError("need at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise NumericsError("correlation undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def standardize_columns(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean, unit population-std columns; constant columns are dropped.

    Returns the standardized matrix and the indices of the kept columns.
    """
    x = as_matrix(x)
    mean = x.mean(axis=0)
    centered = x - mean
    std = np.sqrt(np.mean(centered ** 2, axis=0))
    scale = np.maximum(np.abs(mean), 1.0)
    keep = std > 1e-12 * scale
    if not np.all(keep):
        log.debug("dropping %d constant column(s): %s",
                    int((~keep).sum()), np.flatnonzero(~keep).tolist())
    idx = np.flatnonzero(keep)
    return centered[:, idx] / std[idx], idx


def pca_project(x, k: int) -> PCAResult:
    x = as_matrix(x, "X")
    n, f = x.shape
    if n < 2:
        raise NumericsError("PCA needs at least 2 samples")
    if k < 1 or k > min(n, f):
        raise NumericsError(f"k={k} must lie in [1, {min(n, f)}]")
    z, kept = standardize_columns(x)
    if z.shape[1] < k:
        raise NumericsError(
            f"only {z.shape[1]} non-constant feature(s) left, cannot extract k={k}")
    res = svd(z)
    comps = res.v[:, :k].T
    # sign rule on components, mirrored into projections
    signs = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    projected = z @ comps.T
    var = res.s[:k] ** 2 / n
    total = float(np.sum(res.s ** 2) / n)
    ratio = var / total if total > 0 else np.zeros(k)
    return PCAResult(comps, projected, var, ratio, kept)
