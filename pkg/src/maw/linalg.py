"""Dense double-precision linear algebra kernels.

Vectors are 1-d float64 arrays, matrices are 2-d float64 arrays (row major).
The symmetric eigensolver is a cyclic Jacobi iteration; everything downstream
(PSD square roots, spectral truncation gradients, closed-form Gaussian
distances) is built on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotPSDError, NumericalError, ShapeError

SYM_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
MAX_EIG_DIM = 64
PSD_EIG_FLOOR = -1e-10


def as_vector(x) -> np.ndarray:
    """Validate and convert to a nonempty finite 1-d float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"expected a nonempty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector entries must be finite")
    return v


def as_matrix(x) -> np.ndarray:
    """Validate and convert to a nonempty finite 2-d float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError(f"expected a nonempty matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix entries must be finite")
    return m


def is_symmetric(m: np.ndarray) -> bool:
    """Entrywise check |M[i,j] - M[j,i]| <= 1e-12 * max(1, |M[i,j]|)."""
    if m.shape[0] != m.shape[1]:
        return False
    diff = np.abs(m - m.T)
    tol = SYM_REL_TOL * np.maximum(1.0, np.abs(m))
    return bool(np.all(diff <= tol))


def require_symmetric(m) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    if not is_symmetric(m):
        raise DomainError("matrix is not symmetric within tolerance")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not chain")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericalError("matmul produced non-finite entries")
    return out


def l2_norm(v) -> float:
    return float(np.linalg.norm(as_vector(v)))


def frobenius_norm(m) -> float:
    return float(np.linalg.norm(as_matrix(m)))


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted descending (stable in the original index order on
    ties); eigenvectors are the matching orthonormal columns, each with its
    largest-magnitude entry made positive so the factorization is unique.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def recompose(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def _jacobi_rotate(a: np.ndarray, q: np.ndarray, p: int, r: int) -> None:
    """Zero a[p, r] with a two-sided rotation; accumulate into q columns."""
    apr = a[p, r]
    tau = (a[r, r] - a[p, p]) / (2.0 * apr)
    # hypot avoids overflow of tau*tau for nearly-converged pivots
    if tau >= 0.0:
        t = 1.0 / (tau + np.hypot(1.0, tau))
    else:
        t = -1.0 / (-tau + np.hypot(1.0, tau))
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c

    col_p = a[:, p].copy()
    col_r = a[:, r].copy()
    a[:, p] = c * col_p - s * col_r
    a[:, r] = s * col_p + c * col_r
    row_p = a[p, :].copy()
    row_r = a[r, :].copy()
    a[p, :] = c * row_p - s * row_r
    a[r, :] = s * row_p + c * row_r
    # the 2x2 pivot block is known analytically; overwrite to kill round-off
    a[p, p] = col_p[p] - t * apr
    a[r, r] = col_r[r] + t * apr
    a[p, r] = 0.0
    a[r, p] = 0.0

    qcol_p = q[:, p].copy()
    qcol_r = q[:, r].copy()
    q[:, p] = c * qcol_p - s * qcol_r
    q[:, r] = s * qcol_p + c * qcol_r


def sym_eig(m) -> SymEig:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix (dim <= 64).

    Sweeps until the off-diagonal Frobenius norm drops below
    1e-12 * max(1, ||M||_F); raises NumericalError after 100 sweeps.
    """
    m = require_symmetric(m)
    n = m.shape[0]
    if n > MAX_EIG_DIM:
        raise DomainError(f"sym_eig supports dimension <= {MAX_EIG_DIM}, got {n}")

    a = 0.5 * (m + m.T)
    q = np.eye(n)
    threshold = SYM_REL_TOL * max(1.0, float(np.linalg.norm(m)))

    def off_norm(x):
        return float(np.linalg.norm(x - np.diag(np.diag(x))))

    converged = False
    for _ in range(JACOBI_MAX_SWEEPS):
        if off_norm(a) <= threshold:
            converged = True
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                if a[p, r] != 0.0:
                    _jacobi_rotate(a, q, p, r)
    else:
        converged = off_norm(a) <= threshold
    if not converged:
        raise NumericalError("Jacobi eigensolver did not converge in 100 sweeps")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    q = q[:, order]
    # sign convention: largest-magnitude entry of each eigenvector positive
    for j in range(n):
        k = int(np.argmax(np.abs(q[:, j])))
        if q[k, j] < 0.0:
            q[:, j] = -q[:, j]
    return SymEig(eigenvalues=w, eigenvectors=q)


def sym_eig_2x2_batch(m3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigendecomposition of a stack of symmetric 2x2 matrices.

    Vectorized fast path for the batched training graph; follows the same
    conventions as sym_eig (descending eigenvalues, stable ties, columns with
    their largest-magnitude entry positive).  Returns (w (L, 2), q (L, 2, 2)).
    """
    a = m3[:, 0, 0]
    b = 0.5 * (m3[:, 0, 1] + m3[:, 1, 0])
    c = m3[:, 1, 1]
    half_sum = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    w = np.stack([half_sum + rad, half_sum - rad], axis=1)

    # eigenvector for the top eigenvalue: the better-conditioned of two candidates
    u = np.stack([b, w[:, 0] - a], axis=1)
    v = np.stack([w[:, 0] - c, b], axis=1)
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    pick_u = (nu >= nv)[:, None]
    top = np.where(pick_u, u, v)
    norm = np.where(pick_u[:, 0], nu, nv)
    degenerate = norm == 0.0  # multiple of the identity: keep Q = I
    safe = np.where(degenerate, 1.0, norm)
    top = np.where(degenerate[:, None], np.array([1.0, 0.0]), top / safe[:, None])
    q = np.empty_like(m3)
    q[:, :, 0] = top
    q[:, 0, 1] = -top[:, 1]
    q[:, 1, 1] = top[:, 0]
    # sign convention per column: largest-magnitude entry (first on ties) positive
    for col in range(2):
        use_row1 = np.abs(q[:, 1, col]) > np.abs(q[:, 0, col])
        lead = np.where(use_row1, q[:, 1, col], q[:, 0, col])
        q[:, :, col] *= np.where(lead < 0.0, -1.0, 1.0)[:, None]
    return w, q


def psd_sqrt(m) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-1e-10, 0) are treated as round-off and clamped to zero;
    anything below that raises NotPSDError.
    """
    eig = sym_eig(m)
    w = eig.eigenvalues
    if np.min(w) < PSD_EIG_FLOOR:
        raise NotPSDError(f"matrix has eigenvalue {np.min(w):.3e} < {PSD_EIG_FLOOR}")
    w = np.clip(w, 0.0, None)
    q = eig.eigenvectors
    root = (q * np.sqrt(w)) @ q.T
    return 0.5 * (root + root.T)
