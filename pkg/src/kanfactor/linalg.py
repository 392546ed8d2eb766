"""Dense linear algebra kernels: products, SPD solves, ridge regression.

Everything is float64 and strictly deterministic. Matrices are 2-d numpy
arrays in row-major order; vectors are 1-d arrays. SPD systems are solved
by an unpivoted Cholesky factorization, which doubles as the rank check
for the ridge normal equations.
"""

from __future__ import annotations

import numpy as np

from .errors import NonSpdError, RankDeficiencyError, ShapeError

__all__ = [
    "as_matrix",
    "as_vector",
    "matmul",
    "matvec",
    "cholesky_lower",
    "spd_solve",
    "ridge_solve",
]


def as_matrix(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate ``a`` as a finite 2-d float64 array, optionally pinning its shape."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ShapeError("matrix entries must be finite")
    return m


def as_vector(v, length: int | None = None) -> np.ndarray:
    """Validate ``v`` as a finite 1-d float64 array."""
    w = np.asarray(v, dtype=np.float64)
    if w.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got ndim={w.ndim}")
    if length is not None and w.shape[0] != length:
        raise ShapeError(f"expected length {length}, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ShapeError("vector entries must be finite")
    return w


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b with explicit dimension checking."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def matvec(a, v) -> np.ndarray:
    """Matrix-vector product a @ v with explicit dimension checking."""
    a = as_matrix(a)
    v = as_vector(v)
    if a.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot apply {a.shape[0]}x{a.shape[1]} to length-{v.shape[0]} vector")
    return a @ v


def _check_symmetric(a: np.ndarray) -> None:
    scale = 1.0 + (np.max(np.abs(a)) if a.size else 0.0)
    if a.size and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ShapeError("matrix is not symmetric within 1e-10")


def cholesky_lower(a) -> np.ndarray:
    """Lower Cholesky factor L with a = L L^T.

    Raises NonSpdError naming the failing pivot index when a pivot is not
    positive beyond numerical tolerance (n * eps * diagonal scale), which
    is how rank-deficient normal equations surface.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ShapeError(f"Cholesky requires a square matrix, got {n}x{m}")
    _check_symmetric(a)
    diag_scale = max(float(np.max(np.abs(np.diag(a)))), 1.0) if n else 1.0
    tol = n * np.finfo(np.float64).eps * diag_scale
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= tol:
            raise NonSpdError(pivot_index=j, pivot=float(pivot))
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def spd_solve(a, b) -> np.ndarray:
    """Solve a x = b for symmetric positive definite ``a`` via Cholesky."""
    a = as_matrix(a)
    b = as_vector(b, length=a.shape[0])
    lower = cholesky_lower(a)
    n = a.shape[0]
    y = np.zeros(n)
    for i in range(n):
        y[i] = (b[i] - lower[i, :i] @ y[:i]) / lower[i, i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - lower[i + 1 :, i] @ x[i + 1 :]) / lower[i, i]
    return x


def ridge_solve(z, r, lam: float) -> np.ndarray:
    """Ridge regression coefficients (z'z + lam I)^-1 z'r.

    With lam = 0 this is plain OLS and z'z must be numerically full rank;
    a singular system raises RankDeficiencyError suggesting lam > 0.
    """
    z = as_matrix(z)
    r = as_vector(r, length=z.shape[0])
    if lam < 0:
        raise ValueError(f"ridge penalty must be non-negative, got {lam}")
    normal = z.T @ z
    if lam > 0:
        normal = normal + lam * np.eye(z.shape[1])
    rhs = z.T @ r
    try:
        return spd_solve(normal, rhs)
    except NonSpdError as err:
        if lam == 0:
            raise RankDeficiencyError(
                "normal equations are rank deficient at lambda=0 "
                f"(pivot {err.pivot:.3e} at index {err.pivot_index}); "
                "use a ridge penalty lambda > 0"
            ) from err
        raise
