"""Learnable univariate edge functions built on clamped uniform B-splines.

Each edge function combines a fixed silu ramp with a spline correction:

    phi(x) = w_b * silu(x) + sum_m c_m * B_m(clip(x, lo, hi))

The basis B_m is a degree-k B-spline basis on a uniform grid with the
endpoint knots repeated k+1 times, so the G + k basis functions form a
partition of unity on [lo, hi] and span all polynomials up to degree k
there. The spline term sees the clamped input (the basis stays defined
everywhere); the silu term sees the raw input, so the edge keeps a live
gradient even for inputs far outside the grid.

All derivatives are analytic. The input derivative of the spline term is
taken to be zero strictly outside [lo, hi], where clamping makes the term
constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

__all__ = [
    "SplineGrid",
    "SplineFunction",
    "silu",
    "silu_grad",
    "basis_matrix",
    "basis_deriv_matrix",
    "bspline_basis",
    "bspline_basis_deriv",
    "spline_eval",
    "spline_grad",
    "init_spline",
]


def silu(x):
    """silu(x) = x * sigmoid(x), the fixed base term of every edge."""
    return x * expit(x)


def silu_grad(x):
    """d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))."""
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True)
class SplineGrid:
    """Uniform B-spline grid on [lo, hi] with ``intervals`` cells of degree ``degree``.

    The extended knot vector has length intervals + 2*degree + 1: the
    endpoints are repeated degree+1 times (a clamped grid), the interior
    knots are uniformly spaced. It carries intervals + degree basis
    functions.
    """

    lo: float = -1.0
    hi: float = 1.0
    intervals: int = 5
    degree: int = 3

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.intervals < 1:
            raise ValueError(f"need at least 1 interval, got {self.intervals}")
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")

    @property
    def num_basis(self) -> int:
        return self.intervals + self.degree

    @cached_property
    def knots(self) -> np.ndarray:
        inner = np.linspace(self.lo, self.hi, self.intervals + 1)
        return np.concatenate(
            [np.full(self.degree, self.lo), inner, np.full(self.degree, self.hi)]
        )

    @cached_property
    def _span_reciprocals(self) -> list[tuple[np.ndarray, np.ndarray]]:
        # 1 / (t_{i+d} - t_i) per degree-raising step, with empty spans mapped
        # to 0 so the conventional 0/0 := 0 terms drop out of a plain product.
        knots = self.knots
        out = []
        for d in range(1, self.degree + 1):
            left_den = knots[d:-1] - knots[: -d - 1]
            right_den = knots[d + 1 :] - knots[1:-d]
            inv_left = np.where(left_den > 0, 1.0 / np.where(left_den > 0, left_den, 1.0), 0.0)
            inv_right = np.where(right_den > 0, 1.0 / np.where(right_den > 0, right_den, 1.0), 0.0)
            out.append((inv_left, inv_right))
        return out


@dataclass(frozen=True, eq=False)
class SplineFunction:
    """One learnable edge: grid, spline coefficients, and the silu base weight."""

    grid: SplineGrid
    coeffs: np.ndarray
    base_weight: float = 1.0

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", coeffs)
        if coeffs.shape != (self.grid.num_basis,):
            raise ValueError(
                f"expected {self.grid.num_basis} coefficients, got shape {coeffs.shape}"
            )
        if not (np.all(np.isfinite(coeffs)) and np.isfinite(self.base_weight)):
            raise ValueError("spline parameters must be finite")


def _degree_zero(xc: np.ndarray, knots: np.ndarray, last_span: int) -> np.ndarray:
    # Half-open indicator functions, with the last nonempty span closed on the
    # right so x == hi lands in a basis function.
    b = ((xc[:, None] >= knots[None, :-1]) & (xc[:, None] < knots[None, 1:])).astype(np.float64)
    b[xc >= knots[last_span], last_span] = 1.0
    return b


def _raise_degree(
    b: np.ndarray, xc: np.ndarray, knots: np.ndarray, d: int,
    inv_left: np.ndarray, inv_right: np.ndarray,
) -> np.ndarray:
    # One Cox-de Boor step from degree d-1 to degree d; empty-span terms
    # vanish because their reciprocals are stored as 0.
    left = xc[:, None] - knots[None, : -d - 1]
    left *= inv_left
    left *= b[:, :-1]
    right = knots[None, d + 1 :] - xc[:, None]
    right *= inv_right
    right *= b[:, 1:]
    left += right
    return left


def _bases_up_to(x: np.ndarray, grid: SplineGrid, degree: int) -> np.ndarray:
    xc = np.clip(x, grid.lo, grid.hi)
    knots = grid.knots
    last_span = grid.intervals + grid.degree - 1
    b = _degree_zero(xc, knots, last_span)
    for d in range(1, degree + 1):
        inv_left, inv_right = grid._span_reciprocals[d - 1]
        b = _raise_degree(b, xc, knots, d, inv_left, inv_right)
    return b


def basis_matrix(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """Basis values B_m(clip(x)) for a flat batch; shape (len(x), num_basis)."""
    return _bases_up_to(np.asarray(x, dtype=np.float64), grid, grid.degree)


def basis_and_lower(x: np.ndarray, grid: SplineGrid) -> tuple[np.ndarray, np.ndarray | None]:
    """Both the degree-k bases and the degree-(k-1) bases of one chain.

    The lower-degree bases feed the derivative formula; computing them in
    the same pass lets a forward/backward pair share the work.
    """
    x = np.asarray(x, dtype=np.float64)
    k = grid.degree
    if k == 0:
        return _bases_up_to(x, grid, 0), None
    lower = _bases_up_to(x, grid, k - 1)
    xc = np.clip(x, grid.lo, grid.hi)
    inv_left, inv_right = grid._span_reciprocals[k - 1]
    full = _raise_degree(lower, xc, grid.knots, k, inv_left, inv_right)
    return full, lower


def deriv_from_lower(x: np.ndarray, lower: np.ndarray | None, grid: SplineGrid) -> np.ndarray:
    """Derivative matrix given the degree-(k-1) bases at the same points."""
    x = np.asarray(x, dtype=np.float64)
    k = grid.degree
    if k == 0 or lower is None:
        return np.zeros((x.shape[0], grid.num_basis))
    inv_left, inv_right = grid._span_reciprocals[k - 1]
    deriv = k * (lower[:, :-1] * inv_left - lower[:, 1:] * inv_right)
    deriv[(x < grid.lo) | (x > grid.hi)] = 0.0
    return deriv


def basis_deriv_matrix(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """Input derivatives dB_m/dx, zero for x strictly outside [lo, hi]."""
    x = np.asarray(x, dtype=np.float64)
    if grid.degree == 0:
        return np.zeros((x.shape[0], grid.num_basis))
    lower = _bases_up_to(x, grid, grid.degree - 1)
    return deriv_from_lower(x, lower, grid)


def bspline_basis(x: float, grid: SplineGrid) -> np.ndarray:
    """Basis values at a single point (input clamped into [lo, hi])."""
    return basis_matrix(np.array([x]), grid)[0]


def bspline_basis_deriv(x: float, grid: SplineGrid) -> np.ndarray:
    """Basis derivatives at a single point; zero outside [lo, hi]."""
    return basis_deriv_matrix(np.array([x]), grid)[0]


def spline_eval(f: SplineFunction, x: float) -> float:
    """phi(x) = base_weight * silu(x) + coeffs . B(clip(x))."""
    return float(f.base_weight * silu(x) + bspline_basis(x, f.grid) @ f.coeffs)


def spline_grad(f: SplineFunction, x: float, upstream: float):
    """Upstream-scaled partials of phi at x.

    Returns (dx, dcoeffs, dbase) where dx carries the silu derivative
    everywhere plus the spline derivative inside the grid, dcoeffs are the
    basis values, and dbase is silu(x).
    """
    dx = upstream * float(f.base_weight * silu_grad(x) + bspline_basis_deriv(x, f.grid) @ f.coeffs)
    dcoeffs = upstream * bspline_basis(x, f.grid)
    dbase = upstream * float(silu(x))
    return dx, dcoeffs, dbase


def init_spline(rng_seed: int, grid: SplineGrid, noise_scale: float) -> SplineFunction:
    """Fresh edge: coefficients i.i.d. uniform in [-noise_scale, noise_scale], base weight 1."""
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")
    rng = np.random.default_rng(rng_seed)
    coeffs = rng.uniform(-noise_scale, noise_scale, size=grid.num_basis)
    return SplineFunction(grid=grid, coeffs=coeffs, base_weight=1.0)
