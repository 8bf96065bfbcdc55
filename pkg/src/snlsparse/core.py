"""Domain types shared by every module: parameter grids, atomic measures,
normalized dictionaries and measurement synthesis.

Conventions
-----------
A dictionary stores the normalized feature vectors ``phi(eta_j)`` of every
grid point as the columns of an ``n x m`` matrix together with their
derivatives with respect to the parameter.  For ``p = 1`` ``deriv1`` holds a
single matrix and ``deriv2`` a single matrix; for ``p = 2`` ``deriv1`` holds
``(d/dtheta_1, d/dtheta_2)`` and ``deriv2`` holds ``(11, 12, 22)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateColumn, DimensionMismatch, EmptySupport, SupportOffGrid

GRID_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class ParameterGrid:
    """Uniform tensor grid in one or two dimensions.

    Points of a 2D grid are enumerated in C order: index ``i0 * m1 + i1``.
    """

    axes: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if len(axes) not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        for a in axes:
            if a.ndim != 1 or a.size < 2:
                raise ValueError("each axis needs at least two points")
            steps = np.diff(a)
            if np.any(steps <= 0):
                raise ValueError("axis points must be strictly increasing")
            if np.max(np.abs(steps - steps.mean())) > 1e-9 * max(1.0, abs(steps.mean())):
                raise ValueError("axis spacing must be uniform")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def uniform(cls, start, stop, m):
        return cls((np.linspace(start, stop, m),))

    @classmethod
    def uniform_2d(cls, start0, stop0, m0, start1, stop1, m1):
        return cls((np.linspace(start0, stop0, m0), np.linspace(start1, stop1, m1)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def m(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def points(self) -> np.ndarray:
        if self.dim == 1:
            return self.axes[0]
        g0, g1 = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])

    def nearest_index(self, pts) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(pts, dtype=float))
        if self.dim == 1:
            a = self.axes[0]
            idx = np.clip(np.rint((pts - a[0]) / self.spacing[0]), 0, a.size - 1)
            return idx.astype(int)
        pts = pts.reshape(-1, 2)
        per_axis = []
        for l, a in enumerate(self.axes):
            per_axis.append(
                np.clip(np.rint((pts[:, l] - a[0]) / self.spacing[l]), 0, a.size - 1).astype(int)
            )
        return per_axis[0] * self.shape[1] + per_axis[1]

    def index_of(self, pts, atol=GRID_ATOL) -> np.ndarray:
        """Grid indices of ``pts``; raises :class:`SupportOffGrid` otherwise."""
        idx = self.nearest_index(pts)
        found = self.points[idx]
        pts = np.asarray(pts, dtype=float).reshape(found.shape)
        err = np.abs(found - pts)
        if err.ndim == 2:
            err = err.max(axis=1)
        if np.any(err > atol):
            bad = np.asarray(pts)[err > atol]
            raise SupportOffGrid(f"points not on grid: {bad.tolist()}")
        return idx

    def to_dict(self) -> dict:
        return {"dim": self.dim, "axes": [a.tolist() for a in self.axes]}


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finite signed sum of Dirac masses ``sum_i c_i delta_{theta_i}``.

    One-dimensional supports are sorted ascending on construction (the
    coefficients follow their points).
    """

    support: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        supp = np.asarray(self.support, dtype=float)
        coef = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        if supp.ndim == 0:
            supp = supp.reshape(1)
        if supp.shape[0] != coef.size or coef.size < 1:
            raise ValueError("support and coefficients must have the same nonzero length")
        if np.any(coef == 0):
            raise ValueError("coefficients must be nonzero")
        if supp.ndim == 1:
            order = np.argsort(supp, kind="stable")
            supp, coef = supp[order], coef[order]
            if np.any(np.diff(supp) <= 0):
                raise ValueError("support points must be distinct")
        else:
            for i in range(len(supp)):
                if np.any(np.all(supp[i + 1:] == supp[i], axis=1)):
                    raise ValueError("support points must be distinct")
        object.__setattr__(self, "support", supp)
        object.__setattr__(self, "coefficients", coef)

    @property
    def k(self) -> int:
        return self.coefficients.size

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.coefficients)

    def to_vector(self, grid: ParameterGrid) -> np.ndarray:
        x = np.zeros(grid.m)
        x[grid.index_of(self.support)] = self.coefficients
        return x


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Normalized feature matrix over a parameter grid plus derivatives.

    ``feature_map``, when present, evaluates ``(phi, dphi, d2phi)`` at
    arbitrary parameters in the same layout as the stored matrices; it is
    available for analytic forward models only.
    """

    grid: ParameterGrid
    sample_locations: np.ndarray
    columns: np.ndarray
    deriv1: tuple
    deriv2: tuple
    provenance: dict = field(default_factory=dict)
    feature_map: Optional[Callable] = None

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def m(self) -> int:
        return self.columns.shape[1]

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def sensitivity(self) -> np.ndarray:
        """``||d phi / d theta_l||^2`` per grid point, shape ``(p, m)``."""
        return np.array([np.einsum("ij,ij->j", d, d) for d in self.deriv1])


@dataclass(frozen=True, eq=False)
class MeasurementVector:
    y: np.ndarray
    noise_level: float = 0.0
    seed: Optional[int] = None


def _quotient_rule(raw, d1, d2):
    """Derivatives of ``r / ||r||`` given derivatives of ``r`` (columnwise)."""
    norm = np.sqrt(np.einsum("ij,ij->j", raw, raw))
    phi = raw / norm
    p = len(d1)
    # N_a = phi^T r_a
    na = [np.einsum("ij,ij->j", phi, d) for d in d1]
    n1 = [(d - phi * na_l) / norm for d, na_l in zip(d1, na)]
    pairs = [(0, 0)] if p == 1 else [(0, 0), (0, 1), (1, 1)]
    n2 = []
    for (a, b), rab in zip(pairs, d2):
        # N_ab = (r_a^T r_b + r^T r_ab - N_a N_b) / N
        nab = (np.einsum("ij,ij->j", d1[a], d1[b]) + np.einsum("ij,ij->j", raw, rab)
               - na[a] * na[b]) / norm
        out = (rab / norm - d1[a] * na[b] / norm**2 - d1[b] * na[a] / norm**2
               - raw * nab / norm**2 + 2 * raw * na[a] * na[b] / norm**3)
        n2.append(out)
    return phi, tuple(n1), tuple(n2)


def normalize_columns(raw, raw_deriv1, raw_deriv2, grid: ParameterGrid,
                      sample_locations=None, provenance=None, feature_map=None) -> Dictionary:
    """Scale columns to unit norm and carry derivatives through the quotient rule.

    ``raw_deriv1``/``raw_deriv2`` are sequences of matrices (one per
    coordinate / coordinate pair); a bare matrix is accepted in 1D.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise DimensionMismatch("raw dictionary must be a matrix")
    if isinstance(raw_deriv1, np.ndarray):
        raw_deriv1 = (raw_deriv1,)
    if isinstance(raw_deriv2, np.ndarray):
        raw_deriv2 = (raw_deriv2,)
    expected = (1, 1) if grid.dim == 1 else (2, 3)
    if (len(raw_deriv1), len(raw_deriv2)) != expected:
        raise DimensionMismatch("wrong number of derivative matrices for grid dimension")
    if raw.shape[1] != grid.m:
        raise DimensionMismatch(f"dictionary has {raw.shape[1]} columns, grid has {grid.m} points")
    for d in (*raw_deriv1, *raw_deriv2):
        if np.shape(d) != raw.shape:
            raise DimensionMismatch("derivative matrices must match the dictionary shape")
    norms = np.sqrt(np.einsum("ij,ij->j", raw, raw))
    if np.any(norms < 1e-14) or not np.all(np.isfinite(norms)):
        bad = np.flatnonzero(~(norms >= 1e-14))
        raise DegenerateColumn(f"columns with vanishing norm: {bad[:10].tolist()}")
    phi, d1, d2 = _quotient_rule(raw, tuple(np.asarray(d, float) for d in raw_deriv1),
                                 tuple(np.asarray(d, float) for d in raw_deriv2))
    if sample_locations is None:
        sample_locations = np.arange(raw.shape[0], dtype=float)
    return Dictionary(grid=grid, sample_locations=np.asarray(sample_locations, dtype=float),
                      columns=phi, deriv1=d1, deriv2=d2, provenance=dict(provenance or {}),
                      feature_map=feature_map)


def _second_difference(r, h, axis):
    r = np.moveaxis(r, axis, -1)
    out = np.zeros_like(r)
    if r.shape[-1] < 3:
        # too few points for curvature
        return np.moveaxis(out, -1, axis)
    out[..., 1:-1] = (r[..., 2:] - 2 * r[..., 1:-1] + r[..., :-2]) / h**2
    if r.shape[-1] >= 4:
        out[..., 0] = (2 * r[..., 0] - 5 * r[..., 1] + 4 * r[..., 2] - r[..., 3]) / h**2
        out[..., -1] = (2 * r[..., -1] - 5 * r[..., -2] + 4 * r[..., -3] - r[..., -4]) / h**2
    else:
        out[..., 0] = out[..., 1]
        out[..., -1] = out[..., -2]
    return np.moveaxis(out, -1, axis)


def finite_difference_derivatives(raw, grid: ParameterGrid):
    """Central differences across columns (one-sided at the grid boundary)."""
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[0]
    edge = 2 if min(grid.shape) >= 3 else 1
    if grid.dim == 1:
        h = grid.spacing[0]
        return ((np.gradient(raw, h, axis=1, edge_order=edge),),
                (_second_difference(raw, h, axis=1),))
    m0, m1 = grid.shape
    h0, h1 = grid.spacing
    cube = raw.reshape(n, m0, m1)
    d0 = np.gradient(cube, h0, axis=1, edge_order=edge)
    d1 = np.gradient(cube, h1, axis=2, edge_order=edge)
    d00 = _second_difference(cube, h0, axis=1)
    d11 = _second_difference(cube, h1, axis=2)
    d01 = np.gradient(d0, h1, axis=2, edge_order=edge)
    flat = lambda a: a.reshape(n, m0 * m1)
    return (flat(d0), flat(d1)), (flat(d00), flat(d01), flat(d11))


def dictionary_from_matrix(raw, grid: ParameterGrid, sample_locations=None, provenance=None):
    """Normalize an arbitrary matrix and attach finite-difference derivatives."""
    d1, d2 = finite_difference_derivatives(raw, grid)
    return normalize_columns(raw, d1, d2, grid, sample_locations, provenance)


def synthesize_measurements(dictionary: Dictionary, measure: AtomicMeasure,
                            noise_norm: float = 0.0, seed: Optional[int] = 0) -> MeasurementVector:
    """``y = Phi x + z`` with ``||z||_2 = noise_norm`` exactly."""
    if noise_norm < 0:
        raise ValueError("noise_norm must be nonnegative")
    x = measure.to_vector(dictionary.grid)
    y = dictionary.columns @ x
    if noise_norm > 0:
        z = np.random.default_rng(seed).standard_normal(dictionary.n)
        y = y + z * (noise_norm / np.linalg.norm(z))
        return MeasurementVector(y=y, noise_level=float(noise_norm), seed=seed)
    return MeasurementVector(y=y, noise_level=0.0, seed=None)


def extract_support(x, grid: ParameterGrid, threshold: Optional[float] = None) -> AtomicMeasure:
    """Grid points whose coefficient magnitude exceeds ``threshold``.

    The default threshold is ``1e-6 * max|x|``.
    """
    x = np.asarray(x, dtype=float)
    if x.size != grid.m:
        raise DimensionMismatch("coefficient vector does not match the grid")
    if threshold is None:
        threshold = 1e-6 * float(np.max(np.abs(x), initial=0.0))
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    idx = np.flatnonzero(np.abs(x) > threshold)
    if idx.size == 0:
        raise EmptySupport("no coefficient exceeds the threshold")
    return AtomicMeasure(grid.points[idx], x[idx])


def recovery_error(truth: AtomicMeasure, estimate, grid: ParameterGrid):
    """Return ``(relative_l2, absolute_l2)`` between the planted and estimated vectors."""
    x_true = truth.to_vector(grid)
    absolute = float(np.linalg.norm(x_true - np.asarray(estimate, dtype=float)))
    return absolute / float(np.linalg.norm(x_true)), absolute
