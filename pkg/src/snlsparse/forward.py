"""Forward models that produce normalized dictionaries.

Analytic kernels (Gaussian, Ricker, Fourier) carry closed-form parameter
derivatives and a ``feature_map`` so that certificates can be evaluated off
the grid.  The heat model and loaded matrices use finite differences across
the parameter grid; the differences are taken on the raw columns and pushed
through the normalization by the quotient rule.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .core import (
    Dictionary,
    ParameterGrid,
    _quotient_rule,
    finite_difference_derivatives,
    normalize_columns,
)
from .errors import DegenerateColumn, DimensionMismatch, ParseError, SingularSystem

KERNEL_REACH = 12.0


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel family, width and sample locations ``s_1..s_n``."""

    kind: str
    width: float = 1.0
    sample_locations: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "ricker", "fourier"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.sample_locations is not None:
            s = np.asarray(self.sample_locations, dtype=float)
            if s.ndim != 1 or s.size < 2:
                raise ValueError("need at least two sample locations")
            object.__setattr__(self, "sample_locations", s)


def default_samples(grid: ParameterGrid, width: float, spacing: Optional[float] = None):
    """Uniform samples covering the grid with a three-width margin."""
    a = grid.axes[0]
    spacing = width / 10 if spacing is None else spacing
    lo, hi = a[0] - 3 * width, a[-1] + 3 * width
    count = int(np.floor((hi - lo) / spacing + 1e-9)) + 1
    return lo + spacing * np.arange(count)


def _gaussian_raw(theta, s, w):
    t = s[:, None] - np.asarray(theta, dtype=float)[None, :]
    g = np.exp(-t**2 / (2 * w**2))
    # derivatives with respect to theta: d/dtheta = -d/dt
    return g, t / w**2 * g, (t**2 / w**4 - 1 / w**2) * g


def _ricker_raw(theta, s, w):
    t = s[:, None] - np.asarray(theta, dtype=float)[None, :]
    e = np.exp(-t**2 / (2 * w**2))
    k = (1 - t**2 / w**2) * e
    k1 = (-3 * t / w**2 + t**3 / w**4) * e
    k2 = (-3 / w**2 + 6 * t**2 / w**4 - t**4 / w**6) * e
    return k, -k1, k2


def _analytic_dictionary(raw_fn, grid, samples, provenance):
    def feature_map(theta):
        raw, d1, d2 = raw_fn(np.atleast_1d(np.asarray(theta, dtype=float)))
        return _quotient_rule(raw, (d1,), (d2,))

    raw, d1, d2 = raw_fn(grid.points)
    return normalize_columns(raw, d1, d2, grid, samples, provenance, feature_map)


def _kernel_dictionary(spec: KernelSpec, grid: ParameterGrid, raw_fn):
    if grid.dim != 1:
        raise DimensionMismatch("kernel dictionaries are one-dimensional")
    samples = spec.sample_locations
    if samples is None:
        samples = default_samples(grid, spec.width)
    gap = np.min(np.abs(samples[:, None] - grid.points[None, :]), axis=0)
    if np.any(gap > KERNEL_REACH * spec.width):
        bad = grid.points[gap > KERNEL_REACH * spec.width]
        raise DegenerateColumn(f"no sample within reach of grid points {bad[:5].tolist()}")
    provenance = {"model": spec.kind, "width": spec.width}
    return _analytic_dictionary(lambda th: raw_fn(th, samples, spec.width), grid, samples,
                                provenance)


def gaussian_dictionary(spec: KernelSpec, grid: ParameterGrid) -> Dictionary:
    """Columns ``exp(-(eta_j - s_i)^2 / (2 w^2))`` normalized."""
    if spec.kind != "gaussian":
        raise ValueError("spec.kind must be 'gaussian'")
    return _kernel_dictionary(spec, grid, _gaussian_raw)


def ricker_dictionary(spec: KernelSpec, grid: ParameterGrid) -> Dictionary:
    """Columns ``K(s_i - eta_j)`` with ``K(t) = (1 - t^2/w^2) exp(-t^2/(2w^2))``."""
    if spec.kind != "ricker":
        raise ValueError("spec.kind must be 'ricker'")
    return _kernel_dictionary(spec, grid, _ricker_raw)


def fourier_window(n: int) -> np.ndarray:
    """Squared-sine taper that stays strictly positive at both ends."""
    return np.sin(np.pi * (np.arange(n) + 1) / (n + 1)) ** 2


def fourier_dictionary(grid: ParameterGrid, times=None, n: int = 32,
                       window: bool = False) -> Dictionary:
    """Realified samples of ``exp(-i 2 pi theta t)``.

    The real parts are stacked above the imaginary parts, so inner products
    of realified columns are the real parts of the complex inner products.
    By default the times are ``n`` consecutive integers centred at zero,
    which makes the unwindowed correlation a real Dirichlet kernel.
    """
    if grid.dim != 1:
        raise DimensionMismatch("fourier dictionaries are one-dimensional")
    t = np.arange(n) - (n - 1) / 2 if times is None else np.asarray(times, dtype=float)
    wts = fourier_window(t.size) if window else np.ones(t.size)

    def raw_fn(theta):
        arg = 2 * np.pi * t[:, None] * np.asarray(theta, dtype=float)[None, :]
        c, s = wts[:, None] * np.cos(arg), wts[:, None] * np.sin(arg)
        w1 = 2 * np.pi * t[:, None]
        raw = np.vstack([c, -s])
        d1 = np.vstack([-w1 * s, -w1 * c])
        d2 = np.vstack([-w1**2 * c, w1**2 * s])
        return raw, d1, d2

    provenance = {"model": "fourier", "window": bool(window), "period": 1.0,
                  "times": t.tolist()}
    return _analytic_dictionary(raw_fn, grid, np.concatenate([t, t]), provenance)


@dataclass(frozen=True)
class HeatModelConfig:
    """Variable-conductivity heat equation on ``[-0.5, 0.5]``.

    ``M`` finite-volume cells, ``n_t`` time steps to time ``T``, ``n``
    equispaced sensors and ``m`` parameter grid points.
    """

    M: int = 4000
    T: float = 1e-4
    n_t: int = 100
    n: int = 100
    m: int = 1000
    c_min: float = 0.05
    c_max: float = 1.0
    width: float = 0.15
    center: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.M < self.n:
            raise ValueError("need M >= n")
        if not self.c_min > 0 or self.c_max < self.c_min:
            raise ValueError("need 0 < c_min <= c_max")
        if self.n_t < 1 or self.n < 2 or self.m < 2 or not self.width > 0:
            raise ValueError("invalid heat model resolution")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "HeatModelConfig":
        try:
            return cls(**json.loads(text))
        except (TypeError, json.JSONDecodeError) as exc:
            raise ParseError(str(exc)) from exc


def conductivity_profile(config: HeatModelConfig, theta):
    """Gaussian bump ``c_min + (c_max - c_min) exp(-(theta-center)^2/(2 w^2))``."""
    theta = np.asarray(theta, dtype=float)
    bump = np.exp(-(theta - config.center) ** 2 / (2 * config.width**2))
    return config.c_min + (config.c_max - config.c_min) * bump


def cell_centres(M: int) -> np.ndarray:
    return -0.5 + (np.arange(M) + 0.5) / M


def heat_operator(config: HeatModelConfig):
    """Banded storage of the symmetric flux-form Laplacian ``L`` (Neumann)."""
    M = config.M
    h = 1.0 / M
    c = conductivity_profile(config, cell_centres(M))
    face = 2 * c[:-1] * c[1:] / (c[:-1] + c[1:])
    diag = np.zeros(M)
    diag[:-1] -= face
    diag[1:] -= face
    off = face
    return diag / h**2, off / h**2


def _step(u, diag, off, a, inverse):
    """Apply ``(I + a L)`` or solve ``(I - a L) v = u`` for tridiagonal ``L``."""
    if inverse:
        ab = np.zeros((3, diag.size))
        ab[0, 1:] = -a * off
        ab[1] = 1 - a * diag
        ab[2, :-1] = -a * off
        try:
            return solve_banded((1, 1), ab, u, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
    out = (1 + a * diag)[:, None] * u
    out[:-1] += a * off[:, None] * u[1:]
    out[1:] += a * off[:, None] * u[:-1]
    return out


def heat_propagate(config: HeatModelConfig, u0, return_history: bool = False):
    """Evolve cell averages ``u0`` (shape ``(M,)`` or ``(M, r)``) to time ``T``.

    Crank-Nicolson, with the first step replaced by four implicit Euler
    quarter steps to damp the high-frequency content of point sources.
    """
    diag, off = heat_operator(config)
    u = np.asarray(u0, dtype=float)
    squeeze = u.ndim == 1
    u = u.reshape(config.M, -1).copy()
    dt = config.T / config.n_t
    history = [u.copy()] if return_history else None
    for _ in range(4):
        u = _step(u, diag, off, dt / 4, inverse=True)
    if return_history:
        history.append(u.copy())
    for _ in range(config.n_t - 1):
        u = _step(_step(u, diag, off, dt / 2, inverse=False), diag, off, dt / 2, inverse=True)
        if return_history:
            history.append(u.copy())
    if squeeze:
        u = u[:, 0]
    return (u, history) if return_history else u


def point_source(config: HeatModelConfig, eta) -> np.ndarray:
    """Cell averages of a unit point mass at each ``eta`` (columns).

    The mass is split linearly between the two nearest cell centres, so the
    embedding is continuous in ``eta``.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    M = config.M
    pos = np.clip((eta + 0.5) * M - 0.5, 0.0, M - 1.0)
    lo = np.minimum(np.floor(pos).astype(int), M - 2)
    frac = pos - lo
    u = np.zeros((M, eta.size))
    cols = np.arange(eta.size)
    u[lo, cols] = (1 - frac) * M
    u[lo + 1, cols] = frac * M
    return u


def sensor_matrix(config: HeatModelConfig, sensors=None) -> np.ndarray:
    """Linear interpolation from cell centres to ``sensors``."""
    sensors = heat_sensors(config) if sensors is None else np.asarray(sensors, dtype=float)
    return _interp_rows(cell_centres(config.M), sensors)


def _interp_rows(x, sensors):
    M = x.size
    pos = np.clip((sensors - x[0]) / (x[1] - x[0]), 0.0, M - 1.0)
    lo = np.minimum(np.floor(pos).astype(int), M - 2)
    frac = pos - lo
    S = np.zeros((sensors.size, M))
    rows = np.arange(sensors.size)
    S[rows, lo] = 1 - frac
    S[rows, lo + 1] += frac
    return S


def heat_sensors(config: HeatModelConfig) -> np.ndarray:
    return np.linspace(-0.5, 0.5, config.n)


def heat_raw_columns(config: HeatModelConfig, eta) -> np.ndarray:
    """Unnormalized sensor readings at time ``T`` for sources at ``eta``.

    The propagator is a function of the symmetric operator ``L``, so the
    sensor rows are propagated instead of the sources: ``S P u0 = (P S^T)^T u0``.
    """
    S = sensor_matrix(config)
    W = heat_propagate(config, S.T).T
    return W @ point_source(config, eta)


def heat_dictionary(config: HeatModelConfig, grid: Optional[ParameterGrid] = None) -> Dictionary:
    """Dictionary of normalized heat readings over a parameter grid on ``[-0.5, 0.5]``."""
    if grid is None:
        grid = ParameterGrid.uniform(-0.5, 0.5, config.m)
    raw = heat_raw_columns(config, grid.points)
    d1, d2 = finite_difference_derivatives(raw, grid)
    provenance = {"model": "heat", **asdict(config)}
    return normalize_columns(raw, d1, d2, grid, heat_sensors(config), provenance)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Write the column matrix as CSV plus a JSON sidecar with the grid."""
    path = Path(path)
    np.savetxt(path, dictionary.columns, delimiter=",", fmt="%.17g")
    meta = {**dictionary.grid.to_dict(),
            "sample_locations": np.asarray(dictionary.sample_locations).tolist(),
            "provenance": dictionary.provenance}
    _sidecar(path).write_text(json.dumps(meta, indent=1, default=str))


def load_dictionary(path, grid_metadata: Optional[dict] = None) -> Dictionary:
    """Read a CSV matrix (rows = samples, columns = grid points).

    ``grid_metadata`` follows the sidecar layout ``{dim, axes, sample_locations}``;
    when omitted the sidecar next to ``path`` is used.
    """
    path = Path(path)
    try:
        if grid_metadata is None:
            grid_metadata = json.loads(_sidecar(path).read_text())
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
        grid = ParameterGrid(tuple(grid_metadata["axes"]))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, DimensionMismatch):
            raise
        raise ParseError(f"cannot read dictionary {path}: {exc}") from exc
    if "dim" in grid_metadata and int(grid_metadata["dim"]) != grid.dim:
        raise DimensionMismatch("sidecar dim disagrees with its axes")
    samples = grid_metadata.get("sample_locations")
    if samples is not None and len(samples) != raw.shape[0]:
        raise DimensionMismatch(f"file has {raw.shape[0]} rows, metadata lists {len(samples)} samples")
    if raw.shape[1] != grid.m:
        raise DimensionMismatch(f"file has {raw.shape[1]} columns, grid has {grid.m} points")
    d1, d2 = finite_difference_derivatives(raw, grid)
    provenance = dict(grid_metadata.get("provenance") or {})
    provenance.setdefault("source", str(path))
    return normalize_columns(raw, d1, d2, grid, samples, provenance)
