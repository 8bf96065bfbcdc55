"""Separation metrics and the closed-form bounds built on the decay constants.

Distances between support points come in three flavours: the plain minimum
gap, the gap normalized by correlation widths, and the generalized distance
``(|theta_i - theta_j| - D_i - D_j) / max(sigma_i, sigma_j)`` whose ratio to
``|i - j|`` must exceed the required separation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .correlation import ALGEBRAIC_RTOL, DecayConstants, algebraic_residuals
from .errors import (
    AlgebraicViolated,
    GammaTwoNotLessThanOne,
    NeedTwoPoints,
    OverlappingDecayRegions,
    SeparationTooSmall,
)


def _points(support) -> np.ndarray:
    pts = np.asarray(support, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1)
    if pts.shape[0] < 2:
        raise NeedTwoPoints("separation needs at least two support points")
    return pts


def _pairwise(pts) -> np.ndarray:
    if pts.ndim == 1:
        return np.abs(pts[:, None] - pts[None, :])
    return np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)


def delta_sep(support) -> float:
    """Smallest distance between two support points."""
    dist = _pairwise(_points(support))
    return float(np.min(dist[~np.eye(len(dist), dtype=bool)]))


def delta_corr(support, sigmas) -> float:
    """Smallest gap divided by the wider of the two correlation widths."""
    pts = _points(support)
    sig = np.broadcast_to(np.asarray(sigmas, dtype=float), (pts.shape[0],))
    if np.any(sig <= 0):
        raise ValueError("correlation widths must be positive")
    ratio = _pairwise(pts) / np.maximum(sig[:, None], sig[None, :])
    return float(np.min(ratio[~np.eye(len(ratio), dtype=bool)]))


@dataclass
class SeparationReport:
    """Achieved and required separation of a sorted 1D support."""

    delta_sep: float
    distances: np.ndarray
    delta_achieved: float
    delta_required: Optional[float] = None
    delta_corr: Optional[float] = None

    @property
    def satisfied(self) -> Optional[bool]:
        if self.delta_required is None:
            return None
        return bool(self.delta_achieved > self.delta_required)

    def to_dict(self) -> dict:
        return {"delta_sep": self.delta_sep, "delta_corr": self.delta_corr,
                "delta_achieved": self.delta_achieved, "delta_required": self.delta_required,
                "satisfied": self.satisfied, "distances": self.distances.tolist()}


def generalized_distances(support, D, sigma) -> np.ndarray:
    """Matrix of ``(|theta_i - theta_j| - D_i - D_j) / max(sigma_i, sigma_j)``."""
    pts = np.asarray(support, dtype=float).reshape(-1)
    k = pts.size
    D = np.broadcast_to(np.asarray(D, dtype=float), (k,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (k,))
    gap = np.abs(pts[:, None] - pts[None, :]) - D[:, None] - D[None, :]
    return gap / np.maximum(sigma[:, None], sigma[None, :])


def generalized_separation(support, constants: Optional[DecayConstants] = None, D=None,
                           sigma=None, delta_required: Optional[float] = None) -> SeparationReport:
    """Achieved separation ``min_{i != j} d(theta_i, theta_j) / |i - j|``.

    Per-point ``D`` and ``sigma`` are taken from ``constants`` (one entry per
    support point, or a single shared entry) unless given explicitly.
    """
    pts = np.asarray(support, dtype=float).reshape(-1)
    if np.any(np.diff(pts) <= 0):
        raise ValueError("support must be sorted and distinct")
    k = pts.size
    if constants is not None:
        D = constants.D if D is None else D
        sigma = constants.sigma if sigma is None else sigma
        if delta_required is None:
            delta_required = required_delta(constants).delta_req
    D = 0.0 if D is None else D
    sigma = 1.0 if sigma is None else sigma
    if np.size(D) not in (1, k) or np.size(sigma) not in (1, k):
        raise ValueError("need one D and sigma per support point or a shared value")
    dist = generalized_distances(pts, D, sigma)
    off = ~np.eye(k, dtype=bool)
    if k >= 2 and np.any(dist[off] <= 0):
        i, j = np.argwhere(off & (dist <= 0))[0]
        raise OverlappingDecayRegions(f"decay regions of points {i} and {j} overlap")
    if k < 2:
        achieved, sep = np.inf, np.inf
    else:
        steps = np.abs(np.arange(k)[:, None] - np.arange(k)[None, :])
        achieved = float(np.min(dist[off] / steps[off]))
        sep = delta_sep(pts)
    return SeparationReport(sep, dist, achieved, delta_required)


def quadineq_delta(a: float, b: float, c: float) -> float:
    """Smallest ``Delta`` guaranteeing ``2x^2 a/(1-x^2) + x b < c`` for ``x = exp(-Delta/2)``.

    Closed form from the quadratic ``(2a + c) x^2 + b x - c < 0``.
    """
    if min(a, b, c) <= 0:
        raise ValueError("a, b, c must be positive")
    q = 2 * a + c
    return float(2 * np.log(2 * q / (-b + np.sqrt(b * b + 4 * q * c))))


def special_inequality_lhs(x: float, a: float, b: float) -> float:
    return 2 * x * x / (1 - x * x) * a + x * b


@dataclass(frozen=True)
class RequiredSeparation:
    delta_req: float
    lambda1: float
    lambda2: float
    log_term: float
    absolute: float

    def to_dict(self) -> dict:
        return asdict(self)


def required_delta(constants: DecayConstants, rtol: float = ALGEBRAIC_RTOL) -> RequiredSeparation:
    """Minimum normalized separation and its three contributing branches.

    ``absolute`` is ``2 D + Delta_req sigma`` using the largest ``D`` and
    ``sigma`` over centres.
    """
    C = np.asarray(constants.C, dtype=float)
    g0, g1, g2, g3 = (float(v) for v in constants.gamma)
    if g2 >= 1:
        raise GammaTwoNotLessThanOne(f"gamma_2 = {g2} must be below 1")
    r1, r2 = algebraic_residuals(C)
    if max(r1, r2) > rtol:
        raise AlgebraicViolated(f"algebraic residuals {r1:.3e}, {r2:.3e} exceed {rtol:.1e}")
    log_term = float(np.log(1 + 2 * (C[0, 0] + C[1, 1])))
    lam1 = quadineq_delta(2 * C[0, 0] + C[1, 1] - C[1, 1] * g2 + C[0, 1] * g3, C[0, 0], 1 - g2)
    lam2 = quadineq_delta((2 * C[0, 0] + C[1, 1]) * g0 + C[0, 2] + C[0, 1] * g1, C[0, 2], g0)
    delta = max(log_term, lam1, lam2)
    absolute = 2 * float(np.max(constants.D)) + delta * float(np.max(constants.sigma))
    return RequiredSeparation(delta, lam1, lam2, log_term, absolute)


@dataclass(frozen=True)
class SchurBounds:
    """Closed-form coefficient bounds at separation ``delta``."""

    delta: float
    s: float
    alpha_max: float
    beta_max: float
    alpha_lb: float
    eps: np.ndarray

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eps"] = self.eps.tolist()
        return out


def tail_sum(delta: float) -> float:
    """``s = 2 e^{-Delta} / (1 - e^{-Delta})``."""
    e = np.exp(-delta)
    return float(2 * e / (1 - e))


def schur_bounds(delta: float, C) -> SchurBounds:
    """Bounds on ``||alpha||_inf``, ``||beta||_inf`` and ``min xi_i alpha_i``."""
    C = np.asarray(C, dtype=float)
    if not delta > np.log(1 + 2 * (C[0, 0] + C[1, 1])):
        raise SeparationTooSmall(
            f"Delta = {delta} does not exceed log(1 + 2(C00 + C11)) = "
            f"{np.log(1 + 2 * (C[0, 0] + C[1, 1])):.4f}")
    s = tail_sum(delta)
    den = 1 - (C[0, 0] + C[1, 1]) * s
    return SchurBounds(float(delta), s, float((1 - C[1, 1] * s) / den),
                       float(C[0, 1] * s / den), float((1 - (2 * C[0, 0] + C[1, 1]) * s) / den),
                       C * s)


def cluster_tail_bound(delta: float, C, on_support: bool = False):
    """Bound on the summed correlations from the other support points.

    ``C s`` at a support point and ``C (e^{-Delta/2} + s)`` anywhere else.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    s = tail_sum(delta)
    factor = s if on_support else np.exp(-delta / 2) + s
    return np.asarray(C, dtype=float) * factor


def empirical_coefficient_bounds(eps) -> Optional[dict]:
    """Coefficient bounds from measured tail sums ``eps[q, r]`` (q, r in {0, 1}).

    Returns ``None`` when ``eps[1,1] >= 1`` or the Schur quantity ``c >= 1``.
    """
    eps = np.asarray(eps, dtype=float)
    if eps[1, 1] >= 1:
        return None
    c = eps[0, 0] + eps[1, 0] * eps[0, 1] / (1 - eps[1, 1])
    if c >= 1:
        return None
    return {"c": float(c), "alpha_max": float(1 / (1 - c)),
            "beta_max": float(eps[0, 1] / (1 - eps[1, 1]) / (1 - c)),
            "alpha_dev": float(c / (1 - c))}


def cluster_inequalities(support, D, sigma, delta: float, theta: float, i: int) -> dict:
    """Check the three no-clustering inequalities for ``theta > support[i]``.

    Returns the minimum slack of each family; ``None`` marks an empty family.
    The caller guarantees that ``support[i]`` is the closest point to
    ``theta`` in the sigma-normalized sense.
    """
    pts = np.asarray(support, dtype=float)
    k = pts.size
    D = np.broadcast_to(np.asarray(D, dtype=float), (k,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (k,))
    lo, hi = pts - D, pts + D
    out = {"next": None, "beyond": None, "behind": None}
    if i + 1 < k:
        out["next"] = float((lo[i + 1] - theta) / sigma[i + 1] - delta / 2)
    if i + 2 < k:
        j = np.arange(i + 2, k)
        out["beyond"] = float(np.min((lo[j] - theta) / sigma[j] - delta * (j - (i + 1))))
    if i > 0:
        j = np.arange(0, i)
        out["behind"] = float(np.min((theta - hi[j]) / sigma[j] - delta * (i - j)))
    return out


def audit_report(constants: DecayConstants, rtol: float = ALGEBRAIC_RTOL) -> dict:
    """Everything the theorem audit prints, as plain data."""
    req = required_delta(constants, rtol)
    r1, r2 = algebraic_residuals(constants.C)
    return {**req.to_dict(), "algebraic_residuals": [r1, r2],
            "schur": schur_bounds(req.delta_req, constants.C).to_dict()}


def to_json(obj) -> str:
    return json.dumps(obj, indent=1, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
