"""Support-centred correlation functions and their decay constants.

For a centre ``theta`` on the grid the profile holds

    rho^{(q,r)}(eta) = phi^{(q)}(theta)^T phi^{(r)}(eta),   q in {0,1}, r in {0,1,2}

and the scaled version ``rhohat^{(q,r)} = rho^{(q,r)} / ||phi^{(q)}(theta)||^2``
(only ``q = 1`` is rescaled because columns have unit norm).

Regions around a centre with near width ``N`` and decay offset ``D``::

    near          |eta - theta| <= N
    intermediate  |eta - theta| >  N
    decay         |eta - theta| >  D
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dictionary
from .errors import DegenerateSensitivity, NearRegionNotConcave

SENSITIVITY_FLOOR = 1e-12
ALGEBRAIC_RTOL = 1e-3
DECAY_FLOOR = 1e-10
ENVELOPE_FLOOR = 1e-6
PAIRS = ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2))


@dataclass(frozen=True, eq=False)
class CorrelationProfile:
    """Correlations of one centre against every grid point.

    ``distance`` is the signed offset ``eta - theta`` (wrapped for periodic
    parameter spaces, Euclidean norm in 2D).  ``rho`` maps ``(q, r)`` to the
    raw correlation samples; 2D profiles only carry ``(0, 0)``.
    """

    center_index: int
    center: np.ndarray
    distance: np.ndarray
    rho: dict
    normalizer: np.ndarray

    @property
    def sensitivity(self) -> float:
        return float(np.max(self.normalizer))

    def hat(self, q: int, r: int) -> np.ndarray:
        values = self.rho[(q, r)]
        return values / self.normalizer[0] if q == 1 else values

    def to_csv(self, path) -> None:
        keys = [k for k in PAIRS if k in self.rho]
        header = "distance," + ",".join(f"rho{q}{r}" for q, r in keys)
        data = np.column_stack([self.distance] + [self.rho[k] for k in keys])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def _signed_distance(dictionary: Dictionary, index: int) -> np.ndarray:
    pts = dictionary.grid.points
    if dictionary.dim == 2:
        return np.linalg.norm(pts - pts[index], axis=1)
    d = pts - pts[index]
    period = dictionary.provenance.get("period")
    if period:
        d = (d + period / 2) % period - period / 2
    return d


def correlation_profile(dictionary: Dictionary, center_index: int) -> CorrelationProfile:
    """All correlation samples centred at grid point ``center_index``."""
    j = int(center_index)
    if not 0 <= j < dictionary.m:
        raise IndexError("centre index outside the grid")
    normalizer = np.array([float(d[:, j] @ d[:, j]) for d in dictionary.deriv1])
    if np.min(normalizer) < SENSITIVITY_FLOOR:
        raise DegenerateSensitivity(
            f"||phi'||^2 = {np.min(normalizer):.3e} at grid index {j}")
    phi = dictionary.columns
    rho = {(0, 0): phi[:, j] @ phi}
    if dictionary.dim == 1:
        feats = (phi, dictionary.deriv1[0], dictionary.deriv2[0])
        for q, r in PAIRS:
            rho[(q, r)] = feats[q][:, j] @ feats[r]
    return CorrelationProfile(j, np.asarray(dictionary.grid.points[j]),
                              _signed_distance(dictionary, j), rho, normalizer)


def near_width_default(profile: CorrelationProfile) -> float:
    """Half-width at ``rho = 0.5``, capped at 0.8 of the concavity radius.

    The concavity radius is the distance to the nearest grid point where
    ``rho^{(0,2)}`` turns nonnegative.
    """
    d, rho = profile.distance, profile.rho[(0, 0)]
    ad = np.abs(d)
    below = ad[(rho < 0.5) & (ad > 0)]
    half = float(below.min()) if below.size else float(ad.max())
    convex = ad[(profile.rho[(0, 2)] >= 0) & (ad > 0)]
    if convex.size:
        half = min(half, 0.8 * float(convex.min()))
    return half


def gaussian_envelope_sigma(profile: CorrelationProfile, rho_floor: float = ENVELOPE_FLOOR) -> float:
    """Smallest Gaussian width whose bell bounds the profile from above.

    Only grid points with ``rho_floor < rho < 1`` constrain the width;
    nonpositive correlations impose nothing and the floor keeps round-off
    in far tails from dominating.
    """
    d, rho = np.abs(profile.distance), profile.rho[(0, 0)]
    mask = (d > 0) & (rho > rho_floor) & (rho < 1)
    if not np.any(mask):
        return float(np.min(d[d > 0]))
    return float(np.max(d[mask] / np.sqrt(2 * np.log(1 / rho[mask]))))


@dataclass(frozen=True, eq=False)
class DecayConstants:
    """Region widths per centre plus shared curvature and envelope constants.

    ``C[q, r]`` bounds ``|rhohat^{(q,r)}|`` by ``C[q, r] exp(-(|d| - D)/sigma)``
    in the decay region, restricted to offsets where the outer envelope of
    ``|rho|`` stays above ``floor``.
    """

    centers: np.ndarray
    N: np.ndarray
    D: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    C: np.ndarray
    algebraic_enforced: bool = False
    floor: float = DECAY_FLOOR

    def for_center(self, index: int):
        hit = np.flatnonzero(self.centers == index)
        if hit.size:
            i = hit[0]
        elif np.ptp(self.N) == 0 and np.ptp(self.D) == 0 and np.ptp(self.sigma) == 0:
            i = 0
        else:
            raise KeyError(f"no region widths stored for centre {index}")
        return float(self.N[i]), float(self.D[i]), float(self.sigma[i])

    def with_updates(self, **changes) -> "DecayConstants":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return DecayConstants(**values)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "N": self.N.tolist(), "D": self.D.tolist(),
                "sigma": self.sigma.tolist(), "gamma": self.gamma.tolist(),
                "C": self.C.tolist(), "algebraic_enforced": self.algebraic_enforced,
                "floor": self.floor}

    @classmethod
    def from_dict(cls, data: dict) -> "DecayConstants":
        arr = lambda k: np.atleast_1d(np.asarray(data[k], dtype=float))
        return cls(np.atleast_1d(np.asarray(data.get("centers", [0]), dtype=int)), arr("N"),
                   arr("D"), arr("sigma"), arr("gamma"), np.asarray(data["C"], dtype=float),
                   bool(data.get("algebraic_enforced", False)),
                   float(data.get("floor", DECAY_FLOOR)))

    @classmethod
    def shared(cls, N, D, sigma, gamma, C, enforced=False) -> "DecayConstants":
        return cls(np.array([0]), np.array([float(N)]), np.array([float(D)]),
                   np.array([float(sigma)]), np.asarray(gamma, dtype=float),
                   np.asarray(C, dtype=float), enforced)


def _outer_envelope(d, values):
    """``max |values|`` over offsets at least as far out on the same side."""
    env = np.empty_like(values)
    a = np.abs(values)
    for side in (d > 0, d < 0):
        idx = np.flatnonzero(side)
        if idx.size:
            order = idx[np.argsort(np.abs(d[idx]))]
            env[order] = np.maximum.accumulate(a[order][::-1])[::-1]
    env[d == 0] = a[d == 0]
    return env


def decay_window(profile: CorrelationProfile, D: float, floor: float = DECAY_FLOOR) -> np.ndarray:
    """Mask of decay-region grid points where the envelope of ``|rho|`` exceeds ``floor``."""
    d = profile.distance
    env = _outer_envelope(d, profile.rho[(0, 0)])
    return (np.abs(d) > D) & (env >= floor)


def fit_sigma(profile: CorrelationProfile, D: float, floor: float = DECAY_FLOOR) -> float:
    """Least-squares slope of ``-log |rho|`` against ``|d| - D`` through the origin.

    The fit uses the monotone outer envelope so that zero crossings of
    oscillating correlations do not produce ``log 0``.
    """
    mask = decay_window(profile, D, floor)
    u = np.abs(profile.distance[mask]) - D
    v = -np.log(_outer_envelope(profile.distance, profile.rho[(0, 0)])[mask])
    keep = u > 0
    u, v = u[keep], v[keep]
    slope = float(u @ v) / float(u @ u) if u.size else 0.0
    if not slope > 0:
        raise ValueError("correlation does not decay inside the decay region")
    return 1.0 / slope


def _per_center(value, count, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (count,)).copy()
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite and nonnegative")
    return arr


def fit_decay_constants(profiles: Sequence[CorrelationProfile], N_choice=None, D_choice=None,
                        sigma_choice=None, floor: float = DECAY_FLOOR,
                        enforce: bool = True) -> DecayConstants:
    """Tightest constants for which every profile meets the three conditions.

    ``N_choice``/``D_choice``/``sigma_choice`` are scalars or per-profile
    sequences; ``None`` selects :func:`near_width_default`, ``D = N`` and a
    least-squares decay fit respectively.  ``C`` and ``gamma_1..3`` take the
    maximum over centres and ``gamma_0`` the minimum.
    """
    profiles = list(profiles)
    if not profiles:
        raise ValueError("need at least one profile")
    k = len(profiles)
    if N_choice is None:
        N = np.array([near_width_default(p) for p in profiles])
    else:
        N = _per_center(N_choice, k, "N")
    D = N.copy() if D_choice is None else _per_center(D_choice, k, "D")
    if sigma_choice is None:
        sigma = np.array([fit_sigma(p, Di, floor) for p, Di in zip(profiles, D)])
    else:
        sigma = _per_center(sigma_choice, k, "sigma")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
    gammas, Cs = [], []
    for p, Ni, Di, si in zip(profiles, N, D, sigma):
        ad = np.abs(p.distance)
        near, inter = ad <= Ni, ad > Ni
        decay = decay_window(p, Di, floor)
        g0 = float(np.min(-p.rho[(0, 2)][near]))
        g1 = float(np.max(np.abs(p.hat(1, 2)[near])))
        g2 = float(np.max(np.abs(p.rho[(0, 0)][inter]), initial=0.0))
        g3 = float(np.max(np.abs(p.hat(1, 0)[inter]), initial=0.0))
        gammas.append((g0, g1, g2, g3))
        weight = np.exp((ad[decay] - Di) / si)
        Cs.append([[float(np.max(np.abs(p.hat(q, r)[decay]) * weight, initial=0.0))
                    for r in range(3)] for q in range(2)])
    gammas = np.array(gammas)
    gamma = np.array([gammas[:, 0].min(), *gammas[:, 1:].max(axis=0)])
    if gamma[0] <= 0:
        worst = int(np.argmin(gammas[:, 0]))
        raise NearRegionNotConcave(
            f"rho^(0,2) reaches {-gammas[worst, 0]:.3e} in the near region of centre "
            f"{profiles[worst].center_index}")
    C = np.max(np.array(Cs), axis=0)
    # strictly positive constants keep the algebraic rescaling well defined
    C = np.maximum(C, np.finfo(float).tiny)
    if enforce:
        C = enforce_algebraic(C, rtol=0.0)
    centers = np.array([p.center_index for p in profiles])
    return DecayConstants(centers, N, D, sigma, gamma, C, enforce, floor)


def algebraic_residuals(C) -> tuple:
    """Relative mismatch of ``C01 C10 = C00 C11`` and ``C01 C12 = C11 C02``."""
    C = np.asarray(C, dtype=float)
    r1 = abs(C[0, 1] * C[1, 0] - C[0, 0] * C[1, 1]) / (C[0, 0] * C[1, 1])
    r2 = abs(C[0, 1] * C[1, 2] - C[1, 1] * C[0, 2]) / (C[1, 1] * C[0, 2])
    return float(r1), float(r2)


def enforce_algebraic(C, rtol: float = ALGEBRAIC_RTOL) -> np.ndarray:
    """Raise entries of ``C`` until both product identities hold.

    Identities already satisfied within ``rtol`` (relative) are left alone,
    which keeps published constants rounded to a few digits unchanged.
    Entries never decrease.
    """
    C = np.array(C, dtype=float)
    if C.shape != (2, 3) or np.any(C <= 0):
        raise ValueError("C must be a positive 2x3 array")
    ratio = C[0, 0] * C[1, 1] / (C[0, 1] * C[1, 0])
    if abs(ratio - 1) > rtol:
        if ratio > 1:
            C[0, 1] *= np.sqrt(ratio)
            C[1, 0] *= np.sqrt(ratio)
        else:
            C[0, 0] /= np.sqrt(ratio)
            C[1, 1] /= np.sqrt(ratio)
    target = C[1, 1] * C[0, 2] / C[0, 1]
    if abs(target / C[1, 2] - 1) > rtol:
        if target > C[1, 2]:
            C[1, 2] = target
        else:
            C[0, 2] = C[0, 1] * C[1, 2] / C[1, 1]
    return C


@dataclass
class ConditionReport:
    """Per-inequality verdicts; margins are ``bound - observed`` (nonnegative passes)."""

    center_index: int
    margins: dict = field(default_factory=dict)
    tolerance: float = 1e-12

    @property
    def passed(self) -> dict:
        return {k: v >= -self.tolerance for k, v in self.margins.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    @property
    def failures(self) -> list:
        return [k for k, v in self.passed.items() if not v]

    def to_json(self) -> str:
        return json.dumps({"center_index": self.center_index, "margins": self.margins,
                           "passed": self.passed, "ok": self.ok}, indent=1)


def check_conditions(profile: CorrelationProfile, constants: DecayConstants) -> ConditionReport:
    """Evaluate every near, intermediate and decay inequality on the grid.

    Decay margins are reported in envelope units,
    ``C[q, r] - max |rhohat| exp((|d| - D)/sigma)``.
    """
    N, D, sigma = constants.for_center(profile.center_index)
    g0, g1, g2, g3 = constants.gamma
    ad = np.abs(profile.distance)
    near, inter = ad <= N, ad > N
    decay = decay_window(profile, D, constants.floor)
    m = {}
    m["near_concavity"] = float(np.min(-g0 - profile.rho[(0, 2)][near]))
    m["near_regularity"] = float(np.min(g1 - np.abs(profile.hat(1, 2)[near])))
    m["intermediate_value"] = float(g2 - np.max(np.abs(profile.rho[(0, 0)][inter]), initial=0.0))
    m["intermediate_slope"] = float(g3 - np.max(np.abs(profile.hat(1, 0)[inter]), initial=0.0))
    weight = np.exp((ad[decay] - D) / sigma)
    for q in range(2):
        for r in range(3):
            seen = float(np.max(np.abs(profile.hat(q, r)[decay]) * weight, initial=0.0))
            m[f"decay_{q}{r}"] = float(constants.C[q, r] - seen)
    return ConditionReport(profile.center_index, m)
