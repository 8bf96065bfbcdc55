"""Correlation-based dual certificates.

For a support ``theta_1..theta_k`` and signs ``xi`` the certificate is

    q = sum_i alpha_i phi(theta_i) + beta_i phi'(theta_i) / ||phi'(theta_i)||^2,
    Q(theta) = q^T phi(theta),

with ``alpha, beta`` chosen so that ``Q(theta_i) = xi_i`` and
``Q'(theta_i) = 0``.  Writing ``E = [Phi_S, Phi'_S]`` and
``B = [Phi_S, Phi'_S / ||phi'||^2]`` the interpolation system is
``E^T B [alpha; beta] = [xi; 0]``, whose blocks are ``I + P^{(q,r)}`` with
``P^{(q,r)}_{ij} = rhohat_{theta_j}^{(q,r)}(theta_i)`` for ``i != j``.  In two
dimensions ``E`` and ``B`` gain one derivative block per coordinate.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import AtomicMeasure, Dictionary
from .correlation import CorrelationProfile, correlation_profile, near_width_default
from .errors import DegenerateDirections, DegenerateSensitivity, SingularSystem

CONDITION_LIMIT = 1e12
VALUE_TOL = 1e-8
SLOPE_TOL = 1e-6
DEFAULT_MARGIN = 1e-6
DEFAULT_REFINE = 4
PARALLEL_LIMIT = 0.999


@dataclass
class VerificationReport:
    """Outcome of the certificate checks.

    ``off_near_max`` is the largest ``|Q|`` outside every near region,
    ``off_support_max`` the largest ``|Q|`` over grid points that are not in
    the support and ``near_curvature_max`` the largest ``xi_i Q''`` inside
    near regions (1D only).
    """

    interpolation_ok: bool
    value_residual: float
    slope_residual: float
    off_near_max: float
    off_near_ok: bool
    off_support_max: float
    off_support_ok: bool
    near_curvature_max: Optional[float]
    near_ok: bool
    margin: float
    violations: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.interpolation_ok and self.off_near_ok and self.off_support_ok and self.near_ok

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["valid"] = self.valid
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass(eq=False)
class Certificate:
    """Solved interpolation coefficients and samples of ``Q``.

    ``Q``, ``dQ`` and ``d2Q`` are sampled on the dictionary grid; ``fine_*``
    hold samples on a refined grid when the dictionary has an analytic
    feature map (otherwise they repeat the grid samples).  ``dQ`` has shape
    ``(p, m)`` and ``d2Q`` is the second derivative for ``p = 1`` only.
    """

    support: np.ndarray
    indices: np.ndarray
    signs: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    q: np.ndarray
    normalizers: np.ndarray
    grid_points: np.ndarray
    Q: np.ndarray
    dQ: np.ndarray
    d2Q: Optional[np.ndarray]
    fine_points: np.ndarray
    fine_Q: np.ndarray
    fine_d2Q: Optional[np.ndarray]
    near_widths: np.ndarray
    condition: float
    period: Optional[float] = None
    report: Optional[VerificationReport] = None

    @property
    def dim(self) -> int:
        return 1 if self.grid_points.ndim == 1 else 2

    @property
    def valid(self) -> bool:
        return self.report is not None and self.report.valid

    def to_csv(self, path) -> None:
        if self.dim == 1:
            data = np.column_stack([self.grid_points, self.Q])
            header = "theta,Q"
        else:
            data = np.column_stack([self.grid_points, self.Q])
            header = "theta1,theta2,Q"
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def sign_patterns(k: int):
    """All ``2^k`` sign patterns, starting from all ones."""
    for pattern in itertools.product((1.0, -1.0), repeat=k):
        yield np.array(pattern)


def _resolve_support(dictionary: Dictionary, support):
    if isinstance(support, AtomicMeasure):
        support = support.support
    pts = np.asarray(support, dtype=float)
    if dictionary.dim == 1:
        pts = pts.reshape(-1)
    else:
        pts = pts.reshape(-1, 2)
    idx = dictionary.grid.index_of(pts)
    if np.unique(idx).size != idx.size:
        raise ValueError("support points must be distinct")
    return pts, idx


def _check_signs(signs, k):
    xi = np.asarray(signs, dtype=float).reshape(-1)
    if xi.size != k or not np.all(np.abs(xi) == 1):
        raise ValueError("signs must be a vector of +1/-1 with one entry per support point")
    return xi


def _solve(E, B, rhs):
    A = E.T @ B
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularSystem(f"interpolation matrix condition number {cond:.3e}")
    return lu_solve(lu_factor(A, check_finite=False), rhs, check_finite=False), cond


def _refined_axis(axis, factor):
    if factor <= 1:
        return axis
    steps = np.linspace(0, 1, factor + 1)[:-1]
    fine = (axis[:-1, None] + np.diff(axis)[:, None] * steps[None, :]).ravel()
    return np.append(fine, axis[-1])


def _fine_samples(dictionary, q, refine):
    if dictionary.feature_map is None or dictionary.dim != 1 or refine <= 1:
        return None
    pts = _refined_axis(dictionary.grid.axes[0], refine)
    Q, d2 = np.empty(pts.size), np.empty(pts.size)
    for start in range(0, pts.size, 4096):
        chunk = pts[start:start + 4096]
        phi, _, dd = dictionary.feature_map(chunk)
        Q[start:start + chunk.size] = q @ phi
        d2[start:start + chunk.size] = q @ dd[0]
    return pts, Q, d2


def build_certificate(dictionary: Dictionary, support, signs, near_widths=None,
                      margin: float = DEFAULT_MARGIN, refine: int = DEFAULT_REFINE) -> Certificate:
    """Solve the interpolation system and verify the resulting certificate.

    ``near_widths`` defaults to :func:`near_width_default` of each support
    profile.  Two-dimensional dictionaries are dispatched to
    :func:`build_certificate_2d`.
    """
    if dictionary.dim == 2:
        return build_certificate_2d(dictionary, support, signs, near_widths, margin)
    pts, idx = _resolve_support(dictionary, support)
    xi = _check_signs(signs, idx.size)
    k = idx.size
    phi_s = dictionary.columns[:, idx]
    dphi_s = dictionary.deriv1[0][:, idx]
    norms = np.einsum("ij,ij->j", dphi_s, dphi_s)
    if np.any(norms < 1e-12):
        raise DegenerateSensitivity("||phi'||^2 vanishes at a support point")
    E = np.hstack([phi_s, dphi_s])
    B = np.hstack([phi_s, dphi_s / norms])
    coef, cond = _solve(E, B, np.concatenate([xi, np.zeros(k)]))
    q = B @ coef
    Q = q @ dictionary.columns
    dQ = (q @ dictionary.deriv1[0])[None, :]
    d2Q = q @ dictionary.deriv2[0]
    fine = _fine_samples(dictionary, q, refine)
    if fine is None:
        fine = (dictionary.grid.points, Q, d2Q)
    if near_widths is None:
        near_widths = [near_width_default(correlation_profile(dictionary, j)) for j in idx]
    cert = Certificate(pts, idx, xi, coef[:k], coef[k:].reshape(k, 1), q, norms[:, None],
                       dictionary.grid.points, Q, dQ, d2Q, fine[0], fine[1], fine[2],
                       np.broadcast_to(np.asarray(near_widths, float), (k,)).copy(), cond,
                       dictionary.provenance.get("period"))
    cert.report = verify_certificate(cert, margin=margin)
    return cert


def build_certificate_2d(dictionary: Dictionary, support, signs, near_widths=None,
                         margin: float = DEFAULT_MARGIN) -> Certificate:
    """Two-parameter certificate with a gradient condition at every support point."""
    if dictionary.dim != 2:
        raise ValueError("build_certificate_2d needs a two-dimensional dictionary")
    pts, idx = _resolve_support(dictionary, support)
    xi = _check_signs(signs, idx.size)
    k = idx.size
    phi_s = dictionary.columns[:, idx]
    grads = [d[:, idx] for d in dictionary.deriv1]
    norms = np.column_stack([np.einsum("ij,ij->j", g, g) for g in grads])
    if np.any(norms < 1e-12):
        raise DegenerateSensitivity("a partial derivative vanishes at a support point")
    cosine = np.abs(np.einsum("ij,ij->j", grads[0], grads[1])) / np.sqrt(norms[:, 0] * norms[:, 1])
    if np.any(cosine > PARALLEL_LIMIT):
        bad = int(np.argmax(cosine))
        raise DegenerateDirections(
            f"sensitivity directions nearly parallel at support point {bad} (|cos| = {cosine[bad]:.6f})")
    E = np.hstack([phi_s, *grads])
    B = np.hstack([phi_s] + [g / norms[:, l] for l, g in enumerate(grads)])
    coef, cond = _solve(E, B, np.concatenate([xi, np.zeros(2 * k)]))
    q = B @ coef
    Q = q @ dictionary.columns
    dQ = np.array([q @ d for d in dictionary.deriv1])
    if near_widths is None:
        near_widths = []
        for j in idx:
            prof = correlation_profile(dictionary, j)
            below = prof.distance[(prof.rho[(0, 0)] < 0.5) & (prof.distance > 0)]
            near_widths.append(float(below.min()) if below.size else float(prof.distance.max()))
    points = dictionary.grid.points
    cert = Certificate(pts, idx, xi, coef[:k], coef[k:].reshape(2, k).T, q, norms, points, Q,
                       dQ, None, points, Q, None,
                       np.broadcast_to(np.asarray(near_widths, float), (k,)).copy(), cond)
    cert.report = verify_certificate(cert, margin=margin)
    return cert


def _offsets(points, centre, period):
    if points.ndim == 2:
        return np.linalg.norm(points - centre, axis=1)
    d = points - centre
    if period:
        d = (d + period / 2) % period - period / 2
    return np.abs(d)


def verify_certificate(cert: Certificate, near_widths=None,
                       margin: float = DEFAULT_MARGIN) -> VerificationReport:
    """Check interpolation, the bound outside near regions and near-region curvature.

    The slope residual is measured in units of ``||phi'(theta_i)||`` so that
    it does not depend on how fast the features move with the parameter.
    Besides the near/far checks, ``|Q| < 1`` must hold at every grid point
    outside the support, which is exactly the optimality condition of the
    discretized program.
    """
    k = cert.indices.size
    widths = cert.near_widths if near_widths is None else np.broadcast_to(
        np.asarray(near_widths, dtype=float), (k,))
    value_res = float(np.max(np.abs(cert.Q[cert.indices] - cert.signs)))
    slope = np.abs(cert.dQ[:, cert.indices]).T / np.sqrt(cert.normalizers)
    slope_res = float(np.max(slope))
    interp_ok = value_res <= VALUE_TOL and slope_res <= SLOPE_TOL
    violations = []

    near_fine = np.zeros(cert.fine_points.shape[0], dtype=bool)
    owner = np.full(cert.fine_points.shape[0], -1)
    best = np.full(cert.fine_points.shape[0], np.inf)
    for i in range(k):
        off = _offsets(cert.fine_points, cert.support[i], cert.period)
        inside = off <= widths[i]
        near_fine |= inside
        closer = inside & (off < best)
        owner[closer] = i
        best[closer] = off[closer]
    far = ~near_fine
    off_near_max = float(np.max(np.abs(cert.fine_Q[far]), initial=0.0))
    off_near_ok = off_near_max < 1 - margin
    if not off_near_ok:
        bad = cert.fine_points[far][np.abs(cert.fine_Q[far]) >= 1 - margin]
        violations.append({"check": "off_near", "points": bad[:20].tolist()})

    mask = np.ones(cert.grid_points.shape[0], dtype=bool)
    mask[cert.indices] = False
    off_support_max = float(np.max(np.abs(cert.Q[mask]), initial=0.0))
    off_support_ok = off_support_max < 1
    if not off_support_ok:
        bad = cert.grid_points[mask][np.abs(cert.Q[mask]) >= 1]
        violations.append({"check": "off_support", "points": bad[:20].tolist()})

    curvature, near_ok = None, True
    if cert.dim == 1 and cert.fine_d2Q is not None:
        inside = owner >= 0
        if np.any(inside):
            signed = cert.signs[owner[inside]] * cert.fine_d2Q[inside]
            curvature = float(np.max(signed))
            near_ok = curvature < 0
            if not near_ok:
                violations.append({"check": "near_concavity",
                                   "points": cert.fine_points[inside][signed >= 0][:20].tolist()})
    return VerificationReport(bool(interp_ok), value_res, slope_res, off_near_max,
                              bool(off_near_ok), off_support_max, bool(off_support_ok),
                              curvature, bool(near_ok), float(margin), violations)


def support_profiles(dictionary: Dictionary, indices) -> list:
    return [correlation_profile(dictionary, int(j)) for j in indices]


def empirical_epsilons(profiles: Sequence[CorrelationProfile], i: int, eval_index: int) -> np.ndarray:
    """Summed ``|rhohat^{(q,r)}_{theta_j}(theta)|`` over ``j != i`` as a 2x3 array."""
    eps = np.zeros((2, 3))
    for j, p in enumerate(profiles):
        if j == i:
            continue
        for q in range(2):
            for r in range(3):
                eps[q, r] += abs(p.hat(q, r)[eval_index])
    return eps


def support_epsilons(profiles: Sequence[CorrelationProfile]) -> np.ndarray:
    """``max_i eps_i^{(q,r)}(theta_i)``: the row-sum norms of the ``P`` blocks."""
    eps = np.zeros((2, 3))
    for i, p in enumerate(profiles):
        eps = np.maximum(eps, empirical_epsilons(profiles, i, p.center_index))
    return eps


def interpolation_matrix(profiles: Sequence[CorrelationProfile]) -> np.ndarray:
    """Block matrix ``[[I + P00, I + P01], [I + P10, I + P11]]`` from profiles."""
    k = len(profiles)
    idx = [p.center_index for p in profiles]
    blocks = {}
    for q, r in ((0, 0), (0, 1), (1, 0), (1, 1)):
        P = np.array([[profiles[j].hat(r, q)[idx[i]] for j in range(k)] for i in range(k)])
        blocks[(q, r)] = P
    # entry (i, j) of block (q, r) is rhohat^{(r,q)}_{theta_j}(theta_i)
    return np.block([[blocks[(0, 0)], blocks[(0, 1)]], [blocks[(1, 0)], blocks[(1, 1)]]])


@dataclass
class BoundAudit:
    """Pointwise comparison of ``Q`` against its triangle-inequality bounds."""

    value_bound_holds: bool
    value_slack: float
    value_rhs_max_far: float
    curvature_bound_holds: bool
    curvature_slack: float
    curvature_rhs_max_near: float
    hypothesis_flags: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def certificate_bound_audit(cert: Certificate, dictionary: Dictionary,
                            profiles: Optional[Sequence[CorrelationProfile]] = None) -> BoundAudit:
    """Evaluate both triangle-inequality bounds on the dictionary grid (1D).

    Every grid point is attributed to its nearest support point ``i``.  The
    value bound is checked everywhere and its maximum outside near regions is
    reported; the curvature bound is checked inside near regions, and points
    where ``rhohat^{(0,2)}_{theta_i} > 0`` are counted as hypothesis flags.
    """
    if cert.dim != 1:
        raise ValueError("bound audit is one-dimensional")
    if profiles is None:
        profiles = support_profiles(dictionary, cert.indices)
    k = cert.indices.size
    a_inf = float(np.max(np.abs(cert.alpha)))
    b_inf = float(np.max(np.abs(cert.beta)))
    dev = float(np.max(np.abs(cert.alpha - cert.signs)))
    pts = cert.grid_points
    dist = np.array([_offsets(pts, cert.support[i], cert.period) for i in range(k)])
    nearest = np.argmin(dist, axis=0)
    cols = np.arange(pts.size)
    hat = {key: np.array([p.hat(*key) for p in profiles]) for key in
           ((0, 0), (1, 0), (0, 2), (1, 2))}
    total = {key: np.abs(v).sum(axis=0) for key, v in hat.items()}
    own = {key: v[nearest, cols] for key, v in hat.items()}
    eps = {key: total[key] - np.abs(own[key]) for key in hat}
    rhs = (a_inf * np.abs(own[(0, 0)]) + b_inf * np.abs(own[(1, 0)])
           + a_inf * eps[(0, 0)] + b_inf * eps[(1, 0)])
    value_slack = float(np.min(rhs - np.abs(cert.Q)))
    near = dist[nearest, cols] <= cert.near_widths[nearest]
    rhs_far = float(np.max(rhs[~near], initial=0.0))
    ddq_rhs = ((1 - dev) * own[(0, 2)] + b_inf * np.abs(own[(1, 2)])
               + a_inf * eps[(0, 2)] + b_inf * eps[(1, 2)])
    signed = cert.signs[nearest] * cert.d2Q
    hyp = near & (own[(0, 2)] <= 0)
    flags = int(np.sum(near & (own[(0, 2)] > 0)))
    curv_slack = float(np.min(ddq_rhs[hyp] - signed[hyp], initial=np.inf))
    curv_max = float(np.max(ddq_rhs[hyp], initial=-np.inf))
    tol = 1e-10 * max(1.0, float(np.max(np.abs(cert.d2Q))))
    return BoundAudit(bool(value_slack >= -1e-12), value_slack, rhs_far,
                      bool(curv_slack >= -tol), curv_slack, curv_max, flags)
