"""Discretized l1 programs.

``solve_bp_equality`` minimizes ``||x||_1`` subject to ``Phi x = y`` and
``solve_bp_denoise`` relaxes the constraint to ``||Phi x - y||_2 <= xi``.
Both run a primal-dual splitting iteration with fixed steps and, every few
hundred iterations, try to polish the iterate: the current support is
re-solved exactly and a dual vector is built for it.  The polished point is
accepted when it is feasible and its duality gap is below tolerance, which
makes the returned solutions accurate to round-off rather than to the
first-order method's slow tail.

Data are rescaled to ``||y|| = 1`` before iterating and the solution is
scaled back, so results are equivariant under scaling of ``y``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq, nnls

from .core import Dictionary
from .errors import DimensionMismatch, Infeasible, NotConverged, TooLarge

ORACLE_MAX_COLUMNS = 14
ORACLE_MAX_K = 3


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules and iteration controls.

    ``feas_tol`` bounds ``||Phi x - y|| / ||y||`` (excess over ``xi`` for the
    relaxed program) and ``gap_tol`` the relative duality gap.
    """

    feas_tol: float = 1e-9
    gap_tol: float = 1e-8
    max_iterations: int = 200_000
    polish_every: int = 200
    step_scale: float = 0.99
    power_tol: float = 1e-6
    trace: bool = False

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.gap_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1 or self.polish_every < 1:
            raise ValueError("iteration counts must be positive")
        if not 0 < self.step_scale < 1:
            raise ValueError("step_scale must lie in (0, 1)")


@dataclass
class L1Solution:
    """Solution vector with its certificate of optimality.

    ``dual`` is a vector ``u`` with ``||Phi^T u||_inf <= 1`` (after the
    scaling recorded in the gap) whose dual objective bounds ``||x||_1``
    from below.
    """

    x: np.ndarray
    objective: float
    residual: float
    gap: float
    iterations: int
    converged: bool
    dual: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)

    def to_csv(self, path, grid_points=None) -> None:
        pts = np.arange(self.x.size) if grid_points is None else np.asarray(grid_points)
        data = np.column_stack([pts.reshape(self.x.size, -1), self.x])
        np.savetxt(path, data, delimiter=",", fmt="%.17g", comments="",
                   header=",".join(["theta"] * (data.shape[1] - 1) + ["x"]))


def _matrix(dictionary) -> np.ndarray:
    return dictionary.columns if isinstance(dictionary, Dictionary) else np.asarray(dictionary, float)


def operator_norm(A: np.ndarray, tol: float = 1e-6, max_iterations: int = 10_000) -> float:
    """Largest singular value by power iteration on ``A^T A`` from a fixed start."""
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    est = 0.0
    for _ in range(max_iterations):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
    return float(est)


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _project_ball(v, centre, radius):
    d = v - centre
    nd = np.linalg.norm(d)
    return v if nd <= radius else centre + d * (radius / nd)


def _dual_value_equality(u, y):
    return float(u @ y)


def _dual_value_denoise(u, y, xi):
    return float(u @ y - xi * np.linalg.norm(u))


def _scaled_gap(x, u, A, y, xi):
    """Relative gap after scaling ``u`` into the dual feasible set."""
    scale = max(1.0, float(np.max(np.abs(A.T @ u))))
    u = u / scale
    dual = _dual_value_denoise(u, y, xi) if xi > 0 else _dual_value_equality(u, y)
    primal = float(np.sum(np.abs(x)))
    return (primal - dual) / max(primal, 1e-300), u


def _candidate_sets(A, x, u, n):
    """Supports suggested by the primal iterate and by the near-active dual constraints."""
    out = []
    xmax = float(np.max(np.abs(x), initial=0.0))
    if xmax > 0:
        for t in (1e-2, 1e-4, 1e-7):
            S = np.flatnonzero(np.abs(x) > t * xmax)
            out.append((S, np.sign(x[S])))
    corr = A.T @ u
    top = float(np.max(np.abs(corr), initial=0.0))
    if top > 0:
        for t in (1e-2, 1e-3, 1e-4, 1e-6):
            S = np.flatnonzero(np.abs(corr) >= (1 - t) * top)
            out.append((S, np.sign(corr[S])))
    seen, unique = set(), []
    for S, sg in out:
        key = (tuple(S), tuple(sg))
        if S.size and S.size <= max(n, 1) * 4 and key not in seen:
            seen.add(key)
            unique.append((S, sg))
    return unique


def _match_dual(A, S, s, u):
    """Smallest correction of ``u`` with ``A_S^T u = s``."""
    AS = A[:, S]
    delta, *_ = np.linalg.lstsq(AS.T, s - AS.T @ u, rcond=None)
    return u + delta


def _polish_equality(A, y, x, u):
    n = A.shape[0]
    best = None
    for S, sg in _candidate_sets(A, x, u, n):
        # sign-constrained least squares keeps the objective equal to s^T x_S
        z, _ = nnls(A[:, S] * sg, y, maxiter=50 * S.size + 100)
        keep = z > 0
        if not np.any(keep):
            continue
        S, sg, z = S[keep], sg[keep], z[keep]
        if S.size > n:
            continue
        cand = np.zeros_like(x)
        cand[S] = sg * z
        res = float(np.linalg.norm(A @ cand - y))
        gap, uu = _scaled_gap(cand, _match_dual(A, S, sg, u), A, y, 0.0)
        if best is None or (res, gap) < (best[1], best[2]):
            best = (cand, res, gap, uu)
    return best


def _denoise_on_support(AS, y, s, xi):
    """``x_S(lam) = G^{-1}(A_S^T y - s/lam)`` with ``||A_S x_S - y|| = xi``."""
    G = AS.T @ AS
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return "singular", None
    solve = lambda b: np.linalg.solve(L.T, np.linalg.solve(L, b))
    base = solve(AS.T @ y)
    corr = solve(s)
    resid = lambda lam: float(np.linalg.norm(AS @ (base - corr / lam) - y)) - xi
    r0 = float(np.linalg.norm(AS @ base - y))
    if r0 >= xi:
        return "short", y - AS @ base
    lo, hi = 1e-12, 1.0
    while resid(hi) > 0 and hi < 1e16:
        hi *= 10
    if resid(hi) > 0 or resid(lo) < 0:
        return "singular", None
    lam = brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return base - corr / lam, lam


def _active_set_denoise(A, y, xi, S, s, max_steps):
    """Local active-set search for the KKT point of the relaxed program.

    Sign-inconsistent entries are removed one at a time; when the support
    cannot reach the constraint ball, or a dual constraint is violated, the
    most correlated column joins the support.
    """
    S, s = list(S), list(s)
    for _ in range(max_steps):
        if S:
            xs, lam = _denoise_on_support(A[:, S], y, np.array(s, dtype=float), xi)
        else:
            xs, lam = "short", y
        if isinstance(xs, str):
            if xs == "singular":
                return None
            corr = A.T @ lam
            corr[S] = 0.0
            j = int(np.argmax(np.abs(corr)))
            S.append(j)
            s.append(float(np.sign(corr[j])))
            continue
        signed = xs * np.array(s)
        if np.any(signed <= 0):
            i = int(np.argmin(signed))
            del S[i], s[i]
            continue
        cand = np.zeros(A.shape[1])
        cand[S] = xs
        u = lam * (y - A @ cand)
        corr = A.T @ u
        corr[S] = 0.0
        j = int(np.argmax(np.abs(corr)))
        if abs(corr[j]) <= 1 + 1e-12 or len(S) >= A.shape[0]:
            return cand, u
        S.append(j)
        s.append(float(np.sign(corr[j])))
    return None


def _polish_denoise(A, y, x, u, xi):
    n = A.shape[0]
    best = None
    for S, s in _candidate_sets(A, x, u, n):
        if S.size > n:
            continue
        out = _active_set_denoise(A, y, xi, S, s, 4 * n)
        if out is None:
            continue
        cand, uu = out
        res = max(0.0, float(np.linalg.norm(A @ cand - y)) - xi)
        gap, uu = _scaled_gap(cand, uu, A, y, xi)
        if best is None or (res, gap) < (best[1], best[2]):
            best = (cand, res, gap, uu)
    return best


def _run(A, y, xi, config: SolverConfig):
    """Primal-dual iterations on unit-norm data ``y``."""
    m = A.shape[1]
    L = operator_norm(A, config.power_tol)
    tau = sigma = config.step_scale / L
    x = np.zeros(m)
    xbar = x.copy()
    nu = np.zeros(A.shape[0])
    best = None
    trace = []

    def consider(cand, res, gap, u, it):
        nonlocal best
        score = (res > config.feas_tol, gap > config.gap_tol, res + abs(gap))
        if best is None or score < best[0]:
            best = (score, cand.copy(), res, gap, u, it)

    for it in range(1, config.max_iterations + 1):
        v = nu + sigma * (A @ xbar)
        if xi > 0:
            nu = v - sigma * _project_ball(v / sigma, y, xi)
        else:
            nu = v - sigma * y
        x_new = _soft(x - tau * (A.T @ nu), tau)
        xbar = 2 * x_new - x
        x = x_new
        if it % config.polish_every == 0 or it == config.max_iterations:
            raw_res = float(np.linalg.norm(A @ x - y))
            res = max(0.0, raw_res - xi)
            if np.any(x):
                gap, u = _scaled_gap(x, -nu, A, y, xi)
                consider(x, res, gap, u, it)
            pol = (_polish_denoise(A, y, x, -nu, xi) if xi > 0
                   else _polish_equality(A, y, x, -nu))
            if pol is not None:
                consider(pol[0], pol[1], pol[2], pol[3], it)
            if config.trace:
                trace.append((it, float(np.sum(np.abs(best[1]))), best[2], best[3]))
            if best[2] <= config.feas_tol and best[3] <= config.gap_tol:
                break
    _, xb, res, gap, u, it_b = best if best is not None else (None, x, 1.0, np.inf, -nu, it)
    converged = res <= config.feas_tol and gap <= config.gap_tol
    return xb, res, gap, u, it, converged, trace


def _finish(x, res, gap, u, it, converged, trace, scale, A, y):
    x = x * scale
    trace = [(i, obj * scale, r * scale, g) for i, obj, r, g in trace]
    sol = L1Solution(x, float(np.sum(np.abs(x))), float(np.linalg.norm(A @ x - y)), float(gap),
                     it, bool(converged), u, trace)
    if not converged:
        raise NotConverged(f"no convergence after {it} iterations (residual {res:.3e}, "
                           f"gap {gap:.3e})", best=sol)
    return sol


def _check(A, y):
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != A.shape[0]:
        raise DimensionMismatch(f"y has length {y.size}, dictionary has {A.shape[0]} rows")
    return y


def _require_feasible(A, y, xi, slack):
    """Raise Infeasible when no x brings ``||Phi x - y||`` down to ``xi``."""
    xs, *_ = np.linalg.lstsq(A, y, rcond=None)
    best = float(np.linalg.norm(A @ xs - y))
    if best > xi + slack:
        raise Infeasible(f"least-squares residual {best:.3e} exceeds the bound {xi:.3e}")


def _zero(A, y):
    return L1Solution(np.zeros(A.shape[1]), 0.0, float(np.linalg.norm(y)), 0.0, 0, True,
                      np.zeros(A.shape[0]))


def solve_bp_equality(dictionary, y, config: Optional[SolverConfig] = None) -> L1Solution:
    """Minimize ``||x||_1`` subject to ``Phi x = y``."""
    config = config or SolverConfig()
    A = _matrix(dictionary)
    y = _check(A, y)
    ny = float(np.linalg.norm(y))
    if ny == 0:
        return _zero(A, y)
    _require_feasible(A, y, 0.0, config.feas_tol * ny)
    out = _run(A, y / ny, 0.0, config)
    return _finish(*out, ny, A, y)


def solve_bp_denoise(dictionary, y, xi_bound: float,
                     config: Optional[SolverConfig] = None) -> L1Solution:
    """Minimize ``||x||_1`` subject to ``||Phi x - y||_2 <= xi_bound``."""
    if xi_bound < 0:
        raise ValueError("xi_bound must be nonnegative")
    config = config or SolverConfig()
    A = _matrix(dictionary)
    y = _check(A, y)
    ny = float(np.linalg.norm(y))
    if xi_bound == 0:
        return solve_bp_equality(A, y, config)
    if ny <= xi_bound:
        return _zero(A, y)
    _require_feasible(A, y, xi_bound, config.feas_tol * ny)
    out = _run(A, y / ny, xi_bound / ny, config)
    sol = _finish(*out, ny, A, y)
    sol.residual = float(np.linalg.norm(A @ sol.x - y))
    return sol


def brute_force_oracle(dictionary, y, k_max: int = 2, tol: float = 1e-10) -> L1Solution:
    """Exact minimizer of ``||x||_1`` over ``Phi x = y`` for tiny problems.

    Every basic solution (support of size at most ``rank Phi`` with linearly
    independent columns) is enumerated, which includes all supports of size
    ``<= k_max``.  A linear program attains its optimum at a basic solution,
    so the smallest objective found is the global minimum.
    """
    A = _matrix(dictionary)
    n, m = A.shape
    if m > ORACLE_MAX_COLUMNS or k_max > ORACLE_MAX_K:
        raise TooLarge(f"oracle limited to m <= {ORACLE_MAX_COLUMNS}, k_max <= {ORACLE_MAX_K}")
    y = _check(A, y)
    ny = float(np.linalg.norm(y))
    if ny == 0:
        return _zero(A, y)
    rank = int(np.linalg.matrix_rank(A))
    best = None
    for size in range(1, rank + 1):
        for S in itertools.combinations(range(m), size):
            AS = A[:, S]
            sv = np.linalg.svd(AS, compute_uv=False)
            if sv[-1] <= 1e-10 * sv[0]:
                continue
            xs, *_ = np.linalg.lstsq(AS, y, rcond=None)
            if np.linalg.norm(AS @ xs - y) > tol * ny:
                continue
            obj = float(np.sum(np.abs(xs)))
            if best is None or obj < best[0] - 1e-14 * obj:
                x = np.zeros(m)
                x[list(S)] = xs
                best = (obj, x)
    if best is None:
        raise Infeasible("no x satisfies Phi x = y")
    x = best[1]
    return L1Solution(x, best[0], float(np.linalg.norm(A @ x - y)), 0.0, 0, True)


def nls_landscape(dictionary, y) -> np.ndarray:
    """``min_c ||y - c phi(eta_j)||^2 = ||y||^2 - (phi(eta_j)^T y)^2`` per grid point."""
    A = _matrix(dictionary)
    y = _check(A, y)
    return float(y @ y) - (A.T @ y) ** 2


def strict_local_minima(values) -> np.ndarray:
    """Indices of interior points strictly below both neighbours."""
    v = np.asarray(values, dtype=float)
    inner = np.flatnonzero((v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])) + 1
    return inner
