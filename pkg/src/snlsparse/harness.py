"""Experiment orchestration: phase transitions, noisy deconvolution,
certificate demos and the audit of the published decay constants.

Every experiment returns plain data structures and can write CSV/JSON
artifacts; the CLI in :mod:`snlsparse.cli` is a thin layer over this module.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .certificate import build_certificate, certificate_bound_audit, sign_patterns
from .core import AtomicMeasure, Dictionary, ParameterGrid, recovery_error, synthesize_measurements
from .correlation import (
    DecayConstants,
    algebraic_residuals,
    correlation_profile,
    enforce_algebraic,
    gaussian_envelope_sigma,
)
from .errors import NotConverged, SNLError
from .forward import HeatModelConfig, KernelSpec, heat_dictionary, ricker_dictionary
from .separation import delta_corr, delta_sep, required_delta, schur_bounds
from .solver import SolverConfig, nls_landscape, solve_bp_denoise, solve_bp_equality, strict_local_minima

PUBLISHED_GAMMA = (0.185, 0.983, 0.788, 0.868)
PUBLISHED_C = ((2.818, 3.348, 4.200), (6.786, 8.060, 10.113))
PUBLISHED_SEPARATION = 6.6

UNIFORM_SPAN = 0.45
CLUSTER_CENTRE = 0.4
CLUSTER_SPACING = 0.02
SUCCESS_RELATIVE = 3e-5
FAILURE_ABSOLUTE = 9e-3


def published_constants() -> DecayConstants:
    """The Gaussian-kernel example: ``N = 1``, ``D = 0``, ``sigma = 1``."""
    return DecayConstants.shared(1.0, 0.0, 1.0, PUBLISHED_GAMMA, PUBLISHED_C)


def support_layout(kind: str, dilation: float = 1.0, k: int = 7) -> np.ndarray:
    """Source positions on ``[-0.5, 0.5]`` dilated about the origin.

    ``uniform`` spreads ``k`` sources over ``[-0.45, 0.45]``; ``clustered``
    places one source at the centre and two clusters of three at ``+-0.4``.
    """
    if not 0 < dilation <= 1:
        raise ValueError("dilation must lie in (0, 1]")
    if kind == "uniform":
        pts = np.linspace(-UNIFORM_SPAN, UNIFORM_SPAN, k)
    elif kind == "clustered":
        if k != 7:
            raise ValueError("the clustered layout has exactly 7 sources")
        offs = np.array([-CLUSTER_SPACING, 0.0, CLUSTER_SPACING])
        pts = np.concatenate([-CLUSTER_CENTRE + offs, [0.0], CLUSTER_CENTRE + offs])
    else:
        raise ValueError(f"unknown layout {kind!r}")
    return pts * dilation


def snap_to_grid(points, grid: ParameterGrid) -> np.ndarray:
    """Nearest grid indices, pushed apart so that they stay strictly increasing."""
    idx = grid.nearest_index(np.sort(np.asarray(points, dtype=float)))
    for i in range(1, idx.size):
        idx[i] = max(idx[i], idx[i - 1] + 1)
    if idx[-1] >= grid.m:
        idx -= idx[-1] - (grid.m - 1)
        for i in range(idx.size - 2, -1, -1):
            idx[i] = min(idx[i], idx[i + 1] - 1)
    if idx[0] < 0:
        raise ValueError("grid too small for the requested support")
    return idx


def alternating_signs(k: int) -> np.ndarray:
    return (-1.0) ** np.arange(k)


def classify(relative: float, absolute: float, success_rel: float = SUCCESS_RELATIVE,
             failure_abs: float = FAILURE_ABSOLUTE) -> str:
    if relative < success_rel:
        return "success"
    if absolute > failure_abs:
        return "failure"
    return "ambiguous"


@dataclass(frozen=True)
class TrialConfig:
    """One recovery trial on a fixed dictionary.

    ``sign_policy`` is ``fixed`` (alternating signs) or ``all`` (every sign
    pattern, optionally capped by ``patterns``).
    """

    layout: str = "uniform"
    dilation: float = 1.0
    sign_policy: str = "fixed"
    patterns: Optional[int] = None
    solver: SolverConfig = SolverConfig(max_iterations=20_000)
    success_rel: float = SUCCESS_RELATIVE
    failure_abs: float = FAILURE_ABSOLUTE
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.dilation <= 1:
            raise ValueError("dilation must lie in (0, 1]")
        if not (self.success_rel > 0 and self.failure_abs > 0):
            raise ValueError("thresholds must be positive")
        if self.sign_policy not in ("fixed", "all"):
            raise ValueError("sign_policy must be 'fixed' or 'all'")


@dataclass
class PhaseRow:
    layout: str
    dilation: float
    delta_sep: float
    delta_corr: float
    success_any: bool
    success_all: bool
    relative_error: float
    absolute_error: float
    outcome: str
    converged: bool
    note: str = ""


FIELDS = list(PhaseRow.__dataclass_fields__)


@dataclass
class PhaseDiagram:
    rows: list = field(default_factory=list)

    def layout_rows(self, layout: str) -> list:
        return sorted((r for r in self.rows if r.layout == layout), key=lambda r: r.dilation)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(FIELDS)
            for r in self.rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def _solve_pattern(dictionary, measure, config: TrialConfig):
    y = synthesize_measurements(dictionary, measure).y
    try:
        sol = solve_bp_equality(dictionary, y, config.solver)
        x, converged = sol.x, True
    except NotConverged as exc:
        x, converged = exc.best.x, False
    rel, ab = recovery_error(measure, x, dictionary.grid)
    return rel, ab, converged


def run_trial(dictionary: Dictionary, sigmas: np.ndarray, config: TrialConfig) -> PhaseRow:
    """Plant the layout, solve, and record separations and errors.

    ``sigmas`` holds the Gaussian-envelope width of every grid point.
    Solver and model errors are recorded in ``note`` instead of raised.
    """
    grid = dictionary.grid
    idx = snap_to_grid(support_layout(config.layout, config.dilation), grid)
    pts = grid.points[idx]
    d_sep = delta_sep(pts)
    d_corr = delta_corr(pts, sigmas[idx])
    if config.sign_policy == "fixed":
        patterns = [alternating_signs(idx.size)]
    else:
        patterns = list(sign_patterns(idx.size))[: config.patterns]
    results, note = [], ""
    for signs in patterns:
        try:
            results.append(_solve_pattern(dictionary, AtomicMeasure(pts, signs), config))
        except SNLError as exc:
            note = f"{type(exc).__name__}: {exc}"
            results.append((np.inf, np.inf, False))
    outcomes = [classify(r, a, config.success_rel, config.failure_abs) for r, a, _ in results]
    worst = int(np.argmax([r for r, _, _ in results]))
    rel, ab, _ = results[worst]
    success_any = any(o == "success" for o in outcomes)
    success_all = all(o == "success" for o in outcomes)
    outcome = outcomes[worst]
    return PhaseRow(config.layout, float(config.dilation), d_sep, d_corr, success_any,
                    success_all, float(rel), float(ab), outcome,
                    all(c for _, _, c in results), note)


@dataclass(frozen=True)
class PhaseConfig:
    """Sweep of dilation factors for both support layouts on the heat model."""

    heat: HeatModelConfig = HeatModelConfig()
    layouts: tuple = ("uniform", "clustered")
    dilations: tuple = tuple(np.geomspace(0.01, 1.0, 24).tolist())
    sign_policy: str = "fixed"
    patterns: Optional[int] = None
    solver: SolverConfig = SolverConfig(max_iterations=20_000)
    success_rel: float = SUCCESS_RELATIVE
    failure_abs: float = FAILURE_ABSOLUTE
    workers: int = 1

    @classmethod
    def from_json(cls, text: str) -> "PhaseConfig":
        data = json.loads(text)
        heat = HeatModelConfig(**data.pop("heat", {}))
        solver = SolverConfig(**data.pop("solver", {"max_iterations": 20_000}))
        if "dilations" in data:
            data["dilations"] = tuple(float(v) for v in data["dilations"])
        if "layouts" in data:
            data["layouts"] = tuple(data["layouts"])
        return cls(heat=heat, solver=solver, **data)


def envelope_widths(dictionary: Dictionary) -> np.ndarray:
    """Gaussian-envelope width of the correlation at every grid point."""
    return np.array([gaussian_envelope_sigma(correlation_profile(dictionary, j))
                     for j in range(dictionary.m)])


def run_heat_phase_transition(config: PhaseConfig = PhaseConfig(),
                              dictionary: Optional[Dictionary] = None) -> PhaseDiagram:
    """Recovery outcome against dilation for each layout (rows in sweep order)."""
    if dictionary is None:
        dictionary = heat_dictionary(config.heat)
    sigmas = envelope_widths(dictionary)
    trials = [TrialConfig(layout, float(a), config.sign_policy, config.patterns, config.solver,
                          config.success_rel, config.failure_abs)
              for layout in config.layouts for a in config.dilations]
    run = lambda t: run_trial(dictionary, sigmas, t)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            rows = list(pool.map(run, trials))
    else:
        rows = [run(t) for t in trials]
    return PhaseDiagram(rows)


def success_threshold(rows: Sequence[PhaseRow], metric: str) -> Optional[float]:
    """Geometric midpoint between the last non-success and the first success
    of the trailing run of successes (rows ordered by dilation)."""
    rows = sorted(rows, key=lambda r: r.dilation)
    ok = [r.outcome == "success" for r in rows]
    if not ok or not ok[-1]:
        return None
    first = len(ok) - 1
    while first > 0 and ok[first - 1]:
        first -= 1
    hi = getattr(rows[first], metric)
    if first == 0:
        return float(hi)
    lo = getattr(rows[first - 1], metric)
    return float(np.sqrt(lo * hi))


def is_contiguous(rows: Sequence[PhaseRow]) -> bool:
    """Successes form one run that reaches the largest dilation."""
    ok = [r.outcome == "success" for r in sorted(rows, key=lambda r: r.dilation)]
    if not any(ok):
        return False
    first = ok.index(True)
    return all(ok[first:])


def threshold_gaps(diagram: PhaseDiagram) -> dict:
    """Log-ratio of the uniform and clustered thresholds in each separation measure."""
    out = {}
    for metric in ("delta_sep", "delta_corr"):
        t_u = success_threshold(diagram.layout_rows("uniform"), metric)
        t_c = success_threshold(diagram.layout_rows("clustered"), metric)
        out[metric] = None if t_u is None or t_c is None else {
            "uniform": t_u, "clustered": t_c, "gap": float(abs(np.log(t_u / t_c)))}
    gs, gc = out["delta_sep"], out["delta_corr"]
    out["ratio"] = None if gs is None or gc is None else (
        float(gs["gap"] / gc["gap"]) if gc["gap"] > 0 else float("inf"))
    return out


@dataclass(frozen=True)
class NoiseDemoConfig:
    """Ricker deconvolution with norm-calibrated noise at a target SNR (dB)."""

    start: float = -10.0
    stop: float = 10.0
    m: int = 401
    width: float = 1.0
    positions: tuple = (-6.0, -2.5, 1.0, 5.0)
    coefficients: tuple = (1.0, -1.5, 0.8, 1.2)
    snr_db: float = 20.7
    seed: int = 0
    cell_tolerance: float = 2.0
    significance: float = 0.1
    solver: SolverConfig = SolverConfig()


@dataclass
class NoiseReport:
    seed: int
    snr_db: float
    noise_norm: float
    clusters: list
    spike_errors_cells: list
    matched: bool
    spurious: list
    grid: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray

    def to_csv(self, path) -> None:
        data = np.column_stack([self.grid, self.truth, self.estimate])
        np.savetxt(path, data, delimiter=",", header="theta,truth,estimate", comments="",
                   fmt="%.17g")

    def summary(self) -> dict:
        return {"seed": self.seed, "snr_db": self.snr_db, "noise_norm": self.noise_norm,
                "clusters": self.clusters, "spike_errors_cells": self.spike_errors_cells,
                "matched": self.matched, "spurious": self.spurious, "degraded": self.degraded}

    @property
    def degraded(self) -> bool:
        return not self.matched or bool(self.spurious)


def mass_clusters(x, points, rel_threshold: float = 1e-3) -> list:
    """Runs of adjacent same-sign entries above ``rel_threshold * max|x|``."""
    x = np.asarray(x, dtype=float)
    thr = rel_threshold * float(np.max(np.abs(x), initial=0.0))
    active = np.flatnonzero(np.abs(x) > thr) if thr > 0 else np.array([], dtype=int)
    clusters, run = [], []
    for j in active:
        if run and (j != run[-1] + 1 or np.sign(x[j]) != np.sign(x[run[-1]])):
            clusters.append(run)
            run = []
        run.append(int(j))
    if run:
        clusters.append(run)
    out = []
    for c in clusters:
        w = np.abs(x[c])
        out.append({"centre": float(w @ points[c] / w.sum()), "mass": float(x[c].sum()),
                    "sign": float(np.sign(x[c[0]])), "indices": c})
    return out


def run_noise_demo(config: NoiseDemoConfig = NoiseDemoConfig(),
                   dictionary: Optional[Dictionary] = None) -> NoiseReport:
    grid = ParameterGrid.uniform(config.start, config.stop, config.m)
    if dictionary is None:
        dictionary = ricker_dictionary(KernelSpec("ricker", config.width), grid)
    grid = dictionary.grid
    idx = grid.nearest_index(config.positions)
    truth = AtomicMeasure(grid.points[idx], config.coefficients)
    clean = synthesize_measurements(dictionary, truth).y
    noise_norm = 0.0
    if np.isfinite(config.snr_db):
        noise_norm = float(np.linalg.norm(clean) / 10 ** (config.snr_db / 20))
    meas = synthesize_measurements(dictionary, truth, noise_norm, seed=config.seed)
    sol = solve_bp_denoise(dictionary, meas.y, noise_norm, config.solver)
    clusters = mass_clusters(sol.x, grid.points)
    h = grid.spacing[0]
    errors = []
    for p, c in zip(truth.support, truth.coefficients):
        same = [abs(cl["centre"] - p) / h for cl in clusters if cl["sign"] == np.sign(c)]
        errors.append(float(min(same)) if same else float("inf"))
    matched = bool(all(e <= config.cell_tolerance for e in errors))
    # significant clusters that sit away from every same-sign spike
    top = max((abs(cl["mass"]) for cl in clusters), default=0.0)
    spurious = [cl["centre"] for cl in clusters if abs(cl["mass"]) >= config.significance * top
                and not any(abs(cl["centre"] - p) / h <= config.cell_tolerance and cl["sign"] == np.sign(c)
                            for p, c in zip(truth.support, truth.coefficients))]
    return NoiseReport(config.seed, config.snr_db, noise_norm, clusters, errors, matched,
                       spurious, grid.points, truth.to_vector(grid), sol.x)


@dataclass(frozen=True)
class CertificateDemoConfig:
    heat: HeatModelConfig = HeatModelConfig()
    positions: tuple = (-0.12, 0.0, 0.12)
    signs: tuple = (1.0, 1.0, 1.0)


def run_certificate_demo(config: CertificateDemoConfig = CertificateDemoConfig(),
                         dictionary: Optional[Dictionary] = None, out_dir=None) -> dict:
    """Build a certificate and its component curves; optionally write artifacts."""
    if dictionary is None:
        dictionary = heat_dictionary(config.heat)
    grid = dictionary.grid
    idx = snap_to_grid(config.positions, grid)
    cert = build_certificate(dictionary, grid.points[idx], config.signs)
    components = {"theta": grid.points, "Q": cert.Q}
    for i, j in enumerate(idx):
        prof = correlation_profile(dictionary, int(j))
        components[f"alpha_rho_{i}"] = cert.alpha[i] * prof.rho[(0, 0)]
        components[f"beta_rho10_{i}"] = cert.beta[i, 0] * prof.hat(1, 0)
    report = cert.report.to_dict()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        keys = list(components)
        np.savetxt(out / "certificate.csv", np.column_stack([components[k] for k in keys]),
                   delimiter=",", header=",".join(keys), comments="", fmt="%.17g")
        (out / "verification.json").write_text(json.dumps(
            {"support": grid.points[idx].tolist(), "signs": list(config.signs),
             "alpha": cert.alpha.tolist(), "beta": cert.beta.ravel().tolist(), **report},
            indent=1))
    return {"certificate": cert, "components": components, "report": report}


def audit_theorem_constants(constants: Optional[DecayConstants] = None) -> dict:
    """Required separation and algebraic residuals for the published constants."""
    constants = constants or published_constants()
    req = required_delta(constants)
    r1, r2 = algebraic_residuals(constants.C)
    unchanged = float(np.max(np.abs(enforce_algebraic(constants.C) - constants.C)))
    return {"log_term": req.log_term, "lambda1": req.lambda1, "lambda2": req.lambda2,
            "delta_req": req.delta_req, "absolute_separation": req.absolute,
            "published_separation": PUBLISHED_SEPARATION,
            "difference": req.absolute - PUBLISHED_SEPARATION,
            "algebraic_residuals": [r1, r2], "enforce_change": unchanged,
            "schur": schur_bounds(req.delta_req, constants.C).to_dict()}


def format_audit(report: dict) -> str:
    lines = [f"{'quantity':<22}{'value':>12}"]
    for key in ("log_term", "lambda1", "lambda2", "delta_req", "absolute_separation",
                "published_separation", "difference"):
        lines.append(f"{key:<22}{report[key]:>12.4f}")
    r1, r2 = report["algebraic_residuals"]
    lines.append(f"{'residual C01C10':<22}{r1:>12.2e}")
    lines.append(f"{'residual C01C12':<22}{r2:>12.2e}")
    return "\n".join(lines)


def landscape_minima(width: float = 1.0, spike: float = 0.0, start: float = -10.0,
                     stop: float = 10.0, m: int = 2001) -> dict:
    """Single-spike least-squares landscape on a Ricker dictionary."""
    grid = ParameterGrid.uniform(start, stop, m)
    dictionary = ricker_dictionary(KernelSpec("ricker", width), grid)
    j = int(grid.nearest_index(spike)[0])
    values = nls_landscape(dictionary, dictionary.columns[:, j])
    minima = strict_local_minima(values)
    spurious = [int(i) for i in minima if i != j]
    return {"grid": grid.points, "values": values, "global": j, "spurious": spurious}
