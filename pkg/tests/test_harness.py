import json

import numpy as np
import pytest

from snlsparse import harness
from snlsparse.core import ParameterGrid
from snlsparse.forward import HeatModelConfig
from snlsparse.harness import (
    CertificateDemoConfig,
    NoiseDemoConfig,
    PhaseConfig,
    PhaseDiagram,
    PhaseRow,
    TrialConfig,
    audit_theorem_constants,
    classify,
    is_contiguous,
    run_certificate_demo,
    run_heat_phase_transition,
    run_noise_demo,
    snap_to_grid,
    success_threshold,
    support_layout,
    threshold_gaps,
)


def row(layout, a, outcome, sep=None, corr=None):
    ok = outcome == "success"
    return PhaseRow(layout, a, sep if sep is not None else a, corr if corr is not None else a,
                    ok, ok, 0.0 if ok else 1.0, 0.0 if ok else 1.0, outcome, True)


def test_layouts():
    u = support_layout("uniform")
    assert u.size == 7 and np.isclose(np.diff(u), 0.15).all()
    c = support_layout("clustered", 0.5)
    np.testing.assert_allclose(c, 0.5 * np.array([-0.42, -0.40, -0.38, 0, 0.38, 0.40, 0.42]))
    with pytest.raises(ValueError):
        support_layout("uniform", 0.0)
    with pytest.raises(ValueError):
        support_layout("spiral")


def test_snap_keeps_points_distinct():
    grid = ParameterGrid.uniform(-0.5, 0.5, 101)
    idx = snap_to_grid(support_layout("uniform", 0.01), grid)
    assert np.all(np.diff(idx) == 1) and idx.size == 7
    idx = snap_to_grid([0.5, 0.5, 0.5], grid)
    np.testing.assert_array_equal(idx, [98, 99, 100])


def test_trial_config_invariants():
    with pytest.raises(ValueError):
        TrialConfig(dilation=1.5)
    with pytest.raises(ValueError):
        TrialConfig(success_rel=0)
    with pytest.raises(ValueError):
        TrialConfig(sign_policy="some")


def test_classify():
    assert classify(1e-6, 1e-6) == "success"
    assert classify(0.5, 1.0) == "failure"
    assert classify(1e-3, 1e-3) == "ambiguous"


def test_threshold_helpers():
    rows = [row("uniform", a, o) for a, o in ((0.1, "failure"), (0.2, "failure"), (0.4, "success"), (0.8, "success"))]
    assert success_threshold(rows, "delta_sep") == pytest.approx(np.sqrt(0.08))
    assert is_contiguous(rows)
    broken = rows[:2] + [row("uniform", 0.4, "success"), row("uniform", 0.8, "failure")]
    assert not is_contiguous(broken) and success_threshold(broken, "delta_sep") is None
    clustered = [row("clustered", a, o, sep=a / 8, corr=a) for a, o in
                 ((0.1, "failure"), (0.2, "failure"), (0.4, "success"), (0.8, "success"))]
    gaps = threshold_gaps(PhaseDiagram(rows + clustered))
    assert gaps["delta_sep"]["gap"] == pytest.approx(np.log(8))
    assert gaps["delta_corr"]["gap"] == pytest.approx(0.0) and gaps["ratio"] == float("inf")


@pytest.fixture(scope="module")
def small_phase():
    cfg = PhaseConfig(heat=HeatModelConfig(M=400, n_t=50, m=200), dilations=(0.01, 1.0))
    return cfg, run_heat_phase_transition(cfg)


def test_phase_endpoints(small_phase):
    _, diagram = small_phase
    by = {(r.layout, r.dilation): r for r in diagram.rows}
    top = by[("uniform", 1.0)]
    assert top.outcome == "success" and top.relative_error < 3e-5
    low = by[("uniform", 0.01)]
    assert low.outcome == "failure" and low.absolute_error > 9e-3
    assert all(r.success_any or not r.success_all for r in diagram.rows)
    assert len(diagram.rows) == 4


def test_phase_csv_deterministic(tmp_path, small_phase):
    cfg, diagram = small_phase
    diagram.to_csv(tmp_path / "a.csv")
    run_heat_phase_transition(cfg).to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["layout", "dilation", "delta_sep", "delta_corr"]


def test_all_sign_patterns(small_heat):
    sig = harness.envelope_widths(small_heat)
    r = harness.run_trial(small_heat, sig, TrialConfig("uniform", 1.0, "all", patterns=4))
    assert r.success_all and r.success_any


def test_phase_config_json():
    cfg = PhaseConfig.from_json(json.dumps({"heat": {"M": 400, "n_t": 50, "m": 500},
                                            "dilations": [0.1, 1.0], "workers": 2}))
    assert cfg.heat.M == 400 and cfg.dilations == (0.1, 1.0) and cfg.workers == 2


def test_threaded_matches_serial(small_heat):
    base = PhaseConfig(heat=HeatModelConfig(M=400, n_t=50, m=200), dilations=(0.2, 1.0))
    serial = run_heat_phase_transition(base, small_heat)
    pooled = run_heat_phase_transition(PhaseConfig(**{**base.__dict__, "workers": 2}), small_heat)
    assert [r.__dict__ for r in serial.rows] == [r.__dict__ for r in pooled.rows]


def test_noise_zero():
    rep = run_noise_demo(NoiseDemoConfig(snr_db=float("inf")))
    assert rep.noise_norm == 0.0
    np.testing.assert_allclose(rep.estimate, rep.truth, atol=1e-9)
    assert rep.matched and not rep.degraded


def test_noise_paper_snr(tmp_path):
    rep = run_noise_demo(NoiseDemoConfig(seed=4))
    assert rep.matched and max(rep.spike_errors_cells) <= 2
    rep.to_csv(tmp_path / "n.csv")
    assert np.loadtxt(tmp_path / "n.csv", delimiter=",", skiprows=1).shape == (401, 3)


def test_noise_zero_db_completes():
    rep = run_noise_demo(NoiseDemoConfig(snr_db=0.0))
    assert isinstance(rep.degraded, bool)
    assert json.loads(json.dumps(rep.summary()))["snr_db"] == 0.0


def test_certificate_demo(tmp_path, heat):
    res = run_certificate_demo(CertificateDemoConfig(), heat, out_dir=tmp_path)
    assert res["report"]["valid"]
    header = (tmp_path / "certificate.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["theta", "Q"] and "alpha_rho_0" in header and "beta_rho10_2" in header
    assert json.loads((tmp_path / "verification.json").read_text())["valid"]


def test_certificate_demo_alternating(heat):
    res = run_certificate_demo(CertificateDemoConfig(signs=(1.0, -1.0, 1.0)), heat)
    cert = res["certificate"]
    assert cert.Q[cert.indices[1]] == pytest.approx(-1.0, abs=1e-8)


def test_certificate_demo_close_pair(heat):
    res = run_certificate_demo(CertificateDemoConfig(positions=(0.0, 0.004), signs=(1.0, -1.0)), heat)
    assert not res["report"]["valid"] and res["report"]["violations"]


def test_theorem_audit():
    rep = audit_theorem_constants()
    assert abs(rep["absolute_separation"] - 6.6) < 0.05
    assert max(rep["algebraic_residuals"]) < 0.05
    assert rep["lambda2"] > rep["lambda1"] > rep["log_term"]
    assert rep["enforce_change"] <= 1e-9
    assert "6.5758" in harness.format_audit(rep)


def test_landscape():
    out = harness.landscape_minima()
    assert len(out["spurious"]) >= 2 and out["values"][out["global"]] == pytest.approx(0, abs=1e-12)
