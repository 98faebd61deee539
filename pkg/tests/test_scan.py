import math

import numpy as np
import pytest

from sgc_entangle import (
    Axis,
    GridError,
    ModelParams,
    ParameterError,
    ScanSpec,
    SteadyState,
    coherence_from_r_theta,
    entanglement_report,
    kr_relation_scan,
    lorentzian_fit,
    run_scan,
    schmidt_mode_report,
)
from sgc_entangle.scan import (
    WORKERS_ENV,
    fwhm_of_slice,
    in_kr_regime,
    lorentzian,
    max_workers,
    r_slice,
    read_scan_csv,
    write_kr_csv,
)

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def surface():
    spec = ScanSpec(fixed=ModelParams(delta=0.02, eta=0.1),
                    axes=(Axis("r", -3.0, 3.0, 25), Axis("theta", 0.0, TWO_PI, 25)))
    return run_scan(spec, workers=1)


def test_surface_is_complete_and_peaks_at_dark_point(surface):
    r = surface.grid("R")
    assert surface.n_failed == 0 and np.all(np.isfinite(r))
    i, j = np.unravel_index(np.argmax(r), r.shape)
    assert surface.axis_values[0][i] == pytest.approx(0.0, abs=1e-12)
    assert surface.axis_values[1][j] == pytest.approx(math.pi)
    row = r[12]
    assert surface.axis_values[1][int(np.argmin(row))] in (0.0, TWO_PI)


def test_surface_symmetric_under_theta_reflection(surface):
    r = surface.grid("R")
    np.testing.assert_allclose(r, r[:, ::-1], rtol=1e-6)


def test_scan_rerun_is_bit_identical(tmp_path, surface):
    run_scan(surface.spec, workers=1).write_csv(tmp_path / "a.csv")
    surface.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_worker_count_does_not_change_output(tmp_path):
    spec = ScanSpec(fixed=ModelParams(delta=0.04, eta=0.2), axes=(Axis("theta", 2.0, 4.0, 5),), measures=("R", "K"))
    run_scan(spec, workers=1).write_csv(tmp_path / "serial.csv")
    run_scan(spec, workers=2).write_csv(tmp_path / "pool.csv")
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "pool.csv").read_bytes()


def test_csv_round_trip(tmp_path, surface):
    surface.write_csv(tmp_path / "s.csv")
    header, rows = read_scan_csv(tmp_path / "s.csv")
    assert header == ["r", "theta", "R", "status"]
    assert len(rows) == 25 * 25
    got = np.array([row[2] for row in rows])
    np.testing.assert_array_equal(got, surface.values["R"])
    assert {row[3] for row in rows} == {"ok"}
    assert (tmp_path / "s.csv").read_text().startswith("# fixed delta=0.02")


def test_single_point_scan_equals_report():
    spec = ScanSpec(fixed=ModelParams(delta=0.04, eta=0.2), axes=(Axis("r", 0.5, 0.5, 1),), theta=2.5,
                    measures=("R", "K", "PE"))
    res = run_scan(spec, workers=1)
    rep = entanglement_report(SteadyState.build(ModelParams(delta=0.04, eta=0.2), coherence_from_r_theta(0.5, 2.5)))
    assert res.values["R"][0] == rep.r_ratio
    assert res.values["K"][0] == rep.schmidt_number
    assert res.values["PE"][0] == rep.phase_entanglement


def test_failures_are_flagged_not_dropped():
    bad = ScanSpec(fixed=ModelParams(delta=0.1, eta=0.3), axes=(Axis("delta", 0.5, 1.5, 3),),
                   theta=math.pi, measures=("R",))
    res = run_scan(bad, workers=1)
    assert res.status[0] == "ok"
    assert res.status[1].startswith("failed:DegeneracyError")
    assert math.isnan(res.values["R"][1])


@pytest.mark.parametrize(
    "kwargs",
    [dict(name="phi", start=0, stop=1, count=5), dict(name="r", start=0, stop=1, count=2),
     dict(name="r", start=1, stop=0, count=5), dict(name="eta", start=0.0, stop=1, count=5),
     dict(name="theta", start=0, stop=math.inf, count=5)],
)
def test_axis_validation(kwargs):
    with pytest.raises(ParameterError):
        Axis(**kwargs)


def test_spec_validation():
    m = ModelParams(delta=0.1, eta=0.3)
    with pytest.raises(ParameterError):
        ScanSpec(fixed=m, axes=(Axis("r", 0, 1, 3), Axis("r", 0, 1, 3)))
    with pytest.raises(ParameterError):
        ScanSpec(fixed=m, axes=(Axis("r", 0, 1, 3),), measures=("S",))
    with pytest.raises(ParameterError):
        ScanSpec(fixed=m, axes=())


def test_worker_env(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert max_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ParameterError):
        max_workers()


def test_schmidt_number_flatter_than_ratio_near_dark_point():
    m = ModelParams(delta=0.04, eta=0.2)
    spec = ScanSpec(fixed=m, axes=(Axis("theta", math.pi - 0.6, math.pi + 0.6, 5),), measures=("R", "K"))
    res = run_scan(spec, workers=1)
    k = res.values["K"] / res.values["K"][2]
    r = res.values["R"] / res.values["R"][2]
    assert np.all(k[[0, 1, 3, 4]] > r[[0, 1, 3, 4]])


def test_lorentzian_recovered_from_exact_samples():
    x = np.linspace(-2, 3, 41)
    fit = lorentzian_fit(x, lorentzian(x, 7.0, 0.4, 0.9, 0.3))
    assert fit.center == pytest.approx(0.4, abs=1e-6)
    assert fit.fwhm == pytest.approx(0.9, abs=1e-6)
    assert fit.residual < 1e-8


def test_lorentzian_fit_range_errors():
    x = np.linspace(-0.1, 0.1, 21)
    with pytest.raises(GridError, match="half-maximum"):
        lorentzian_fit(x, lorentzian(x, 1.0, -0.1, 0.05, 0.0))
    with pytest.raises(GridError):
        lorentzian_fit(x[:5], x[:5])


@pytest.mark.parametrize("eta, delta", [(0.05, 0.005), (0.1, 0.02), (0.2, 0.03)])
def test_slice_widths_agree_and_scale_with_delta_over_eta(eta, delta):
    m = ModelParams(delta=delta, eta=eta)
    th = fwhm_of_slice(m, "theta")
    r = fwhm_of_slice(m, "r")
    assert th.center == pytest.approx(math.pi, abs=1e-6) and r.center == pytest.approx(0.0, abs=1e-6)
    assert r.fwhm == pytest.approx(th.fwhm, rel=0.15)
    # the width constant is the same in every case; test_criterion_4_fwhm_law compares it with 2*delta/eta
    assert th.fwhm * eta / delta == pytest.approx(4.0, rel=0.02)


def test_r_slice_rejects_other_axes():
    with pytest.raises(ParameterError):
        r_slice(ModelParams(delta=0.1, eta=0.3), "eta", [0.1])


def test_kr_single_pair_matches_report(tmp_path):
    rows = kr_relation_scan([0.1], [0.02])
    rep = entanglement_report(SteadyState.build(ModelParams(delta=0.02, eta=0.1), coherence_from_r_theta(0, math.pi)))
    assert len(rows) == 1 and rows[0].status == "ok"
    assert rows[0].K == rep.schmidt_number and rows[0].R == rep.r_ratio
    assert rows[0].relative_gap <= 0.10
    assert in_kr_regime(0.1, 0.02) and not in_kr_regime(0.1, 0.05) and not in_kr_regime(1.2, 0.02)
    write_kr_csv(rows, tmp_path / "kr.csv")
    assert (tmp_path / "kr.csv").read_text().splitlines()[0].startswith("eta,delta,K,R,R_over_2p2")


def test_kr_headline_against_closed_form():
    row = kr_relation_scan([0.7], [0.04])[0]
    assert row.K == pytest.approx(490.7, rel=0.10)


def test_identical_mode_cases_give_identical_modes():
    case = (ModelParams(delta=0.2, eta=0.3), coherence_from_r_theta(0.3, 2.8))
    comp = schmidt_mode_report(case, case, n_modes=3)
    np.testing.assert_allclose(comp.case_a.modes, comp.case_b.modes, atol=1e-10)
    assert comp.k_ratio == pytest.approx(1.0) and comp.r_ratio == pytest.approx(1.0)
    assert not comp.mode1_broader
    assert "reference_pair_claim" not in comp.summary()
    gram = (np.conj(comp.case_a.modes) * comp.q_weights) @ comp.case_a.modes.T
    np.testing.assert_allclose(gram, np.eye(3), atol=1e-8)
