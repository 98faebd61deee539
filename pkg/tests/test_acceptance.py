"""Acceptance criteria, one test per criterion.

Every test records a single PASS/FAIL line (printed in the terminal summary)
before asserting, so a full run lists all verdicts even when some fail.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import optimize

from sgc_entangle import (
    Axis,
    ModelParams,
    ScanSpec,
    SteadyState,
    coherence_from_r_theta,
    entanglement_report,
    make_grid,
    run_scan,
    sample,
    schmidt_decompose,
)
from sgc_entangle.dynamics import compare_steady, integrate_to_steady, oracle_grid
from sgc_entangle.measures import closed_form_k_max, closed_form_r_max, unconditional_variance
from sgc_entangle.scan import fwhm_of_slice, kr_relation_scan, r_slice, schmidt_mode_report

PI = math.pi


def _state(delta, eta, r=0.0, theta=PI):
    return SteadyState.build(ModelParams(delta=delta, eta=eta), coherence_from_r_theta(r, theta))


def test_criterion_1_headline_report(verdict):
    t0 = time.perf_counter()
    rep = entanglement_report(_state(0.04, 0.7), backend="kernel")
    elapsed = time.perf_counter() - t0
    K, R = rep.schmidt_number, rep.r_ratio
    ok = 416 <= K <= 564 and 1020 <= R <= 1380 and elapsed <= 300
    verdict("criterion 1", ok,
            f"K={K:.2f} in [416, 564]; R={R:.1f} in [1020, 1380] (closed-form R_max {rep.closed_form_r_max:.1f}); "
            f"kernel backend {rep.provenance['kernel_nodes']} nodes, {elapsed:.1f} s")
    assert ok


def test_criterion_2_phase_entanglement_example(verdict):
    rows = []
    for r in (0.4, -0.4):
        rep = entanglement_report(_state(0.04, 1.0, r, PI))
        rows.append((r, rep.schmidt_number, rep.r_ratio))
    passing = [r for r, K, R in rows if 416 <= K <= 564 and 77 <= R <= 115]
    detail = "; ".join(f"r'={r:+.1f}: K'={K:.1f}, R'={R:.1f}" for r, K, R in rows)
    verdict("criterion 2", bool(passing),
            f"{detail}; need K' in [416, 564] and R' in [77, 115]; passing sign: {passing or 'none'}")
    assert passing


def test_criterion_3_r_max_closed_form(verdict):
    parts, ok = [], True
    for eta, delta in ((0.05, 0.01), (0.1, 0.02), (0.2, 0.02)):
        R = entanglement_report(_state(delta, eta), with_schmidt=False).r_ratio
        cf = closed_form_r_max(eta, delta)
        rel = abs(R / cf - 1)
        ok &= rel <= 0.10
        parts.append(f"(eta={eta}, delta={delta}): R={R:.1f} vs {cf:.1f} ({100 * rel:.1f}%)")
    verdict("criterion 3", ok, "; ".join(parts))
    assert ok


def test_criterion_4_fwhm_law(verdict):
    parts, ok = [], True
    for eta in (0.05, 0.1, 0.2):
        delta = round(0.1 * eta, 12)
        target = 2 * delta / eta
        for axis in ("theta", "r"):
            fit = fwhm_of_slice(ModelParams(delta=delta, eta=eta), axis)
            ok &= abs(fit.fwhm / target - 1) <= 0.15
            parts.append(f"eta={eta} {axis}: FWHM={fit.fwhm:.4f} vs 2delta/eta={target:.4f}")
    verdict("criterion 4", ok, "; ".join(parts))
    assert ok


def test_criterion_5_k_r_linear_law(verdict):
    etas = (0.1, 0.2, 0.3, 0.5, 0.7, 1.0)
    deltas = (0.02, 0.03, 0.04, 0.06, 0.08)
    rows = [row for row in kr_relation_scan(etas, deltas) if row.in_regime]
    linear = [row for row in rows if row.relative_gap <= 0.10]
    k_ok = all(abs(row.K / row.k_closed_form - 1) <= 0.10 for row in rows)
    ok = len(linear) >= 5 and k_ok and all(row.status == "ok" for row in rows)
    worst = max(rows, key=lambda row: row.relative_gap)
    verdict("criterion 5", ok,
            f"{len(linear)} of {len(rows)} in-regime points have |K - R/2.2|/K <= 0.10 (need >= 5); "
            f"K within 10% of closed form at all points: {k_ok}; "
            f"largest gap {worst.relative_gap:.3f} at eta={worst.eta}, delta={worst.delta}")
    for row in rows:
        print(f"  eta={row.eta:<4} delta={row.delta:<5} K={row.K:9.2f} R/2.2={row.r_over_constant:9.2f} "
              f"K_cf={row.k_closed_form:9.2f} gap={row.relative_gap:.3f}")
    assert ok


def test_criterion_6_mode_comparison(verdict):
    a = (ModelParams(delta=0.1, eta=0.94), coherence_from_r_theta(0.0, PI))
    b = (ModelParams(delta=0.1, eta=1.0), coherence_from_r_theta(-0.4, PI))
    comp = schmidt_mode_report(a, b, n_modes=3)
    ok = 0.9 <= comp.k_ratio <= 1.1 and 0.24 <= comp.r_ratio <= 0.36 and comp.mode1_broader
    verdict("criterion 6", ok,
            f"K'/K={comp.k_ratio:.3f} in [0.9, 1.1]; R'/R={comp.r_ratio:.3f} in [0.24, 0.36]; "
            f"mode-1 second moment {comp.case_a.mode1_variance:.4f} -> {comp.case_b.mode1_variance:.4f}")
    assert ok


def test_criterion_7_dynamics_oracle(verdict):
    m = ModelParams(delta=0.2, eta=0.3)
    c = coherence_from_r_theta(0.0, PI)
    grid = oracle_grid(m)
    t0 = time.perf_counter()
    run = integrate_to_steady(m, c, grid)
    elapsed = time.perf_counter() - t0
    dist = compare_steady(run.final, sample(SteadyState.build(m, c), grid))
    pop = float(run.population[-1])
    ok = dist < 1e-3 and pop < 1e-4 and elapsed <= 30
    verdict("criterion 7", ok,
            f"relative L2 {dist:.2e} (< 1e-3); excited population {pop:.2e} (< 1e-4) at t_final={run.final.tau:.0f}; "
            f"{grid.shape[0]}x{grid.shape[1]} grid in {elapsed:.1f} s")
    assert ok


PE_LATTICE = {
    "r": (-1.0, -0.5, 0.0, 0.5, 1.0),
    "theta": (0.0, 0.5 * PI, 0.75 * PI, PI, 1.5 * PI),
    "eta": (0.1, 0.2, 0.5),
    "delta": (0.04, 0.06, 0.08),
}


def test_criterion_8_property_suite(verdict, small_state, small_wave):
    checks = {}
    checks["normalization"] = (abs(small_wave.norm_check - 1) <= 1e-8, f"{small_wave.norm_check - 1:.1e}")

    dense = schmidt_decompose(small_wave, "dense")
    g = small_wave.grid
    total = dense.eigenvalues.sum() + dense.discarded_mass
    checks["sum lambda"] = (abs(total - 1) <= 1e-6, f"{total - 1:.1e}")
    gram_q = (np.conj(dense.atom_modes) * g.q_weights) @ dense.atom_modes.T
    gram_k = (np.conj(dense.photon_modes) * g.k_weights) @ dense.photon_modes.T
    ortho = max(np.abs(gram_q - np.eye(dense.retained)).max(), np.abs(gram_k - np.eye(dense.retained)).max())
    checks["orthonormality"] = (ortho <= 1e-6, f"{ortho:.1e}")

    reps = []
    for r, th, eta, delta in itertools.product(*PE_LATTICE.values()):
        reps.append(((r, th, eta, delta), entanglement_report(_state(delta, eta, r, th))))
    r_min = min(rep.r_ratio for _, rep in reps)
    k_min = min(rep.schmidt_number for _, rep in reps)
    pe_bad = [(p, rep.phase_entanglement) for p, rep in reps if rep.phase_entanglement < 0.95]
    checks["R >= 1"] = (r_min >= 1 - 1e-6, f"min {r_min:.4f}")
    checks["K >= 1"] = (k_min >= 1 - 1e-6, f"min {k_min:.4f}")
    worst = min(pe_bad, key=lambda x: x[1]) if pe_bad else None
    checks["PE >= 0.95"] = (
        not pe_bad,
        f"{len(pe_bad)} of {len(reps)} lattice points below"
        + (f", min {worst[1]:.3f} at (r, theta, eta, delta)=({worst[0][0]}, {worst[0][1]:.4f}, "
           f"{worst[0][2]}, {worst[0][3]})" if worst else ""),
    )

    st = _state(0.1, 0.5)
    w = sample(st, make_grid(st, resolution=1.0))
    k_dense = schmidt_decompose(w, "dense", n_modes=0).schmidt_number
    k_kernel = schmidt_decompose(w, "kernel", n_modes=0).schmidt_number
    gap = abs(k_dense - k_kernel) / k_dense
    checks["backend agreement"] = (gap < 0.01, f"{gap:.1e}")

    var = unconditional_variance(small_wave)
    rel = abs(var / (small_state.eta**2 / 4) - 1)
    checks["unconditional variance"] = (rel <= 0.02, f"{100 * rel:.3f}%")

    spec = ScanSpec(fixed=ModelParams(delta=0.04, eta=0.2), axes=(Axis("theta", 0.0, 2 * PI, 9),),
                    measures=("R", "K", "PE"))
    first, second = run_scan(spec, workers=1), run_scan(spec, workers=1)
    same = all(np.array_equal(first.values[k], second.values[k]) for k in spec.measures)
    checks["scan determinism"] = (same, "bit-identical" if same else "differs")

    ok = all(v[0] for v in checks.values())
    verdict("criterion 8", ok, "; ".join(f"{name} {'ok' if v[0] else 'FAIL'} ({v[1]})"
                                         for name, v in checks.items()))
    assert ok


def test_criterion_9_low_recoil_region(verdict):
    m = ModelParams(delta=0.01, eta=0.01)
    r_vals = np.linspace(-1.0, 1.0, 21)
    th_vals = np.linspace(0.5 * PI, 1.5 * PI, 21)
    along_r = r_slice(m, "r", r_vals)
    along_th = r_slice(m, "theta", th_vals)
    ok = bool(np.all(along_r > 100) and np.all(along_th > 100))

    def edge(axis, lo, hi):
        f = lambda x: r_slice(m, axis, [x])[0] - 100.0
        if f(lo) * f(hi) > 0:
            return None
        return optimize.brentq(f, lo, hi, xtol=1e-6)

    r_far = 30.0
    r_hi, r_lo = edge("r", 0.0, r_far), edge("r", -r_far, 0.0)
    th_lo, th_hi = edge("theta", 0.0, PI), edge("theta", PI, 2 * PI)
    if r_hi is None and r_lo is None:
        r_note = (f"no R=100 crossing along theta=pi for |r|<={r_far:g} "
                  f"(R -> {r_slice(m, 'r', [r_far])[0]:.1f} as |r| grows)")
    else:
        r_note = f"r boundary ({r_lo}, {r_hi})"
    verdict("criterion 9", ok,
            f"min R over |r|<=1: {along_r.min():.1f}; over |theta-pi|<=pi/2: {along_th.min():.1f}; "
            f"measured boundary: {r_note}, theta in ({th_lo / PI:.3f}pi, {th_hi / PI:.3f}pi) at r=0; "
            f"quoted range 0.018 < |A10/A20|^2 < 55 (|r| < 2.0) reported, not asserted")
    assert ok
