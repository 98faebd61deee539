"""Parameter sweeps over (r, theta, eta, delta) and curve extraction.

Every scan point builds its own ``SteadyState``, so the resolution of the
conditional quadrature and of the kernel axis follows that point's narrow
line width.  Points are independent; optional process parallelism never
changes the output because results are gathered in lattice order.
"""

from __future__ import annotations

import itertools
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from . import _csv
from .errors import GridError, ParameterError, SGCError
from .measures import (
    PE_CONSTANT,
    closed_form_k_max,
    closed_form_r_max,
    entanglement_report,
    kernel_eigen,
    lineshape_conditional_variance,
    lineshape_unconditional_variance,
    profile_variance,
    _phase_fix,
    _truncate,
    schmidt_number_from,
)
from .model import InitialCoherence, ModelParams, coherence_from_r_theta
from .wavefunction import SteadyState

AXIS_NAMES = ("r", "theta", "eta", "delta")
MEASURES = ("R", "K", "PE")
WORKERS_ENV = "SGC_MAX_WORKERS"


@dataclass(frozen=True)
class Axis:
    name: str
    start: float
    stop: float
    count: int

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise ParameterError("axis", f"unknown axis {self.name!r}; choose from {AXIS_NAMES}")
        if not (math.isfinite(self.start) and math.isfinite(self.stop)):
            raise ParameterError(self.name, "axis bounds must be finite")
        single = self.count == 1 and self.start == self.stop
        if not single and self.count < 3:
            raise ParameterError(self.name, f"axis needs >= 3 points, got {self.count}")
        if not single and not self.stop > self.start:
            raise ParameterError(self.name, "axis stop must exceed start")
        if self.name in ("eta", "delta") and not self.start > 0:
            raise ParameterError(self.name, f"{self.name} axis must stay > 0")

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([float(self.start)])
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class ScanSpec:
    """Lattice of one or two swept parameters around a fixed configuration."""

    fixed: ModelParams
    axes: tuple
    measures: tuple = ("R",)
    r: float = 0.0
    theta: float = math.pi
    dk0: Optional[float] = None
    backend: str = "auto"

    def __post_init__(self):
        axes = tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "measures", tuple(self.measures))
        if not 1 <= len(axes) <= 2:
            raise ParameterError("axes", f"a scan sweeps one or two parameters, got {len(axes)}")
        names = [a.name for a in axes]
        if len(set(names)) != len(names):
            raise ParameterError("axes", f"repeated axis in {names}")
        bad = [m for m in self.measures if m not in MEASURES]
        if bad or not self.measures:
            raise ParameterError("measures", f"measures must be a non-empty subset of {MEASURES}, got {self.measures}")
        # validate the lattice corners against the model domain
        for corner in itertools.product(*[(a.start, a.stop) for a in axes]):
            self.point_params(dict(zip(names, corner)))

    @property
    def shape(self) -> tuple:
        return tuple(a.count for a in self.axes)

    @property
    def needs_schmidt(self) -> bool:
        return "K" in self.measures or "PE" in self.measures

    def point_params(self, values: dict) -> tuple[ModelParams, InitialCoherence]:
        m = replace(
            self.fixed,
            **{k: float(v) for k, v in values.items() if k in ("eta", "delta")},
        )
        c = coherence_from_r_theta(float(values.get("r", self.r)), float(values.get("theta", self.theta)))
        return m, c

    def points(self):
        names = [a.name for a in self.axes]
        for combo in itertools.product(*[a.values() for a in self.axes]):
            yield dict(zip(names, combo))


@dataclass(frozen=True, eq=False)
class ScanResult:
    spec: ScanSpec
    axis_values: tuple
    values: dict
    status: list

    @property
    def axis_names(self) -> list:
        return [a.name for a in self.spec.axes]

    def grid(self, measure: str) -> np.ndarray:
        return self.values[measure].reshape(self.spec.shape)

    @property
    def n_failed(self) -> int:
        return sum(s != "ok" for s in self.status)

    def rows(self):
        for i, point in enumerate(self.spec.points()):
            yield (
                *[point[n] for n in self.axis_names],
                *[self.values[m][i] for m in self.spec.measures],
                self.status[i],
            )

    def header(self) -> list:
        return self.axis_names + list(self.spec.measures) + ["status"]

    def write_csv(self, path):
        m = self.spec.fixed
        comments = [
            f"fixed delta={m.delta!r} eta={m.eta!r} epsilon={m.epsilon!r} gamma_ratio={m.gamma_ratio!r} "
            f"r={self.spec.r!r} theta={self.spec.theta!r}",
            f"dk0={'auto-peak' if self.spec.dk0 is None else repr(self.spec.dk0)} backend={self.spec.backend}",
        ]
        return _csv.write_rows(path, self.header(), self.rows(), comments=comments)


def evaluate_point(spec: ScanSpec, values: dict):
    """Measures at one lattice point, or NaNs with a ``failed:reason`` flag."""
    try:
        m, c = spec.point_params(values)
        state = SteadyState.build(m, c)
        rep = entanglement_report(state, backend=spec.backend, dk0=spec.dk0, with_schmidt=spec.needs_schmidt)
    except (SGCError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        reason = " ".join(str(exc).replace(",", ";").split())
        return {k: math.nan for k in spec.measures}, f"failed:{type(exc).__name__}: {reason}"
    out = {"R": rep.r_ratio, "K": rep.schmidt_number, "PE": rep.phase_entanglement}
    return {k: float(out[k]) for k in spec.measures}, "ok"


def _evaluate_packed(args):
    return evaluate_point(*args)


def max_workers() -> int:
    """Worker cap from the environment; all available cores when unset."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ParameterError(WORKERS_ENV, f"must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ParameterError(WORKERS_ENV, f"must be a positive integer, got {raw!r}")
    return n


def run_scan(spec: ScanSpec, workers: Optional[int] = None) -> ScanResult:
    points = list(spec.points())
    n_workers = max_workers() if workers is None else max(1, int(workers))
    jobs = [(spec, p) for p in points]
    if n_workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(points))) as pool:
            results = list(pool.map(_evaluate_packed, jobs, chunksize=max(1, len(points) // (4 * n_workers))))
    else:
        results = [_evaluate_packed(j) for j in jobs]
    values = {k: np.array([r[0][k] for r in results]) for k in spec.measures}
    status = [r[1] for r in results]
    return ScanResult(spec=spec, axis_values=tuple(a.values() for a in spec.axes), values=values, status=status)


def read_scan_csv(path) -> tuple[list, list]:
    """Header and rows of a scan CSV; numeric columns as float, status as str."""
    header, raw = _csv.read_rows(path)
    rows = [[float(x) for x in r[:-1]] + [r[-1]] for r in raw]
    return header, rows


# -- Lorentzian fits ----------------------------------------------------------


@dataclass(frozen=True)
class LorentzianFit:
    center: float
    fwhm: float
    peak: float
    floor: float
    residual: float

    @property
    def half_width(self) -> float:
        return 0.5 * self.fwhm


def lorentzian(x, peak, center, fwhm, floor):
    return peak / (1.0 + ((x - center) / (0.5 * fwhm)) ** 2) + floor


def lorentzian_fit(x: Sequence[float], y: Sequence[float]) -> LorentzianFit:
    """Least-squares Lorentzian-plus-floor fit of a single-peaked slice.

    ``residual`` is the RMS misfit relative to the fitted peak height.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 7 or x.size != y.size:
        raise GridError(f"Lorentzian fit needs >= 7 matching samples, got {x.size} and {y.size}")
    if not np.all(np.isfinite(y)):
        raise GridError("Lorentzian fit input contains non-finite values")
    i = int(np.argmax(y))
    lo = float(np.min(y))
    half = lo + 0.5 * (y[i] - lo)
    left = np.nonzero(y[:i] < half)[0]
    right = np.nonzero(y[i + 1:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise GridError("no half-maximum crossing on both sides of the peak; widen the slice range")
    width0 = x[i + 1 + right[0]] - x[left[-1]]
    p0 = (y[i] - lo, x[i], width0, lo)
    try:
        with warnings.catch_warnings():
            # only the optimum is used; an undetermined covariance is harmless
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(lorentzian, x, y, p0=p0, maxfev=20000)
    except RuntimeError as exc:
        raise GridError(f"Lorentzian fit did not converge: {exc}") from exc
    peak, center, fwhm, floor = popt
    resid = float(np.sqrt(np.mean((lorentzian(x, *popt) - y) ** 2)) / abs(peak))
    return LorentzianFit(center=float(center), fwhm=float(abs(fwhm)), peak=float(peak), floor=float(floor),
                         residual=resid)


def r_slice(m: ModelParams, axis: str, values, r: float = 0.0, theta: float = math.pi,
            dk0: Optional[float] = None) -> np.ndarray:
    """R along one coherence axis through (r, theta); quadrature only."""
    if axis not in ("r", "theta"):
        raise ParameterError("axis", f"slices run along r or theta, not {axis!r}")
    out = np.empty(len(values))
    for j, v in enumerate(values):
        c = coherence_from_r_theta(v, theta) if axis == "r" else coherence_from_r_theta(r, v)
        state = SteadyState.build(m, c)
        x0 = state.peak_detection_point() if dk0 is None else dk0
        out[j] = lineshape_unconditional_variance(state) / lineshape_conditional_variance(state, x0)
    return out


def slice_axis(axis: str, count: int = 401) -> np.ndarray:
    """Default slice range: the full theta circle, or r in [-3, 3]."""
    if axis == "theta":
        return np.linspace(0.0, 2.0 * math.pi, count)
    return np.linspace(-3.0, 3.0, count)


def fwhm_of_slice(m: ModelParams, axis: str, count: int = 401) -> LorentzianFit:
    """Fitted width of R(theta)|r=0 or R(r)|theta=pi on the default range."""
    x = slice_axis(axis, count)
    return lorentzian_fit(x, r_slice(m, axis, x))


# -- K versus R at dark coherence ---------------------------------------------


@dataclass(frozen=True)
class KRRow:
    eta: float
    delta: float
    K: float
    R: float
    k_closed_form: float
    r_closed_form: float
    in_regime: bool
    status: str

    @property
    def r_over_constant(self) -> float:
        return self.R / PE_CONSTANT

    @property
    def relative_gap(self) -> float:
        """|K - R/2.2| / K."""
        return abs(self.K - self.r_over_constant) / self.K

    def as_row(self):
        return (self.eta, self.delta, self.K, self.R, self.r_over_constant, self.k_closed_form,
                self.r_closed_form, self.relative_gap, int(self.in_regime), self.status)


KR_HEADER = ["eta", "delta", "K", "R", "R_over_2p2", "K_closed_form", "R_closed_form", "relative_gap",
             "in_regime", "status"]


def in_kr_regime(eta: float, delta: float) -> bool:
    return eta / delta**2 >= 100.0 and eta <= 1.0


def kr_relation_scan(eta_list, delta_list, backend: str = "auto", pairs: bool = False) -> list:
    """K and R at dark coherence for every (eta, delta) combination.

    With ``pairs`` the two lists are zipped instead of crossed.  Pairs outside
    eta/delta^2 >= 100, eta <= 1 are still computed but flagged.
    """
    combos = zip(eta_list, delta_list) if pairs else itertools.product(eta_list, delta_list)
    out = []
    dark = coherence_from_r_theta(0.0, math.pi)
    for eta, delta in combos:
        eta, delta = float(eta), float(delta)
        try:
            rep = entanglement_report(SteadyState.build(ModelParams(delta=delta, eta=eta), dark), backend=backend)
            K, R, status = rep.schmidt_number, rep.r_ratio, "ok"
        except (SGCError, ValueError) as exc:
            K = R = math.nan
            status = f"failed:{type(exc).__name__}: {' '.join(str(exc).replace(',', ';').split())}"
        out.append(KRRow(eta, delta, K, R, closed_form_k_max(eta, delta), closed_form_r_max(eta, delta),
                         in_kr_regime(eta, delta), status))
    return out


def write_kr_csv(rows, path):
    return _csv.write_rows(path, KR_HEADER, (r.as_row() for r in rows))


# -- Schmidt-mode comparison ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModeCase:
    params: ModelParams
    coherence: InitialCoherence
    eigenvalues: np.ndarray
    modes: np.ndarray
    K: float
    R: float
    mode1_variance: float
    mode1_fwhm: float


@dataclass(frozen=True, eq=False)
class ModeComparison:
    q: np.ndarray
    q_weights: np.ndarray
    case_a: ModeCase
    case_b: ModeCase
    n_modes: int

    @property
    def k_ratio(self) -> float:
        return self.case_b.K / self.case_a.K

    @property
    def r_ratio(self) -> float:
        return self.case_b.R / self.case_a.R

    @property
    def mode1_broader(self) -> bool:
        return self.case_b.mode1_variance > self.case_a.mode1_variance

    def summary(self) -> dict:
        out = {
            "K_a": self.case_a.K,
            "R_a": self.case_a.R,
            "K_b": self.case_b.K,
            "R_b": self.case_b.R,
            "K_ratio": self.k_ratio,
            "R_ratio": self.r_ratio,
            "mode1_variance_a": self.case_a.mode1_variance,
            "mode1_variance_b": self.case_b.mode1_variance,
            "mode1_fwhm_a": self.case_a.mode1_fwhm,
            "mode1_fwhm_b": self.case_b.mode1_fwhm,
            "mode1_broader": self.mode1_broader,
            "kernel_nodes": int(self.q.size),
        }
        if is_reference_mode_pair(self.case_a, self.case_b):
            out["reference_pair_claim"] = (0.9 <= self.k_ratio <= 1.1 and 0.24 <= self.r_ratio <= 0.36
                                           and self.mode1_broader)
        return out

    def write_csvs(self, path_a, path_b):
        for case, path in ((self.case_a, path_a), (self.case_b, path_b)):
            rows = (
                (i + 1, case.eigenvalues[i], x, v.real, v.imag)
                for i in range(case.modes.shape[0])
                for x, v in zip(self.q, case.modes[i])
            )
            _csv.write_rows(path, ["mode_index", "lambda", "node", "re_psi", "im_psi"], rows)


REFERENCE_PAIR = (
    (ModelParams(delta=0.1, eta=0.94), (0.0, math.pi)),
    (ModelParams(delta=0.1, eta=1.0), (-0.4, math.pi)),
)


def is_reference_mode_pair(a: ModeCase, b: ModeCase) -> bool:
    def same(case, ref):
        m, (r, th) = ref
        return case.params == m and math.isclose(case.coherence.r, r, abs_tol=1e-12) and math.isclose(
            case.coherence.theta_reduced, th, abs_tol=1e-12)

    return same(a, REFERENCE_PAIR[0]) and same(b, REFERENCE_PAIR[1])


def _full_width_half_max(x, density) -> float:
    i = int(np.argmax(density))
    half = 0.5 * density[i]
    above = np.nonzero(density >= half)[0]
    lo, hi = above[0], above[-1]

    def cross(j0, j1):
        # linear interpolation of the half-level crossing between j0 and j1
        y0, y1 = density[j0], density[j1]
        return x[j0] + (half - y0) * (x[j1] - x[j0]) / (y1 - y0)

    left = cross(lo - 1, lo) if lo > 0 else x[0]
    right = cross(hi, hi + 1) if hi + 1 < x.size else x[-1]
    return float(right - left)


def common_mode_axis(states, oversample: float = 2.5, span_factor: float = 3.0):
    half = span_factor * max(s.eta for s in states)
    h = 2.0 * min(s.narrow_width for s in states) / oversample
    n = (int(math.ceil(2 * half / h)) + 1) | 1
    q = np.linspace(-half, half, n)
    wq = np.full(n, q[1] - q[0])
    wq[0] *= 0.5
    wq[-1] *= 0.5
    return q, wq


def schmidt_mode_report(case_a: tuple, case_b: tuple, n_modes: int = 3, oversample: float = 2.5,
                        span_factor: float = 3.0) -> ModeComparison:
    """Leading atom Schmidt modes of two configurations on one shared q axis.

    Each case is a (ModelParams, InitialCoherence) pair.
    """
    if n_modes < 0:
        raise ParameterError("n_modes", "must be >= 0")
    states = [SteadyState.build(*case_a), SteadyState.build(*case_b)]
    q, wq = common_mode_axis(states, oversample, span_factor)
    cases = []
    for st in states:
        lam, vecs, _ = kernel_eigen(st, q, wq, n_vectors=max(n_modes, 1))
        retained, _ = _truncate(lam)
        lam = lam[:retained]
        vecs = vecs[: min(n_modes, retained)] if n_modes else vecs[:1]
        vecs = vecs * _phase_fix(vecs)[:, None]
        density = np.abs(vecs[0]) ** 2
        dk0 = st.peak_detection_point()
        R = lineshape_unconditional_variance(st) / lineshape_conditional_variance(st, dk0)
        cases.append(ModeCase(
            params=st.params,
            coherence=st.coherence,
            eigenvalues=lam,
            modes=vecs[:n_modes],
            K=schmidt_number_from(lam),
            R=R,
            mode1_variance=profile_variance(q, wq, density),
            mode1_fwhm=_full_width_half_max(q, density),
        ))
    return ModeComparison(q=q, q_weights=wq, case_a=cases[0], case_b=cases[1], n_modes=n_modes)
