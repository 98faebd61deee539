"""Steady-state atom-photon amplitude B(dq, dk) and its sampled grids.

The steady amplitude factorizes as ``B = G(dq) * F(dq + dk)`` with a Gaussian
wavepacket factor ``G`` and a two-pole line shape ``F``.  ``SteadyState`` keeps
that analytic structure (used for closed-form marginals and the kernel
Schmidt backend); ``WavefunctionGrid`` holds plain samples on a tensor grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize, special

from . import _csv
from .errors import DegenerateStateError, GridError, ParameterError
from .model import (
    DerivedCoefficients,
    InitialCoherence,
    ModelParams,
    derived_coefficients,
)

MIN_AXIS_NODES = 16
MIN_K_SPAN = 20.0


def evaluate_amplitude(m: ModelParams, d: DerivedCoefficients, dq, dk):
    """Unnormalized steady amplitude at (dq, dk); broadcasts over arrays."""
    u = np.asarray(dq) + np.asarray(dk)
    bracket = d.amp1 / (1j * u + d.pole1) + d.amp2 / (1j * u + d.pole2)
    return -1j * np.exp(-((np.asarray(dq) / m.eta) ** 2)) * bracket


def evaluate_dark_approx(dq, dk, eta: float, delta: float, center: float = 0.0):
    """Single narrow-pole approximation at dark coherence (chi0 = 1).

    The line sits at u = center.  The default 0 is the textbook form; the
    exact line shape peaks at u = -delta/2, so ``center=-delta/2`` is the
    shifted variant.
    """
    if not delta > 0 or not eta > 0:
        raise ParameterError("delta" if not delta > 0 else "eta", "must be > 0")
    u = np.asarray(dq) + np.asarray(dk) - center
    return np.exp(-((np.asarray(dq) / eta) ** 2)) / (1j * u - delta**2 / 4.0)


def dark_approx_distance(state: "SteadyState", center: float = 0.0, step: float = 0.002) -> float:
    """L2 distance between the normalized exact state and the single-pole form.

    Both states share the factor G(dq), so the distance reduces to one
    integral over u.  A global phase is removed before comparing.
    """
    w = state.narrow_width
    t_hi = math.asinh(1e4 * max(1.0, state.eta) / w)
    t = np.arange(-t_hi, t_hi + step, step)
    u = state.narrow_center + w * np.sinh(t)
    wu = w * np.cosh(t) * step
    f1 = state.lineshape(u)
    f2 = evaluate_dark_approx(0.0, u, state.eta, state.params.delta, center)
    n1 = math.sqrt(np.dot(wu, np.abs(f1) ** 2))
    n2 = math.sqrt(np.dot(wu, np.abs(f2) ** 2))
    overlap = abs(np.dot(wu, np.conj(f1) * f2)) / (n1 * n2)
    return math.sqrt(max(0.0, 2.0 - 2.0 * overlap))


@dataclass(frozen=True)
class SteadyState:
    params: ModelParams
    coherence: InitialCoherence
    coeffs: DerivedCoefficients

    @classmethod
    def build(cls, params: ModelParams, coherence: InitialCoherence) -> "SteadyState":
        return cls(params, coherence, derived_coefficients(params, coherence))

    @property
    def eta(self) -> float:
        return self.params.eta

    @property
    def narrow_width(self) -> float:
        return self.coeffs.narrow_width

    @property
    def narrow_center(self) -> float:
        """Line-shape variable u at which the narrow pole peaks."""
        p = min(self.coeffs.poles, key=lambda z: abs(z.real))
        return -p.imag

    def gaussian(self, dq):
        return np.exp(-((np.asarray(dq) / self.eta) ** 2))

    def lineshape(self, u):
        d = self.coeffs
        u = np.asarray(u)
        return -1j * (d.amp1 / (1j * u + d.pole1) + d.amp2 / (1j * u + d.pole2))

    def amplitude(self, dq, dk):
        return evaluate_amplitude(self.params, self.coeffs, dq, dk)

    def autocorrelation(self, tau):
        """H(tau) = integral of F(u) conj(F(u - tau)) over the whole u axis."""
        tau = np.asarray(tau, dtype=float)
        amps, poles = self.coeffs.amps, self.coeffs.poles
        out = np.zeros(tau.shape, dtype=complex)
        for ai, pi in zip(amps, poles):
            for aj, pj in zip(amps, poles):
                out += (2.0 * math.pi * ai * np.conj(aj)) / (-pi - np.conj(pj) - 1j * tau)
        return out

    def lineshape_norm(self) -> float:
        return float(self.autocorrelation(0.0).real)

    def gaussian_norm(self) -> float:
        """Integral of G(dq)^2."""
        return self.eta * math.sqrt(math.pi / 2.0)

    def norm(self) -> float:
        """Integral of |B|^2 over the infinite (dq, dk) plane."""
        return self.gaussian_norm() * self.lineshape_norm()

    @property
    def chi0(self) -> float:
        return 1.0 / math.sqrt(self.norm())

    def tail_mass_bound(self, k_span: float) -> float:
        """Upper bound on the fraction of |B|^2 outside |u| > k_span (1/u^2 tails)."""
        a = abs(self.coeffs.amp1) + abs(self.coeffs.amp2)
        return 2.0 * a * a / (k_span * self.lineshape_norm())

    def atom_marginal(self, dq):
        g2 = self.gaussian(dq) ** 2
        return g2 / self.gaussian_norm()

    def photon_marginal(self, dk):
        """Exact normalized photon marginal, via the Faddeeva function.

        Uses 1/((iu+p_i)(-iu+conj p_j)) = (1/(iu+p_i) + 1/(-iu+conj p_j)) / (p_i + conj p_j)
        and the Gaussian-Lorentzian convolution of each simple pole.
        """
        dk = np.asarray(dk, dtype=float)
        amps, poles = self.coeffs.amps, self.coeffs.poles
        gauss_pole = [self._gauss_pole_integral(dk, p) for p in poles]
        total = np.zeros(dk.shape, dtype=complex)
        for i, (ai, pi) in enumerate(zip(amps, poles)):
            for j, (aj, pj) in enumerate(zip(amps, poles)):
                total += ai * np.conj(aj) / (pi + np.conj(pj)) * (gauss_pole[i] + np.conj(gauss_pole[j]))
        return total.real / self.norm()

    def _gauss_pole_integral(self, dk, pole: complex):
        # integral of exp(-2 q^2 / eta^2) / (i (q + dk) + pole) dq
        s = self.eta / math.sqrt(2.0)
        z = (-dk - 1j * np.conj(pole)) / s
        return -math.pi * np.conj(special.wofz(z))

    def peak_detection_point(self) -> float:
        """Photon momentum dk maximizing the photon marginal (the auto-peak dk0)."""
        centers = [-p.imag for p in self.coeffs.poles]
        feature = max(self.eta / 2.0, self.narrow_width)
        reach = 4.0 * (self.eta + 1.0)
        lo = min(centers) - reach
        hi = max(centers) + reach
        step = feature / 8.0
        n = int(min(200_000, math.ceil((hi - lo) / step))) + 1
        ks = np.union1d(np.linspace(lo, hi, n), centers)
        vals = self.photon_marginal(ks)
        i = int(np.argmax(vals))
        res = optimize.minimize_scalar(
            lambda x: -float(self.photon_marginal(x)),
            bounds=(ks[i] - step, ks[i] + step),
            method="bounded",
            options={"xatol": 1e-3 * min(self.narrow_width, step)},
        )
        if -res.fun >= vals[i]:
            return float(res.x)
        return float(ks[i])


def trapezoid_weights(nodes) -> np.ndarray:
    x = np.asarray(nodes, dtype=float)
    w = np.empty_like(x)
    w[1:-1] = 0.5 * (x[2:] - x[:-2])
    w[0] = 0.5 * (x[1] - x[0])
    w[-1] = 0.5 * (x[-1] - x[-2])
    return w


@dataclass(frozen=True, eq=False)
class MomentumGrid:
    q_nodes: np.ndarray
    q_weights: np.ndarray
    k_nodes: np.ndarray
    k_weights: np.ndarray
    dk0: Optional[float] = None

    def __post_init__(self):
        for name in ("q", "k"):
            nodes = np.asarray(getattr(self, f"{name}_nodes"), dtype=float)
            weights = np.asarray(getattr(self, f"{name}_weights"), dtype=float)
            if nodes.ndim != 1 or nodes.shape != weights.shape:
                raise GridError(f"{name}_nodes and {name}_weights must be 1-D arrays of equal length")
            if nodes.size < MIN_AXIS_NODES:
                raise GridError(f"{name} axis needs at least {MIN_AXIS_NODES} nodes, got {nodes.size}")
            if np.any(np.diff(nodes) <= 0):
                raise GridError(f"{name}_nodes must be strictly increasing")
            if np.any(weights <= 0):
                raise GridError(f"{name}_weights must be positive")
            object.__setattr__(self, f"{name}_nodes", nodes)
            object.__setattr__(self, f"{name}_weights", weights)
        if self.dk0 is not None and not self.k_nodes[0] <= self.dk0 <= self.k_nodes[-1]:
            raise GridError(f"dk0={self.dk0} lies outside the k span [{self.k_nodes[0]}, {self.k_nodes[-1]}]")

    @classmethod
    def from_nodes(cls, q_nodes, k_nodes, dk0=None) -> "MomentumGrid":
        return cls(
            np.asarray(q_nodes, float), trapezoid_weights(q_nodes),
            np.asarray(k_nodes, float), trapezoid_weights(k_nodes), dk0,
        )

    @classmethod
    def uniform(cls, q_half_span, q_points, k_half_span, k_points, k_center=0.0, dk0=None) -> "MomentumGrid":
        q = np.linspace(-q_half_span, q_half_span, q_points)
        k = np.linspace(k_center - k_half_span, k_center + k_half_span, k_points)
        return cls.from_nodes(q, k, dk0)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.q_nodes.size, self.k_nodes.size)

    def same_as(self, other: "MomentumGrid") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.q_nodes, other.q_nodes)
            and np.array_equal(self.k_nodes, other.k_nodes)
        )

    def with_dk0(self, dk0: Optional[float]) -> "MomentumGrid":
        return replace(self, dk0=dk0)


def make_grid(
    state: SteadyState,
    *,
    q_points: Optional[int] = None,
    k_points: Optional[int] = None,
    q_span_factor: float = 4.0,
    k_span: float = 40.0,
    fine_window_points: Optional[int] = None,
    resolution: float = 1.5,
    dk0: Optional[float] = None,
) -> MomentumGrid:
    """Tensor grid resolving the narrow ridge dq + dk = narrow center.

    The q axis is uniform over [-q_span_factor*eta, q_span_factor*eta].  The k
    axis is a fine uniform band covering the ridge for every q row, joined to
    coarse uniform tails reaching +-k_span.  ``resolution`` is the number of
    nodes per narrow half width used when point counts are not given.
    """
    if q_span_factor < 4.0:
        raise ParameterError("q_span_factor", "must be >= 4 (grid must cover +-4 eta)")
    if k_span < MIN_K_SPAN:
        raise ParameterError("k_span", f"must be >= {MIN_K_SPAN:g}")
    if resolution <= 0:
        raise ParameterError("resolution", "must be > 0")
    eta = state.eta
    w = state.narrow_width
    q_half = q_span_factor * eta
    h = w / resolution
    if q_points is None:
        q_points = max(MIN_AXIS_NODES, int(math.ceil(2 * q_half / h)) + 1)
    q = np.linspace(-q_half, q_half, q_points)

    center = state.narrow_center
    band_half = q_half + 20.0 * w
    band_lo = max(-k_span, center - band_half)
    band_hi = min(k_span, center + band_half)
    if fine_window_points is None:
        fine_window_points = max(64, int(math.ceil((band_hi - band_lo) / h)) + 1)
    band = np.linspace(band_lo, band_hi, fine_window_points)
    if k_points is None:
        k_points = 8 * int(math.ceil(k_span)) + 1
    coarse = np.linspace(-k_span, k_span, max(k_points, 2))
    coarse = coarse[(coarse < band_lo) | (coarse > band_hi)]
    k = np.union1d(band, coarse)
    extra = [] if dk0 is None else [float(dk0)]
    if extra:
        k = np.union1d(k, extra)
    return MomentumGrid.from_nodes(q, k, dk0)


@dataclass(frozen=True, eq=False)
class WavefunctionGrid:
    grid: MomentumGrid
    values: np.ndarray
    norm_check: float
    chi0: complex = 1.0
    state: Optional[SteadyState] = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise GridError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", values)

    def weighted_norm(self) -> float:
        g = self.grid
        return float(np.einsum("i,j,ij->", g.q_weights, g.k_weights, np.abs(self.values) ** 2))

    @property
    def q(self):
        return self.grid.q_nodes

    @property
    def k(self):
        return self.grid.k_nodes


def from_values(grid: MomentumGrid, values, state: Optional[SteadyState] = None) -> WavefunctionGrid:
    w = WavefunctionGrid(grid, values, norm_check=float("nan"), state=state)
    return replace(w, norm_check=w.weighted_norm())


def sample(state: SteadyState, grid: MomentumGrid, normalized: bool = True) -> WavefunctionGrid:
    values = state.amplitude(grid.q_nodes[:, None], grid.k_nodes[None, :])
    w = from_values(grid, values, state)
    return normalize(w) if normalized else w


def normalize(w: WavefunctionGrid) -> WavefunctionGrid:
    total = w.weighted_norm()
    if not np.all(np.isfinite(w.values)):
        raise DegenerateStateError("wavefunction contains non-finite amplitudes")
    if total <= 0.0:
        raise DegenerateStateError("wavefunction has zero norm on this grid")
    scale = 1.0 / math.sqrt(total)
    out = replace(w, values=w.values * scale, chi0=w.chi0 * scale)
    return replace(out, norm_check=out.weighted_norm())


def atom_marginal(w: WavefunctionGrid) -> np.ndarray:
    """Density over dq (the incoherent mode profile)."""
    return np.abs(w.values) ** 2 @ w.grid.k_weights


def photon_marginal(w: WavefunctionGrid) -> np.ndarray:
    return w.grid.q_weights @ (np.abs(w.values) ** 2)


def peak_detection_point(w: WavefunctionGrid) -> float:
    return float(w.grid.k_nodes[int(np.argmax(photon_marginal(w)))])


def write_csv(w: WavefunctionGrid, path):
    qq, kk = np.meshgrid(w.grid.q_nodes, w.grid.k_nodes, indexing="ij")
    v = w.values
    rows = zip(qq.ravel(), kk.ravel(), v.real.ravel(), v.imag.ravel(), (np.abs(v) ** 2).ravel())
    return _csv.write_rows(path, ["dq", "dk", "re_B", "im_B", "abs2_B"], rows)
