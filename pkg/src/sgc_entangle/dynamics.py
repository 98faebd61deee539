"""Time-domain oracle for the steady state.

Integrates the excited-state and photon amplitude equations in units of
gamma_a with a fixed-step classical Runge-Kutta scheme and checks that the
photon amplitude converges to the analytic steady state.

The photon equation has a right-hand side independent of b, so the RK4
update of b is a fixed linear combination of stage values of (a1, a2) at the
half-step times.  Those coefficients are accumulated once along the
excited-state trajectory and then contracted against exp(i u tau) for every
distinct u = dq + dk, which is exactly the RK4 solution of the joint system.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _csv
from .errors import ConvergenceError, GridError, ParameterError
from .model import InitialCoherence, ModelParams, derived_coefficients
from .wavefunction import MomentumGrid, WavefunctionGrid


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.01
    t_final: Optional[float] = None
    method: str = "rk4"
    checkpoints: int = 20

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt", "must be > 0")
        if self.t_final is not None and not self.t_final > 0:
            raise ParameterError("t_final", "must be > 0")
        if self.method != "rk4":
            raise ParameterError("method", "only the fixed-step 'rk4' stepper is available")
        if self.checkpoints < 1:
            raise ParameterError("checkpoints", "must be >= 1")

    def validate_for(self, m: ModelParams):
        if self.dt * max(1.0, m.delta) > 0.1:
            raise ParameterError("dt", f"step {self.dt:g} too large: need dt * max(1, delta) <= 0.1")

    def resolved_t_final(self, m: ModelParams, c: InitialCoherence) -> float:
        if self.t_final is not None:
            return self.t_final
        slow = derived_coefficients(m, c).narrow_width
        return 50.0 / max(1e-6, min(1.0, slow))


@dataclass(frozen=True, eq=False)
class DynamicsState:
    tau: float
    a1: np.ndarray
    a2: np.ndarray
    b: np.ndarray
    grid: Optional[MomentumGrid] = None

    @property
    def excited_population(self) -> np.ndarray:
        return np.abs(self.a1) ** 2 + np.abs(self.a2) ** 2


@dataclass(frozen=True, eq=False)
class DynamicsRun:
    final: DynamicsState
    tau: np.ndarray
    population: np.ndarray
    checkpoints: list

    def convergence_rows(self):
        for tau, pop, dist in self.checkpoints:
            yield (tau, pop, dist)


def detunings(m: ModelParams, dq, dk):
    """Phase rates multiplying a1 and a2 in the photon equation.

    Fixed by requiring the stationary photon amplitude to reproduce the
    steady-state denominators i(dq + dk) + s/gamma_a - 1/2.
    """
    det_a = np.asarray(dq) + np.asarray(dk)
    return det_a, det_a + m.delta


def amplitude_rhs(m: ModelParams, s: DynamicsState, dq, dk):
    """Time derivatives (da1, da2, db) of the amplitude equations at s.tau."""
    tau = s.tau
    g = m.gamma_ratio
    coupling = 0.5 * m.epsilon * math.sqrt(g)
    rot = cmath.exp(1j * m.delta * tau)
    da1 = -0.5 * s.a1 - coupling * s.a2 * rot
    da2 = -0.5 * g * s.a2 - coupling * s.a1 / rot
    det_a, det_b = detunings(m, dq, dk)
    db = -1j * (np.exp(1j * det_a * tau) * s.a1 + math.sqrt(g) * np.exp(1j * det_b * tau) * s.a2)
    return da1, da2, db


def _excited_trajectory(m: ModelParams, a10: complex, a20: complex, dt: float, n_steps: int):
    """RK4 for (a1, a2); returns per-step values and the half-step b coefficients.

    ``lead[n]`` is the first-stage share of step n stored at index 2n; a
    partial sum that stops after step n must leave it out.
    """
    g = m.gamma_ratio
    root_g = math.sqrt(g)
    coupling = 0.5 * m.epsilon * root_g
    half_g = 0.5 * g
    delta = m.delta
    h = dt
    a1 = np.empty(n_steps + 1, dtype=complex)
    a2 = np.empty(n_steps + 1, dtype=complex)
    coef = np.zeros(2 * n_steps + 1, dtype=complex)
    lead = np.zeros(n_steps + 1, dtype=complex)
    rot_half = cmath.exp(0.5j * delta * h)
    x, y = complex(a10), complex(a20)
    a1[0], a2[0] = x, y
    rot = 1.0 + 0j
    w6 = h / 6.0
    for n in range(n_steps):
        rot_m = rot * rot_half
        rot_e = rot_m * rot_half
        k1x = -0.5 * x - coupling * y * rot
        k1y = -half_g * y - coupling * x / rot
        x2, y2 = x + 0.5 * h * k1x, y + 0.5 * h * k1y
        k2x = -0.5 * x2 - coupling * y2 * rot_m
        k2y = -half_g * y2 - coupling * x2 / rot_m
        x3, y3 = x + 0.5 * h * k2x, y + 0.5 * h * k2y
        k3x = -0.5 * x3 - coupling * y3 * rot_m
        k3y = -half_g * y3 - coupling * x3 / rot_m
        x4, y4 = x + h * k3x, y + h * k3y
        k4x = -0.5 * x4 - coupling * y4 * rot_e
        k4y = -half_g * y4 - coupling * x4 / rot_e
        lead[n] = w6 * (x + root_g * rot * y)
        coef[2 * n] += lead[n]
        coef[2 * n + 1] += 2.0 * w6 * ((x2 + root_g * rot_m * y2) + (x3 + root_g * rot_m * y3))
        coef[2 * n + 2] += w6 * (x4 + root_g * rot_e * y4)
        x = x + w6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        y = y + w6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        a1[n + 1], a2[n + 1] = x, y
        # re-anchor the rotating factor to avoid drift
        rot = cmath.exp(1j * delta * h * (n + 1)) if (n + 1) % 4096 == 0 else rot_e
    return a1, a2, coef, lead


def oracle_grid(m: ModelParams, q_points: int = 64, k_points: int = 256, q_span_factor: float = 4.0,
                k_stride: int = 3) -> MomentumGrid:
    """Coarse uniform grid whose k spacing is an integer multiple of the q spacing.

    Commensurate spacings make u = dq + dk take few distinct values, and the
    cost of the photon contraction scales with that count.  The k axis is
    centred on the narrow line at -delta/2.
    """
    if q_points < 16 or k_points < 16:
        raise GridError("the oracle grid needs >= 16 nodes per axis")
    if k_stride < 1:
        raise ParameterError("k_stride", "must be >= 1")
    q = np.linspace(-q_span_factor * m.eta, q_span_factor * m.eta, q_points)
    hq = q[1] - q[0]
    k = -0.5 * m.delta + k_stride * hq * (np.arange(k_points) - 0.5 * (k_points - 1))
    return MomentumGrid.from_nodes(q, k)


def _unique_u(grid: MomentumGrid, tol: float = 1e-9):
    u = grid.q_nodes[:, None] + grid.k_nodes[None, :]
    keys = np.round(u / tol).astype(np.int64)
    uniq, inverse = np.unique(keys, return_inverse=True)
    # representative value of each class
    rep = np.zeros(uniq.size)
    rep[inverse.ravel()] = u.ravel()
    return rep, inverse.reshape(u.shape)


def _contract(u, coef, half_dt, boundaries, chunk=2048):
    """Partial sums -i * sum_{j < J} coef_j exp(i u j half_dt) for each J in boundaries."""
    out = []
    acc = np.zeros(u.size, dtype=complex)
    base = np.exp(1j * np.outer(u, np.arange(chunk) * half_dt))
    start = 0
    for stop in boundaries:
        while start < stop:
            end = min(stop, start + chunk)
            m = end - start
            acc += np.exp(1j * u * start * half_dt) * (base[:, :m] @ coef[start:end])
            start = end
        out.append(-1j * acc.copy())
    return out


def integrate_to_steady(
    m: ModelParams,
    c: InitialCoherence,
    grid: MomentumGrid,
    cfg: IntegratorConfig = IntegratorConfig(),
    analytic: Optional[WavefunctionGrid] = None,
    threshold: float = 1e-4,
) -> DynamicsRun:
    """Integrate from the initial superposition to t_final.

    The per-q Gaussian exp(-(dq/eta)^2) is attached to the initial excited
    amplitudes; the internal dynamics are q-independent, so one trajectory
    serves every q row.
    """
    cfg.validate_for(m)
    t_final = cfg.resolved_t_final(m, c)
    n_steps = int(math.ceil(t_final / cfg.dt))
    dt = t_final / n_steps
    a1, a2, coef, lead = _excited_trajectory(m, c.a10, c.a20, dt, n_steps)
    pop = np.abs(a1) ** 2 + np.abs(a2) ** 2
    if np.any(np.diff(pop) > 1e-12 * pop[:-1] + 1e-300):
        raise ConvergenceError("excited population increased during integration; step size too large")

    u, inverse = _unique_u(grid)
    gauss = np.exp(-((grid.q_nodes / m.eta) ** 2))
    steps = np.linspace(0, n_steps, cfg.checkpoints + 1).round().astype(int)[1:]
    partial = _contract(u, coef, 0.5 * dt, [2 * s + 1 for s in steps])
    checkpoints = []
    b = None
    for s, bu in zip(steps, partial):
        bu = bu + 1j * lead[s] * np.exp(1j * u * s * dt)
        b = gauss[:, None] * bu[inverse]
        dist = float("nan")
        if analytic is not None:
            dist = compare_steady(DynamicsState(s * dt, a1[s] * gauss, a2[s] * gauss, b, grid), analytic)
        checkpoints.append((s * dt, float(pop[s]), dist))

    initial = max(abs(c.a10), abs(c.a20))
    final_amp = max(abs(a1[-1]), abs(a2[-1]))
    if final_amp > threshold * initial:
        slow = derived_coefficients(m, c).narrow_width
        raise ConvergenceError(
            f"excited amplitude {final_amp:.3g} of initial at t_final={t_final:g} exceeds {threshold:g}; "
            f"need t_final ~ {10.0 / slow:.4g}"
        )
    final = DynamicsState(t_final, a1[-1] * gauss, a2[-1] * gauss, b, grid)
    return DynamicsRun(final=final, tau=np.arange(n_steps + 1) * dt, population=pop, checkpoints=checkpoints)


def compare_steady(dyn: DynamicsState, analytic: WavefunctionGrid) -> float:
    """Relative weighted L2 distance after fitting one complex scale to dyn.b."""
    g = analytic.grid
    if dyn.grid is not None and not dyn.grid.same_as(g):
        raise GridError("dynamics and analytic wavefunctions live on different grids")
    if dyn.b.shape != analytic.values.shape:
        raise GridError(f"shape mismatch {dyn.b.shape} vs {analytic.values.shape}")
    wts = g.q_weights[:, None] * g.k_weights[None, :]
    x = dyn.b
    y = analytic.values
    xx = np.sum(wts * np.abs(x) ** 2)
    yy = np.sum(wts * np.abs(y) ** 2)
    if xx == 0 or yy == 0:
        return 0.0 if xx == yy else 1.0
    scale = np.sum(wts * np.conj(x) * y) / xx
    resid = np.sum(wts * np.abs(y - scale * x) ** 2)
    return float(math.sqrt(max(resid, 0.0) / yy))


def write_convergence_csv(run: DynamicsRun, path):
    return _csv.write_rows(path, ["tau", "excited_population", "l2_distance_to_analytic"], run.convergence_rows())
