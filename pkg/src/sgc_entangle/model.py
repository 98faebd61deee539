"""Atomic parameters and the analytic coefficients of the steady state.

Everything is expressed in units of the path-a decay rate ``gamma_a``.
The coupling constants enter only through their ratio
``g_b / g_a = sqrt(gamma_ratio)``; the common scale is absorbed by the
normalization of the wavefunction.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ParameterError


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ParameterError(name, f"must be finite, got {value!r}")
    return value


def _require_positive(name: str, value: float) -> float:
    value = _require_finite(name, value)
    if value <= 0.0:
        raise ParameterError(name, f"must be > 0, got {value!r}")
    return value


def _require_epsilon(value: float) -> float:
    value = _require_finite("epsilon", value)
    if not 0.0 < value <= 1.0:
        raise ParameterError("epsilon", f"must lie in (0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class PhysicalParams:
    """Rates in rad/s.

    ``hbar_k0_dq_over_m`` is the recoil spread hbar*k0*dq/m, where dq is the
    momentum width of the initial atomic wavepacket and k0 = omega_a / c.
    """

    gamma_a: float
    gamma_b: float
    omega_12: float
    hbar_k0_dq_over_m: float
    epsilon: float = 1.0

    def __post_init__(self):
        _require_positive("gamma_a", self.gamma_a)
        _require_positive("gamma_b", self.gamma_b)
        if _require_finite("omega_12", self.omega_12) <= 0.0:
            raise ParameterError("delta", "must be > 0 (omega_12 = 0 traps population in the dark state)")
        _require_positive("hbar_k0_dq_over_m", self.hbar_k0_dq_over_m)
        _require_epsilon(self.epsilon)


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless configuration.

    delta is the level splitting over gamma_a, eta the recoil spread over
    gamma_a, gamma_ratio = gamma_b / gamma_a.
    """

    delta: float
    eta: float
    epsilon: float = 1.0
    gamma_ratio: float = 1.0

    def __post_init__(self):
        if _require_finite("delta", self.delta) <= 0.0:
            raise ParameterError(
                "delta", f"must be > 0, got {self.delta!r} (delta = 0 traps population in the dark state)"
            )
        _require_positive("eta", self.eta)
        _require_epsilon(self.epsilon)
        _require_positive("gamma_ratio", self.gamma_ratio)


@dataclass(frozen=True)
class InitialCoherence:
    """Upper-level superposition a10|1> + a20|2> with a10/a20 = exp(r + i theta)."""

    r: float
    theta: float
    a10: complex
    a20: complex

    @property
    def theta_reduced(self) -> float:
        return self.theta % (2.0 * math.pi)

    @property
    def is_dark(self) -> bool:
        return abs(self.r) < 1e-12 and abs(self.theta_reduced - math.pi) < 1e-12


@dataclass(frozen=True)
class DerivedCoefficients:
    lambda_c: complex
    s1: complex
    s2: complex
    c1: complex
    c2: complex
    pole1: complex
    pole2: complex
    amp1: complex
    amp2: complex

    @property
    def poles(self) -> tuple[complex, complex]:
        return (self.pole1, self.pole2)

    @property
    def amps(self) -> tuple[complex, complex]:
        return (self.amp1, self.amp2)

    @property
    def narrow_width(self) -> float:
        """Smallest decay rate |Re pole|, i.e. the half width of the narrow line."""
        return min(abs(self.pole1.real), abs(self.pole2.real))


def dimensionless_from_physical(p: PhysicalParams) -> ModelParams:
    return ModelParams(
        delta=p.omega_12 / p.gamma_a,
        eta=p.hbar_k0_dq_over_m / p.gamma_a,
        epsilon=p.epsilon,
        gamma_ratio=p.gamma_b / p.gamma_a,
    )


def coherence_from_r_theta(r: float, theta: float) -> InitialCoherence:
    r = _require_finite("r", r)
    theta = _require_finite("theta", theta)
    # 1/sqrt(1 + e^{2r}) evaluated without overflow for large |r|
    half_log_norm = 0.5 * float(np.logaddexp(0.0, 2.0 * r))
    a20 = math.exp(-half_log_norm)
    a10_mag = math.exp(r - half_log_norm)
    a10 = a10_mag * cmath.exp(1j * theta)
    return InitialCoherence(r=r, theta=theta, a10=a10, a20=complex(a20))


def derived_coefficients(m: ModelParams, c: InitialCoherence) -> DerivedCoefficients:
    """Eigen-rates, superposition weights and line-shape coefficients.

    ``s1`` takes the + branch of the square root.  The line-shape numerators
    are ``C_i (2 g_b s_i / (eps sqrt(gamma_ratio)) - g_a)`` with g_a = 1.
    """
    g = m.gamma_ratio
    eps = m.epsilon
    root_g = math.sqrt(g)
    lam = 0.5 * (1.0 - g) + 1j * m.delta
    disc = cmath.sqrt(lam * lam + eps * eps * g)
    s1 = 0.5 * (lam + disc)
    s2 = 0.5 * (lam - disc)
    if abs(s2 - s1) < 1e-14 * max(1.0, abs(lam)):
        raise DegeneracyError(f"s1 == s2 == {s1!r}; the two decay channels are degenerate")
    cross = 0.5 * eps * root_g * c.a20
    c1 = (s2 * c.a10 + cross) / (s2 - s1)
    c2 = -(s1 * c.a10 + cross) / (s2 - s1)
    g_b = root_g
    amp1 = c1 * (2.0 * g_b * s1 / (eps * root_g) - 1.0)
    amp2 = c2 * (2.0 * g_b * s2 / (eps * root_g) - 1.0)
    return DerivedCoefficients(
        lambda_c=lam,
        s1=s1,
        s2=s2,
        c1=c1,
        c2=c2,
        pole1=s1 - 0.5,
        pole2=s2 - 0.5,
        amp1=amp1,
        amp2=amp2,
    )
