"""Steady-state atom-photon momentum entanglement from a three-level atom
whose two upper levels decay with spontaneously generated coherence.

All rates and momenta are dimensionless, in units of the decay rate gamma_a.
"""

from .errors import (
    BackendMismatchError,
    ConfigError,
    ConvergenceError,
    DegeneracyError,
    DegenerateStateError,
    GridError,
    ParameterError,
    SGCError,
)
from .model import (
    DerivedCoefficients,
    InitialCoherence,
    ModelParams,
    PhysicalParams,
    coherence_from_r_theta,
    derived_coefficients,
    dimensionless_from_physical,
)
from .wavefunction import MomentumGrid, SteadyState, WavefunctionGrid, make_grid, sample
from .measures import (
    EntanglementReport,
    SchmidtResult,
    entanglement_report,
    phase_entanglement,
    purity_schmidt_number,
    r_ratio,
    schmidt_decompose,
)
from .scan import Axis, ScanResult, ScanSpec, kr_relation_scan, lorentzian_fit, run_scan, schmidt_mode_report

__version__ = "0.1.0"
