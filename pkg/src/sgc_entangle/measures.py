"""Entanglement measures: variances, R ratio, Schmidt decomposition, K and PE.

Two routes are provided.  The grid route works on any sampled
``WavefunctionGrid`` (including injected test states).  The line-shape route
uses the factorized structure B = G(dq) F(dq + dk) of a ``SteadyState`` and
scales to Schmidt numbers of several hundred: conditional moments come from a
1-D sinh-mapped trapezoid rule, and the Schmidt spectrum from the atom
reduced-density kernel G(q) G(q') H(q - q') with H in closed form.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import _csv
from .errors import BackendMismatchError, GridError, ParameterError
from .model import PhysicalParams, dimensionless_from_physical
from .wavefunction import (
    MomentumGrid,
    SteadyState,
    WavefunctionGrid,
    atom_marginal,
    make_grid,
    peak_detection_point,
    sample,
)

PE_CONSTANT = 2.2
TRUNCATION_RATIO = 1e-12
BACKENDS = ("dense", "kernel", "auto")
# K-only routes accepted by entanglement_report; "auto" resolves to "purity"
REPORT_BACKENDS = BACKENDS + ("purity",)

# 0.28 * 4 = 1.12, the leading coefficient of the K_max estimate
K_MAX_SLOPE = 0.28


@dataclass(frozen=True, eq=False)
class SchmidtResult:
    eigenvalues: np.ndarray
    atom_modes: np.ndarray
    photon_modes: Optional[np.ndarray]
    schmidt_number: float
    backend: str
    retained: int
    discarded_mass: float
    q_nodes: np.ndarray = field(repr=False)
    q_weights: np.ndarray = field(repr=False)
    k_nodes: Optional[np.ndarray] = field(default=None, repr=False)
    k_weights: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class EntanglementReport:
    var_single: float
    var_cond: float
    dk0_used: float
    r_ratio: float
    schmidt_number: Optional[float]
    phase_entanglement: Optional[float]
    closed_form_r_max: Optional[float] = None
    closed_form_k_max: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "var_single": self.var_single,
            "var_cond": self.var_cond,
            "dk0_used": self.dk0_used,
            "r_ratio": self.r_ratio,
            "schmidt_number": self.schmidt_number,
            "phase_entanglement": self.phase_entanglement,
            "closed_form_r_max": self.closed_form_r_max,
            "closed_form_k_max": self.closed_form_k_max,
            "provenance": self.provenance,
        }


# -- grid route ---------------------------------------------------------------


def _variance(x, density, weights) -> float:
    mass = np.dot(weights, density)
    mean = np.dot(weights, x * density) / mass
    return float(np.dot(weights, (x - mean) ** 2 * density) / mass)


def unconditional_variance(w: WavefunctionGrid) -> float:
    return _variance(w.grid.q_nodes, atom_marginal(w), w.grid.q_weights)


def column_at(w: WavefunctionGrid, dk0: float) -> np.ndarray:
    """B(., dk0) on the q nodes.

    A wavefunction that remembers its steady state is resampled exactly, since
    the column varies on the narrow line width and linear interpolation between
    k nodes broadens it.  Bare grids fall back to linear interpolation.
    """
    k = w.grid.k_nodes
    if not k[0] <= dk0 <= k[-1]:
        raise GridError(f"dk0={dk0} outside the k span [{k[0]}, {k[-1]}]")
    j = int(np.searchsorted(k, dk0))
    if j < k.size and k[j] == dk0:
        return w.values[:, j]
    if w.state is not None:
        return w.state.amplitude(w.grid.q_nodes, dk0) * w.chi0
    t = (dk0 - k[j - 1]) / (k[j] - k[j - 1])
    return (1.0 - t) * w.values[:, j - 1] + t * w.values[:, j]


def resolve_dk0(w: WavefunctionGrid, dk0: Optional[float] = None) -> float:
    if dk0 is not None:
        return float(dk0)
    if w.grid.dk0 is not None:
        return float(w.grid.dk0)
    return peak_detection_point(w)


def conditional_variance(w: WavefunctionGrid, dk0: float) -> float:
    col = column_at(w, dk0)
    return _variance(w.grid.q_nodes, np.abs(col) ** 2, w.grid.q_weights)


def r_ratio(w: WavefunctionGrid, dk0: Optional[float] = None) -> float:
    return unconditional_variance(w) / conditional_variance(w, resolve_dk0(w, dk0))


# -- line-shape route ---------------------------------------------------------


def lineshape_unconditional_variance(state: SteadyState) -> float:
    """Exact: the atom marginal is G(dq)^2 because the integral of |F|^2 is dq-independent."""
    return state.eta**2 / 4.0


def conditional_nodes(state: SteadyState, dk0: float, step: float = 0.02, span_factor: float = 6.0):
    """Nodes/weights of a sinh-mapped trapezoid rule centred on the narrow line.

    q = q0 + w sinh(t) with uniform t keeps ~1/step nodes per half width at the
    line centre and a constant relative spacing in the Gaussian wings.
    """
    w = state.narrow_width
    q0 = state.narrow_center - dk0
    lo = min(-span_factor * state.eta, q0 - 50 * w)
    hi = max(span_factor * state.eta, q0 + 50 * w)
    t_lo = math.asinh((lo - q0) / w)
    t_hi = math.asinh((hi - q0) / w)
    n = int(math.ceil((t_hi - t_lo) / step)) + 1
    t = np.linspace(t_lo, t_hi, n)
    ht = t[1] - t[0]
    nodes = q0 + w * np.sinh(t)
    weights = w * np.cosh(t) * ht
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return nodes, weights


def lineshape_conditional_variance(state: SteadyState, dk0: float, step: float = 0.02) -> float:
    q, wq = conditional_nodes(state, dk0, step)
    density = np.abs(state.amplitude(q, dk0)) ** 2
    return _variance(q, density, wq)


# -- Schmidt decomposition ----------------------------------------------------


def _phase_fix(modes: np.ndarray) -> np.ndarray:
    """Per-row phases making each row's largest-magnitude sample real positive."""
    idx = np.argmax(np.abs(modes), axis=1)
    peak = modes[np.arange(modes.shape[0]), idx]
    return np.conj(peak) / np.abs(peak)


def _truncate(lam: np.ndarray):
    lam = np.clip(lam, 0.0, None)
    if lam.size == 0 or lam[0] <= 0:
        raise GridError("Schmidt spectrum is empty")
    keep = lam >= TRUNCATION_RATIO * lam[0]
    return int(np.count_nonzero(keep)), float(lam[~keep].sum())


def _dense_schmidt(w: WavefunctionGrid, n_modes: Optional[int]) -> SchmidtResult:
    g = w.grid
    sq = np.sqrt(g.q_weights)
    sk = np.sqrt(g.k_weights)
    m = sq[:, None] * w.values * sk[None, :]
    u, s, vh = linalg.svd(m, full_matrices=False, check_finite=False)
    lam = s**2
    retained, discarded = _truncate(lam)
    lam_kept = lam[:retained]
    n = retained if n_modes is None else min(n_modes, retained)
    psi = (u[:, :n] / sq[:, None]).T
    phi = vh[:n, :] / sk[None, :]
    rot = _phase_fix(psi)
    psi = psi * rot[:, None]
    phi = phi * np.conj(rot)[:, None]
    return SchmidtResult(
        eigenvalues=lam_kept,
        atom_modes=psi,
        photon_modes=phi,
        schmidt_number=schmidt_number_from(lam_kept),
        backend="dense-factorization",
        retained=retained,
        discarded_mass=discarded,
        q_nodes=g.q_nodes,
        q_weights=g.q_weights,
        k_nodes=g.k_nodes,
        k_weights=g.k_weights,
    )


def kernel_axis(state: SteadyState, oversample: float = 1.25, span_factor: float = 3.0,
                points: Optional[int] = None):
    """Symmetric uniform q axis for the kernel eigenproblem.

    The kernel varies on the scale 2*w in q - q' (w = narrow half width), so the
    spacing is 2*w/oversample unless ``points`` is given.
    """
    if oversample <= 0:
        raise ParameterError("oversample", "must be > 0")
    half = span_factor * state.eta
    if points is None:
        h = 2.0 * state.narrow_width / oversample
        points = int(math.ceil(2 * half / h)) + 1
    points = max(points, 16) | 1
    q = np.linspace(-half, half, points)
    wq = np.full(points, q[1] - q[0])
    wq[0] *= 0.5
    wq[-1] *= 0.5
    return q, wq


def _is_symmetric_axis(q, wq) -> bool:
    scale = max(abs(q[0]), abs(q[-1]))
    return np.allclose(q, -q[::-1], rtol=0, atol=1e-12 * scale) and np.allclose(wq, wq[::-1], rtol=1e-12, atol=0)


def kernel_matrix(state: SteadyState, q, wq, block: int = 512):
    """Weighted atom kernel sqrt(w_i) G_i H(q_i - q_j) G_j sqrt(w_j).

    For a mirror-symmetric axis the Hermitian kernel satisfies J A J = conj(A),
    so it is returned in the real symmetric form Re(A) - Im(A) J (unitarily
    equivalent, half the memory and a real eigensolver).  Returns (matrix, is_real).
    """
    a = np.sqrt(wq) * state.gaussian(q)
    n = q.size
    real = _is_symmetric_axis(q, wq)
    out = np.empty((n, n), dtype=float if real else complex)
    for i0 in range(0, n, block):
        i1 = min(n, i0 + block)
        blk = a[i0:i1, None] * state.autocorrelation(q[i0:i1, None] - q[None, :]) * a[None, :]
        out[i0:i1] = blk.real - blk.imag[:, ::-1] if real else blk
    return out, real


def kernel_eigen(state: SteadyState, q, wq, n_vectors: int = 0):
    """Eigenvalues (descending, trace-normalized) and optionally leading atom modes."""
    mat, real = kernel_matrix(state, q, wq)
    trace = float(np.trace(mat).real)
    purity_direct = float(np.sum(np.abs(mat) ** 2)) / trace**2
    n = q.size
    vecs = None
    if n_vectors > 0:
        n_vectors = min(n_vectors, n)
        lam, vecs = linalg.eigh(mat, subset_by_index=[n - n_vectors, n - 1], check_finite=False)
        vals = linalg.eigvalsh(mat, check_finite=False, overwrite_a=True)
        vecs = vecs[:, ::-1]
        if real:
            vecs = (vecs + 1j * vecs[::-1, :]) / math.sqrt(2.0)
        vecs = (vecs / np.sqrt(wq)[:, None]).T
    else:
        vals = linalg.eigvalsh(mat, check_finite=False, overwrite_a=True)
    del mat
    vals = vals[::-1] / trace
    return vals, vecs, purity_direct


def _kernel_schmidt(w: WavefunctionGrid, n_modes: Optional[int]) -> SchmidtResult:
    if w.state is None:
        raise GridError("kernel backend needs a wavefunction sampled from a SteadyState")
    g = w.grid
    n_vec = g.q_nodes.size if n_modes is None else n_modes
    lam, psi, _ = kernel_eigen(w.state, g.q_nodes, g.q_weights, n_vectors=n_vec)
    retained, discarded = _truncate(lam)
    lam_kept = lam[:retained]
    if psi is None:
        psi = np.empty((0, g.q_nodes.size), dtype=complex)
        phi = np.empty((0, g.k_nodes.size), dtype=complex)
    else:
        psi = psi[: min(retained, psi.shape[0])]
        psi = psi * _phase_fix(psi)[:, None]
        # phi_n(k) = (1/sqrt(lam_n)) * integral conj(psi_n(q)) B(q, k) dq, B normalized like the kernel
        b = w.values * (w.state.chi0 / w.chi0)
        phi = (np.conj(psi) * g.q_weights[None, :]) @ b / np.sqrt(lam_kept[: psi.shape[0]])[:, None]
    return SchmidtResult(
        eigenvalues=lam_kept,
        atom_modes=psi,
        photon_modes=phi,
        schmidt_number=schmidt_number_from(lam_kept),
        backend="kernel-eigen",
        retained=retained,
        discarded_mass=discarded,
        q_nodes=g.q_nodes,
        q_weights=g.q_weights,
        k_nodes=g.k_nodes,
        k_weights=g.k_weights,
    )


def kernel_photon_modes(state: SteadyState, psi, lam, q, wq, k_nodes, block: int = 512) -> np.ndarray:
    """phi_n(k) = (1/sqrt(lam_n)) int conj(psi_n(q)) B(q, k) dq, evaluated in k blocks.

    B carries the state's own normalization chi0, matching the trace-normalized
    eigenvalues of ``kernel_eigen``.
    """
    k_nodes = np.asarray(k_nodes, dtype=float)
    left = np.conj(psi) * np.asarray(wq)[None, :] * state.chi0
    out = np.empty((psi.shape[0], k_nodes.size), dtype=complex)
    for j0 in range(0, k_nodes.size, block):
        j1 = min(k_nodes.size, j0 + block)
        out[:, j0:j1] = left @ state.amplitude(q[:, None], k_nodes[None, j0:j1])
    return out / np.sqrt(np.asarray(lam)[: psi.shape[0]])[:, None]


def schmidt_decompose(w: WavefunctionGrid, backend: str = "dense", n_modes: Optional[int] = None) -> SchmidtResult:
    if backend == "auto":
        backend = "kernel" if w.state is not None else "dense"
    if backend == "dense":
        return _dense_schmidt(w, n_modes)
    if backend == "kernel":
        return _kernel_schmidt(w, n_modes)
    raise ParameterError("backend", f"unknown backend {backend!r}; choose from {BACKENDS}")


def cross_validate_backends(w: WavefunctionGrid, tol: float = 0.01) -> tuple[SchmidtResult, SchmidtResult]:
    dense = schmidt_decompose(w, "dense")
    kernel = schmidt_decompose(w, "kernel", n_modes=0)
    if abs(dense.schmidt_number - kernel.schmidt_number) > tol * dense.schmidt_number:
        raise BackendMismatchError(dense.schmidt_number, kernel.schmidt_number, tol)
    return dense, kernel


def purity_schmidt_number(state: SteadyState, step: float = 0.02, span_factor: float = 8.0) -> float:
    """K = 1 / Tr(rho_atom^2) without diagonalizing anything.

    Tr rho^2 = int |H(tau)|^2 (eta sqrt(pi)/2) exp(-(tau/eta)^2) dtau / N^2 with
    N = H(0) eta sqrt(pi/2), because the Gaussian overlap integrates out in
    closed form.  |H|^2 is even in tau, and its narrow peak at tau = 0 has half
    width 2w, so a sinh-mapped trapezoid on tau >= 0 resolves it.
    """
    eta = state.eta
    scale = 2.0 * state.narrow_width
    t_hi = math.asinh(span_factor * eta / scale)
    n = int(math.ceil(t_hi / step)) + 1
    t = np.linspace(0.0, t_hi, n)
    tau = scale * np.sinh(t)
    wt = scale * np.cosh(t) * (t[1] - t[0])
    wt[0] *= 0.5
    wt[-1] *= 0.5
    integrand = np.abs(state.autocorrelation(tau)) ** 2 * np.exp(-((tau / eta) ** 2))
    purity_num = 2.0 * np.dot(wt, integrand) * eta * math.sqrt(math.pi) / 2.0
    norm = state.autocorrelation(0.0).real * eta * math.sqrt(math.pi / 2.0)
    return float(norm**2 / purity_num)


def schmidt_number_from(eigenvalues) -> float:
    lam = np.asarray(eigenvalues, dtype=float)
    lam = lam / lam.sum()
    return float(1.0 / np.sum(lam**2))


def schmidt_number(s: SchmidtResult) -> float:
    return schmidt_number_from(s.eigenvalues)


def truncated_schmidt_numbers(s: SchmidtResult) -> np.ndarray:
    """K evaluated from the leading n modes, n = 1..retained."""
    lam = np.asarray(s.eigenvalues)
    return np.cumsum(lam) ** 2 / np.cumsum(lam**2)


def phase_entanglement(K: float, R: float) -> float:
    return PE_CONSTANT * K / R


def closed_form_r_max(eta: float, delta: float) -> float:
    """Small-eta estimate of R at dark coherence; valid for eta << 1, delta^2/eta << 1."""
    return math.sqrt(2.0 * math.pi) * eta / delta**2


def closed_form_k_max(eta: float, delta: float) -> float:
    return 1.0 + K_MAX_SLOPE * (4.0 * eta / delta**2 - 1.0)


def k_max_physical(p: PhysicalParams) -> float:
    """Leading term 1.12 hbar k0 dq gamma / (m omega_12^2) of the K_max estimate."""
    return 4.0 * K_MAX_SLOPE * p.hbar_k0_dq_over_m * p.gamma_a / p.omega_12**2


def closed_form_validity(eta: float, delta: float) -> dict:
    return {
        "eta_small": eta < 0.3,
        "delta2_over_eta_small": delta**2 / eta < 0.1,
        "eta_over_delta2_large": eta / delta**2 > 100.0,
    }


def incoherent_profile(s: SchmidtResult) -> np.ndarray:
    n = s.atom_modes.shape[0]
    lam = s.eigenvalues[:n]
    return (lam[:, None] * np.abs(s.atom_modes) ** 2).sum(axis=0)


def coherent_profile(s: SchmidtResult) -> np.ndarray:
    n = s.atom_modes.shape[0]
    return (np.sqrt(s.eigenvalues[:n])[:, None] * s.atom_modes).sum(axis=0)


def profile_variance(nodes, weights, density) -> float:
    return _variance(np.asarray(nodes), np.asarray(density), np.asarray(weights))


# -- reports ------------------------------------------------------------------


def is_dark_reference(state: SteadyState) -> bool:
    m = state.params
    return state.coherence.is_dark and m.gamma_ratio == 1.0 and m.epsilon == 1.0


def entanglement_report(
    state: SteadyState,
    *,
    backend: str = "auto",
    dk0: Optional[float] = None,
    with_schmidt: bool = True,
    oversample: float = 1.25,
    span_factor: float = 3.0,
    q_points: Optional[int] = None,
    grid_options: Optional[dict] = None,
    max_dense_nodes: int = 12_000_000,
    max_kernel_nodes: int = 16_000,
) -> EntanglementReport:
    """Full single-point report through the line-shape route.

    R uses the exact Gaussian atom marginal and a resolved 1-D conditional
    quadrature.  K comes from the purity integral ('purity', the default
    behind 'auto'), the kernel eigenproblem ('kernel'), or an SVD of a sampled
    tensor grid ('dense').
    """
    if backend not in REPORT_BACKENDS:
        raise ParameterError("backend", f"unknown backend {backend!r}; choose from {REPORT_BACKENDS}")
    if backend == "auto":
        backend = "purity"
    t0 = time.perf_counter()
    policy = "auto-peak" if dk0 is None else "explicit"
    dk0 = state.peak_detection_point() if dk0 is None else float(dk0)
    var_single = lineshape_unconditional_variance(state)
    var_cond = lineshape_conditional_variance(state, dk0)
    var_cond_coarse = lineshape_conditional_variance(state, dk0, step=0.04)
    R = var_single / var_cond
    m = state.params
    prov = {
        "params": {
            "delta": m.delta,
            "eta": m.eta,
            "epsilon": m.epsilon,
            "gamma_ratio": m.gamma_ratio,
            "r": state.coherence.r,
            "theta": state.coherence.theta,
        },
        "dk0_policy": policy,
        "r_refinement_delta": abs(var_cond_coarse / var_cond - 1.0),
    }
    K = None
    if with_schmidt:
        if backend == "purity":
            K = purity_schmidt_number(state)
            prov.update(
                backend="purity-integral",
                k_refinement_delta=abs(purity_schmidt_number(state, step=0.04) / K - 1.0),
            )
        elif backend == "kernel":
            q, wq = kernel_axis(state, oversample, span_factor, q_points)
            if q.size > max_kernel_nodes:
                raise ParameterError(
                    "backend", f"kernel axis of {q.size} nodes exceeds {max_kernel_nodes}; use the purity backend"
                )
            lam, _, purity_direct = kernel_eigen(state, q, wq)
            retained, discarded = _truncate(lam)
            K = schmidt_number_from(lam[:retained])
            prov.update(
                backend="kernel-eigen",
                kernel_nodes=int(q.size),
                oversample=oversample,
                span_factor=span_factor,
                k_trace_check=abs(K * purity_direct - 1.0),
                discarded_mass=discarded,
            )
        else:
            opts = dict(grid_options or {})
            grid = make_grid(state, **opts)
            if grid.shape[0] * grid.shape[1] > max_dense_nodes:
                raise ParameterError(
                    "backend", f"dense grid {grid.shape} exceeds {max_dense_nodes} nodes; use the kernel backend"
                )
            w = sample(state, grid)
            s = _dense_schmidt(w, n_modes=0)
            K = s.schmidt_number
            prov.update(
                backend="dense-factorization",
                grid_shape=list(grid.shape),
                tail_mass_bound=state.tail_mass_bound(opts.get("k_span", 40.0)),
                discarded_mass=s.discarded_mass,
            )
    pe = phase_entanglement(K, R) if K is not None else None
    r_cf = k_cf = None
    if is_dark_reference(state):
        r_cf = closed_form_r_max(m.eta, m.delta)
        k_cf = closed_form_k_max(m.eta, m.delta)
        prov["closed_form_validity"] = closed_form_validity(m.eta, m.delta)
    prov["runtime_s"] = round(time.perf_counter() - t0, 3)
    return EntanglementReport(
        var_single=var_single,
        var_cond=var_cond,
        dk0_used=dk0,
        r_ratio=R,
        schmidt_number=K,
        phase_entanglement=pe,
        closed_form_r_max=r_cf,
        closed_form_k_max=k_cf,
        provenance=prov,
    )


def grid_report(w: WavefunctionGrid, backend: str = "dense", dk0: Optional[float] = None) -> EntanglementReport:
    """Report computed entirely from a sampled grid."""
    dk0 = resolve_dk0(w, dk0)
    vs = unconditional_variance(w)
    vc = conditional_variance(w, dk0)
    s = schmidt_decompose(w, backend, n_modes=0)
    R = vs / vc
    return EntanglementReport(
        var_single=vs,
        var_cond=vc,
        dk0_used=dk0,
        r_ratio=R,
        schmidt_number=s.schmidt_number,
        phase_entanglement=phase_entanglement(s.schmidt_number, R),
        provenance={"backend": s.backend, "grid_shape": list(w.grid.shape)},
    )


def write_mode_csvs(s: SchmidtResult, atom_path, photon_path=None, n_modes: Optional[int] = None):
    n = s.atom_modes.shape[0] if n_modes is None else min(n_modes, s.atom_modes.shape[0])

    def rows(modes, nodes):
        for i in range(n):
            for x, v in zip(nodes, modes[i]):
                yield (i + 1, s.eigenvalues[i], x, v.real, v.imag)

    _csv.write_rows(atom_path, ["mode_index", "lambda", "node", "re_psi", "im_psi"], rows(s.atom_modes, s.q_nodes))
    if photon_path is not None and s.photon_modes is not None:
        _csv.write_rows(photon_path, ["mode_index", "lambda", "node", "re_phi", "im_phi"],
                        rows(s.photon_modes, s.k_nodes))


def write_spectrum_csv(s: SchmidtResult, path):
    return _csv.write_rows(path, ["mode_index", "lambda"], ((i + 1, v) for i, v in enumerate(s.eigenvalues)))
