"""Spin reduced density matrix, gate fidelity, heating and thermal averages.

Qubits are labelled by the well, not by particle index: the logical state
|x, y> (x, y in {0 = up, 1 = down}) of vibrational mode (n, n') is
f+_{L_n, x} f+_{R_n', y} |vac>.  In first quantisation its overlap with a
state  Phi_S chi_S + Phi_T chi_T + Phi_uu |uu> + Phi_dd |dd>  reads

    <01|.> = X_T + X_S      <10|.> = X_T - X_S
    <00|.> = sqrt(2) X_uu   <11|.> = sqrt(2) X_dd

with X[n, n'] = <L_n (x) R_n'|Phi>, which for a coefficient matrix M is
(l M r^T)[n, n'].
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import dvr, twobody
from .dynamics import AmplitudeState, GateModel, GateRun, build_model, run_gate
from .model import RunConfig, config_hash

log = logging.getLogger(__name__)

BASIS_LABELS = ("00", "01", "10", "11")
HERMITIAN_TOL = 1e-10
LEAKAGE_TOL = 1e-3


class ObservableError(ValueError):
    pass


@dataclass(frozen=True)
class SpinDensityMatrix:
    matrix: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    @property
    def trace_deficit(self) -> float:
        return 1.0 - self.trace


def spatial_matrix(state: AmplitudeState, curves: twobody.AdiabaticCurves) -> np.ndarray:
    """Complex coefficient matrix of the sector wavefunction at d_max."""
    return np.einsum("a,aij->ij", state.lab_amplitudes(), curves.state_matrices(-1))


def localized_projection(mat: np.ndarray, loc: dvr.LocalizedOrbitals) -> np.ndarray:
    return loc.left_coeffs @ mat @ loc.right_coeffs.T


def spin_amplitudes(loc: dvr.LocalizedOrbitals, singlet=None, triplet=None, up_up=None, down_down=None) -> np.ndarray:
    """Amplitudes A[s, n, n'] on the logical modes; s indexes 00, 01, 10, 11.

    Each spatial argument is a coefficient matrix carrying its own weight in
    the total state (e.g. Phi_S / sqrt(2) for the |0,1> input).
    """
    nv = loc.left_coeffs.shape[0]
    zero = np.zeros((nv, nv), dtype=complex)

    def proj(m):
        return zero if m is None else localized_projection(np.asarray(m, dtype=complex), loc)

    xs, xt, xu, xd = proj(singlet), proj(triplet), proj(up_up), proj(down_down)
    r2 = np.sqrt(2.0)
    return np.stack([r2 * xu, xt + xs, xt - xs, r2 * xd])


def spin_density_matrix_from_amplitudes(amps: np.ndarray) -> SpinDensityMatrix:
    rho = np.einsum("anm,bnm->ab", amps, amps.conj())
    return SpinDensityMatrix(0.5 * (rho + rho.conj().T))


def check_localization(loc: dvr.LocalizedOrbitals, dx: float, tol: float = LEAKAGE_TOL):
    leak = dvr.half_space_leakage(loc, dx)
    if leak > tol:
        raise ObservableError(f"localized orbitals leak {leak:.2e} into the opposite well (> {tol:g})")
    overlap = float(np.abs(loc.left.T @ loc.right).max() * dx)
    if overlap > tol:
        raise ObservableError(f"left/right mode overlap {overlap:.2e} exceeds {tol:g}")
    return leak


def final_amplitudes(model: GateModel, run: GateRun) -> np.ndarray:
    """Logical-mode amplitudes of the propagated |0,1>-type input."""
    check_localization(model.localized, model.grid.spacing)
    s = np.zeros((model.localized.left_coeffs.shape[1],) * 2, dtype=complex)
    t = np.zeros_like(s)
    for sector, state in run.final.items():
        m = spatial_matrix(state, model.curves[sector]) / np.sqrt(2.0)
        if sector.spin == "singlet":
            s += m
        else:
            t += m
    return spin_amplitudes(model.localized, singlet=s, triplet=t)


def adiabatic_amplitudes(model: GateModel, run: GateRun) -> np.ndarray:
    """Amplitudes of the reference state: initial components with dynamical phases only."""
    s = np.zeros((model.localized.left_coeffs.shape[1],) * 2, dtype=complex)
    t = np.zeros_like(s)
    for sector, state in run.initial.items():
        ref = AmplitudeState(sector, state.amplitudes, run.final[sector].phases)
        m = spatial_matrix(ref, model.curves[sector]) / np.sqrt(2.0)
        if sector.spin == "singlet":
            s += m
        else:
            t += m
    return spin_amplitudes(model.localized, singlet=s, triplet=t)


def spin_density_matrix(model: GateModel, run: GateRun) -> SpinDensityMatrix:
    return spin_density_matrix_from_amplitudes(final_amplitudes(model, run))


def target_state(phi_plus: float, phi_minus: float) -> np.ndarray:
    """Adiabatic image of |0,1>: singlet part picks up phi_+, triplet part phi_-."""
    t = np.zeros(4, dtype=complex)
    a, b = np.exp(-1j * phi_minus), np.exp(-1j * phi_plus)
    t[1] = 0.5 * (a + b)
    t[2] = 0.5 * (a - b)
    return t / np.linalg.norm(t)


def fidelity(rho: SpinDensityMatrix | np.ndarray, target: np.ndarray) -> float:
    """<t|rho|t> for a normalised pure target."""
    mat = rho.matrix if isinstance(rho, SpinDensityMatrix) else np.asarray(rho)
    if np.abs(mat - mat.conj().T).max() > HERMITIAN_TOL:
        raise ObservableError("density matrix is not Hermitian")
    t = np.asarray(target, dtype=complex)
    if abs(np.vdot(t, t) - 1) > 1e-10:
        raise ObservableError("target state is not normalised")
    val = np.vdot(t, mat @ t)
    if abs(val.imag) > 1e-12:
        raise ObservableError(f"fidelity has imaginary part {val.imag:.2e}")
    return float(val.real)


def mixed_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(s) r sqrt(s)))**2; equals <t|rho|t> for sigma = |t><t|."""
    sq = linalg.sqrtm(sigma)
    inner = sq @ rho @ sq
    ev = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.conj().T)), 0.0, None)
    return float(np.sum(np.sqrt(ev)) ** 2)


def mean_vibration(amps: np.ndarray, side: str = "left") -> float:
    """Mean vibrational quanta of the atom in one well, summed over spins and the other mode."""
    w = np.sum(np.abs(amps) ** 2, axis=0)
    n = np.arange(w.shape[0])
    if side == "left":
        return float(np.sum(n * w.sum(axis=1)))
    if side == "right":
        return float(np.sum(n * w.sum(axis=0)))
    raise ValueError("side must be 'left' or 'right'")


@dataclass(frozen=True)
class GateResult:
    g: float
    tau: float
    fidelity: float
    trace_deficit: float
    mean_vibration: float
    phases: tuple
    rho: SpinDensityMatrix
    n_left: int = 0
    n_right: int = 0
    config_hash: str = ""


def evaluate(model: GateModel, run: GateRun, target_mode: str = "logical",
             n_left: int = 0, n_right: int = 0) -> GateResult:
    """Fidelity, double occupancy and heating of one propagated run.

    ``target_mode='logical'`` compares with :func:`target_state` built from the
    logical tracks' phases.  ``'adiabatic'`` compares with the spin state that
    the adiabatic reference of the same input reaches; that state is mixed for
    excited vibrational inputs, so the Uhlmann fidelity is used.  Both agree
    for the vibrational ground input.
    """
    amps = final_amplitudes(model, run)
    rho = spin_density_matrix_from_amplitudes(amps)
    if target_mode == "logical":
        f = fidelity(rho, target_state(run.phi_plus, run.phi_minus))
    elif target_mode == "adiabatic":
        ref = spin_density_matrix_from_amplitudes(adiabatic_amplitudes(model, run)).matrix
        tr = float(np.real(np.trace(ref)))
        if tr <= 0:
            raise ObservableError("adiabatic reference has no weight on the logical modes")
        f = mixed_fidelity(rho.matrix, ref / tr)
    else:
        raise ValueError(f"unknown target mode {target_mode!r}")
    return GateResult(
        run.g, run.tau, f, rho.trace_deficit, mean_vibration(amps),
        (run.phi_plus, run.phi_minus), rho, n_left, n_right, config_hash(model.config),
    )


def blockade_fidelities(model: GateModel, run: GateRun) -> tuple[float, float]:
    """Fidelities of the |0,0> and |1,1> inputs to themselves.

    Both inputs are spin-polarised triplets with the spatial part of the
    triplet component of |0,1>, so the propagated triplet of ``run``
    carries them at full weight.
    """
    check_localization(model.localized, model.grid.spacing)
    state = run.final[twobody.TRIPLET]
    m = spatial_matrix(state, model.curves[twobody.TRIPLET])
    up = spin_density_matrix_from_amplitudes(spin_amplitudes(model.localized, up_up=m))
    down = spin_density_matrix_from_amplitudes(spin_amplitudes(model.localized, down_down=m))
    return float(np.real(up.matrix[0, 0])), float(np.real(down.matrix[3, 3]))


def gate_fidelity(g: float, tau: float, config: RunConfig, model: GateModel | None = None) -> GateResult:
    """Propagate the ground |0,1> input and evaluate it against the logical target."""
    if model is None:
        model = build_model(config, g)
    run = run_gate(g, tau, config, model)
    return evaluate(model, run, target_mode="logical")


# ---------------------------------------------------------------------------
# finite temperature


def thermal_configurations(max_quanta: int) -> list[tuple[int, int]]:
    """Initial vibrational labels (n_L, n_R) with n_L + n_R <= max_quanta, ground first."""
    return [(nl, q - nl) for q in range(max_quanta + 1) for nl in range(q, -1, -1)]


def boltzmann_weights(configs, kT: float) -> np.ndarray:
    """Product Boltzmann weights exp(-(n_L + n_R)/kT) normalised over ``configs``."""
    quanta = np.array([nl + nr for nl, nr in configs], dtype=float)
    if kT < 0:
        raise ValueError("kT must be >= 0")
    if kT == 0:
        return (quanta == 0).astype(float)
    w = np.exp(-(quanta - quanta.min()) / kT)
    return w / w.sum()


def mean_initial_vibration(configs, weights) -> float:
    """<n(0)> of the left atom under the truncated distribution."""
    return float(sum(w * nl for (nl, _), w in zip(configs, weights)))


@dataclass(frozen=True)
class ThermalScan:
    kT: np.ndarray
    mean_n0: np.ndarray
    fidelities: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray
    fit_mask: np.ndarray
    configurations: tuple
    config_fidelities: np.ndarray
    weight_lost: np.ndarray
    warnings: tuple = field(default_factory=tuple)

    def to_csv(self) -> str:
        lines = ["kT,mean_n0,F,weight_lost"]
        for row in zip(self.kT, self.mean_n0, self.fidelities, self.weight_lost):
            lines.append(",".join(f"{v:.12g}" for v in row))
        return "\n".join(lines) + "\n"


def configuration_results(g: float, tau: float, config: RunConfig, model: GateModel | None = None):
    """Gate results per thermal configuration; failures are returned as exceptions.

    The ground configuration is evaluated exactly as :func:`gate_fidelity`;
    excited ones against their own adiabatic reference.  Excited inputs mix
    spatial parities, so the model carries all four spin/parity sectors.
    """
    if model is None:
        model = build_model(config, g, twobody.ALL_SECTORS)
    out = []
    for nl, nr in thermal_configurations(config.max_quanta):
        try:
            run = run_gate(g, tau, config, model, nl, nr)
            mode = "logical" if nl == nr == 0 else "adiabatic"
            out.append(evaluate(model, run, mode, nl, nr))
        except (ObservableError, RuntimeError, ValueError) as exc:
            out.append(exc)
    return out


def thermal_scan(g: float, tau: float, temperatures, config: RunConfig, model: GateModel | None = None,
                 fit_window: tuple = (0.0, 0.05), results=None) -> ThermalScan:
    """Boltzmann-averaged fidelity versus initial heating and its linear fit."""
    configs = thermal_configurations(config.max_quanta)
    if results is None:
        results = configuration_results(g, tau, config, model)
    msgs = []
    fid = np.full(len(configs), np.nan)
    for k, res in enumerate(results):
        if isinstance(res, Exception):
            msgs.append(f"configuration {configs[k]} failed: {res}")
            warnings.warn(msgs[-1], RuntimeWarning, stacklevel=2)
        else:
            fid[k] = res.fidelity
    if np.isnan(fid[0]):
        raise ObservableError("ground configuration failed; no thermal scan possible")
    kts = np.asarray(temperatures, dtype=float)
    n0 = np.empty(kts.size)
    favg = np.empty(kts.size)
    lost = np.empty(kts.size)
    ok = ~np.isnan(fid)
    for i, kT in enumerate(kts):
        w = boltzmann_weights(configs, kT)
        n0[i] = mean_initial_vibration(configs, w)
        lost[i] = float(w[~ok].sum())
        keep = ok & (w > 0)
        # renormalise over the configurations that ran
        favg[i] = float(np.sum(w[keep] * fid[keep]) / np.sum(w[keep]))
        if lost[i] > 0.01:
            msgs.append(f"kT={kT:g}: {lost[i]:.2%} of the thermal weight lost")
            warnings.warn(msgs[-1], RuntimeWarning, stacklevel=2)
    mask = (n0 >= fit_window[0]) & (n0 <= fit_window[1])
    if mask.sum() < 2:
        raise ObservableError("fewer than two temperatures inside the fit window")
    slope, intercept = np.polyfit(n0[mask], favg[mask], 1)
    resid = favg - (slope * n0 + intercept)
    return ThermalScan(kts, n0, favg, float(slope), float(intercept), resid, mask,
                       tuple(configs), fid, lost, tuple(msgs))
