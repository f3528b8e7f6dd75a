"""Linear merge/split ramps, dynamical phases, gate times and propagation.

Times passed in and out of the public functions (``tau``) are in units of
the oscillation period 2*pi/omega.  Internally the clock runs in 1/omega so
that phases are plain integrals of energies in hbar*omega.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import dvr, twobody
from .model import RunConfig, TrapConfig
from .twobody import AdiabaticCurves, Sector

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
NORM_FAIL = 1e-6


class IntegrationError(RuntimeError):
    pass


class GateTimeError(ValueError):
    pass


@dataclass(frozen=True)
class RampSchedule:
    """Triangular separation profile d_max -> 0 -> d_max at constant speed.

    An optional dwell at d = 0 occupies ``dwell_fraction`` of the gate time.
    """

    d_max: float
    tau: float
    dwell_fraction: float = 0.0

    @property
    def duration(self) -> float:
        return TWO_PI * self.tau

    @property
    def t_merge(self) -> float:
        return 0.5 * (1.0 - self.dwell_fraction) * self.duration

    @property
    def t_split(self) -> float:
        return self.t_merge + self.dwell_fraction * self.duration

    @property
    def speed(self) -> float:
        return self.d_max / self.t_merge

    def d(self, t):
        t = np.asarray(t, dtype=float)
        down = self.d_max - self.speed * t
        up = self.speed * (t - self.t_split)
        return np.where(t <= self.t_merge, down, np.where(t >= self.t_split, up, 0.0)).clip(0.0, self.d_max)

    def d_dot(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.t_merge, -self.speed, np.where(t > self.t_split, self.speed, 0.0))

    def segments(self) -> list[tuple[float, float]]:
        segs = [(0.0, self.t_merge)]
        if self.t_split > self.t_merge:
            segs.append((self.t_merge, self.t_split))
        segs.append((self.t_split, self.duration))
        return segs


def make_ramp(d_max: float, tau: float, dwell_fraction: float = 0.0) -> RampSchedule:
    if not tau > 0 or not d_max > 0:
        raise ValueError("tau and d_max must be positive")
    return RampSchedule(float(d_max), float(tau), float(dwell_fraction))


class CurveInterpolant:
    """Cubic splines of energies, couplings and their phase integrals in d."""

    def __init__(self, curves: AdiabaticCurves):
        d = curves.d_grid
        self.curves = curves
        self.d_lo, self.d_hi = float(d[0]), float(d[-1])
        # E(d) is even about d = 0, A(d) odd
        ns = curves.energies.shape[1]
        left_e = (1, np.zeros(ns)) if d[0] == 0 else "not-a-knot"
        left_a = (2, np.zeros((ns, ns))) if d[0] == 0 else "not-a-knot"
        self.energy = CubicSpline(d, curves.energies, axis=0, bc_type=(left_e, "not-a-knot"))
        self.coupling = CubicSpline(d, curves.couplings, axis=0, bc_type=(left_a, "not-a-knot"))
        self.energy_integral = self.energy.antiderivative()

    def check_range(self, d_lo: float, d_hi: float):
        tol = 1e-9 * max(1.0, self.d_hi)
        if d_lo < self.d_lo - tol or d_hi > self.d_hi + tol:
            raise ValueError(f"ramp range [{d_lo:g}, {d_hi:g}] outside curve grid [{self.d_lo:g}, {self.d_hi:g}]")

    def phases(self, ramp: RampSchedule, t):
        """phi_a(t) = int_0^t E_a(d(t')) dt' for every track; shape (..., n_s)."""
        t = np.asarray(t, dtype=float)
        F = self.energy_integral
        v = ramp.speed
        fmax, f0 = F(ramp.d_max), F(0.0)
        e0 = self.energy(0.0)
        merge = (fmax - F(ramp.d(np.minimum(t, ramp.t_merge)))) / v
        dwell = np.clip(t - ramp.t_merge, 0.0, ramp.t_split - ramp.t_merge)[..., None] * e0
        after = np.maximum(t - ramp.t_split, 0.0)
        split = (F(ramp.d(ramp.t_split + after)) - f0) / v
        split = np.where((t > ramp.t_split)[..., None], split, 0.0)
        return merge + dwell + split


def average_energy(curves: AdiabaticCurves, state: int) -> float:
    """Uniform-in-d average of one track (exact for its cubic interpolant)."""
    it = CurveInterpolant(curves)
    F = it.energy_integral
    return float((F(it.d_hi)[state] - F(it.d_lo)[state]) / (it.d_hi - it.d_lo))


def dynamical_phase(curves: AdiabaticCurves, ramp: RampSchedule, state_index: int, times=None):
    """Table (t, phi(t)) of the dynamical phase of one adiabatic track."""
    it = CurveInterpolant(curves)
    it.check_range(0.0, ramp.d_max)
    if times is None:
        times = np.linspace(0.0, ramp.duration, 201)
    times = np.asarray(times, dtype=float)
    return times, it.phases(ramp, times)[..., state_index]


def phase_gap_rate(singlet: AdiabaticCurves, triplet: AdiabaticCurves, dwell_fraction: float = 0.0) -> float:
    """(phi_+ - phi_-)/t_total for a triangular ramp, in hbar*omega."""
    avg = average_energy(singlet, 0) - average_energy(triplet, 0)
    e0 = singlet.energies[0, 0] - triplet.energies[0, 0]
    if singlet.d_grid[0] != 0:
        raise ValueError("curves must start at d = 0")
    return (1.0 - dwell_fraction) * avg + dwell_fraction * e0


def gate_time(g: float, n: int, singlet: AdiabaticCurves, triplet: AdiabaticCurves, dwell_fraction: float = 0.0) -> float:
    """Gate time (units 2*pi/omega) with |phi_+ - phi_-| = pi (1/2 + n).

    The phase difference grows linearly in tau for a linear ramp, so the
    condition fixes tau = pi (1/2 + n) / |<E_+ - E_->|.
    """
    if g <= 0:
        raise GateTimeError("g = 0: singlet and triplet logical states accumulate no relative phase")
    if n < 0:
        raise GateTimeError("n must be >= 0")
    rate = phase_gap_rate(singlet, triplet, dwell_fraction)
    if rate == 0 or not np.isfinite(rate):
        raise GateTimeError(f"vanishing mean singlet-triplet gap at g={g:g}")
    return float(np.pi * (0.5 + n) / abs(rate) / TWO_PI)


def nearest_gate_time(g: float, tau_target: float, singlet, triplet, dwell_fraction: float = 0.0) -> tuple[int, float]:
    """Integer n >= 0 whose phase-condition gate time lies closest to ``tau_target``."""
    rate = abs(phase_gap_rate(singlet, triplet, dwell_fraction))
    n_real = tau_target * TWO_PI * rate / np.pi - 0.5
    cands = {max(0, int(np.floor(n_real))), max(0, int(np.ceil(n_real)))}
    best = min(cands, key=lambda n: abs(gate_time(g, n, singlet, triplet, dwell_fraction) - tau_target))
    return best, gate_time(g, best, singlet, triplet, dwell_fraction)


@dataclass
class AmplitudeState:
    sector: Sector
    amplitudes: np.ndarray  # rotating-frame c_a
    phases: np.ndarray  # phi_a(t)
    time: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def lab_amplitudes(self) -> np.ndarray:
        return self.amplitudes * np.exp(-1j * self.phases)


@dataclass(frozen=True)
class PropagationTrace:
    times: np.ndarray
    d: np.ndarray
    populations: np.ndarray

    def to_csv(self) -> str:
        n = self.populations.shape[1]
        lines = [",".join(["t", "d"] + [f"P_{i}" for i in range(n)])]
        for k in range(self.times.size):
            lines.append(",".join(f"{v:.12g}" for v in (self.times[k], self.d[k], *self.populations[k])))
        return "\n".join(lines) + "\n"


def propagate(
    initial: AmplitudeState,
    curves: AdiabaticCurves,
    ramp: RampSchedule,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    t_span: tuple[float, float] | None = None,
    trace_points: int = 0,
    method: str = "DOP853",
):
    """Integrate dc_a/dt = -d'(t) sum_b A_ab(d) exp(-i(phi_b - phi_a)) c_b.

    Each linear piece of the ramp is integrated separately so the kink in
    d(t) is never stepped over.  Returns the final state and, if requested,
    a population trace.
    """
    it = CurveInterpolant(curves)
    it.check_range(0.0, ramp.d_max)
    t0, t1 = (0.0, ramp.duration) if t_span is None else t_span
    c = np.asarray(initial.amplitudes, dtype=complex).copy()
    n0 = float(np.sum(np.abs(c) ** 2))

    def rhs(t, y):
        d = ramp.d(t)
        v = ramp.d_dot(t)
        if v == 0.0:
            return np.zeros_like(y)
        ph = np.exp(-1j * it.phases(ramp, t))
        a = it.coupling(d)
        return -v * np.conj(ph) * (a @ (ph * y))

    trace_t, trace_y = [], []
    for a, b in ramp.segments():
        lo, hi = max(a, t0), min(b, t1)
        if hi <= lo:
            continue
        # trace samples are step endpoints, not dense-output interpolants,
        # so they carry the integrator's own norm accuracy
        knots = np.linspace(lo, hi, max(2, int(trace_points * (hi - lo) / ramp.duration))) if trace_points else [lo, hi]
        if trace_points:
            trace_t.append(np.asarray(knots))
            trace_y.append([np.abs(c) ** 2])
        for k0, k1 in zip(knots[:-1], knots[1:]):
            sol = solve_ivp(rhs, (k0, k1), c, method=method, rtol=rtol, atol=atol)
            if not sol.success:
                raise IntegrationError(sol.message)
            c = sol.y[:, -1]
            if trace_points:
                trace_y[-1].append(np.abs(c) ** 2)
    drift = abs(float(np.sum(np.abs(c) ** 2)) - n0)
    if drift > NORM_FAIL:
        raise IntegrationError(f"norm drift {drift:.2e} exceeds {NORM_FAIL:g}")
    warn = list(initial.warnings)
    if curves.crossings:
        msg = f"{curves.sector.name}: {len(curves.crossings)} unresolved near-degenerate crossings"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        warn.append(msg)
    final = AmplitudeState(initial.sector, c, it.phases(ramp, t1), t1, warn)
    if trace_points:
        tt = np.concatenate(trace_t)
        return final, PropagationTrace(tt, ramp.d(tt), np.concatenate([np.array(y) for y in trace_y]))
    return final


# ---------------------------------------------------------------------------
# model assembly


@dataclass(frozen=True)
class GateModel:
    """Everything a gate run needs at one coupling g."""

    config: RunConfig
    trap: TrapConfig
    grid: dvr.DvrGrid
    orbitals: twobody.OrbitalSweep
    curves: dict
    localized: dvr.LocalizedOrbitals

    @property
    def d_max(self) -> float:
        return self.trap.d_max

    @property
    def singlet(self) -> AdiabaticCurves:
        return self.curves[twobody.SINGLET]

    @property
    def triplet(self) -> AdiabaticCurves:
        return self.curves[twobody.TRIPLET]

    def end_orbitals(self) -> dvr.OrbitalSet:
        return self.orbitals.orbital_set(-1)


@lru_cache(maxsize=16)
def _resolve_d_max(v0, sigma, threshold, cap, n_points, margin) -> float:
    trap = TrapConfig(v0=v0, sigma=sigma, d_max=cap)
    return dvr.splitting_threshold_separation(trap, threshold, cap, n_points, margin)


def resolve_d_max(config: RunConfig) -> float:
    if config.d_max != "auto":
        return float(config.d_max)
    return _resolve_d_max(
        config.v0, config.sigma, config.splitting_threshold, config.d_max_cap,
        config.n_points, config.x_margin_sigma,
    )


@lru_cache(maxsize=8)
def _orbital_sweep(v0, sigma, d_max, n_points, margin, n_d, m):
    trap = TrapConfig(v0=v0, sigma=sigma, d_max=d_max)
    grid = dvr.default_grid(trap, n_points, margin)
    d_grid = np.linspace(0.0, d_max, n_d)
    return grid, twobody.sweep_orbitals(trap, grid, d_grid, m)


def build_model(config: RunConfig, g: float | None = None, sectors=twobody.LOGICAL_SECTORS) -> GateModel:
    g = config.g if g is None else float(g)
    d_max = resolve_d_max(config)
    trap = config.trap(g, d_max)
    m = twobody.required_orbitals(config.max_quanta)
    grid, orbs = _orbital_sweep(config.v0, trap.sigma, d_max, config.n_points, config.x_margin_sigma, config.n_d, m)
    curves = twobody.sweep_adiabatic(orbs, g, config.max_quanta, tuple(sectors))
    loc = dvr.localized_orbitals(orbs.orbital_set(-1), grid.points)
    return GateModel(config, trap, grid, orbs, curves, loc)


def pair_state(loc: dvr.LocalizedOrbitals, n_left: int, n_right: int, sign: int) -> np.ndarray:
    """Coefficient matrix of (L_nl R_nr +- R_nr L_nl)/sqrt(2) on the end orbitals."""
    lv = loc.left_coeffs[n_left]
    rv = loc.right_coeffs[n_right]
    return (np.outer(lv, rv) + sign * np.outer(rv, lv)) / np.sqrt(2.0)


def project_onto_sector(mat: np.ndarray, curves: AdiabaticCurves) -> np.ndarray:
    """Adiabatic-state amplitudes <a(d_max)|Phi> of a spatial state."""
    mats = curves.state_matrices(-1)
    return np.einsum("aij,ij->a", mats, mat)


def initial_states(model: GateModel, n_left: int = 0, n_right: int = 0, sectors=None) -> dict:
    """Sector-resolved amplitudes of f+_{L n_l} f+_{R n_r} |vac> for spin input |0,1>.

    Singlet sectors receive the spatially symmetric part, triplet sectors the
    antisymmetric one; each is normalised to its own weight (1 when the
    configuration fits in the basis).
    """
    out = {}
    for sector, curves in model.curves.items():
        if sectors is not None and sector not in sectors:
            continue
        sign = 1 if sector.spin == "singlet" else -1
        c = project_onto_sector(pair_state(model.localized, n_left, n_right, sign), curves)
        out[sector] = AmplitudeState(sector, c.astype(complex), np.zeros(c.size), 0.0)
    return out


@dataclass(frozen=True)
class GateRun:
    g: float
    tau: float
    ramp: RampSchedule
    initial: dict
    final: dict
    phi_plus: float
    phi_minus: float


def run_gate(g: float, tau: float, config: RunConfig, model: GateModel | None = None,
             n_left: int = 0, n_right: int = 0) -> GateRun:
    """Propagate the |0,1> logical input (vibrational labels n_left, n_right)."""
    if model is None:
        model = build_model(config, g, twobody.ALL_SECTORS if (n_left or n_right) else twobody.LOGICAL_SECTORS)
    ramp = make_ramp(model.d_max, tau, config.dwell_fraction)
    init = initial_states(model, n_left, n_right)
    final = {}
    for sector, state in init.items():
        if not np.any(state.amplitudes):
            final[sector] = AmplitudeState(sector, state.amplitudes, CurveInterpolant(model.curves[sector]).phases(ramp, ramp.duration), ramp.duration)
            continue
        final[sector] = propagate(state, model.curves[sector], ramp, config.rtol, config.atol)
    it_s = CurveInterpolant(model.singlet)
    it_t = CurveInterpolant(model.triplet)
    phi_p = float(it_s.phases(ramp, ramp.duration)[0])
    phi_m = float(it_t.phases(ramp, ramp.duration)[0])
    return GateRun(g, tau, ramp, init, final, phi_p, phi_m)


def gate_time_table(g_values, n_values, config: RunConfig) -> list[tuple[float, int, float]]:
    rows = []
    for g in g_values:
        if g <= 0:
            rows.extend((g, n, float("inf")) for n in n_values)
            continue
        model = build_model(config, g)
        for n in n_values:
            rows.append((g, n, gate_time(g, n, model.singlet, model.triplet, config.dwell_fraction)))
    return rows
