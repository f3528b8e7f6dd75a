"""Dimensionless double-Gaussian trap model and run configuration.

Everything downstream works in harmonic-oscillator units of a single well:
hbar = m = omega = 1, lengths in x0 = sqrt(hbar / (m omega)), energies in
hbar omega.  A single Gaussian of depth ``v0`` and rms width ``sigma`` has
curvature v0 / sigma**2, so the unit convention forces sigma**2 = v0.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np


class ConfigError(ValueError):
    """Invalid model or run configuration."""


def sigma_from_depth(v0: float) -> float:
    """Well width (units of x0) implied by a depth ``v0`` (units of hbar omega)."""
    if not v0 > 0:
        raise ConfigError(f"well depth must be positive, got {v0!r}")
    return math.sqrt(v0)


@dataclass(frozen=True)
class TrapConfig:
    """Double Gaussian well in oscillator units.

    ``sigma=None`` selects the oscillator-unit width sqrt(v0).
    """

    v0: float = 10.0
    sigma: float | None = None
    g: float = 0.0
    d_max: float = 12.0

    def __post_init__(self):
        if self.sigma is None:
            object.__setattr__(self, "sigma", sigma_from_depth(self.v0))
        if not self.v0 > 0:
            raise ConfigError(f"v0 must be > 0, got {self.v0}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not self.g >= 0:
            raise ConfigError(f"g must be >= 0, got {self.g}")
        if not self.d_max > 0:
            raise ConfigError(f"d_max must be > 0, got {self.d_max}")


@dataclass(frozen=True)
class PhysicalParams:
    """Physical inputs of the quasi-1D coupling.

    ``recoil_energy`` and ``wavenumber`` are carried only to document the
    relation hbar*omega = 20 E_R / (k sigma)**2 at v0 = 10; no computation
    uses them.
    """

    a_s: float
    omega_perp: float
    omega: float
    x0: float
    recoil_energy: float | None = None
    wavenumber: float | None = None

    def __post_init__(self):
        if self.a_s < 0:
            raise ConfigError("scattering length must be >= 0")
        for name in ("omega_perp", "omega", "x0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")


def coupling_from_physical(p: PhysicalParams) -> float:
    """Dimensionless 1D contact strength g = 2 (a_s/x0) (omega_perp/omega)."""
    return 2.0 * (p.a_s / p.x0) * (p.omega_perp / p.omega)


def potential(x, d, cfg: TrapConfig):
    """Sum of two Gaussian wells centred at +-d/2."""
    x = np.asarray(x, dtype=float)
    s2 = 2.0 * cfg.sigma**2
    return -cfg.v0 * (np.exp(-((x - 0.5 * d) ** 2) / s2) + np.exp(-((x + 0.5 * d) ** 2) / s2))


def potential_d_derivative(x, d, cfg: TrapConfig):
    """Analytic dV/dd of :func:`potential` at fixed x.

    Even in x, odd in d; at the trap centre it equals
    v0 d exp(-d**2 / (8 sigma**2)) / (2 sigma**2), not zero.
    """
    x = np.asarray(x, dtype=float)
    s2 = 2.0 * cfg.sigma**2
    a = x - 0.5 * d
    b = x + 0.5 * d
    return -cfg.v0 * (np.exp(-(a**2) / s2) * a - np.exp(-(b**2) / s2) * b) / s2


DEFAULT_G_CURVES = (0.0, 0.2, 1.0, 10.0)
DEFAULT_N_LIST = (1, 5, 10, 25, 50, 100, 200, 250, 300)

DMaxSpec = Union[float, str]


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a simulation run; serialisable to and from JSON.

    Lengths in x0, energies in hbar*omega, gate times ``tau`` in 2*pi/omega.
    With ``snap_tau`` the single-point commands replace ``tau`` by the
    phase-condition gate time closest to it.  A non-empty ``gatetime_g``
    overrides the log-spaced gate-time grid.
    """

    v0: float = 10.0
    sigma: float | None = None
    g: float = 8.0
    d_max: DMaxSpec = "auto"
    splitting_threshold: float = 1e-6
    d_max_cap: float = 12.0
    n_points: int = 401
    x_margin_sigma: float = 6.0
    max_quanta: int = 2
    n_d: int = 241
    rtol: float = 1e-10
    atol: float = 1e-12
    dwell_fraction: float = 0.0
    workers: int = 1
    g_list: tuple = DEFAULT_G_CURVES
    n_list: tuple = DEFAULT_N_LIST
    g_min: float = 0.05
    g_max: float = 100.0
    n_g: int = 60
    fmap_g: tuple = (2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 16.0, 20.0)
    fmap_tau: tuple = (12.0, 18.0, 24.0, 30.0, 36.0, 42.0, 48.0, 60.0)
    tau: float = 36.0
    snap_tau: bool = True
    gatetime_g: tuple = ()
    kT_list: tuple = (0.0, 0.1, 0.15, 0.2, 0.24, 0.27, 0.3, 0.32)
    output_dir: str = "out"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_points % 2 != 1 or self.n_points < 51:
            raise ConfigError(f"n_points must be odd and >= 51, got {self.n_points}")
        if self.max_quanta < 0:
            raise ConfigError("max_quanta must be >= 0")
        if self.n_d < 5:
            raise ConfigError("n_d must be >= 5")
        if not 0 <= self.dwell_fraction < 1:
            raise ConfigError("dwell_fraction must lie in [0, 1)")
        if isinstance(self.d_max, str) and self.d_max != "auto":
            raise ConfigError(f"d_max must be a number or 'auto', got {self.d_max!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # validate trap fields eagerly
        self.trap(self.g, 1.0)

    def trap(self, g: float | None = None, d_max: float | None = None) -> TrapConfig:
        if d_max is None:
            if self.d_max == "auto":
                raise ConfigError("d_max is 'auto'; resolve it with resolve_d_max first")
            d_max = float(self.d_max)
        return TrapConfig(v0=self.v0, sigma=self.sigma, g=self.g if g is None else g, d_max=d_max)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def config_hash(config: RunConfig) -> str:
    """Short SHA-256 digest of the canonical JSON form of ``config``."""
    text = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Read a JSON config and apply ``key=value`` overrides (values parsed as JSON)."""
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data[key.strip()] = value
    return RunConfig.from_dict(data)
