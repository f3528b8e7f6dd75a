"""Sinc-DVR single-particle states of the symmetric double well.

The grid is odd and symmetric about zero, so the Hamiltonian is diagonalised
separately in the even and odd reflection blocks.  Every orbital is then a
parity eigenvector by construction, even when the gerade/ungerade splitting
at large separation is far below the eigensolver's resolution.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model import ConfigError, TrapConfig, potential

log = logging.getLogger(__name__)

EDGE_TOL = 1e-6
DEGENERATE_TOL = 1e-12


class BoundStateError(ValueError):
    """Requested more orbitals than the well binds."""


@dataclass(frozen=True)
class DvrGrid:
    x_max: float
    n_points: int
    points: np.ndarray
    spacing: float
    kinetic: np.ndarray

    @property
    def center(self) -> int:
        return self.n_points // 2


def build_grid(x_max: float, n_points: int) -> DvrGrid:
    """Uniform Colbert-Miller grid on [-x_max, x_max] (hbar = m = 1)."""
    if n_points % 2 != 1 or n_points < 51:
        raise ConfigError(f"n_points must be odd and >= 51, got {n_points}")
    if not x_max > 0:
        raise ConfigError("x_max must be positive")
    points = np.linspace(-x_max, x_max, n_points)
    dx = 2.0 * x_max / (n_points - 1)
    k = np.arange(n_points)
    diff = k[:, None] - k[None, :]
    with np.errstate(divide="ignore"):
        off = 2.0 / diff.astype(float) ** 2
    band = np.where(diff == 0, np.pi**2 / 3.0, off)
    sign = np.where(diff % 2 == 0, 1.0, -1.0)
    kinetic = sign * band / (2.0 * dx**2)
    return DvrGrid(x_max=x_max, n_points=n_points, points=points, spacing=dx, kinetic=kinetic)


def default_grid(trap: TrapConfig, n_points: int = 401, margin_sigma: float = 6.0) -> DvrGrid:
    return build_grid(0.5 * trap.d_max + margin_sigma * trap.sigma, n_points)


def parity_bases(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal columns spanning the even and odd reflection sectors."""
    c = n_points // 2
    ks = np.arange(1, c + 1)
    even = np.zeros((n_points, c + 1))
    odd = np.zeros((n_points, c))
    even[c, 0] = 1.0
    r = 1.0 / np.sqrt(2.0)
    even[c + ks, ks] = r
    even[c - ks, ks] = r
    odd[c + ks, ks - 1] = r
    odd[c - ks, ks - 1] = -r
    return even, odd


@dataclass(frozen=True)
class Spectrum:
    """Complete grid spectrum at one separation (internal building block).

    ``vectors`` columns are normalised so that sum(|psi|**2) * dx == 1.
    """

    separation: float
    energies: np.ndarray
    vectors: np.ndarray
    parity: np.ndarray


def _fix_sign(vectors: np.ndarray, c: int) -> np.ndarray:
    """Largest-magnitude amplitude on x > 0 made positive."""
    half = vectors[c + 1 :]
    idx = np.argmax(np.abs(half), axis=0)
    s = np.sign(half[idx, np.arange(vectors.shape[1])])
    s[s == 0] = 1.0
    return vectors * s


def grid_spectrum(grid: DvrGrid, d: float, trap: TrapConfig) -> Spectrum:
    """Diagonalise T + V(d) in both parity blocks and merge by energy."""
    h = grid.kinetic + np.diag(potential(grid.points, d, trap))
    even, odd = parity_bases(grid.n_points)
    ee, ve = linalg.eigh(even.T @ h @ even)
    eo, vo = linalg.eigh(odd.T @ h @ odd)
    energies = np.concatenate([ee, eo])
    vectors = np.concatenate([even @ ve, odd @ vo], axis=1)
    parity = np.concatenate([np.ones(ee.size, int), -np.ones(eo.size, int)])
    order = np.argsort(energies, kind="stable")
    # below round-off the g/u splitting carries no information: gerade first
    for k in range(order.size - 1):
        a, b = order[k], order[k + 1]
        if parity[a] < parity[b] and energies[b] - energies[a] < DEGENERATE_TOL * max(1.0, abs(energies[a])):
            order[k], order[k + 1] = b, a
    vectors = _fix_sign(vectors[:, order], grid.center) / np.sqrt(grid.spacing)
    return Spectrum(d, energies[order], vectors, parity[order])


@dataclass(frozen=True)
class OrbitalSet:
    separation: float
    energies: np.ndarray
    orbitals: np.ndarray  # (n_points, m), columns are orbitals
    parity_labels: np.ndarray
    gerade_ungerade_pairs: tuple
    spacing: float

    @property
    def size(self) -> int:
        return self.energies.size

    def vib_labels(self) -> np.ndarray:
        """Separated-well vibrational label n of each orbital (g_n, u_n -> n)."""
        return np.arange(self.size) // 2


def bound_count(spec: Spectrum) -> int:
    return int(np.count_nonzero(spec.energies < 0))


def orbitals_from_spectrum(spec: Spectrum, m_orbitals: int, spacing: float) -> OrbitalSet:
    nb = bound_count(spec)
    if m_orbitals > nb:
        raise BoundStateError(
            f"requested {m_orbitals} orbitals at d={spec.separation:g} but only {nb} are bound"
        )
    psi = spec.vectors[:, :m_orbitals]
    edge = max(np.abs(psi[0]).max(), np.abs(psi[-1]).max()) if m_orbitals else 0.0
    if edge > EDGE_TOL:
        raise ConfigError(
            f"orbital amplitude {edge:.2e} at the grid edge exceeds {EDGE_TOL:g}; enlarge x_max"
        )
    par = spec.parity[:m_orbitals]
    pairs = tuple((2 * n, 2 * n + 1) for n in range(m_orbitals // 2))
    for gi, ui in pairs:
        if par[gi] != 1 or par[ui] != -1:
            raise BoundStateError(f"orbitals {gi},{ui} are not a gerade/ungerade pair")
    return OrbitalSet(spec.separation, spec.energies[:m_orbitals].copy(), psi.copy(), par.copy(), pairs, spacing)


def single_particle_eigs(grid: DvrGrid, d: float, trap: TrapConfig, m_orbitals: int) -> OrbitalSet:
    """Lowest ``m_orbitals`` bound orbitals of the double well at separation d."""
    return orbitals_from_spectrum(grid_spectrum(grid, d, trap), m_orbitals, grid.spacing)


def align_signs(prev: np.ndarray, cur: np.ndarray, dx: float) -> np.ndarray:
    """Flip columns of ``cur`` whose overlap with the same column of ``prev`` is negative."""
    ov = np.einsum("pi,pi->i", prev, cur) * dx
    return cur * np.where(ov < 0, -1.0, 1.0)


@dataclass(frozen=True)
class LocalizedOrbitals:
    left: np.ndarray  # (n_points, n_vib)
    right: np.ndarray
    n_vib_max: int
    # coefficients of L_n / R_n on the orbitals of the parent OrbitalSet
    left_coeffs: np.ndarray  # (n_vib, m)
    right_coeffs: np.ndarray


def localized_orbitals(orbitals: OrbitalSet, points: np.ndarray | None = None) -> LocalizedOrbitals:
    """L_n, R_n = (g_n +- u_n)/sqrt(2), with the sign of u_n chosen so L_n sits at x < 0."""
    if orbitals.size % 2:
        raise BoundStateError("localized orbitals need complete gerade/ungerade pairs")
    nv = orbitals.size // 2
    dx = orbitals.spacing
    if points is None:
        n = orbitals.orbitals.shape[0]
        points = (np.arange(n) - n // 2) * dx
    lc = np.zeros((nv, orbitals.size))
    rc = np.zeros((nv, orbitals.size))
    r = 1.0 / np.sqrt(2.0)
    for n, (gi, ui) in enumerate(orbitals.gerade_ungerade_pairs):
        g, u = orbitals.orbitals[:, gi], orbitals.orbitals[:, ui]
        # <(g+u)/sqrt2|x|(g+u)/sqrt2> = <g|x|u>
        s = -1.0 if np.sum(g * points * u) * dx > 0 else 1.0
        lc[n, gi], lc[n, ui] = r, s * r
        rc[n, gi], rc[n, ui] = r, -s * r
    left = orbitals.orbitals @ lc.T
    right = orbitals.orbitals @ rc.T
    return LocalizedOrbitals(left, right, nv - 1, lc, rc)


def half_space_leakage(loc: LocalizedOrbitals, dx: float) -> float:
    """Largest weight of any L_n on x > 0 (equivalently of R_n on x < 0)."""
    n = loc.left.shape[0]
    c = n // 2
    w = np.sum(loc.left[c + 1 :] ** 2, axis=0) * dx + 0.5 * loc.left[c] ** 2 * dx
    return float(w.max())


def splitting(grid: DvrGrid, d: float, trap: TrapConfig) -> float:
    """Lowest gerade/ungerade gap E(u_0) - E(g_0)."""
    spec = grid_spectrum(grid, d, trap)
    e = spec.energies
    return float(e[1] - e[0])


def splitting_threshold_separation(
    trap: TrapConfig,
    threshold: float = 1e-6,
    cap: float = 12.0,
    n_points: int = 401,
    margin_sigma: float = 6.0,
    coarse_step: float = 0.5,
    xtol: float = 1e-4,
) -> float:
    """Smallest separation with E(u_0) - E(g_0) < threshold, capped at ``cap``.

    A coarse scan brackets the crossing, bisection refines it.  The grid is
    fixed at the cap extent so the answer does not depend on the bracket.
    """
    if not threshold > 0:
        raise ConfigError("threshold must be positive")
    grid = build_grid(0.5 * cap + margin_sigma * trap.sigma, n_points)
    if splitting(grid, cap, trap) >= threshold:
        warnings.warn(
            f"gerade/ungerade splitting still >= {threshold:g} at the cap d={cap:g}; using the cap",
            RuntimeWarning,
            stacklevel=2,
        )
        return float(cap)
    lo, hi = 0.0, None
    d = 0.0
    while d < cap:
        if splitting(grid, d, trap) < threshold:
            hi = d
            break
        lo = d
        d = min(d + coarse_step, cap)
    if hi is None:
        hi = cap
    if hi == 0.0:
        return 0.0
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if splitting(grid, mid, trap) < threshold:
            hi = mid
        else:
            lo = mid
    return float(hi)


def orbitals_csv(orbitals: OrbitalSet, points: np.ndarray) -> str:
    """CSV text with columns x, psi_0, psi_1, ..."""
    head = ",".join(["x"] + [f"psi_{i}" for i in range(orbitals.size)])
    rows = [head]
    for p, x in enumerate(points):
        rows.append(",".join(f"{v:.12g}" for v in (x, *orbitals.orbitals[p])))
    return "\n".join(rows) + "\n"
