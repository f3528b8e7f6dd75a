"""Symmetrised two-atom bases, contact interaction and adiabatic sweeps.

A two-atom spatial state is stored as an orbital coefficient matrix ``M``
with Phi(x1, x2) = sum_ij M_ij psi_i(x1) psi_j(x2); M is symmetric for
spin singlets, antisymmetric for triplets, and ||M||_F = 1 for a normalised
state.  Basis pair (i, j) of a sector has

    singlet, i == j : M_ii = 1
    singlet, i <  j : M_ij = M_ji = 1/sqrt(2)
    triplet, i <  j : M_ij = -M_ji = 1/sqrt(2)

Contact matrix elements follow from Phi(x, x) = sum_ij M_ij psi_i psi_j:
<p|delta(x1 - x2)|q> = int Phi_p(x, x) Phi_q(x, x) dx, i.e.
f_ij f_kl int psi_i psi_j psi_k psi_l with f = sqrt(2) off the diagonal
and 1 on it.  Triplet states vanish at x1 = x2, so their block is zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from . import dvr
from .model import TrapConfig, potential_d_derivative

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-10
NUMERATOR_TOL = 1e-12


class SectorError(ValueError):
    pass


@dataclass(frozen=True)
class Sector:
    spin: str  # "singlet" | "triplet"
    parity: int  # total spatial parity, +1 or -1

    def __post_init__(self):
        if self.spin not in ("singlet", "triplet"):
            raise SectorError(f"unknown spin sector {self.spin!r}")
        if self.parity not in (1, -1):
            raise SectorError("parity must be +1 or -1")

    @property
    def name(self) -> str:
        return f"{self.spin}{'+' if self.parity > 0 else '-'}"


SINGLET = Sector("singlet", 1)
TRIPLET = Sector("triplet", -1)
SINGLET_ODD = Sector("singlet", -1)
TRIPLET_EVEN = Sector("triplet", 1)
LOGICAL_SECTORS = (SINGLET, TRIPLET)
ALL_SECTORS = (SINGLET, TRIPLET, SINGLET_ODD, TRIPLET_EVEN)


@dataclass(frozen=True)
class SectorBasis:
    sector: Sector
    pairs: tuple
    parity: tuple
    max_quanta: int
    n_orbitals: int

    @property
    def size(self) -> int:
        return len(self.pairs)

    def matrices(self) -> np.ndarray:
        """Coefficient matrices of the basis states, shape (size, m, m)."""
        return _pair_matrices(self.sector.spin, self.pairs, self.n_orbitals)


@lru_cache(maxsize=64)
def _pair_matrices(spin: str, pairs: tuple, m: int) -> np.ndarray:
    out = np.zeros((len(pairs), m, m))
    r = 1.0 / np.sqrt(2.0)
    for p, (i, j) in enumerate(pairs):
        if i == j:
            out[p, i, i] = 1.0
        else:
            out[p, i, j] = r
            out[p, j, i] = r if spin == "singlet" else -r
    out.setflags(write=False)
    return out


def required_orbitals(max_quanta: int) -> int:
    return 2 * (max_quanta + 1)


def build_sector_basis(orbitals, sector: Sector | str, max_quanta: int) -> SectorBasis:
    """Pairs (i, j) with n_i + n_j <= max_quanta and the sector's symmetry.

    ``orbitals`` is an :class:`~exchange_blockade.dvr.OrbitalSet` or just the
    per-orbital parity labels (g_n at index 2n, u_n at 2n+1).
    """
    if isinstance(sector, str):
        sector = {"singlet": SINGLET, "triplet": TRIPLET}[sector]
    parity = np.asarray(getattr(orbitals, "parity_labels", orbitals))
    need = required_orbitals(max_quanta)
    if parity.size < need:
        raise SectorError(f"max_quanta={max_quanta} needs {need} paired orbitals, got {parity.size}")
    m = need
    labels = np.arange(m) // 2
    pairs, pars = [], []
    for i in range(m):
        for j in range(i, m):
            if i == j and sector.spin == "triplet":
                continue
            if labels[i] + labels[j] > max_quanta:
                continue
            p = int(parity[i] * parity[j])
            if p != sector.parity:
                continue
            pairs.append((i, j))
            pars.append(p)
    return SectorBasis(sector, tuple(pairs), tuple(pars), max_quanta, m)


def pair_diagonal(mats: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Phi(x, x) on the grid for each coefficient matrix; returns (..., n_points)."""
    return np.einsum("...ij,pi,pj->...p", mats, psi, psi)


def interaction_matrix(basis: SectorBasis, orbitals, grid=None) -> np.ndarray:
    """Contact-interaction matrix at g = 1 in the sector basis."""
    if basis.sector.spin == "triplet":
        return np.zeros((basis.size, basis.size))
    psi = orbitals.orbitals[:, : basis.n_orbitals]
    dx = orbitals.spacing if grid is None else grid.spacing
    diag = pair_diagonal(basis.matrices(), psi)
    w = diag @ diag.T * dx
    return 0.5 * (w + w.T)


@dataclass(frozen=True)
class SectorHamiltonian:
    separation: float
    h0: np.ndarray
    w: np.ndarray
    g: float

    @property
    def total(self) -> np.ndarray:
        return np.diag(self.h0) + self.g * self.w


def sector_hamiltonian(basis: SectorBasis, orbitals, g: float) -> SectorHamiltonian:
    e = orbitals.energies
    h0 = np.array([e[i] + e[j] for i, j in basis.pairs])
    return SectorHamiltonian(orbitals.separation, h0, interaction_matrix(basis, orbitals), g)


def sector_spectrum(ham: SectorHamiltonian) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenpairs of h0 + g W; eigenvectors are columns."""
    return linalg.eigh(ham.total)


# ---------------------------------------------------------------------------
# separation sweeps


@dataclass(frozen=True)
class OrbitalSweep:
    """Single-particle data along a separation grid, signs kept continuous.

    ``dpsi`` holds d(psi_i)/dd as grid vectors (exact on the grid, from the
    full spectral sum) and ``dv`` the matrix <psi_i| dV/dd |psi_j>.
    """

    d_grid: np.ndarray
    energies: np.ndarray  # (n_d, m)
    psi: np.ndarray  # (n_d, n_points, m)
    dpsi: np.ndarray  # (n_d, n_points, m)
    dv: np.ndarray  # (n_d, m, m)
    parity: np.ndarray
    spacing: float
    points: np.ndarray

    def orbital_set(self, k: int) -> dvr.OrbitalSet:
        m = self.parity.size
        pairs = tuple((2 * n, 2 * n + 1) for n in range(m // 2))
        return dvr.OrbitalSet(
            float(self.d_grid[k]), self.energies[k], self.psi[k], self.parity, pairs, self.spacing
        )


def orbital_derivatives(spec: dvr.Spectrum, m: int, dvx: np.ndarray, dx: float):
    """<psi_i|dV/dd|psi_j> (m x m) and d(psi_i)/dd grid vectors (n_points x m)."""
    vec = spec.vectors
    proj = vec.T @ (dvx[:, None] * vec[:, :m]) * dx  # (N, m): <psi_k|dV|psi_i>
    same = spec.parity[:, None] == spec.parity[None, :m]
    proj = np.where(same, proj, 0.0)
    gap = spec.energies[None, :m] - spec.energies[:, None]
    idx = np.arange(m)
    gap[idx, idx] = 1.0
    a = np.where(same, proj / np.where(same, gap, 1.0), 0.0)
    a[idx, idx] = 0.0
    dpsi = vec @ a
    dv = proj[:m]
    return 0.5 * (dv + dv.T), dpsi


def sweep_orbitals(trap: TrapConfig, grid: dvr.DvrGrid, d_grid, m: int) -> OrbitalSweep:
    d_grid = np.asarray(d_grid, dtype=float)
    if np.any(np.diff(d_grid) == 0) or not (np.all(np.diff(d_grid) > 0) or np.all(np.diff(d_grid) < 0)):
        raise ValueError("d_grid must be strictly monotonic")
    nd, npts = d_grid.size, grid.n_points
    energies = np.empty((nd, m))
    psi = np.empty((nd, npts, m))
    dpsi = np.empty((nd, npts, m))
    dv = np.empty((nd, m, m))
    parity = None
    for k, d in enumerate(d_grid):
        spec = dvr.grid_spectrum(grid, d, trap)
        orb = dvr.orbitals_from_spectrum(spec, m, grid.spacing)
        dvk, dpk = orbital_derivatives(spec, m, potential_d_derivative(grid.points, d, trap), grid.spacing)
        p = orb.orbitals
        if k:
            ov = np.einsum("pi,pi->i", psi[k - 1], p) * grid.spacing
            s = np.where(ov < 0, -1.0, 1.0)
            p, dpk = p * s, dpk * s
            dvk = dvk * s[:, None] * s[None, :]
        if parity is None:
            parity = orb.parity_labels
        elif np.any(parity != orb.parity_labels):
            raise dvr.BoundStateError(f"orbital parity ordering changed at d={d:g}")
        energies[k], psi[k], dpsi[k], dv[k] = orb.energies, p, dpk, dvk
    return OrbitalSweep(d_grid, energies, psi, dpsi, dv, parity, grid.spacing, grid.points)


@dataclass(frozen=True)
class CrossingFlag:
    d: float
    alpha: int
    beta: int
    gap: float


@dataclass(frozen=True)
class AdiabaticCurves:
    """Adiabatic tracks of one sector along ``d_grid`` (ascending).

    ``vectors[k, :, a]`` are basis coefficients of state a at d_grid[k];
    ``couplings[k, a, b]`` = <a| d/dd |b>.
    """

    sector: Sector
    g: float
    d_grid: np.ndarray
    energies: np.ndarray  # (n_d, n_s)
    vectors: np.ndarray  # (n_d, n_b, n_s)
    couplings: np.ndarray  # (n_d, n_s, n_s)
    basis: SectorBasis
    crossings: tuple = field(default_factory=tuple)

    @property
    def n_states(self) -> int:
        return self.energies.shape[1]

    def state_matrices(self, k: int) -> np.ndarray:
        """Coefficient matrices of every adiabatic state at grid index k, (n_s, m, m)."""
        return np.einsum("ps,pij->sij", self.vectors[k], self.basis.matrices())


def pair_overlap(mats_a: np.ndarray, mats_b: np.ndarray, s: np.ndarray) -> np.ndarray:
    """<a|b> for coefficient matrices when <psi_i(a)|psi_k(b)> = s_ik."""
    return np.einsum("aij,ik,jl,bkl->ab", mats_a, s, s, mats_b)


def model_couplings(
    mats: np.ndarray,
    energies: np.ndarray,
    g: float,
    basis_mats: np.ndarray,
    w_model: np.ndarray,
    psi: np.ndarray,
    dpsi: np.ndarray,
    dv: np.ndarray,
    dx: float,
    spin: str,
):
    """Derivative couplings <a|d/dd|b> of eigenstates of the truncated model.

    Hellmann-Feynman numerator <a|dV1 + dV2|b> plus, for g > 0, the term
    from the moving truncated space: g(<da|Q W|b> + <a|W Q|db>), with da
    the derivative of state a taken at frozen coefficients and Q the
    projector off the model space.  At g = 0 the model space is invariant
    under H and the correction vanishes.

    Returns (couplings, list of near-degenerate (a, b, gap) with nonzero numerator).
    """
    # one-body part: <a|dV1 + dV2|b> = <M_a, D M_b + M_b D>_F
    num = np.einsum("aij,ik,bkj->ab", mats, dv, mats) + np.einsum("aij,bik,jk->ab", mats, mats, dv)
    if g and spin == "singlet":
        m = psi.shape[1]
        diag = pair_diagonal(mats, psi)  # (n_s, P)
        # d(alpha)(x, x) at frozen coefficients = 2 sum_ij M_ij dpsi_i psi_j
        ddiag = 2.0 * np.einsum("aij,pi,pj->ap", mats, dpsi, psi)
        full = ddiag @ diag.T * dx  # <da|W|b>
        amm = psi.T @ dpsi * dx  # <psi_i|dpsi_k>
        din = np.einsum("ki,aij->akj", amm, mats) + np.einsum("aij,kj->aik", mats, amm)
        pin = np.einsum("pij,aij->ap", basis_mats, din)  # <Phi_p|da>
        wb = np.einsum("pij,bij->pb", basis_mats, mats)  # coefficients of b
        inspace = pin @ (w_model @ wb)
        c = full - inspace
        num = num + g * (c + c.T)
    gap = energies[None, :] - energies[:, None]
    n = energies.size
    flags = []
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            if abs(gap[a, b]) < DEGENERACY_TOL:
                if abs(num[a, b]) > NUMERATOR_TOL:
                    flags.append((a, b, float(gap[a, b])))
                continue
            v = 0.5 * (num[a, b] + num[b, a]) / gap[a, b]
            out[a, b], out[b, a] = v, -v
    return out, flags


def _track(prev_vecs, vecs, energies, ov):
    """Reorder and sign-fix eigenvectors to follow the previous step."""
    cost = -np.abs(ov)
    rows, cols = linear_sum_assignment(cost)
    order = cols[np.argsort(rows)]
    vecs = vecs[:, order]
    energies = energies[order]
    signs = np.sign(ov[np.arange(ov.shape[0]), order])
    signs[signs == 0] = 1.0
    return vecs * signs, energies


def sweep_adiabatic(
    orbs: OrbitalSweep,
    g: float,
    max_quanta: int,
    sectors=LOGICAL_SECTORS,
) -> dict:
    """Adiabatic curves with continuity fixing for each requested sector.

    Returns ``{sector: AdiabaticCurves}`` on the ascending grid of ``orbs``.
    """
    d_grid = orbs.d_grid
    if d_grid[-1] < d_grid[0]:
        raise ValueError("sweep_adiabatic expects an ascending d grid")
    m = required_orbitals(max_quanta)
    if orbs.parity.size < m:
        raise SectorError(f"orbital sweep holds {orbs.parity.size} orbitals, need {m}")
    nd = d_grid.size
    results = {}
    for sector in sectors:
        basis = build_sector_basis(orbs.parity[:m], sector, max_quanta)
        bm = basis.matrices()
        nb = basis.size
        energies = np.empty((nd, nb))
        vectors = np.empty((nd, nb, nb))
        couplings = np.zeros((nd, nb, nb))
        flags = []
        prev = None
        for k in range(nd):
            psi = orbs.psi[k][:, :m]
            orb = orbs.orbital_set(k)
            ham = sector_hamiltonian(basis, orb, g)
            e, v = sector_spectrum(ham)
            if prev is not None:
                s = orbs.psi[k - 1][:, :m].T @ psi * orbs.spacing
                o = pair_overlap(bm, bm, s)
                ov = prev.T @ o @ v
                v, e = _track(prev, v, e, ov)
            else:
                # deterministic sign at the first node
                idx = np.argmax(np.abs(v), axis=0)
                v = v * np.sign(v[idx, np.arange(nb)])
            mats = np.einsum("ps,pij->sij", v, bm)
            a, fl = model_couplings(
                mats, e, g, bm, ham.w, psi, orbs.dpsi[k][:, :m], orbs.dv[k][:m, :m], orbs.spacing, sector.spin
            )
            for (i, j, gap) in fl:
                flags.append(CrossingFlag(float(d_grid[k]), i, j, gap))
            energies[k], vectors[k], couplings[k] = e, v, a
            prev = v
        if flags:
            log.warning("%s: %d near-degenerate coupled pairs (diabatic crossings)", sector.name, len(flags))
        results[sector] = AdiabaticCurves(sector, g, d_grid, energies, vectors, couplings, basis, tuple(flags))
    return results


def relative_curves(curves: AdiabaticCurves, reference: AdiabaticCurves, state: int = 0) -> AdiabaticCurves:
    """Shift energies by the reference track ``state`` pointwise in d."""
    if curves.d_grid.shape != reference.d_grid.shape or not np.allclose(curves.d_grid, reference.d_grid):
        raise ValueError("d grids differ")
    shift = reference.energies[:, state][:, None]
    return AdiabaticCurves(
        curves.sector, curves.g, curves.d_grid, curves.energies - shift,
        curves.vectors, curves.couplings, curves.basis, curves.crossings,
    )


def curves_csv(singlet: AdiabaticCurves, triplet: AdiabaticCurves, n_singlet: int = 3, n_triplet: int = 2) -> str:
    """Energy tracks sorted ascending at each d (as plotted), one row per separation."""
    es = np.sort(singlet.energies, axis=1)[:, :n_singlet]
    et = np.sort(triplet.energies, axis=1)[:, :n_triplet]
    cols = ["d"] + [f"E_singlet_{i}" for i in range(es.shape[1])] + [f"E_triplet_{i}" for i in range(et.shape[1])]
    lines = [",".join(cols)]
    for k, d in enumerate(singlet.d_grid):
        lines.append(",".join(f"{v:.12g}" for v in (d, *es[k], *et[k])))
    return "\n".join(lines) + "\n"
