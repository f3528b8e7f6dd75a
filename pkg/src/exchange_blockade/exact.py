"""Brute-force two-atom solutions on a product grid.

The two-atom wavefunction Phi(x1, x2) is an n x n array on the tensor grid
of a 1D sinc DVR.  The contact term becomes g / dx on the diagonal
x1 == x2.  These routines know nothing about orbitals or truncation and
serve as references for the truncated adiabatic model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from . import dvr
from .dynamics import RampSchedule
from .model import TrapConfig, potential

TWO_PI = 2.0 * np.pi


def _symmetrize(phi: np.ndarray, spin: str) -> np.ndarray:
    return 0.5 * (phi + phi.T) if spin == "singlet" else 0.5 * (phi - phi.T)


def two_body_energies(grid: dvr.DvrGrid, d: float, trap: TrapConfig, g: float,
                      spin: str = "singlet", k: int = 1, tol: float = 1e-10) -> np.ndarray:
    """Lowest ``k`` energies of the singlet or triplet two-atom Hamiltonian at separation d.

    Works matrix-free: H Phi = T Phi + Phi T + (V1 + V2 + g delta/dx) Phi,
    restricted to symmetric (singlet) or antisymmetric (triplet) arrays.
    """
    if spin not in ("singlet", "triplet"):
        raise ValueError(f"unknown spin sector {spin!r}")
    n = grid.n_points
    t = grid.kinetic
    v = potential(grid.points, d, trap)
    diag = v[:, None] + v[None, :] + np.eye(n) * (g / grid.spacing)

    def matvec(x):
        phi = _symmetrize(x.reshape(n, n), spin)
        return _symmetrize(t @ phi + phi @ t + diag * phi, spin).ravel()

    op = LinearOperator((n * n, n * n), matvec=matvec, dtype=float)
    # Lanczos stays in the symmetry sector of its start vector; the
    # complementary sector maps to zero, above every bound two-atom level.
    spec = dvr.grid_spectrum(grid, d, trap)
    start = _symmetrize(np.outer(spec.vectors[:, 0], spec.vectors[:, 1]), spin)
    if spin == "singlet":
        start = start + np.outer(spec.vectors[:, 0], spec.vectors[:, 0])
    vals = eigsh(op, k=k, which="SA", v0=start.ravel(), tol=tol)[0]
    return np.sort(vals)


def tonks_gap(trap: TrapConfig, g: float, n_points: int = 201, x_max: float = 8.0) -> float:
    """Lowest singlet minus lowest triplet energy at d = 0 on the product grid."""
    grid = dvr.build_grid(x_max, n_points)
    es = two_body_energies(grid, 0.0, trap, g, "singlet")[0]
    et = two_body_energies(grid, 0.0, trap, g, "triplet")[0]
    return float(es - et)


@dataclass(frozen=True)
class GridRun:
    """Final spin-sector wavefunctions of a product-grid propagation."""

    grid: dvr.DvrGrid
    singlet: np.ndarray
    triplet: np.ndarray
    n_steps: int


def _cayley(kinetic: np.ndarray, dt: float) -> np.ndarray:
    """(1 + i dt T / 2)^-1 (1 - i dt T / 2), the Crank-Nicolson kinetic step."""
    n = kinetic.shape[0]
    a = np.eye(n) + 0.5j * dt * kinetic
    b = np.eye(n) - 0.5j * dt * kinetic
    return linalg.solve(a, b)


def propagate_grid(phi_singlet: np.ndarray, phi_triplet: np.ndarray, grid: dvr.DvrGrid,
                   trap: TrapConfig, g: float, ramp: RampSchedule, dt: float = 0.01) -> GridRun:
    """Strang-split Crank-Nicolson propagation of both spin sectors along ``ramp``.

    The kinetic half is the implicit Cayley step applied along each axis,
    the potential and contact terms are diagonal phases at the midpoint
    separation of each step.  Both parts are unitary.
    """
    total = ramp.duration
    n_steps = max(1, int(np.ceil(total / dt)))
    h = total / n_steps
    u = _cayley(grid.kinetic, h)
    x = grid.points
    contact = np.eye(grid.n_points) * (g / grid.spacing)
    states = [np.asarray(phi_singlet, dtype=complex), np.asarray(phi_triplet, dtype=complex)]
    for k in range(n_steps):
        d = float(ramp.d(h * (k + 0.5)))
        v = potential(x, d, trap)
        vv = v[:, None] + v[None, :]
        half = [np.exp(-0.5j * h * (vv + contact)), np.exp(-0.5j * h * vv)]
        for s in range(2):
            p = half[s] * states[s]
            p = u @ p @ u.T
            states[s] = half[s] * p
    return GridRun(grid, states[0], states[1], n_steps)


def localized_modes(grid: dvr.DvrGrid, trap: TrapConfig, n_vib: int):
    """L_n and R_n (n < n_vib) on ``grid`` at the trap's d_max."""
    orbs = dvr.single_particle_eigs(grid, trap.d_max, trap, 2 * n_vib)
    loc = dvr.localized_orbitals(orbs, grid.points)
    return loc.left, loc.right


def initial_pair(left: np.ndarray, right: np.ndarray):
    """Spatial singlet and triplet parts of f+_{L0,up} f+_{R0,down}|vac>, each of weight 1/2."""
    lr = np.outer(left[:, 0], right[:, 0])
    return 0.5 * (lr + lr.T), 0.5 * (lr - lr.T)


def grid_projections(run: GridRun, left: np.ndarray, right: np.ndarray):
    """X[n, n'] = <L_n R_n'|Phi> for the singlet and triplet parts."""
    dx = run.grid.spacing
    xs = left.T @ run.singlet @ right * dx * dx
    xt = left.T @ run.triplet @ right * dx * dx
    return xs, xt
