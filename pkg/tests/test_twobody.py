import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.linalg import eigh_tridiagonal
from hypothesis import strategies as st

from exchange_blockade import dvr, exact, twobody
from exchange_blockade.model import TrapConfig, potential, potential_d_derivative
from exchange_blockade.twobody import SINGLET, TRIPLET


def brute_force_pairs(q, spin, parity):
    labels = ["g0", "u0", "g1", "u1", "g2", "u2", "g3", "u3"][: 2 * (q + 1)]
    out = []
    for i, j in itertools.combinations_with_replacement(range(len(labels)), 2):
        if spin == "triplet" and i == j:
            continue
        if int(labels[i][1]) + int(labels[j][1]) > q:
            continue
        p = (1 if labels[i][0] == "g" else -1) * (1 if labels[j][0] == "g" else -1)
        if p == parity:
            out.append((i, j))
    return out


@pytest.mark.parametrize("q", [0, 1, 2, 3])
@pytest.mark.parametrize("sector", twobody.ALL_SECTORS, ids=lambda s: s.name)
def test_basis_matches_enumeration(q, sector):
    b = twobody.build_sector_basis([1, -1] * (q + 1), sector, q)
    assert list(b.pairs) == brute_force_pairs(q, sector.spin, sector.parity)
    assert all(p == sector.parity for p in b.parity)


def test_basis_sizes():
    par = [1, -1] * 3
    assert twobody.build_sector_basis(par[:2], SINGLET, 0).pairs == ((0, 0), (1, 1))
    assert twobody.build_sector_basis(par[:2], TRIPLET, 0).pairs == ((0, 1),)
    # derived by enumerating {g0,u0,g1,u1,g2,u2} with n_i + n_j <= 2
    assert twobody.build_sector_basis(par, SINGLET, 2).size == 8
    assert twobody.build_sector_basis(par, TRIPLET, 2).size == 6
    assert twobody.build_sector_basis(par, "singlet", 2).sector == SINGLET


def test_basis_needs_orbitals():
    with pytest.raises(twobody.SectorError, match="needs 6"):
        twobody.build_sector_basis([1, -1, 1, -1], SINGLET, 2)
    with pytest.raises(twobody.SectorError):
        twobody.Sector("quartet", 1)


def test_pair_matrices_orthonormal():
    b = twobody.build_sector_basis([1, -1] * 3, SINGLET, 2)
    m = b.matrices()
    gram = np.einsum("aij,bij->ab", m, m)
    assert np.allclose(gram, np.eye(b.size))
    assert np.allclose(m, np.swapaxes(m, 1, 2))
    t = twobody.build_sector_basis([1, -1] * 3, TRIPLET, 2).matrices()
    assert np.allclose(t, -np.swapaxes(t, 1, 2))


@pytest.fixture(scope="module")
def orbs(trap):
    grid = dvr.default_grid(trap, 201)
    return grid, {d: dvr.single_particle_eigs(grid, d, trap, 6) for d in (0.0, 2.0, 5.0, trap.d_max)}


@pytest.mark.parametrize("d", [0.0, 2.0, 5.0])
def test_interaction_matrix_matches_product_grid(orbs, d):
    """<p| delta(x1 - x2) |q> from explicit two-atom arrays, with delta -> 1/dx on the diagonal."""
    grid, sets = orbs
    o = sets[d]
    b = twobody.build_sector_basis(o, SINGLET, 2)
    psi = o.orbitals
    phis = np.einsum("aij,pi,qj->apq", b.matrices(), psi, psi)
    dx = grid.spacing
    diag = np.einsum("app->ap", phis)
    brute = diag @ diag.T * dx  # sum_p Phi_a(x_p, x_p) Phi_b(x_p, x_p) dx^2 / dx
    w = twobody.interaction_matrix(b, o)
    assert np.allclose(w, brute, atol=1e-12)
    # normalisation of the arrays confirms the dx weighting
    assert np.allclose(np.einsum("apq,bpq->ab", phis, phis) * dx * dx, np.eye(b.size), atol=1e-10)


def test_interaction_factor_explicit(orbs):
    # <g0 g0|delta|g0 u0-type> check of the sqrt(2) factor: (0,0) vs (0,2) singlet pair
    grid, sets = orbs
    o = sets[0.0]
    p = o.orbitals
    b = twobody.build_sector_basis(o, SINGLET, 2)
    w = twobody.interaction_matrix(b, o)
    i00 = b.pairs.index((0, 0))
    i02 = b.pairs.index((0, 2))
    assert w[i00, i00] == pytest.approx(np.sum(p[:, 0] ** 4) * grid.spacing)
    assert w[i00, i02] == pytest.approx(np.sqrt(2) * np.sum(p[:, 0] ** 3 * p[:, 2]) * grid.spacing)


def test_first_order_shift_at_merge(orbs):
    grid, sets = orbs
    o = sets[0.0]
    b = twobody.build_sector_basis(o, SINGLET, 2)
    w = twobody.interaction_matrix(b, o)
    shift = w[b.pairs.index((0, 0)), b.pairs.index((0, 0))]
    assert shift == pytest.approx(np.sum(o.orbitals[:, 0] ** 4) * grid.spacing)
    # harmonic estimate for the sqrt(2)-frequency merged well
    assert shift == pytest.approx(np.sqrt(np.sqrt(2) / (2 * np.pi)), rel=0.05)


def test_triplet_interaction_zero(orbs):
    _, sets = orbs
    o = sets[2.0]
    b = twobody.build_sector_basis(o, TRIPLET, 2)
    assert not np.any(twobody.interaction_matrix(b, o))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_antisymmetric_states_vanish_on_diagonal(m, seed):
    """Exchange blockade for random antisymmetric coefficient matrices on random orbitals."""
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(40, m))
    a = rng.normal(size=(m, m))
    a = a - a.T
    a /= np.linalg.norm(a)
    diag = twobody.pair_diagonal(a, psi)
    g = 1.0 + rng.random() * 100
    assert np.abs(g * diag @ diag).max() < 1e-12 * g


def test_interaction_psd_and_hamiltonian_symmetric(orbs):
    _, sets = orbs
    for o in sets.values():
        b = twobody.build_sector_basis(o, SINGLET, 2)
        for g in (0.0, 1.0, 8.0):
            h = twobody.sector_hamiltonian(b, o, g)
            assert np.array_equal(h.total, h.total.T)
        assert np.linalg.eigvalsh(h.w).min() > -1e-10


def test_triplet_energies_independent_of_g(orbs):
    _, sets = orbs
    o = sets[2.0]
    b = twobody.build_sector_basis(o, TRIPLET, 2)
    e0 = twobody.sector_spectrum(twobody.sector_hamiltonian(b, o, 0.0))[0]
    e5 = twobody.sector_spectrum(twobody.sector_hamiltonian(b, o, 5.0))[0]
    assert np.array_equal(e0, e5)
    assert np.allclose(e0, np.sort(twobody.sector_hamiltonian(b, o, 0.0).h0))


def test_singlet_energies_nondecreasing_in_g(orbs):
    _, sets = orbs
    for o in sets.values():
        b = twobody.build_sector_basis(o, SINGLET, 2)
        es = [twobody.sector_spectrum(twobody.sector_hamiltonian(b, o, g))[0] for g in np.linspace(0, 20, 21)]
        assert np.all(np.diff(es, axis=0) >= -1e-12)


def test_two_orbital_singlet_matches_product_grid(trap):
    """Weak coupling keeps truncation error O(g^2) below the tolerance."""
    g = 0.05
    grid = dvr.build_grid(12.0, 101)
    for d in (0.0, 3.0):
        o = dvr.single_particle_eigs(grid, d, trap, 2)
        b = twobody.build_sector_basis(o, SINGLET, 0)
        e_model = twobody.sector_spectrum(twobody.sector_hamiltonian(b, o, g))[0][0]
        e_grid = exact.two_body_energies(grid, d, trap, g, "singlet")[0]
        assert e_model == pytest.approx(e_grid, abs=1e-3)


def test_tonks_limit_exact():
    gap1 = exact.tonks_gap(TrapConfig(), 1.0)
    gap1000 = exact.tonks_gap(TrapConfig(), 1000.0)
    assert abs(gap1000) < 0.1 * abs(gap1)


# ---------------------------------------------------------------------------
# sweeps


@pytest.fixture(scope="module")
def curves(small_sweep):
    return {g: twobody.sweep_adiabatic(small_sweep, g, 2) for g in (0.0, 1.0, 8.0)}


def test_sweep_continuity_and_antisymmetry(curves, small_sweep):
    for per_g in curves.values():
        for c in per_g.values():
            a = c.couplings
            assert np.abs(a + np.swapaxes(a, 1, 2)).max() < 1e-8
            assert np.all(np.einsum("kaa->ka", a) == 0)
            mats = np.einsum("kps,pij->ksij", c.vectors, c.basis.matrices())
            for k in range(c.d_grid.size - 1):
                s = small_sweep.psi[k][:, :6].T @ small_sweep.psi[k + 1][:, :6] * small_sweep.spacing
                ov = np.einsum("aij,ik,jl,akl->a", mats[k], s, s, mats[k + 1])
                assert np.all(ov > 0)
            # a swapped track shows up as a step far larger than its neighbours
            de = np.abs(np.diff(c.energies, axis=0))
            neighbours = np.maximum(np.vstack([de[1:], de[-1:]]), np.vstack([de[:1], de[:-1]]))
            assert np.all(de <= 3.0 * neighbours + 1e-3)


def _state_on_grid(curves, sweep, k, a):
    m = curves.state_matrices(k)[a]
    psi = sweep.psi[k][:, : m.shape[0]]
    return psi @ m @ psi.T


def test_couplings_match_finite_differences(trap):
    """<a| d/dd |b> against central differences of the two-atom states on the grid."""
    h = 1e-4
    grid = dvr.default_grid(trap, 201)
    for g in (0.0, 1.0, 8.0):
        for d0 in (1.5, 4.0):
            sweep = twobody.sweep_orbitals(trap, grid, np.array([d0 - h, d0, d0 + h]), 6)
            for sector in (SINGLET, TRIPLET):
                c = twobody.sweep_adiabatic(sweep, g, 2, (sector,))[sector]
                n = c.n_states
                fd = np.empty((n, n))
                for a in range(n):
                    phi_a = _state_on_grid(c, sweep, 1, a)
                    for b in range(n):
                        dphi = (_state_on_grid(c, sweep, 2, b) - _state_on_grid(c, sweep, 0, b)) / (2 * h)
                        fd[a, b] = np.sum(phi_a * dphi) * grid.spacing**2
                off = ~np.eye(n, dtype=bool)
                assert np.abs(c.couplings[1][off] - fd[off]).max() < 1e-4


def _track_of(c, sweep, grid, kind):
    loc = dvr.localized_orbitals(sweep.orbital_set(-1), grid.points)
    l, r = loc.left_coeffs[0], loc.right_coeffs[0]
    target = np.outer(l, r) + np.outer(r, l) if kind == "split" else np.outer(l, l) + np.outer(r, r)
    ov = np.einsum("aij,ij->a", c.state_matrices(-1), target / np.sqrt(2))
    return int(np.argmax(np.abs(ov))), float(np.max(np.abs(ov)))


@pytest.mark.parametrize("g", [1.0, 8.0])
def test_couplings_vanish_between_wells_at_d_max(small_sweep, trap, g):
    """Psi_+ (one atom per well) and Psi_c (both in one well) decouple once the wells separate."""
    grid = dvr.default_grid(trap, 201)
    c = twobody.sweep_adiabatic(small_sweep, g, 2, (SINGLET,))[SINGLET]
    ip, wp = _track_of(c, small_sweep, grid, "split")
    ic, wc = _track_of(c, small_sweep, grid, "double")
    assert ip == 0 and wp > 0.999 and wc > 0.5
    assert abs(c.couplings[-1, ip, ic]) < 1e-3
    assert np.abs(c.couplings[:, ip, ic]).max() > 0.1


def test_sweep_requires_ascending(small_sweep):
    rev = twobody.OrbitalSweep(small_sweep.d_grid[::-1], small_sweep.energies, small_sweep.psi,
                               small_sweep.dpsi, small_sweep.dv, small_sweep.parity,
                               small_sweep.spacing, small_sweep.points)
    with pytest.raises(ValueError):
        twobody.sweep_adiabatic(rev, 1.0, 2)


def test_relative_curves(curves):
    ref = curves[0.0][SINGLET]
    zero = twobody.relative_curves(ref, ref)
    assert np.all(zero.energies[:, 0] == 0)
    c = curves[8.0][SINGLET]
    rel = twobody.relative_curves(c, ref)
    assert np.allclose(np.diff(rel.energies, axis=1), np.diff(c.energies, axis=1), atol=1e-12)
    assert rel.vectors is c.vectors and rel.couplings is c.couplings
    short = twobody.AdiabaticCurves(c.sector, c.g, c.d_grid[:-1], c.energies[:-1], c.vectors[:-1],
                                    c.couplings[:-1], c.basis)
    with pytest.raises(ValueError):
        twobody.relative_curves(short, ref)


def test_g0_asymptotes_zero_and_one(curves, trap):
    """Relative energies at d_max group at 0 and at one local vibrational quantum.

    The quantum comes from an independent finite-difference diagonalisation
    of the double well at d_max; the neighbouring well still lowers it
    below the isolated-Gaussian value, and anharmonicity keeps both below 1.
    """
    x = np.linspace(-35.0, 35.0, 20001)
    h = x[1] - x[0]
    v = potential(x, trap.d_max, trap)
    e = eigh_tridiagonal(v + 1 / h**2, -0.5 / h**2 * np.ones(x.size - 1),
                         select="i", select_range=(0, 3))[0]
    quantum = 0.5 * (e[2] + e[3]) - 0.5 * (e[0] + e[1])
    lone = potential(x, 0.0, trap) / 2
    e1 = eigh_tridiagonal(lone + 1 / h**2, -0.5 / h**2 * np.ones(x.size - 1),
                          select="i", select_range=(0, 1))[0]
    assert quantum < e1[1] - e1[0] < 1.0
    ref = curves[0.0][SINGLET]
    for c in curves[0.0].values():
        rel = np.sort(twobody.relative_curves(c, ref).energies[-1])
        low = rel[rel < 1.5]
        assert low.size >= 3
        assert np.all(np.minimum(np.abs(low), np.abs(low - quantum)) < 1e-3)


def test_g0_exchange_splitting_vanishes(curves):
    """At g = 0 the triplet g0u0 equals the mean of the singlets g0g0 and u0u0 at every d.

    That mean is the energy of the one-atom-per-well singlet (g0g0 - u0u0)/sqrt(2),
    so without interaction the logical singlet and triplet carry no relative phase.
    """
    s = curves[0.0][SINGLET]
    t = curves[0.0][TRIPLET]
    pairs = s.basis.pairs
    i00, i11 = pairs.index((0, 0)), pairs.index((1, 1))
    # at g = 0 every track is a single basis pair
    k00 = int(np.argmax(np.abs(s.vectors[0, i00])))
    k11 = int(np.argmax(np.abs(s.vectors[0, i11])))
    kt = int(np.argmax(np.abs(t.vectors[0, t.basis.pairs.index((0, 1))])))
    mid = 0.5 * (s.energies[:, k00] + s.energies[:, k11])
    assert np.abs(t.energies[:, kt] - mid).max() < 1e-10


def test_curves_csv(curves):
    text = twobody.curves_csv(curves[1.0][SINGLET], curves[1.0][TRIPLET])
    lines = text.strip().splitlines()
    assert lines[0] == "d,E_singlet_0,E_singlet_1,E_singlet_2,E_triplet_0,E_triplet_1"
    assert len(lines) == 62
    row = np.array(lines[5].split(","), dtype=float)
    assert np.all(np.diff(row[1:4]) >= 0)


def test_coupling_crossing_flag():
    # exactly degenerate pair with a nonzero numerator is reported, not divided by zero
    mats = np.array([[[1.0, 0], [0, 0]], [[0, 0], [0, 1.0]]])
    dv = np.array([[0.0, 1.0], [1.0, 0.0]])
    a, flags = twobody.model_couplings(mats, np.array([1.0, 1.0]), 0.0, mats, np.zeros((2, 2)),
                                       np.eye(2), np.zeros((2, 2)), dv, 1.0, "singlet")
    assert not flags and not a.any()
    mats2 = np.array([[[1.0, 0], [0, 0]], [[0, 1 / np.sqrt(2)], [1 / np.sqrt(2), 0]]])
    a, flags = twobody.model_couplings(mats2, np.array([1.0, 1.0]), 0.0, mats2, np.zeros((2, 2)),
                                       np.eye(2), np.zeros((2, 2)), dv, 1.0, "singlet")
    assert flags and flags[0][:2] == (0, 1)
