"""Exact-diagonalization oracle: construction, propagation, expansions."""

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse.linalg

from spinsqueeze import ed, lattice

SX1 = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY1 = np.array([[0, 0.5j], [-0.5j, 0]], dtype=complex)  # basis order (down, up)
SZ1 = np.array([[-0.5, 0], [0, 0.5]], dtype=complex)


def kron_chain(op, site, n):
    """op acting on one site, identity elsewhere; site 0 = least significant bit."""
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        factor = op if k == site else np.eye(2, dtype=complex)
        # higher site index = more significant bit = left factor
        out = np.kron(factor, out)
    return out


def hamiltonian_oracle(positions, params):
    """Independent dense Kronecker-product construction of the XXZ Hamiltonian."""
    n = len(positions)
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    for i in range(n):
        for j in range(i + 1, n):
            r = np.sqrt(((positions[i] - positions[j]) ** 2).sum())
            jij = params.J * r ** (-params.exponent)
            for op, w in ((SX1, params.j_perp), (SY1, params.j_perp), (SZ1, params.delta)):
                h -= jij * w * kron_chain(op, i, n) @ kron_chain(op, j, n)
    return h


def two_spin_table(delta, j_perp=1.0):
    lat = lattice.LatticeRealization(L=2, p=0.0, seed=0, sites=np.array([[0, 0], [0, 1]]))
    return lattice.build_couplings(lat, lattice.ModelParams(delta=delta, j_perp=j_perp))


class TestConstruction:
    def test_single_spin_operator_algebra(self):
        sx, sy, sz = ed.collective_operators(1)
        np.testing.assert_allclose(sx.toarray(), SX1, atol=1e-15)
        np.testing.assert_allclose(sy.toarray(), SY1, atol=1e-15)
        np.testing.assert_allclose(sz.toarray(), SZ1, atol=1e-15)

    def test_collective_commutator(self):
        sx, sy, sz = ed.collective_operators(4)
        comm = (sx @ sy - sy @ sx - 1j * sz).toarray()
        assert np.abs(comm).max() < 1e-13

    def test_hamiltonian_matches_kron_oracle(self):
        lat = lattice.build_lattice(L=3, p=0.3, seed=4)
        assert 2 <= lat.N <= 8
        params = lattice.ModelParams(delta=-1.3)
        ct = lattice.build_couplings(lat, params)
        h = ed.build_hamiltonian(ct).toarray()
        ref = hamiltonian_oracle(lat.positions(), params)
        np.testing.assert_allclose(h, ref, atol=1e-13)

    def test_ising_hamiltonian_is_diagonal(self):
        lat = lattice.build_lattice(L=2, p=0.0, seed=0)
        ct = lattice.build_couplings(lat, lattice.ModelParams(delta=-1.0, j_perp=0.0))
        h = ed.build_hamiltonian(ct).toarray()
        assert np.abs(h - np.diag(np.diag(h))).max() == 0.0

    def test_dimension_cap(self):
        with pytest.raises(ed.DimensionError):
            ed.x_polarized_state(15)


class TestEvolution:
    def test_single_spin_constant(self):
        lat = lattice.LatticeRealization(L=2, p=0.75, seed=0, sites=np.array([[0, 0]]))
        ct = lattice.build_couplings(lat, lattice.ModelParams())
        series = ed.evolve_exact(ct, np.array([0.0, 1.0, 5.0, 20.0]))
        np.testing.assert_allclose(series.values["Sx"], 0.5, atol=1e-12)
        np.testing.assert_allclose(series.values["xi2"], 1.0, atol=1e-12)

    def test_heisenberg_point_is_stationary(self):
        # delta = 1, j_perp = 1: the x-polarized state is an eigenstate
        series = ed.evolve_exact(two_spin_table(delta=1.0), np.array([0.0, 0.7, 3.0, 11.0]))
        np.testing.assert_allclose(series.values["xi2"], 1.0, atol=1e-10)
        np.testing.assert_allclose(series.values["Sx"], 1.0, atol=1e-10)

    def test_two_spin_closed_form(self):
        # delta = -1, r = 1: <Sx(t)> = cos(J t)  (two-level oscillation)
        times = np.linspace(0.0, 6.0, 25)[1:]
        series = ed.evolve_exact(two_spin_table(delta=-1.0), times)
        np.testing.assert_allclose(series.values["Sx"], np.cos(times), atol=1e-10)

    def test_matches_direct_expm(self):
        lat = lattice.build_lattice(L=3, p=0.4, seed=8)
        params = lattice.ModelParams(delta=-0.7)
        ct = lattice.build_couplings(lat, params)
        times = np.array([0.3, 1.1, 2.7])
        series = ed.evolve_exact(ct, times)
        h = hamiltonian_oracle(lat.positions(), params)
        sx = sum(kron_chain(SX1, i, lat.N) for i in range(lat.N))
        psi0 = np.full(2**lat.N, 2 ** (-lat.N / 2), dtype=complex)
        for k, t in enumerate(times):
            psi = scipy.linalg.expm(-1j * h * t) @ psi0
            assert series.values["Sx"][k] == pytest.approx(np.vdot(psi, sx @ psi).real, abs=1e-10)

    def test_initial_squeezing_is_unity(self):
        lat = lattice.build_lattice(L=3, p=0.2, seed=2)
        ct = lattice.build_couplings(lat, lattice.ModelParams(delta=-1.0))
        series = ed.evolve_exact(ct, np.array([0.0, 0.5]))
        assert series.values["xi2"][0] == pytest.approx(1.0, abs=1e-12)
        assert series.values["mxy"][0] == pytest.approx(
            np.sqrt(1.0 + 1.0 / lat.N), rel=1e-12
        )  # quantum transverse fluctuations add N/4 to <Sx^2>+<Sy^2>

    def test_conservation_long_horizon(self):
        # norm, <Sz>, and energy all conserved to 1e-10 over Jt <= 50
        lat = lattice.build_lattice(L=3, p=0.25, seed=6)
        params = lattice.ModelParams(delta=-1.0)
        ct = lattice.build_couplings(lat, params)
        times = np.array([0.0, 1.0, 10.0, 50.0])
        series = ed.evolve_exact(ct, times)
        assert abs(series.meta["norm_final"] - 1.0) < 1e-10
        sz = series.values["Sz"]
        assert np.abs(sz - sz[0]).max() < 1e-10

        h = ed.build_hamiltonian(ct)
        psi0 = ed.x_polarized_state(lat.N)
        e0 = np.vdot(psi0, h @ psi0).real
        psi = scipy.sparse.linalg.expm_multiply(-1j * h.tocsc() * 50.0, psi0)
        assert np.vdot(psi, h @ psi).real == pytest.approx(e0, abs=1e-10)

    def test_krylov_branch_matches_dense(self):
        # force the sparse propagation path at small N and compare to dense
        lat = lattice.build_lattice(L=3, p=0.3, seed=9)
        ct = lattice.build_couplings(lat, lattice.ModelParams(delta=-1.0))
        times = np.array([0.4, 1.7])
        dense = ed.evolve_exact(ct, times)
        saved = ed.DENSE_MAX
        try:
            ed.DENSE_MAX = 0
            krylov = ed.evolve_exact(ct, times)
        finally:
            ed.DENSE_MAX = saved
        for key in ("Sx", "Vyy", "Vyz", "xi2"):
            np.testing.assert_allclose(krylov.values[key], dense.values[key], atol=1e-9)

    def test_configurable_cap(self):
        lat = lattice.build_lattice(L=4, p=0.2, seed=1)
        ct = lattice.build_couplings(lat, lattice.ModelParams())
        if lat.N > 10:
            with pytest.raises(ed.DimensionError):
                ed.evolve_exact(ct, np.array([0.1]), cap=10)

    def test_series_tagged_exact(self):
        series = ed.evolve_exact(two_spin_table(delta=-1.0), np.array([0.1]))
        assert series.method == "exact"
        assert series.errors["xi2"][0] == 0.0


class TestShortTimeExpansion:
    def test_order_zero_is_half_n(self):
        lat = lattice.build_lattice(L=3, p=0.4, seed=3)
        ct = lattice.build_couplings(lat, lattice.ModelParams(delta=-1.0))
        coeffs = ed.short_time_expansion(ct, order=0)
        assert coeffs[0] == pytest.approx(lat.N / 2, rel=1e-13)

    def test_first_order_vanishes(self):
        coeffs = ed.short_time_expansion(two_spin_table(delta=-1.0), order=1)
        assert coeffs[1] == pytest.approx(0.0, abs=1e-13)

    def test_two_spin_second_order(self):
        # <Sx(t)> = cos t  =>  t^2 coefficient is -1/2
        coeffs = ed.short_time_expansion(two_spin_table(delta=-1.0), order=2)
        assert coeffs[2] == pytest.approx(-0.5, rel=1e-12)

    def test_matches_finite_difference(self):
        # random 3-spin triangle; Richardson on the even series in t
        lat = lattice.LatticeRealization(
            L=4, p=0.0, seed=0, sites=np.array([[0, 0], [0, 1], [2, 3]])
        )
        ct = lattice.build_couplings(lat, lattice.ModelParams(delta=-1.4))
        coeffs = ed.short_time_expansion(ct, order=2)
        h = 0.01
        series = ed.evolve_exact(ct, np.array([h, 2 * h]))
        f0 = coeffs[0]
        g1 = (series.values["Sx"][0] - f0) / h**2
        g2 = (series.values["Sx"][1] - f0) / (2 * h) ** 2
        fd = (4 * g1 - g2) / 3
        assert coeffs[2] == pytest.approx(fd, abs=1e-6)
