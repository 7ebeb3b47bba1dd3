import math

import numpy as np
import pytest
import scipy.sparse as sp

from timebin.fock import (
    DensityMatrix,
    enumerate_basis,
    ladder_operator,
    product_fock_state,
    sector_dimension,
)


def test_single_mode_two_sectors():
    b = enumerate_basis(1, {0, 1})
    assert b.states == ((0,), (1,))
    assert b.dim == 2


def test_sector_dimension_matches_enumeration():
    # stars-and-bars count vs explicit enumeration for 16 modes, 2 photons
    b = enumerate_basis(16, {2})
    assert b.dim == 136
    assert b.dim == math.comb(17, 2)
    assert b.dim == sector_dimension(16, 2)


def test_union_of_sectors():
    b = enumerate_basis(2, {0, 1, 2})
    assert b.dim == 1 + 2 + 3
    assert b.sector_slice(0) == slice(0, 1)
    assert b.sector_slice(1) == slice(1, 3)
    assert b.sector_slice(2) == slice(3, 6)


def test_ordering_sectors_ascending_then_lex():
    b = enumerate_basis(2, {1, 0, 2})
    assert b.states == ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0))


def test_index_roundtrip():
    b = enumerate_basis(3, {0, 1, 2, 3})
    for i, occ in enumerate(b.states):
        assert b.index[occ] == i


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        enumerate_basis(0, {1})
    with pytest.raises(ValueError):
        enumerate_basis(2, set())
    with pytest.raises(ValueError):
        enumerate_basis(2, {-1, 0})


def test_number_operator_diagonal():
    b = enumerate_basis(1, {0, 3})
    n = ladder_operator(b, 0, "number").to_dense()
    assert n[b.index[(0,)], b.index[(0,)]] == 0
    assert n[b.index[(3,)], b.index[(3,)]] == 3


def test_create_matrix_element():
    b = enumerate_basis(1, {0, 1, 2})
    bdag = ladder_operator(b, 0, "create").to_dense()
    assert bdag[b.index[(2,)], b.index[(1,)]] == pytest.approx(math.sqrt(2))


def test_commutator_on_truncated_single_mode():
    # [b, b+] = 1 on rows below the cap; the top row is truncated
    nmax = 5
    b = enumerate_basis(1, set(range(nmax + 1)))
    lo = ladder_operator(b, 0, "annihilate").entries
    hi = ladder_operator(b, 0, "create").entries
    comm = (lo @ hi - hi @ lo).toarray()
    interior = np.diag(comm)[:-1]
    assert np.allclose(interior, 1.0, atol=1e-14)
    assert comm[nmax, nmax] == pytest.approx(-nmax)


def test_cross_mode_commutators_vanish_below_cap():
    # [b_i, b+_j] = 0 on rows/columns whose total photon number is below
    # the sector cap; the top sector is cut asymmetrically by truncation.
    b = enumerate_basis(3, {0, 1, 2})
    interior = b.totals() < max(b.sectors)
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            bi = ladder_operator(b, i, "annihilate").entries
            bjd = ladder_operator(b, j, "create").entries
            comm = (bi @ bjd - bjd @ bi).toarray()
            block = comm[np.ix_(interior, interior)]
            assert np.max(np.abs(block)) == 0.0


def test_number_equals_bdag_b():
    b = enumerate_basis(2, {0, 1, 2, 3})
    for m in range(2):
        n = ladder_operator(b, m, "number").entries
        prod = ladder_operator(b, m, "create").entries @ ladder_operator(
            b, m, "annihilate"
        ).entries
        assert abs(n - prod).max() <= 1e-14


def test_sector_restriction_drops_out_of_basis_targets():
    # creation out of the top sector maps outside the basis -> dropped rows
    b = enumerate_basis(2, {2})
    bdag = ladder_operator(b, 0, "create")
    assert bdag.entries.nnz == 0


def test_product_fock_state():
    b = enumerate_basis(8, {0, 2})
    vac = product_fock_state(b, (0,) * 8)
    assert vac.amplitudes[0] == 1.0
    assert vac.norm() == pytest.approx(1.0)

    occ = [0] * 8
    occ[3] = occ[4] = 1
    psi = product_fock_state(b, occ)
    assert psi.norm() == pytest.approx(1.0)
    assert psi.amplitudes[b.index[tuple(occ)]] == 1.0
    with pytest.raises(KeyError):
        product_fock_state(b, [1] + [0] * 7)


def test_density_matrix_helpers():
    b = enumerate_basis(2, {0, 1})
    psi = product_fock_state(b, (1, 0))
    rho = psi.to_density_matrix()
    assert rho.trace() == pytest.approx(1.0)
    assert rho.hermiticity_defect() == 0.0
    assert rho.min_eigenvalue() >= -1e-12
    assert rho.sector_population(1) == pytest.approx(1.0)


def test_operator_flag_checks():
    b = enumerate_basis(2, {0, 1, 2})
    n0 = ladder_operator(b, 0, "number")
    assert n0.is_hermitian()
    assert n0.conserves_number()
    assert not ladder_operator(b, 0, "create").is_hermitian()
