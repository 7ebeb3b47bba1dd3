"""Fock-sector bases, states, and sparse ladder operators for multimode bosons.

All bases enumerate occupation-number states of ``n_modes`` bosonic modes
restricted to one or more total-photon sectors.  Ordering is deterministic:
sectors ascending, occupations lexicographic within each sector.  Everything
here is immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FockBasis",
    "StateVector",
    "DensityMatrix",
    "SectorOperator",
    "enumerate_basis",
    "ladder_operator",
    "product_fock_state",
    "sector_dimension",
]


def sector_dimension(n_modes: int, k: int) -> int:
    """Number of occupation vectors of n_modes summing to k (stars and bars)."""
    return math.comb(n_modes + k - 1, k)


def _compositions(n_modes, total):
    """All occupation tuples of length n_modes summing to total, lexicographic."""
    if n_modes == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(n_modes - 1, total - first):
            yield (first,) + rest


@dataclass
class FockBasis:
    """Ordered basis of occupation-number states over fixed photon sectors.

    Attributes
    ----------
    n_modes : int
        Number of bosonic modes.
    sectors : tuple of int
        Total photon numbers included, ascending.
    states : tuple of tuple of int
        Occupation vectors, sectors ascending then lexicographic.
    index : dict
        Occupation vector -> dense index (bijective).
    """

    n_modes: int
    sectors: tuple
    states: tuple
    index: dict = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def sector_slice(self, k: int) -> slice:
        """Contiguous index range of the k-photon sector."""
        if k not in self.sectors:
            raise KeyError(f"sector {k} not in basis")
        start = 0
        for s in self.sectors:
            d = sector_dimension(self.n_modes, s)
            if s == k:
                return slice(start, start + d)
            start += d
        raise KeyError(k)  # unreachable

    def totals(self) -> np.ndarray:
        """Total photon number of each basis state."""
        return np.array([sum(s) for s in self.states], dtype=int)

    def occupations(self) -> np.ndarray:
        """(dim, n_modes) integer array of all occupation vectors."""
        return np.array(self.states, dtype=int)


def enumerate_basis(n_modes: int, sectors) -> FockBasis:
    """Enumerate the Fock basis of ``n_modes`` modes over the given sectors.

    Ordering is sectors ascending, occupations lexicographic within a sector,
    so indices (and downstream eigenvector phases) are reproducible.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    sectors = tuple(sorted(set(int(k) for k in sectors)))
    if not sectors:
        raise ValueError("sectors must be nonempty")
    if sectors[0] < 0:
        raise ValueError("sectors must be >= 0")
    states = []
    for k in sectors:
        states.extend(_compositions(n_modes, k))
    states = tuple(states)
    index = {occ: i for i, occ in enumerate(states)}
    return FockBasis(n_modes=n_modes, sectors=sectors, states=states, index=index)


@dataclass
class StateVector:
    """Complex amplitudes over a FockBasis."""

    basis: FockBasis
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_density_matrix(self) -> "DensityMatrix":
        psi = self.amplitudes
        return DensityMatrix(self.basis, np.outer(psi, psi.conj()))


@dataclass
class DensityMatrix:
    """Hermitian unit-trace matrix over a FockBasis."""

    basis: FockBasis
    matrix: np.ndarray

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[0])

    def sector_population(self, k: int) -> float:
        sl = self.basis.sector_slice(k)
        return float(np.real(np.trace(self.matrix[sl, sl])))


@dataclass
class SectorOperator:
    """Sparse operator on a FockBasis."""

    basis: FockBasis
    entries: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def to_dense(self) -> np.ndarray:
        return self.entries.toarray()

    def dagger(self) -> "SectorOperator":
        return SectorOperator(self.basis, self.entries.conj().T.tocsr())

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        d = self.entries - self.entries.conj().T
        return abs(d).max() <= tol if d.nnz else True

    def is_unitary(self, tol: float = 1e-10) -> bool:
        d = (self.entries.conj().T @ self.entries - sp.identity(self.dim)).tocoo()
        return abs(d).max() <= tol if d.nnz else True

    def conserves_number(self, tol: float = 1e-10) -> bool:
        n_tot = self.basis.totals()
        c = self.entries.tocoo()
        if c.nnz == 0:
            return True
        mism = n_tot[c.row] != n_tot[c.col]
        return not np.any(np.abs(c.data[mism]) > tol)


def ladder_operator(basis: FockBasis, mode: int, kind: str) -> SectorOperator:
    """Creation, annihilation, or number operator for one mode on the basis.

    Matrix elements follow the canonical convention <..,n+1,..|b+|..,n,..> =
    sqrt(n+1).  Entries whose target occupation lies outside the represented
    sector set are dropped (sector-restricted operator); include adjacent
    sectors in the basis if exactness across sectors is needed.
    """
    if not 0 <= mode < basis.n_modes:
        raise ValueError(f"mode {mode} out of range for {basis.n_modes} modes")
    if kind not in ("create", "annihilate", "number"):
        raise ValueError(f"unknown ladder kind {kind!r}")
    rows, cols, vals = [], [], []
    for j, occ in enumerate(basis.states):
        n = occ[mode]
        if kind == "number":
            if n:
                rows.append(j)
                cols.append(j)
                vals.append(float(n))
            continue
        if kind == "create":
            target = occ[:mode] + (n + 1,) + occ[mode + 1:]
            amp = math.sqrt(n + 1)
        else:
            if n == 0:
                continue
            target = occ[:mode] + (n - 1,) + occ[mode + 1:]
            amp = math.sqrt(n)
        i = basis.index.get(target)
        if i is not None:
            rows.append(i)
            cols.append(j)
            vals.append(amp)
    mat = sp.csr_matrix(
        (vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex
    )
    return SectorOperator(basis, mat)


def product_fock_state(basis: FockBasis, occupation) -> StateVector:
    """Unit basis vector at the given occupation."""
    occ = tuple(int(n) for n in occupation)
    if occ not in basis.index:
        raise KeyError(f"occupation {occ} not in basis")
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index[occ]] = 1.0
    return StateVector(basis, amps)
