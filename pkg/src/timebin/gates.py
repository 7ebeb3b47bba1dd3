"""Unitary gates of one Trotter step: beamsplitters and number-phase gates.

Sign convention, pinned once for the whole package: the beamsplitter
generator is

    G = theta * (e^{i phi} b_i b_j^dag + e^{-i phi} b_j b_i^dag)

and the gate is exp(-i G).  With theta = |w| dt and phi = arg(w) this is the
exact exponential of the hopping term  w b_j^dag b_i + h.c.  over one step.

Number-phase gates are diagonal, applying e^{i phi(n)} conditioned on the
photon count n of a single mode.  A finite phase table is extrapolated
linearly with its last increment beyond the table (cascade semantics: after
the programmable layers, every extra photon adds the same phase slope).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import DensityMatrix, FockBasis, SectorOperator, StateVector

__all__ = [
    "GateDescriptor",
    "beamsplitter_gate",
    "number_phase_gate",
    "linear_phase_gate",
    "apply_gate",
    "gate_matrix",
    "extend_phase_table",
]


@dataclass
class GateDescriptor:
    """Abstract gate: kind, target modes, parameters.

    kinds:
      beamsplitter  params = {"theta": J*dt, "phi": hopping phase}
      number_phase  params = {"table": phase per photon count, table[0] = 0}
      linear_phase  params = {"Phi": phase per photon}
    """

    kind: str
    modes: tuple
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.modes = tuple(int(m) for m in self.modes)
        if self.kind not in ("beamsplitter", "number_phase", "linear_phase"):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("gate modes must be distinct")
        if self.kind == "beamsplitter" and len(self.modes) != 2:
            raise ValueError("beamsplitter acts on two modes")
        if self.kind in ("number_phase", "linear_phase") and len(self.modes) != 1:
            raise ValueError("phase gates act on one mode")
        if self.kind == "number_phase":
            table = np.asarray(self.params["table"], dtype=float)
            if table.size == 0 or table[0] != 0.0:
                raise ValueError("phase table must start at phi(0) = 0")


def extend_phase_table(table, n_max: int) -> np.ndarray:
    """Phase values for n = 0..n_max, linear in the last increment beyond
    the table."""
    table = np.asarray(table, dtype=float)
    if n_max < len(table):
        return table[: n_max + 1].copy()
    out = np.empty(n_max + 1)
    out[: len(table)] = table
    slope = table[-1] - table[-2] if len(table) >= 2 else 0.0
    extra = np.arange(1, n_max - len(table) + 2)
    out[len(table):] = table[-1] + slope * extra
    return out


def _two_mode_bs_blocks(theta: float, phi: float, s_max: int):
    """Beamsplitter unitaries restricted to fixed n_i + n_j = s, s = 0..s_max.

    Block s is (s+1)x(s+1) in the basis n_i = 0..s (n_j = s - n_i); built by
    eigendecomposition of the Hermitian generator, so every block is unitary
    to machine precision for any sector.
    """
    blocks = []
    for s in range(s_max + 1):
        g = np.zeros((s + 1, s + 1), dtype=complex)
        for ni in range(1, s + 1):
            # <n_i - 1, n_j + 1| b_i b_j^dag |n_i, n_j> = sqrt(n_i (n_j + 1))
            amp = theta * np.exp(1j * phi) * np.sqrt(ni * (s - ni + 1))
            g[ni - 1, ni] = amp
            g[ni, ni - 1] = np.conj(amp)
        w, v = np.linalg.eigh(g)
        blocks.append((v * np.exp(-1j * w)) @ v.conj().T)
    return blocks


def beamsplitter_gate(
    basis: FockBasis, i: int, j: int, theta: float, phi: float = 0.0
) -> SectorOperator:
    """Two-mode beamsplitter exp(-i G), G = theta(e^{i phi} b_i b_j^dag + h.c.).

    Number conserving and exactly unitary on any sector basis: the generator
    block-diagonalizes over n_i + n_j, and each block is exponentiated by
    Hermitian eigendecomposition.
    """
    if i == j:
        raise ValueError("beamsplitter modes must differ")
    if not (0 <= i < basis.n_modes and 0 <= j < basis.n_modes):
        raise ValueError("mode index out of range")
    s_max = max(basis.sectors)
    blocks = _two_mode_bs_blocks(theta, phi, s_max)
    rows, cols, vals = [], [], []
    for col, occ in enumerate(basis.states):
        ni, nj = occ[i], occ[j]
        s = ni + nj
        block = blocks[s]
        for ni_out in range(s + 1):
            amp = block[ni_out, ni]
            if amp == 0.0:
                continue
            target = list(occ)
            target[i] = ni_out
            target[j] = s - ni_out
            rows.append(basis.index[tuple(target)])
            cols.append(col)
            vals.append(amp)
    mat = sp.csr_matrix(
        (vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex
    )
    return SectorOperator(basis, mat)


def number_phase_gate(basis: FockBasis, i: int, phase_table) -> SectorOperator:
    """Diagonal gate applying e^{i phi(n)} for n photons in mode i."""
    table = np.asarray(phase_table, dtype=float)
    if table.size == 0 or table[0] != 0.0:
        raise ValueError("phase table must start at phi(0) = 0")
    if not 0 <= i < basis.n_modes:
        raise ValueError("mode index out of range")
    full = extend_phase_table(table, max(basis.sectors))
    occ_i = basis.occupations()[:, i]
    diag = np.exp(1j * full[occ_i])
    return SectorOperator(basis, sp.diags(diag, format="csr"))


def linear_phase_gate(basis: FockBasis, i: int, Phi: float) -> SectorOperator:
    """Diagonal gate e^{i Phi n_i}; equals a number-phase gate with a linear
    table."""
    if not 0 <= i < basis.n_modes:
        raise ValueError("mode index out of range")
    occ_i = basis.occupations()[:, i]
    diag = np.exp(1j * Phi * occ_i)
    return SectorOperator(basis, sp.diags(diag, format="csr"))


def gate_matrix(desc: GateDescriptor, basis: FockBasis) -> SectorOperator:
    """Concrete SectorOperator for an abstract gate descriptor."""
    if desc.kind == "beamsplitter":
        return beamsplitter_gate(
            basis, desc.modes[0], desc.modes[1],
            desc.params["theta"], desc.params.get("phi", 0.0),
        )
    if desc.kind == "number_phase":
        return number_phase_gate(basis, desc.modes[0], desc.params["table"])
    return linear_phase_gate(basis, desc.modes[0], desc.params["Phi"])


def apply_gate(state, gate: SectorOperator):
    """U|psi> for StateVector input, U rho U^dag for DensityMatrix input."""
    if isinstance(state, StateVector):
        if state.basis is not gate.basis and state.basis.states != gate.basis.states:
            raise ValueError("basis mismatch between state and gate")
        return StateVector(state.basis, gate.entries @ state.amplitudes)
    if isinstance(state, DensityMatrix):
        if state.basis is not gate.basis and state.basis.states != gate.basis.states:
            raise ValueError("basis mismatch between state and gate")
        u = gate.entries
        return DensityMatrix(state.basis, u @ state.matrix @ u.conj().T.tocsr())
    raise TypeError(f"cannot apply gate to {type(state).__name__}")
