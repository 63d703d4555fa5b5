"""Rydberg Hamiltonians on the Ruby lattice as sparse operators.

Energies are in units of the Rabi frequency unless a different ``rabi`` is
passed. Matrix elements of the drive follow the triangle-block convention

    <g| H |r_i> = (rabi / 2) * exp(+i phase),

so that at ``phase = -pi/2`` the generator ``H'`` reproduces the X-string
duality with a ``+`` sign on the 4-state triangle block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .geometry import Lattice

__all__ = [
    "ModelParams",
    "BasisMode",
    "OccupationBasis",
    "SparseOperator",
    "OperatorError",
    "dual_params",
    "build_hamiltonian",
    "triangle_block",
    "build_dual_generator",
    "inter_triangle_couplings",
    "single_triangle_basis_block",
]


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    rabi: float = 1.0
    detuning: float = 0.0
    phase: float = 0.0
    blockade_radius: float = 2.4
    trunc_radius: float = math.sqrt(7.0)

    def __post_init__(self):
        if not self.rabi > 0:
            raise OperatorError(f"rabi must be positive, got {self.rabi}")
        if not self.blockade_radius > 0 or not self.trunc_radius > 0:
            raise OperatorError("blockade_radius and trunc_radius must be positive")

    def interaction(self, r: float) -> float:
        return self.rabi * (self.blockade_radius / r) ** 6


def dual_params(rabi: float = 1.0, blockade_radius: float = 1.53, trunc_radius: float = 1.0) -> ModelParams:
    """Parameters of the duality generator ``H'`` (no detuning, phase -pi/2)."""
    return ModelParams(rabi, 0.0, -math.pi / 2, blockade_radius, trunc_radius)


class BasisMode(str, Enum):
    FULL = "full"
    TRIANGLE = "triangle_restricted"


class OccupationBasis:
    """Occupation-number basis over the sites of a lattice.

    ``full`` mode uses bit ``i`` of the state index for site ``i``.
    ``triangle_restricted`` mode allows at most one excitation per triangle and
    stores triangle ``t`` as base-4 digit ``t`` of the index: 0 is the empty
    triangle and ``k + 1`` excites the triangle's ``k``-th site.
    """

    def __init__(self, lat: Lattice, mode=BasisMode.TRIANGLE):
        self.mode = BasisMode(mode)
        self.n_sites = lat.n_sites
        self.triangles = tuple(lat.triangles)
        if self.mode is BasisMode.FULL:
            if self.n_sites > 30:
                raise OperatorError(f"full basis with {self.n_sites} sites is too large")
            self.dim = 1 << self.n_sites
        else:
            if 4 ** len(self.triangles) > 2**31:
                raise OperatorError(f"{len(self.triangles)} triangles is too many")
            self.dim = 4 ** len(self.triangles)
        # (triangle, slot) for each site
        self.slot = np.empty((self.n_sites, 2), dtype=int)
        for t, tri in enumerate(self.triangles):
            for k, i in enumerate(tri):
                self.slot[i] = (t, k)
        self._occ = None

    def __repr__(self):
        return f"OccupationBasis(mode={self.mode.value}, n_sites={self.n_sites}, dim={self.dim})"

    def __len__(self):
        return self.dim

    def matches(self, lat: Lattice) -> bool:
        return self.n_sites == lat.n_sites and self.triangles == tuple(lat.triangles)

    def site_occupation(self, i: int, states: np.ndarray | None = None) -> np.ndarray:
        """``n_i`` for every basis state (or for the given state indices)."""
        s = np.arange(self.dim, dtype=np.int64) if states is None else np.asarray(states, np.int64)
        if self.mode is BasisMode.FULL:
            return ((s >> i) & 1).astype(np.int8)
        t, k = self.slot[i]
        return (((s >> (2 * t)) & 3) == k + 1).astype(np.int8)

    def occupations(self) -> np.ndarray:
        """Dense ``(dim, n_sites)`` int8 occupation table, cached."""
        if self._occ is None:
            occ = np.empty((self.dim, self.n_sites), dtype=np.int8)
            for i in range(self.n_sites):
                occ[:, i] = self.site_occupation(i)
            self._occ = occ
        return self._occ

    def raise_site(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Index pairs ``(src, dst)`` with ``b_i^dagger |src> = |dst>`` inside the basis."""
        s = np.arange(self.dim, dtype=np.int64)
        if self.mode is BasisMode.FULL:
            src = s[((s >> i) & 1) == 0]
            return src, src | (1 << i)
        t, k = self.slot[i]
        src = s[((s >> (2 * t)) & 3) == 0]
        return src, src + ((k + 1) << (2 * t))

    def state_index(self, excited) -> int:
        """Basis index of the configuration with the given excited sites."""
        idx = 0
        for i in excited:
            if self.mode is BasisMode.FULL:
                idx |= 1 << i
            else:
                t, k = self.slot[i]
                if (idx >> (2 * t)) & 3:
                    raise OperatorError(f"triangle {t} doubly excited")
                idx += (k + 1) << (2 * t)
        return idx


@dataclass(frozen=True)
class SparseOperator:
    matrix: sp.csr_matrix
    hermitian: bool = True

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, v):
        return self.matrix @ v

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermiticity_error(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    def to_coo_text(self) -> str:
        """One ``row col re im`` line per stored entry."""
        m = self.matrix.tocoo()
        vals = np.asarray(m.data, dtype=complex)
        lines = [f"# dim {self.dimension} hermitian {int(self.hermitian)}"]
        for r, c, v in zip(m.row, m.col, vals):
            lines.append(f"{r} {c} {v.real:.17g} {v.imag:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_coo_text(cls, text: str) -> "SparseOperator":
        rows, cols, vals = [], [], []
        dim, herm = None, True
        for line in text.splitlines():
            if line.startswith("#"):
                parts = line.split()
                dim, herm = int(parts[2]), bool(int(parts[4]))
                continue
            if not line.strip():
                continue
            r, c, re, im = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(re) + 1j * float(im))
        m = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
        return cls(m, herm)


def _is_real_phase(phase: float) -> bool:
    return abs(math.remainder(phase, 2 * math.pi)) < 1e-15


def _diagonal(lat: Lattice, params: ModelParams, basis: OccupationBasis) -> np.ndarray:
    occ = basis.occupations()
    diag = -(params.detuning * occ.astype(float)) @ np.asarray(lat.detuning_scale, float)
    for i, j, r in lat.pairs_within(params.trunc_radius):
        v = params.interaction(r)
        if basis.mode is BasisMode.TRIANGLE and basis.slot[i][0] == basis.slot[j][0]:
            continue  # never both occupied
        diag = diag + v * (occ[:, i] & occ[:, j])
    return diag


def _rabi_part(params: ModelParams, basis: OccupationBasis, real: bool) -> sp.csr_matrix:
    dtype = float if real else complex
    up = params.rabi / 2 * (1.0 if real else np.exp(1j * params.phase))
    rows, cols, vals = [], [], []
    for i in range(basis.n_sites):
        src, dst = basis.raise_site(i)
        # <g|H|r> = up  and  <r|H|g> = conj(up)
        rows += [src, dst]
        cols += [dst, src]
        vals += [np.full(src.size, up, dtype), np.full(src.size, np.conj(up), dtype)]
    if not rows:
        return sp.csr_matrix((basis.dim, basis.dim), dtype=dtype)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
        dtype=dtype,
    )


def build_hamiltonian(lat: Lattice, params: ModelParams, basis: OccupationBasis) -> SparseOperator:
    """Rabi drive, site-dependent detuning and truncated van der Waals tail.

    The detuning at site ``i`` is ``params.detuning * lat.detuning_scale[i]``;
    pairs interact when ``r_ij <= params.trunc_radius``. With ``phase == 0``
    the matrix is stored as real.
    """
    if not basis.matches(lat):
        raise OperatorError("basis was built for a different lattice")
    real = _is_real_phase(params.phase)
    h = _rabi_part(params, basis, real)
    h = h + sp.diags(_diagonal(lat, params, basis).astype(h.dtype), format="csr")
    h = h.tocsr()
    h.sum_duplicates()
    h.eliminate_zeros()
    return SparseOperator(h, True)


def triangle_block(params: ModelParams) -> SparseOperator:
    """Rabi part on one triangle in the basis ``{g, r1, r2, r3}``."""
    m = np.zeros((4, 4), dtype=complex)
    m[0, 1:] = params.rabi / 2 * np.exp(1j * params.phase)
    m[1:, 0] = params.rabi / 2 * np.exp(-1j * params.phase)
    return SparseOperator(sp.csr_matrix(m), True)


def inter_triangle_couplings(lat: Lattice, params: ModelParams) -> list[tuple[int, int, float]]:
    tri = lat.triangle_of()
    return [(i, j, r) for i, j, r in lat.pairs_within(params.trunc_radius) if tri[i] != tri[j]]


def build_dual_generator(lat: Lattice, params: ModelParams | None = None, basis: OccupationBasis | None = None) -> SparseOperator:
    """``H'``: zero detuning, phase ``-pi/2``, and the short-range interaction.

    Only ``rabi``, ``blockade_radius`` and ``trunc_radius`` are taken from
    ``params`` (default :func:`dual_params`).
    """
    p = dual_params() if params is None else replace(params, detuning=0.0, phase=-math.pi / 2)
    if basis is None:
        basis = OccupationBasis(lat)
    return build_hamiltonian(lat, p, basis)


def single_triangle_basis_block(lat: Lattice, t: int, params: ModelParams, mode=BasisMode.TRIANGLE) -> np.ndarray:
    """Dense local Hamiltonian of triangle ``t`` (detuning included).

    ``triangle_restricted`` gives the 4x4 block on ``{g, r1, r2, r3}``;
    ``full`` gives the 8x8 block with local index ``n0 + 2 n1 + 4 n2``.
    """
    tri = list(lat.triangles[t])
    scale = np.asarray(lat.detuning_scale, float)[tri]
    up = params.rabi / 2 * np.exp(1j * params.phase)
    if BasisMode(mode) is BasisMode.TRIANGLE:
        m = np.zeros((4, 4), dtype=complex)
        m[0, 1:] = up
        m[1:, 0] = np.conj(up)
        m[np.arange(1, 4), np.arange(1, 4)] = -params.detuning * scale
        return m
    dist = lat.distances()
    m = np.zeros((8, 8), dtype=complex)
    for s in range(8):
        n = [(s >> k) & 1 for k in range(3)]
        m[s, s] = -params.detuning * float(np.dot(n, scale))
        for a in range(3):
            for b in range(a + 1, 3):
                r = float(dist[tri[a], tri[b]])
                if n[a] and n[b] and r <= params.trunc_radius + 1e-12:
                    m[s, s] += params.interaction(r)
            if not n[a]:
                m[s, s | (1 << a)] = up
                m[s | (1 << a), s] = np.conj(up)
    return m
