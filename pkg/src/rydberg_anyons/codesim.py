"""Ideal-limit oracle: a punctured planar surface code simulated with a tableau.

Qubits sit on the edges of a ``width x height`` block of square faces. Star
(X) checks live on vertices and plaquette (Z) checks on faces. A *rough* side
drops its perimeter edges, and every vertex touching a dropped edge loses its
star; Z strings can end there. On a *smooth* side the edges remain, and X
strings can leave through them. Punctures are rectangular holes whose sides
are individually rough or smooth.

State evolution uses a stabilizer tableau with destabilizers, with the
Clifford update rules and Pauli measurement of Aaronson and Gottesman.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .observables import GroundStateLabel, StringMeasurement, classify_ground_state

__all__ = [
    "CodeSimError",
    "Pauli",
    "PunctureLayout",
    "PatchSpec",
    "CodePatch",
    "StabilizerTableau",
    "DenseState",
    "ProtocolStep",
    "ProtocolScript",
    "gf2_rank",
    "gf2_nullspace",
    "connector_eigenstate",
    "log_to_jsonl",
    "loop_operators",
    "build_patch",
    "apply_controlled_string",
    "run_protocol",
    "measure_table1_signature",
    "table1_states",
    "two_puncture_prep_script",
]

SIDES = ("left", "right", "bottom", "top")


class CodeSimError(ValueError):
    pass


# ------------------------------------------------------------------ Paulis


@dataclass(frozen=True)
class Pauli:
    """Signed Pauli on ``n`` qubits: ``(-1)^sign * prod_q P_q``.

    ``x[q] = z[q] = 1`` stands for ``Y_q``.
    """

    x: np.ndarray
    z: np.ndarray
    sign: int = 0

    @classmethod
    def from_support(cls, n: int, xs=(), zs=(), sign: int = 0) -> "Pauli":
        x = np.zeros(n, dtype=np.uint8)
        z = np.zeros(n, dtype=np.uint8)
        for q in xs:
            x[q] ^= 1
        for q in zs:
            z[q] ^= 1
        return cls(x, z, sign)

    @classmethod
    def from_string(cls, s: str, sign: int = 0) -> "Pauli":
        x = np.array([c in "XY" for c in s], dtype=np.uint8)
        z = np.array([c in "ZY" for c in s], dtype=np.uint8)
        return cls(x, z, sign)

    @property
    def n(self) -> int:
        return self.x.size

    def commutes(self, other: "Pauli") -> bool:
        return not (int(self.x @ other.z) + int(self.z @ other.x)) % 2

    def weight(self) -> int:
        return int(np.count_nonzero(self.x | self.z))

    def __str__(self):
        letters = "".join("IXZY"[int(a) + 2 * int(b)] for a, b in zip(self.x, self.z))
        return ("-" if self.sign else "+") + letters


def gf2_nullspace(M: np.ndarray) -> np.ndarray:
    """Basis (rows) of ``{v : M v = 0 mod 2}``."""
    A = np.array(M, dtype=np.uint8) % 2
    rows, cols = A.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        piv = np.flatnonzero(A[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        A[[r, p]] = A[[p, r]]
        hit = np.flatnonzero(A[:, c])
        hit = hit[hit != r]
        A[hit] ^= A[r]
        pivots.append(c)
        r += 1
    free = [c for c in range(cols) if c not in set(pivots)]
    basis = []
    for f in free:
        v = np.zeros(cols, dtype=np.uint8)
        v[f] = 1
        for i, c in enumerate(pivots):
            v[c] = A[i, f]
        basis.append(v)
    return np.array(basis, dtype=np.uint8).reshape(len(basis), cols)


def gf2_rank(M: np.ndarray) -> int:
    """Rank over GF(2) by Gaussian elimination on packed rows."""
    A = np.array(M, dtype=np.uint8) % 2
    if A.size == 0:
        return 0
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        piv = np.flatnonzero(A[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        A[[r, p]] = A[[p, r]]
        hit = np.flatnonzero(A[:, c])
        hit = hit[hit != r]
        A[hit] ^= A[r]
        r += 1
        if r == rows:
            break
    return r


# ------------------------------------------------------------------ tableau


def _g(x1, z1, x2, z2):
    """Power of ``i`` picked up when multiplying single-qubit Paulis."""
    x1 = x1.astype(np.int8)
    z1 = z1.astype(np.int8)
    x2 = x2.astype(np.int8)
    z2 = z2.astype(np.int8)
    out = np.zeros(np.broadcast(x1, x2).shape, dtype=np.int8)
    y = (x1 == 1) & (z1 == 1)
    xo = (x1 == 1) & (z1 == 0)
    zo = (x1 == 0) & (z1 == 1)
    out = np.where(y, z2 - x2, out)
    out = np.where(xo, z2 * (2 * x2 - 1), out)
    out = np.where(zo, x2 * (1 - 2 * z2), out)
    return out


class StabilizerTableau:
    """Stabilizer state on ``n`` qubits, initialised to ``|0...0>``.

    Rows ``0..n-1`` are destabilizers and rows ``n..2n-1`` stabilizers.
    Measurement randomness comes from ``numpy.random.default_rng(seed)``.
    """

    def __init__(self, n: int, seed: int | None = 0):
        self.n = n
        self.x = np.zeros((2 * n, n), dtype=np.uint8)
        self.z = np.zeros((2 * n, n), dtype=np.uint8)
        self.r = np.zeros(2 * n, dtype=np.uint8)
        self.x[np.arange(n), np.arange(n)] = 1
        self.z[n + np.arange(n), np.arange(n)] = 1
        self.rng = np.random.default_rng(seed)

    def copy(self, seed: int | None = None) -> "StabilizerTableau":
        t = StabilizerTableau.__new__(StabilizerTableau)
        t.n = self.n
        t.x, t.z, t.r = self.x.copy(), self.z.copy(), self.r.copy()
        t.rng = np.random.default_rng(seed) if seed is not None else self.rng
        return t

    # -- validity
    def stabilizers(self) -> list[Pauli]:
        n = self.n
        return [Pauli(self.x[i].copy(), self.z[i].copy(), int(self.r[i])) for i in range(n, 2 * n)]

    def check(self) -> bool:
        """Symplectic validity: the commutation form equals the standard one."""
        X = self.x.astype(np.int64)
        Z = self.z.astype(np.int64)
        form = (X @ Z.T + Z @ X.T) % 2
        n = self.n
        want = np.zeros((2 * n, 2 * n), dtype=np.int64)
        want[np.arange(n), n + np.arange(n)] = 1
        want[n + np.arange(n), np.arange(n)] = 1
        return bool(np.array_equal(form, want))

    # -- Clifford gates
    def h(self, a: int):
        self.r ^= self.x[:, a] & self.z[:, a]
        self.x[:, a], self.z[:, a] = self.z[:, a].copy(), self.x[:, a].copy()

    def s(self, a: int):
        self.r ^= self.x[:, a] & self.z[:, a]
        self.z[:, a] ^= self.x[:, a]

    def cnot(self, a: int, b: int):
        if a == b:
            raise CodeSimError("CNOT needs distinct qubits")
        self.r ^= self.x[:, a] & self.z[:, b] & (self.x[:, b] ^ self.z[:, a] ^ 1)
        self.x[:, b] ^= self.x[:, a]
        self.z[:, a] ^= self.z[:, b]

    def cz(self, a: int, b: int):
        self.h(b)
        self.cnot(a, b)
        self.h(b)

    def apply_pauli(self, p: Pauli):
        anti = (self.x.astype(np.int64) @ p.z + self.z.astype(np.int64) @ p.x) % 2
        self.r ^= anti.astype(np.uint8)

    # -- measurement
    def _rowsum(self, h: np.ndarray, i: int):
        """Rows ``h`` <- rows ``h`` * row ``i`` with sign tracking."""
        if h.size == 0:
            return
        gsum = _g(self.x[i][None, :], self.z[i][None, :], self.x[h], self.z[h]).sum(axis=1, dtype=np.int64)
        tot = (2 * self.r[h].astype(np.int64) + 2 * int(self.r[i]) + gsum) % 4
        self.r[h] = (tot == 2).astype(np.uint8)
        self.x[h] ^= self.x[i]
        self.z[h] ^= self.z[i]

    def _anti(self, p: Pauli) -> np.ndarray:
        return ((self.x.astype(np.int64) @ p.z + self.z.astype(np.int64) @ p.x) % 2).astype(bool)

    def _deterministic_sign(self, p: Pauli, anti: np.ndarray) -> int:
        n = self.n
        x = np.zeros(n, dtype=np.uint8)
        z = np.zeros(n, dtype=np.uint8)
        r = 0
        for i in np.flatnonzero(anti[:n]):
            k = n + i
            g = int(_g(self.x[k], self.z[k], x, z).sum())
            r = ((2 * r + 2 * int(self.r[k]) + g) % 4) // 2
            x ^= self.x[k]
            z ^= self.z[k]
        if not (np.array_equal(x, p.x) and np.array_equal(z, p.z)):
            raise CodeSimError("deterministic measurement failed to reconstruct the Pauli")
        return r ^ p.sign

    def expectation(self, p: Pauli) -> int:
        """``<P>``: +1 or -1 when determined, 0 when the outcome would be random."""
        anti = self._anti(p)
        if anti[self.n :].any():
            return 0
        return -1 if self._deterministic_sign(p, anti) else 1

    def measure(self, p: Pauli, forced: int | None = None) -> tuple[int, bool]:
        """Measure ``P``; returns ``(outcome +-1, deterministic)``.

        ``forced`` (+1 or -1) selects the branch of a random outcome.
        """
        n = self.n
        anti = self._anti(p)
        stab = np.flatnonzero(anti[n:])
        if stab.size == 0:
            bit = self._deterministic_sign(p, anti)
            if forced is not None and forced != (-1 if bit else 1):
                raise CodeSimError("forced outcome has zero probability")
            return (-1 if bit else 1), True
        q = n + stab[0]
        others = np.flatnonzero(anti)
        others = others[others != q]
        self._rowsum(others, q)
        self.x[q - n], self.z[q - n], self.r[q - n] = self.x[q], self.z[q], self.r[q]
        if forced is None:
            bit = int(self.rng.integers(2))
        else:
            bit = 0 if forced == 1 else 1
        self.x[q], self.z[q] = p.x.copy(), p.z.copy()
        self.r[q] = bit ^ p.sign
        return (-1 if bit else 1), False

    def project(self, p: Pauli, value: int = 1):
        """Force the state into the ``value`` eigenspace of ``P``.

        Raises when ``P`` is already fixed to the opposite value.
        """
        out, det = self.measure(p, forced=value)
        return out


# ------------------------------------------------------------ dense oracle


class DenseState:
    """State-vector simulator for small instances; qubit ``q`` is bit ``q``."""

    def __init__(self, n: int, seed: int | None = 0):
        if n > 20:
            raise CodeSimError("dense oracle limited to 20 qubits")
        self.n = n
        self.psi = np.zeros(2**n, dtype=complex)
        self.psi[0] = 1
        self.idx = np.arange(2**n)
        self.rng = np.random.default_rng(seed)

    def _bits(self, mask_vec) -> int:
        return int(sum(1 << int(q) for q in np.flatnonzero(mask_vec)))

    def pauli_vector(self, p: Pauli, psi: np.ndarray | None = None) -> np.ndarray:
        psi = self.psi if psi is None else psi
        xm = self._bits(p.x)
        zm = self._bits(p.z)
        ny = int(np.count_nonzero(p.x & p.z))
        zpar = _popcount_parity(self.idx & zm)
        out = psi * (1 - 2 * zpar)
        out = out[self.idx ^ xm]
        return ((-1) ** p.sign) * (1j**ny) * out

    def apply_pauli(self, p: Pauli):
        self.psi = self.pauli_vector(p)

    def h(self, a):
        m = 1 << a
        lo = (self.idx & m) == 0
        v0 = self.psi[lo].copy()
        v1 = self.psi[self.idx[lo] | m].copy()
        self.psi[lo] = (v0 + v1) / np.sqrt(2)
        self.psi[self.idx[lo] | m] = (v0 - v1) / np.sqrt(2)

    def s(self, a):
        self.psi = np.where(self.idx & (1 << a), 1j * self.psi, self.psi)

    def cnot(self, a, b):
        sel = (self.idx >> a) & 1
        self.psi = self.psi[np.where(sel == 1, self.idx ^ (1 << b), self.idx)]

    def cz(self, a, b):
        both = ((self.idx >> a) & 1) & ((self.idx >> b) & 1)
        self.psi = np.where(both == 1, -self.psi, self.psi)

    def expectation(self, p: Pauli) -> float:
        return float(np.vdot(self.psi, self.pauli_vector(p)).real)

    def measure(self, p: Pauli, forced: int | None = None) -> tuple[int, float]:
        """Projective measurement; returns ``(outcome, probability)``."""
        ev = self.expectation(p)
        p_plus = (1 + ev) / 2
        if forced is None:
            out = 1 if self.rng.random() < p_plus else -1
        else:
            out = forced
        prob = p_plus if out == 1 else 1 - p_plus
        if prob < 1e-12:
            raise CodeSimError("outcome has zero probability")
        self.psi = (self.psi + out * self.pauli_vector(p)) / 2 / np.sqrt(prob)
        return out, prob


def _popcount_parity(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.int64).copy()
    par = np.zeros_like(a)
    while np.any(a):
        par ^= a & 1
        a >>= 1
    return par


# ------------------------------------------------------------------ layout


@dataclass(frozen=True)
class PunctureLayout:
    """Hole covering faces ``[x0, x1) x [y0, y1)``.

    ``rough`` lists the rough sides; the rest are smooth. The default
    (left and bottom rough) gives a mixed-boundary puncture.
    """

    x0: int
    y0: int
    x1: int | None = None
    y1: int | None = None
    rough: tuple[str, ...] = ("left", "bottom")

    def __post_init__(self):
        if self.x1 is None:
            object.__setattr__(self, "x1", self.x0 + 1)
        if self.y1 is None:
            object.__setattr__(self, "y1", self.y0 + 1)
        object.__setattr__(self, "rough", tuple(self.rough))
        if set(self.rough) - set(SIDES):
            raise CodeSimError(f"unknown side in {self.rough}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise CodeSimError("empty puncture")

    @property
    def faces(self) -> set:
        return {(x, y) for x in range(self.x0, self.x1) for y in range(self.y0, self.y1)}

    def side_edges(self) -> dict[str, list[tuple]]:
        return {
            "left": [("v", self.x0, y) for y in range(self.y0, self.y1)],
            "right": [("v", self.x1, y) for y in range(self.y0, self.y1)],
            "bottom": [("h", x, self.y0) for x in range(self.x0, self.x1)],
            "top": [("h", x, self.y1) for x in range(self.x0, self.x1)],
        }

    @property
    def mixed(self) -> bool:
        return 0 < len(self.rough) < 4


@dataclass(frozen=True)
class PatchSpec:
    width: int = 9
    height: int = 5
    outer: tuple[tuple[str, str], ...] = (("left", "rough"), ("right", "rough"), ("bottom", "rough"), ("top", "rough"))
    punctures: tuple[PunctureLayout, ...] = (PunctureLayout(2, 2), PunctureLayout(6, 2))
    n_ancillas: int = 2

    def outer_type(self, side: str) -> str:
        return dict(self.outer)[side]

    @classmethod
    def from_dict(cls, d: dict) -> "PatchSpec":
        outer = d.get("outer", "rough")
        if isinstance(outer, str):
            outer = {s: outer for s in SIDES}
        pun = tuple(PunctureLayout(**p) for p in d.get("punctures", []))
        return cls(
            int(d.get("width", 9)),
            int(d.get("height", 5)),
            tuple((s, outer[s]) for s in SIDES),
            pun,
            int(d.get("n_ancillas", 2)),
        )

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "outer": dict(self.outer),
            "punctures": [
                {"x0": p.x0, "y0": p.y0, "x1": p.x1, "y1": p.y1, "rough": list(p.rough)} for p in self.punctures
            ],
            "n_ancillas": self.n_ancillas,
        }


def _face_edges(f):
    x, y = f
    return [("h", x, y), ("h", x, y + 1), ("v", x, y), ("v", x + 1, y)]


def _ends(e):
    t, x, y = e
    return [(x, y), (x + 1, y)] if t == "h" else [(x, y), (x, y + 1)]


@dataclass
class CodePatch:
    spec: PatchSpec
    edges: list
    index: dict
    stars: list
    plaquettes: list
    rough_vertices: dict  # puncture id -> vertices where Z strings may end
    smooth_edges: dict  # puncture id -> present perimeter edges
    operators: dict = field(default_factory=dict)
    logical_count: int = 0
    fixed_logicals: list = field(default_factory=list)

    @property
    def n_code(self) -> int:
        return len(self.edges)

    @property
    def n_qubits(self) -> int:
        return self.n_code + self.spec.n_ancillas

    def ancilla(self, k: int) -> int:
        if not 0 <= k < self.spec.n_ancillas:
            raise CodeSimError(f"no ancilla {k}")
        return self.n_code + k

    def generators(self) -> list[Pauli]:
        n = self.n_qubits
        return [Pauli.from_support(n, xs=s) for s in self.stars] + [
            Pauli.from_support(n, zs=p) for p in self.plaquettes
        ]

    def pauli_on_edges(self, xe=(), ze=(), sign: int = 0) -> Pauli:
        try:
            return Pauli.from_support(
                self.n_qubits, [self.index[e] for e in xe], [self.index[e] for e in ze], sign
            )
        except KeyError as exc:
            raise CodeSimError(f"edge {exc.args[0]} is not a qubit of this patch") from None

    def operator(self, name: str) -> Pauli:
        try:
            return self.operators[name]
        except KeyError:
            raise CodeSimError(f"unknown operator {name!r}; have {sorted(self.operators)}") from None


def _build_layout(spec: PatchSpec):
    W, H = spec.width, spec.height
    faces = {(x, y) for x in range(W) for y in range(H)}
    edges = set()
    for f in faces:
        edges.update(_face_edges(f))
    removed_edges, removed_faces, removed_verts = set(), set(), set()
    for x in range(W):
        if spec.outer_type("bottom") == "rough":
            removed_edges.add(("h", x, 0))
        if spec.outer_type("top") == "rough":
            removed_edges.add(("h", x, H))
    for y in range(H):
        if spec.outer_type("left") == "rough":
            removed_edges.add(("v", 0, y))
        if spec.outer_type("right") == "rough":
            removed_edges.add(("v", W, y))
    hole_rough_edges = {}
    for k, p in enumerate(spec.punctures):
        hf = p.faces
        if not hf <= faces:
            raise CodeSimError(f"puncture {k} leaves the patch")
        if p.x0 < 1 or p.y0 < 1 or p.x1 > W - 1 or p.y1 > H - 1:
            raise CodeSimError(f"puncture {k} touches the outer boundary")
        removed_faces |= hf
        sides = p.side_edges()
        rough = set()
        for side in p.rough:
            rough.update(sides[side])
        hole_rough_edges[k] = rough
        removed_edges |= rough
        # edges between two hole faces, and vertices strictly inside
        cnt = {}
        for f in hf:
            for e in _face_edges(f):
                cnt[e] = cnt.get(e, 0) + 1
        removed_edges |= {e for e, c in cnt.items() if c == 2}
        removed_verts |= {(x, y) for x in range(p.x0 + 1, p.x1) for y in range(p.y0 + 1, p.y1)}
    # punctures must not touch each other
    for (a, pa), (b, pb) in itertools.combinations(enumerate(spec.punctures), 2):
        grow = {(x, y) for x in range(pa.x0 - 1, pa.x1 + 1) for y in range(pa.y0 - 1, pa.y1 + 1)}
        if grow & pb.faces:
            raise CodeSimError(f"punctures {a} and {b} overlap or touch")
    edges -= removed_edges
    faces -= removed_faces
    for e in removed_edges:
        removed_verts.update(_ends(e))
    return faces, edges, removed_verts, hole_rough_edges


def build_patch(spec: PatchSpec = PatchSpec(), seed: int = 0) -> tuple[CodePatch, StabilizerTableau]:
    """Code patch plus a tableau in ``|I>`` with ancillas in ``|0>``.

    ``|I>`` fixes, in order, ``Z_C`` and ``X_C`` of each puncture, and keeps
    those that are independent of the code checks and of earlier choices.
    """
    faces, edges, removed_verts, hole_rough = _build_layout(spec)
    verts = {v for e in edges for v in _ends(e)}
    ordered = sorted(edges)
    index = {e: i for i, e in enumerate(ordered)}
    stars = []
    for v in sorted(verts - removed_verts):
        stars.append([index[e] for e in ordered if v in _ends(e)])
    plaqs = [[index[e] for e in _face_edges(f) if e in index] for f in sorted(faces)]
    # prune qubits that carry no check
    used = {q for s in stars + plaqs for q in s}
    keep = [e for e in ordered if index[e] in used]
    return _finish(spec, keep, faces, removed_verts, hole_rough, seed)


def _finish(spec, ordered, faces, removed_verts, hole_rough, seed):
    index = {e: i for i, e in enumerate(ordered)}
    edge_set = set(ordered)
    verts = {v for e in ordered for v in _ends(e)}
    stars = [[index[e] for e in ordered if v in _ends(e)] for v in sorted(verts - removed_verts)]
    plaqs = [[index[e] for e in _face_edges(f) if e in index] for f in sorted(faces)]
    rough_vertices, smooth_edges = {}, {}
    for k, p in enumerate(spec.punctures):
        rough_vertices[k] = sorted({v for e in hole_rough[k] for v in _ends(e)} & verts)
        smooth_edges[k] = [e for side, es in p.side_edges().items() if side not in p.rough for e in es if e in edge_set]
    patch = CodePatch(spec, ordered, index, stars, plaqs, rough_vertices, smooth_edges)

    gens = patch.generators()
    n = patch.n_code
    G = np.array([np.concatenate([g.x[:n], g.z[:n]]) for g in gens], dtype=np.uint8)
    rank = gf2_rank(G) if len(gens) else 0
    patch.logical_count = n - rank

    _define_operators(patch, faces)

    tab = StabilizerTableau(patch.n_qubits, seed)
    for g in gens:
        tab.project(g, +1)
    # fix logical operators until the state is unique on the code qubits
    chosen = [np.concatenate([g.x[:n], g.z[:n]]) for g in gens]
    fixed = []
    order = []
    for k in range(len(spec.punctures)):
        order += [f"Z_C@p{k + 1}", f"X_C@p{k + 1}"]
    for name in order:
        if name not in patch.operators or rank == n:
            continue
        P = patch.operators[name]
        v = np.concatenate([P.x[:n], P.z[:n]])
        if not all(P.commutes(Q) for Q in fixed):
            continue
        if gf2_rank(np.vstack(chosen + [v])) > rank:
            tab.project(P, +1)
            chosen.append(v)
            fixed.append(P)
            rank += 1
    if rank < n:
        # remaining freedom: fix Z-type logicals, which all commute
        star_mat = np.zeros((len(patch.stars), n), dtype=np.uint8)
        for i, st in enumerate(patch.stars):
            star_mat[i, st] = 1
        for zv in gf2_nullspace(star_mat) if len(patch.stars) else np.eye(n, dtype=np.uint8):
            if rank == n:
                break
            P = Pauli.from_support(patch.n_qubits, zs=np.flatnonzero(zv))
            v = np.concatenate([P.x[:n], P.z[:n]])
            if all(P.commutes(Q) for Q in fixed) and gf2_rank(np.vstack(chosen + [v])) > rank:
                tab.project(P, +1)
                chosen.append(v)
                fixed.append(P)
                rank += 1
    patch.fixed_logicals = fixed
    if rank != n:
        raise CodeSimError(f"could not fix a unique |I> ({n - rank} logical qubits left)")
    return patch, tab


def _hloop(x0, y0, x1, y1):
    es = [("h", x, y0) for x in range(x0, x1)] + [("h", x, y1) for x in range(x0, x1)]
    es += [("v", x0, y) for y in range(y0, y1)] + [("v", x1, y) for y in range(y0, y1)]
    return es


def _dloop(x0, y0, x1, y1):
    # edges crossed by a dual loop through the ring of faces just inside the rectangle
    es = []
    for x in range(x0, x1 - 1):
        es += [("v", x + 1, y0), ("v", x + 1, y1 - 1)]
    for y in range(y0, y1 - 1):
        es += [("h", x0, y + 1), ("h", x1 - 1, y + 1)]
    return es


def loop_operators(patch: CodePatch, k: int, margin: int = 1) -> tuple[Pauli, Pauli]:
    """``(Z_C, X_C)`` on loops ``margin`` faces away from puncture ``k``."""
    p = patch.spec.punctures[k]
    box = (p.x0 - margin, p.y0 - margin, p.x1 + margin, p.y1 + margin)
    return patch.pauli_on_edges(ze=_hloop(*box)), patch.pauli_on_edges(xe=_dloop(*box))


def _z_connector(patch: CodePatch, a: int, b: int, forbid=frozenset()):
    """Shortest primal edge path from a rough vertex of ``a`` to one of ``b``."""
    starts = set(patch.rough_vertices[a])
    goals = set(patch.rough_vertices[b])
    adj = {}
    for e in patch.edges:
        if e in forbid:
            continue
        u, v = _ends(e)
        adj.setdefault(u, []).append((v, e))
        adj.setdefault(v, []).append((u, e))
    prev = {s: None for s in starts}
    dq = deque(sorted(starts))
    while dq:
        u = dq.popleft()
        if u in goals:
            path = []
            while prev[u] is not None:
                u, e = prev[u]
                path.append(e)
            return path
        for v, e in sorted(adj.get(u, [])):
            if v not in prev:
                prev[v] = (u, e)
                dq.append(v)
    return None


def _x_connector(patch: CodePatch, a: int, b: int, faces, forbid=frozenset()):
    """Edges crossed by a dual path from hole ``a`` to hole ``b`` through smooth sides."""
    hole = {k: p.faces for k, p in enumerate(patch.spec.punctures)}
    node_of = {}
    for f in faces:
        node_of[f] = f
    for k, fs in hole.items():
        for f in fs:
            node_of[f] = ("hole", k)
    adj = {}
    for e in patch.edges:
        if e in forbid:
            continue
        t, x, y = e
        f1, f2 = ((x, y - 1), (x, y)) if t == "h" else ((x - 1, y), (x, y))
        if f1 in node_of and f2 in node_of:
            n1, n2 = node_of[f1], node_of[f2]
            if n1 != n2:
                adj.setdefault(n1, []).append((n2, e))
                adj.setdefault(n2, []).append((n1, e))
    start, goal = ("hole", a), ("hole", b)
    prev = {start: None}
    dq = deque([start])
    while dq:
        u = dq.popleft()
        if u == goal:
            path = []
            while prev[u] is not None:
                u, e = prev[u]
                path.append(e)
            return path
        for v, e in sorted(adj.get(u, []), key=str):
            if v not in prev and (v == goal or not (isinstance(v, tuple) and v[0] == "hole")):
                prev[v] = (u, e)
                dq.append(v)
    return None


def _define_operators(patch: CodePatch, faces) -> None:
    ops = patch.operators
    for k, p in enumerate(patch.spec.punctures):
        try:
            zc, xc = loop_operators(patch, k)
        except CodeSimError:
            continue
        ops[f"Z_C@p{k + 1}"] = zc
        ops[f"X_C@p{k + 1}"] = xc
    for k in range(len(patch.spec.punctures) - 1):
        a, b = k, k + 1
        zpath = _z_connector(patch, a, b)
        if zpath is None:
            continue
        xpath = _x_connector(patch, a, b, faces, forbid=frozenset(zpath))
        if xpath is None:
            xpath = _x_connector(patch, a, b, faces)
        if xpath is None:
            continue
        Z = patch.pauli_on_edges(ze=zpath)
        X = patch.pauli_on_edges(xe=xpath)
        if not Z.commutes(X):
            raise CodeSimError("could not route commuting connector strings")
        ops[f"Z_S@p{a + 1}-p{b + 1}"] = Z
        ops[f"X_S@p{a + 1}-p{b + 1}"] = X
    # short aliases for the first pair
    for long, short in (("Z_C@p1", "Z_C"), ("X_C@p1", "X_C"), ("Z_S@p1-p2", "Z_S"), ("X_S@p1-p2", "X_S")):
        if long in ops:
            ops[short] = ops[long]


# ---------------------------------------------------------------- protocol


def apply_controlled_string(tab: StabilizerTableau, ancilla: int, string: Pauli, kind: str | None = None):
    """Conjugate by the controlled Pauli string with control ``ancilla``.

    ``kind`` ("Z" or "X") checks that the string is of that pure type.
    """
    sx = np.flatnonzero(string.x)
    sz = np.flatnonzero(string.z)
    if kind == "Z" and sx.size:
        raise CodeSimError("Z string carries X components")
    if kind == "X" and sz.size:
        raise CodeSimError("X string carries Z components")
    if ancilla in set(sx) | set(sz):
        raise CodeSimError("control qubit lies on the string")
    for q in sz:
        if string.x[q]:
            raise CodeSimError("controlled Y components are not supported")
        tab.cz(ancilla, int(q))
    for q in sx:
        tab.cnot(ancilla, int(q))
    if string.sign:
        tab.s(ancilla)
        tab.s(ancilla)
    return tab


@dataclass(frozen=True)
class ProtocolStep:
    op: str
    args: dict

    def to_dict(self) -> dict:
        return {"op": self.op, **self.args}


_STEP_OPS = {"controlled_string", "apply", "measure", "bell", "gate"}


@dataclass
class ProtocolScript:
    steps: list

    @classmethod
    def from_json(cls, text: str) -> "ProtocolScript":
        data = json.loads(text)
        steps = []
        for i, s in enumerate(data.get("steps", [])):
            s = dict(s)
            op = s.pop("op", None)
            if op not in _STEP_OPS:
                raise CodeSimError(f"step {i}: unknown op {op!r}")
            steps.append(ProtocolStep(op, s))
        return cls(steps)

    def to_json(self) -> str:
        return json.dumps({"steps": [s.to_dict() for s in self.steps]}, indent=2)

    def validate(self, patch: CodePatch) -> None:
        for i, s in enumerate(self.steps):
            a = s.args
            if "ancilla" in a:
                patch.ancilla(int(a["ancilla"]))
            for anc in a.get("pair", []):
                patch.ancilla(int(anc))
            if "path" in a:
                patch.operator(a["path"])
            if s.op == "gate" and a.get("name") not in ("H", "S", "X", "Z", "CNOT", "CZ"):
                raise CodeSimError(f"step {i}: unknown gate {a.get('name')!r}")


def _resolve_qubit(patch: CodePatch, q) -> int:
    if isinstance(q, str) and q.startswith("a"):
        return patch.ancilla(int(q[1:]))
    return int(q)


def _word(patch: CodePatch, spec) -> Pauli:
    """A named operator, or ``{"a0": "X", "a1": "X"}`` style single-qubit map."""
    if isinstance(spec, str):
        return patch.operator(spec)
    n = patch.n_qubits
    xs, zs = [], []
    for q, letter in spec.items():
        qi = _resolve_qubit(patch, q)
        if letter in "XY":
            xs.append(qi)
        if letter in "ZY":
            zs.append(qi)
    return Pauli.from_support(n, xs, zs)


def run_protocol(script: ProtocolScript, patch: CodePatch, tab: StabilizerTableau, check: bool = True) -> list[dict]:
    """Execute the steps in order, mutating ``tab``; returns the outcome log.

    With ``check`` the tableau's symplectic validity is asserted after each step.
    """
    script.validate(patch)
    log = []
    for i, s in enumerate(script.steps):
        a = s.args
        if s.op == "controlled_string":
            P = patch.operator(a["path"])
            apply_controlled_string(tab, patch.ancilla(int(a["ancilla"])), P, a.get("kind"))
        elif s.op == "apply":
            tab.apply_pauli(_word(patch, a["path"] if "path" in a else a["word"]))
        elif s.op == "gate":
            qs = [_resolve_qubit(patch, q) for q in a["qubits"]]
            name = a["name"]
            if name in ("X", "Z"):
                tab.apply_pauli(Pauli.from_support(patch.n_qubits, qs if name == "X" else (), qs if name == "Z" else ()))
            else:
                getattr(tab, {"H": "h", "S": "s", "CNOT": "cnot", "CZ": "cz"}[name])(*qs)
        elif s.op == "measure":
            P = _word(patch, a.get("path", a.get("word")))
            out, det = tab.measure(P)
            log.append({"step": i, "operator": a.get("path", a.get("word")), "outcome": out, "deterministic": det})
        elif s.op == "bell":
            q1, q2 = (patch.ancilla(int(x)) for x in a["pair"])
            for letter in ("X", "Z"):
                P = Pauli.from_support(patch.n_qubits, (q1, q2) if letter == "X" else (), (q1, q2) if letter == "Z" else ())
                out, det = tab.measure(P)
                log.append(
                    {"step": i, "operator": f"{letter}_a{a['pair'][0]}{letter}_a{a['pair'][1]}", "outcome": out, "deterministic": det}
                )
        if check and not tab.check():  # pragma: no cover - internal consistency
            raise CodeSimError(f"tableau lost symplectic validity at step {i}")
    return log


def log_to_jsonl(log: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in log)


def two_puncture_prep_script(pair=(0, 1), z_path: str = "Z_S", x_path: str = "X_S") -> ProtocolScript:
    """Ancillas in ``(|01> + |10>)/sqrt 2``, controlled strings, Bell measurement.

    Ancilla ``pair[0]`` controls the X string and ``pair[1]`` the Z string.
    """
    a1, a2 = pair
    steps = [
        ProtocolStep("gate", {"name": "H", "qubits": [f"a{a1}"]}),
        ProtocolStep("gate", {"name": "CNOT", "qubits": [f"a{a1}", f"a{a2}"]}),
        ProtocolStep("gate", {"name": "X", "qubits": [f"a{a2}"]}),
        ProtocolStep("controlled_string", {"ancilla": a1, "path": x_path, "kind": "X"}),
        ProtocolStep("controlled_string", {"ancilla": a2, "path": z_path, "kind": "Z"}),
        ProtocolStep("bell", {"pair": [a1, a2]}),
    ]
    return ProtocolScript(steps)


# ------------------------------------------------------------ signatures


def measure_table1_signature(tab: StabilizerTableau, patch: CodePatch, names=("Z_C", "X_C", "Z_S", "X_S")) -> GroundStateLabel:
    """Deterministic outcomes give +-1, random outcomes 0; nearest table row."""
    vals = [tab.expectation(patch.operator(n)) for n in names]
    ms = [StringMeasurement.exact(v, n) for v, n in zip(vals, names)]
    return classify_ground_state(*ms, tol=1e-9)


def table1_states(patch: CodePatch, tab: StabilizerTableau, seed: int = 0) -> dict[str, StabilizerTableau]:
    """The six reference states built from a fresh ``|I>`` tableau.

    ``e`` and ``m`` apply ``X_S`` and ``Z_S``; ``plus`` and ``minus`` are
    joint eigenstates of the two connector strings, prepared by measuring
    each through an ancilla and correcting with a loop operator.
    """
    out = {"I": tab.copy(seed)}
    e = tab.copy(seed)
    e.apply_pauli(patch.operator("X_S"))
    out["e"] = e
    m = tab.copy(seed)
    m.apply_pauli(patch.operator("Z_S"))
    out["m"] = m
    eps = tab.copy(seed)
    eps.apply_pauli(patch.operator("X_S"))
    eps.apply_pauli(patch.operator("Z_S"))
    out["epsilon"] = eps
    for name, target in (("plus", 1), ("minus", -1)):
        t = tab.copy(seed)
        connector_eigenstate(t, patch, target, target)
        out[name] = t
    return out


def connector_eigenstate(tab: StabilizerTableau, patch: CodePatch, z_value: int, x_value: int, ancilla: int = 0):
    """Drive the code into ``Z_S = z_value``, ``X_S = x_value`` via an ancilla.

    Each connector is measured by preparing the ancilla in ``|+>``, applying the
    controlled string and measuring ``X_a``; a wrong outcome is fixed with the
    loop operator that anticommutes with that connector only.
    """
    a = patch.ancilla(ancilla)
    n = patch.n_qubits
    fixes = {"Z_S": "X_C", "X_S": "Z_C"}
    for name, want, kind in (("Z_S", z_value, "Z"), ("X_S", x_value, "X")):
        if tab.expectation(Pauli.from_support(n, zs=[a])) == -1:
            tab.apply_pauli(Pauli.from_support(n, xs=[a]))
        tab.h(a)
        apply_controlled_string(tab, a, patch.operator(name), kind)
        out, _ = tab.measure(Pauli.from_support(n, xs=[a]))
        if out != want:
            tab.apply_pauli(patch.operator(fixes[name]))
        # return the ancilla to |0>
        tab.h(a)
        if tab.measure(Pauli.from_support(n, zs=[a]))[0] == -1:
            tab.apply_pauli(Pauli.from_support(n, xs=[a]))
    return tab
