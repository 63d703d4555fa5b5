"""Ancilla-register algebra for braiding mixed-boundary punctures.

``2N + 2`` ancilla qubits ``a_1 .. a_{2N+2}`` (``a_1`` is the most significant
bit of a state index) carry the puncture state. The register is constrained by

    prod_i X_{a_i} = +1,    Z_{a_{2i-1}} Z_{a_{2i}} = -1   (i = 1 .. N+1),

leaving a ``2^N``-dimensional logical space spanned by products of Bell pairs
``|Psi^{sigma_i}>`` with an even number of minus signs. Exchanges of adjacent
punctures act as

    R_{i,i+1} = exp(+i pi/4 X_{a_i} X_{a_{i+1}})   for odd i,
    R_{i,i+1} = exp(-i pi/4 Z_{a_i} Z_{a_{i+1}})   for even i,

and the corresponding lattice operation is the transpose of the logical
matrix.
"""

from __future__ import annotations

import cmath
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = [
    "AnyonError",
    "PauliWord",
    "StabilizerSet",
    "LogicalBasis",
    "BraidGenerator",
    "BraidWord",
    "CompiledBraid",
    "AncillaRegister",
    "BellOutcome",
    "MAX_DENSE_N",
    "build_stabilizers",
    "logical_subspace",
    "braid_generator",
    "parse_braid",
    "compile_braid",
    "joint_lattice_action",
    "fusion_matrix",
    "global_phase",
    "controlled_z_decomposition",
    "bell_distribution",
    "prepare_logical",
]

MAX_DENSE_N = 6

_P = {
    "I": sp.identity(2, format="csr", dtype=complex),
    "X": sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex)),
    "Y": sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=complex)),
    "Z": sp.csr_matrix(np.array([[1, 0], [0, -1]], dtype=complex)),
}
_BELL = {
    "+": np.array([0, 1, 1, 0], dtype=complex) / math.sqrt(2),
    "-": np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2),
}


class AnyonError(ValueError):
    pass


def _check_n(N: int) -> None:
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise AnyonError(f"N must be a positive integer, got {N!r}")
    if N > MAX_DENSE_N:
        raise AnyonError(f"dense ancilla simulation is limited to N <= {MAX_DENSE_N}")


@dataclass(frozen=True)
class PauliWord:
    """Signed Pauli string; ``ops[0]`` acts on ``a_1``."""

    ops: str
    sign: int = 1

    def __post_init__(self):
        if set(self.ops) - set("IXYZ"):
            raise AnyonError(f"bad Pauli word {self.ops!r}")
        if self.sign not in (1, -1):
            raise AnyonError("sign must be +1 or -1")

    @classmethod
    def on(cls, n: int, sites: dict, sign: int = 1) -> "PauliWord":
        """``sites`` maps 1-based qubit index to a Pauli letter."""
        ops = ["I"] * n
        for q, p in sites.items():
            ops[q - 1] = p
        return cls("".join(ops), sign)

    @property
    def n_qubits(self) -> int:
        return len(self.ops)

    def commutes(self, other: "PauliWord") -> bool:
        anti = sum(1 for a, b in zip(self.ops, other.ops) if a != "I" and b != "I" and a != b)
        return anti % 2 == 0

    def matrix(self) -> sp.csr_matrix:
        m = sp.identity(1, format="csr", dtype=complex)
        for p in self.ops:
            m = sp.kron(m, _P[p], format="csr")
        return self.sign * m

    def __str__(self):
        return ("+" if self.sign > 0 else "-") + self.ops


@dataclass(frozen=True)
class StabilizerSet:
    N: int
    words: tuple[PauliWord, ...]

    def commuting(self) -> bool:
        return all(a.commutes(b) for a, b in itertools.combinations(self.words, 2))

    def projector(self) -> sp.csr_matrix:
        n = 2 * self.N + 2
        eye = sp.identity(2**n, format="csr", dtype=complex)
        P = eye
        for w in self.words:
            P = P @ ((eye + w.matrix()) / 2)
        return P.tocsr()


def build_stabilizers(N: int) -> StabilizerSet:
    """The ``N + 2`` constraints: global X parity and one ZZ per pair."""
    _check_n(N)
    n = 2 * N + 2
    words = [PauliWord("X" * n, 1)]
    for i in range(1, N + 2):
        words.append(PauliWord.on(n, {2 * i - 1: "Z", 2 * i: "Z"}, -1))
    return StabilizerSet(N, tuple(words))


@dataclass(frozen=True)
class LogicalBasis:
    """Columns of ``vectors`` are the logical basis states.

    Logical index ``k`` has binary digits ``sigma_1 .. sigma_N`` (most
    significant first, ``0 -> +``, ``1 -> -``); ``sigma_{N+1}`` fixes the parity.
    Each state carries the phase ``(-1)^(m/2)`` with ``m`` the number of minus
    signs, which makes the braid products below come out in standard form.
    """

    N: int
    labels: tuple[str, ...]
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T


@lru_cache(maxsize=None)
def _logical(N: int) -> LogicalBasis:
    labels, cols = [], []
    for bits in itertools.product("+-", repeat=N):
        last = "-" if bits.count("-") % 2 else "+"
        sig = "".join(bits) + last
        v = np.ones(1, dtype=complex)
        for s in sig:
            v = np.kron(v, _BELL[s])
        labels.append(sig)
        cols.append((-1) ** (sig.count("-") // 2) * v)
    return LogicalBasis(N, tuple(labels), np.column_stack(cols))


def logical_subspace(N: int) -> LogicalBasis:
    _check_n(N)
    return _logical(N)


@dataclass(frozen=True)
class BraidGenerator:
    N: int
    i: int
    exponent: int = 1

    def __post_init__(self):
        if not 1 <= self.i <= 2 * self.N + 1:
            raise AnyonError(f"generator index {self.i} outside [1, {2 * self.N + 1}]")
        if self.exponent not in (1, -1):
            raise AnyonError("exponent must be +1 or -1")

    @property
    def pair(self) -> tuple[int, int]:
        return self.i, self.i + 1

    @property
    def pauli(self) -> PauliWord:
        p = "X" if self.i % 2 else "Z"
        return PauliWord.on(2 * self.N + 2, {self.i: p, self.i + 1: p})

    @property
    def angle(self) -> float:
        return (math.pi / 4 if self.i % 2 else -math.pi / 4) * self.exponent

    def matrix(self) -> sp.csr_matrix:
        """``cos(theta) I + i sin(theta) P``, exact since ``P^2 = I``."""
        P = self.pauli.matrix()
        eye = sp.identity(P.shape[0], format="csr", dtype=complex)
        return (math.cos(self.angle) * eye + 1j * math.sin(self.angle) * P).tocsr()

    def __str__(self):
        return f"R{self.i}" + ("^-1" if self.exponent < 0 else "")


def braid_generator(N: int, i: int, exponent: int = 1) -> BraidGenerator:
    _check_n(N)
    return BraidGenerator(N, i, exponent)


@dataclass(frozen=True)
class BraidWord:
    N: int
    generators: tuple[BraidGenerator, ...] = ()

    def __str__(self):
        return " ".join(str(g) for g in self.generators)

    def matrix(self) -> sp.csr_matrix:
        """Product in written order: ``R1 R2`` is the matrix ``R1 @ R2``."""
        m = sp.identity(2 ** (2 * self.N + 2), format="csr", dtype=complex)
        for g in self.generators:
            m = m @ g.matrix()
        return m.tocsr()


_TOKEN = re.compile(r"^R(\d+)(\^-1|\^1)?$")


def parse_braid(text: str, N: int) -> BraidWord:
    """Parse whitespace-separated ``R{i}`` / ``R{i}^-1`` tokens."""
    _check_n(N)
    gens = []
    for tok in text.split():
        m = _TOKEN.match(tok)
        if not m:
            raise AnyonError(f"cannot parse braid token {tok!r}")
        gens.append(BraidGenerator(N, int(m.group(1)), -1 if m.group(2) == "^-1" else 1))
    return BraidWord(N, tuple(gens))


def global_phase(m: np.ndarray) -> float:
    """Argument of the first (row-major) entry of maximal modulus."""
    a = np.abs(m)
    idx = np.flatnonzero(a >= a.max() * (1 - 1e-12))[0]
    return float(np.angle(m.flat[idx]))


@dataclass(frozen=True)
class CompiledBraid:
    word: str
    N: int
    logical: np.ndarray
    global_phase: float
    leakage: float

    @property
    def normalized(self) -> np.ndarray:
        """``logical`` with the global phase divided out."""
        return self.logical * cmath.exp(-1j * self.global_phase)

    @property
    def lattice(self) -> np.ndarray:
        """Action on the lattice: the transpose of the logical matrix."""
        return self.logical.T

    def to_json(self) -> str:
        def enc(m):
            return [[[float(z.real), float(z.imag)] for z in row] for row in m]

        return json.dumps(
            {
                "word": self.word,
                "N": self.N,
                "logical": enc(self.logical),
                "normalized": enc(self.normalized),
                "lattice": enc(self.lattice),
                "global_phase": self.global_phase,
                "leakage": self.leakage,
            },
            indent=2,
        )


def compile_braid(word, N: int | None = None) -> CompiledBraid:
    """Restrict a braid word to the logical subspace.

    ``word`` may be a :class:`BraidWord` or its text form (then ``N`` is
    required).
    """
    if isinstance(word, str):
        if N is None:
            raise AnyonError("N is required for a text braid word")
        word = parse_braid(word, N)
    B = logical_subspace(word.N).vectors
    MB = word.matrix() @ B
    L = B.conj().T @ MB
    leak = float(np.linalg.norm(MB - B @ L))
    if leak > 1e-10:
        raise AnyonError(f"braid word leaks out of the logical subspace ({leak:.2e})")
    return CompiledBraid(str(word), word.N, L, global_phase(L), leak)


def joint_lattice_action(word: BraidWord) -> np.ndarray:
    """Lattice operator implied by acting on the ancillas of the joint state.

    Builds ``sum_k |b_k>_anc |k>_lat``, applies the word on the ancilla
    factor, and reads off the operator ``A`` with the result equal to
    ``sum_k |b_k>_anc A|k>_lat``.
    """
    B = logical_subspace(word.N).vectors
    d = B.shape[1]
    joint = np.einsum("ak,kl->al", B, np.eye(d))  # ancilla x lattice
    joint = word.matrix() @ joint
    # component along |b_k'> on the ancilla leaves A|k'> on the lattice
    coeff = B.conj().T @ joint
    return coeff.T


def fusion_matrix() -> np.ndarray:
    return np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


@dataclass
class ControlledZReport:
    exchange: str
    literal_error: float
    corrected_error: float
    corrected_form: str
    matrix: np.ndarray

    @property
    def literal_pass(self) -> bool:
        return self.literal_error <= 1e-10

    @property
    def corrected_pass(self) -> bool:
        return self.corrected_error <= 1e-10


@dataclass
class ControlledZSummary:
    reports: dict
    r12_squared_is_z: bool
    r12_squared_phase: float

    @property
    def literal_pass(self) -> bool:
        return any(r.literal_pass for r in self.reports.values())


def controlled_z_decomposition(N: int = 2) -> ControlledZSummary:
    """Check ``|0><0| (x) R12 + i |1><1| (x) R12^-1`` against the exchanges.

    Both ``R_{34}`` and ``R_{56}`` on the ``N = 2`` register are compared
    entrywise with the stated form; the report also records the best
    matching decomposition.
    """
    if N != 2:
        raise AnyonError("the controlled-Z decomposition is defined for N = 2")
    r12 = compile_braid("R1", 1).logical
    r12i = compile_braid("R1^-1", 1).logical
    P0, P1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    stated = np.kron(P0, r12) + 1j * np.kron(P1, r12i)
    candidates = {
        "|0><0| (x) R12 + |1><1| (x) R12^-1": np.kron(P0, r12) + np.kron(P1, r12i),
        "I (x) R12": np.kron(np.eye(2), r12),
        "|0><0| (x) R12 + i |1><1| (x) R12^-1": stated,
    }
    reports = {}
    for name in ("R3", "R5"):
        L = compile_braid(name, 2).logical
        best = min(candidates, key=lambda k: np.abs(L - candidates[k]).max())
        label = {"R3": "R34", "R5": "R56"}[name]
        reports[label] = ControlledZReport(
            label,
            float(np.abs(L - stated).max()),
            float(np.abs(L - candidates[best]).max()),
            best,
            L,
        )
    sq = compile_braid("R1 R1", 1)
    is_z = bool(np.abs(sq.normalized - np.diag([1, -1])).max() <= 1e-10)
    return ControlledZSummary(reports, is_z, sq.global_phase)


# ------------------------------------------------------------ measurement


@dataclass
class AncillaRegister:
    N: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2 ** (2 * self.N + 2),):
            raise AnyonError("amplitude vector has the wrong length")
        n = np.linalg.norm(self.amplitudes)
        if abs(n - 1) > 1e-10:
            raise AnyonError(f"register state is not normalised (norm {n})")

    def logical_coordinates(self) -> np.ndarray:
        return logical_subspace(self.N).vectors.conj().T @ self.amplitudes


# pair outcomes keyed by (XX, ZZ)
_BELL_NAMES = {(1, -1): "Psi+", (-1, -1): "Psi-", (1, 1): "Phi+", (-1, 1): "Phi-"}


@dataclass(frozen=True)
class BellOutcome:
    pairs: tuple[str, ...]
    xx: tuple[int, ...]
    zz: tuple[int, ...]
    probability: float

    @property
    def sigma(self) -> str | None:
        """Sign string if every pair landed in a Psi state."""
        if any(not p.startswith("Psi") for p in self.pairs):
            return None
        return "".join(p[-1] for p in self.pairs)


def _pair_projector(n_pairs: int, pair: int, xx: int, zz: int) -> sp.csr_matrix:
    n = 2 * n_pairs
    X = PauliWord.on(n, {2 * pair + 1: "X", 2 * pair + 2: "X"}).matrix()
    Z = PauliWord.on(n, {2 * pair + 1: "Z", 2 * pair + 2: "Z"}).matrix()
    eye = sp.identity(2**n, format="csr", dtype=complex)
    return ((eye + xx * X) @ (eye + zz * Z) / 4).tocsr()


def bell_distribution(state: np.ndarray) -> dict[tuple[str, ...], float]:
    """Probabilities of every joint Bell outcome over consecutive pairs."""
    psi = np.asarray(state, dtype=complex)
    n = int(round(math.log2(psi.size)))
    if 2**n != psi.size or n % 2:
        raise AnyonError("state must live on an even number of qubits")
    npairs = n // 2
    psi = psi / np.linalg.norm(psi)
    # amplitude in each Bell product is an inner product with a product basis
    bell = {
        "Phi+": np.array([1, 0, 0, 1]) / math.sqrt(2),
        "Phi-": np.array([1, 0, 0, -1]) / math.sqrt(2),
        "Psi+": _BELL["+"],
        "Psi-": _BELL["-"],
    }
    M = np.column_stack([bell[k] for k in bell]).conj().T  # rows: Bell states
    t = psi.reshape((4,) * npairs)
    for ax in range(npairs):
        t = np.moveaxis(np.tensordot(M, t, axes=([1], [ax])), 0, ax)
    names = list(bell)
    out = {}
    for idx in itertools.product(range(4), repeat=npairs):
        p = float(abs(t[idx]) ** 2)
        if p > 1e-15:
            out[tuple(names[i] for i in idx)] = p
    return out


def prepare_logical(state, N: int, seed: int | None = None, target: str | None = None):
    """Measure every ancilla pair in the Bell basis.

    X-pair parities are measured before Z-pair parities (they commute). With
    ``target`` (a sign string such as ``"+-"`` with one entry per pair) the
    corresponding Psi branch is post-selected; otherwise an outcome is drawn
    with ``numpy.random.default_rng(seed)``. Returns ``(AncillaRegister,
    BellOutcome)``.
    """
    _check_n(N)
    npairs = N + 1
    psi = np.asarray(state, dtype=complex)
    if psi.size != 4**npairs:
        raise AnyonError(f"expected a {2 * npairs}-qubit state")
    psi = psi / np.linalg.norm(psi)
    if target is not None:
        if len(target) != npairs or set(target) - set("+-"):
            raise AnyonError(f"target must be {npairs} signs")
        outcomes = [(1 if s == "+" else -1, -1) for s in target]
    else:
        rng = np.random.default_rng(seed)
        outcomes = []
    post = psi
    prob = 1.0
    for k in range(npairs):
        if target is None:
            # sample XX then ZZ on the current post-measurement state
            res = []
            for which in ("X", "Z"):
                w = PauliWord.on(2 * npairs, {2 * k + 1: which, 2 * k + 2: which}).matrix()
                p_plus = float(((np.vdot(post, w @ post)).real + 1) / 2)
                r = 1 if rng.random() < p_plus else -1
                res.append(r)
                P = (sp.identity(post.size, format="csr") + r * w) / 2
                post = P @ post
                pr = np.linalg.norm(post) ** 2
                prob *= pr
                post = post / math.sqrt(pr)
            outcomes.append(tuple(res))
        else:
            xx, zz = outcomes[k]
            post = _pair_projector(npairs, k, xx, zz) @ post
            pr = float(np.linalg.norm(post) ** 2)
            if pr < 1e-14:
                raise AnyonError(f"Bell outcome {target} has zero probability")
            prob *= pr
            post = post / math.sqrt(pr)
    names = tuple(_BELL_NAMES[o] for o in outcomes)
    rec = BellOutcome(names, tuple(o[0] for o in outcomes), tuple(o[1] for o in outcomes), prob)
    return AncillaRegister(N, post), rec
