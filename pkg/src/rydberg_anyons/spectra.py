"""Low-lying eigenstates and real-time evolution.

``ground_states`` is a restarted Lanczos solver with full reorthogonalisation
that converges one eigenvector at a time, locks it, and deflates it out of the
next search. Each search starts from a fresh seeded random vector, so
degenerate manifolds are spanned by successive seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .geometry import Lattice
from .operators import (
    BasisMode,
    ModelParams,
    OccupationBasis,
    SparseOperator,
    build_hamiltonian,
    dual_params,
    inter_triangle_couplings,
    single_triangle_basis_block,
)

__all__ = [
    "StateVector",
    "EigenResult",
    "SpectraError",
    "InterTriangleCoupling",
    "DUALITY_TIME",
    "duality_time",
    "ground_states",
    "dense_ground_states",
    "evolve",
    "evolve_factorized",
    "product_state",
    "save_eigenresult",
    "load_eigenresult",
]


def duality_time(rabi: float = 1.0) -> float:
    """``4 pi / (3 sqrt(3) rabi)``: the evolution time that maps Z Z to X."""
    return 4 * math.pi / (3 * math.sqrt(3) * rabi)


DUALITY_TIME = duality_time(1.0)


class SpectraError(RuntimeError):
    pass


class InterTriangleCoupling(SpectraError):
    """The generator couples different triangles, so it does not factorise."""


@dataclass
class StateVector:
    amplitudes: np.ndarray
    basis: OccupationBasis | None = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes)
        if self.basis is not None and self.amplitudes.shape != (self.basis.dim,):
            raise ValueError(
                f"amplitude length {self.amplitudes.shape} does not match basis dim {self.basis.dim}"
            )

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm
        if n == 0:
            raise ValueError("cannot normalise the zero vector")
        return StateVector(self.amplitudes / n, self.basis)

    def vdot(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def product_state(basis: OccupationBasis, triangle_states) -> StateVector:
    """Tensor product of per-triangle 4-vectors (restricted basis only)."""
    if basis.mode is not BasisMode.TRIANGLE:
        raise ValueError("product_state needs a triangle_restricted basis")
    vecs = [np.asarray(v, dtype=complex) for v in triangle_states]
    if len(vecs) != len(basis.triangles):
        raise ValueError("one 4-vector per triangle required")
    out = np.ones(1, dtype=complex)
    # triangle 0 is the least significant digit
    for v in vecs:
        out = np.kron(v, out)
    return StateVector(out, basis)


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    seeds: list = field(default_factory=list)

    def states(self, basis: OccupationBasis | None = None) -> list[StateVector]:
        return [StateVector(self.eigenvectors[:, k], basis) for k in range(self.eigenvectors.shape[1])]


def _as_matrix(H):
    return H.matrix if isinstance(H, SparseOperator) else H


def _lowest_ritz(matvec, v0, locked, m, dtype):
    """One Lanczos cycle of length ``m`` with full reorthogonalisation."""
    n = v0.size
    V = np.empty((m + 1, n), dtype=dtype)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v0 / np.linalg.norm(v0)
    steps = 0
    for j in range(m):
        w = matvec(V[j])
        alpha[j] = np.vdot(V[j], w).real
        # two passes of classical Gram-Schmidt against basis and locked set
        for _ in range(2):
            if locked is not None:
                w -= locked.T @ (locked.conj() @ w)
            w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        steps = j + 1
        b = np.linalg.norm(w)
        beta[j] = b
        if b < 1e-12 * max(1.0, abs(alpha[j])):
            break
        V[j + 1] = w / b
    T = np.diag(alpha[:steps]) + np.diag(beta[: steps - 1], 1) + np.diag(beta[: steps - 1], -1)
    theta, S = np.linalg.eigh(T)
    y = S[:, 0] @ V[:steps]
    res_est = abs(beta[steps - 1] * S[steps - 1, 0])
    return theta[0], y, res_est, steps


def ground_states(
    H,
    k: int = 1,
    tol: float = 1e-10,
    seed: int = 0,
    krylov_dim: int = 60,
    max_restarts: int = 500,
) -> EigenResult:
    """``k`` lowest eigenpairs of a Hermitian operator.

    Deterministic for a given ``seed``. If some pair fails to reach ``tol``
    within ``max_restarts`` cycles the partial result is returned with
    ``converged=False``.
    """
    A = _as_matrix(H)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    real = not np.iscomplexobj(A.data if hasattr(A, "data") else A)
    dtype = float if real else complex
    rng = np.random.default_rng(seed)
    m = min(krylov_dim, n)

    def matvec(v):
        return A @ v

    locked = None
    lam = []
    seeds = []
    total = 0
    converged = True
    for _ in range(k):
        s = int(rng.integers(2**32))
        seeds.append(s)
        local = np.random.default_rng(s)
        v = local.standard_normal(n)
        if not real:
            v = v + 1j * local.standard_normal(n)
        v = v.astype(dtype)
        if locked is not None:
            v -= locked.T @ (locked.conj() @ v)
        mm = m if locked is None else min(m, n - locked.shape[0])
        ok = False
        for _ in range(max_restarts):
            theta, y, res_est, steps = _lowest_ritz(matvec, v, locked, mm, dtype)
            total += steps
            y /= np.linalg.norm(y)
            r = A @ y - theta * y
            if locked is not None:
                r -= locked.T @ (locked.conj() @ r)
            if np.linalg.norm(r) <= tol or steps < mm:
                ok = np.linalg.norm(r) <= max(tol, 1e-11)
                ok = ok or steps < mm
                break
            v = y
        converged &= ok
        y = y.astype(dtype)
        locked = y[None, :] if locked is None else np.vstack([locked, y])
        lam.append(theta)

    # Rayleigh-Ritz on the locked vectors cleans up mixing inside degenerate sets
    Q = locked.T
    Hq = Q.conj().T @ (A @ Q)
    Hq = (Hq + Hq.conj().T) / 2
    w, S = np.linalg.eigh(Hq)
    vecs = Q @ S
    vecs /= np.linalg.norm(vecs, axis=0)
    res = np.linalg.norm(A @ vecs - vecs * w, axis=0)
    converged = converged and bool(np.all(res <= max(tol, 1e-8)))
    return EigenResult(w, vecs, res, total, converged, seeds)


def dense_ground_states(H, k: int = 1) -> EigenResult:
    """Reference solver: full dense diagonalisation."""
    A = _as_matrix(H)
    M = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    w, v = np.linalg.eigh(M)
    w, v = w[:k], v[:, :k]
    res = np.linalg.norm(M @ v - v * w, axis=0)
    return EigenResult(w, v, res, 0, True, [])


# --------------------------------------------------------------- evolution


def evolve(psi: StateVector, Hgen, tau: float, tol: float = 1e-12, krylov_dim: int = 30) -> StateVector:
    """``exp(-i tau H) psi`` by adaptive Krylov (Lanczos) exponentiation.

    The step is halved until the a-posteriori error estimate of each step is
    below ``tol * |step| / |tau|``; the Krylov projection is unitary, so the
    norm is preserved to rounding.
    """
    A = _as_matrix(Hgen)
    v = np.asarray(psi.amplitudes, dtype=complex).copy()
    if tau == 0 or not np.any(v):
        return StateVector(v, psi.basis)
    n = v.size
    m = min(krylov_dim, n)
    remaining = float(tau)
    dt = remaining
    while abs(remaining) > 0:
        nv = np.linalg.norm(v)
        V = np.empty((m + 1, n), dtype=complex)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        V[0] = v / nv
        steps = 0
        for j in range(m):
            w = A @ V[j]
            alpha[j] = np.vdot(V[j], w).real
            for _ in range(2):
                w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
            steps = j + 1
            beta[j] = np.linalg.norm(w)
            if beta[j] < 1e-13:
                break
            V[j + 1] = w / beta[j]
        T = np.diag(alpha[:steps]) + np.diag(beta[: steps - 1], 1) + np.diag(beta[: steps - 1], -1)
        invariant = beta[steps - 1] < 1e-13
        dt = remaining if abs(dt) > abs(remaining) else dt
        for _ in range(200):
            y = sla.expm(-1j * dt * T)[:, 0]
            err = 0.0 if invariant else abs(beta[steps - 1] * y[-1]) * nv
            if err <= tol * abs(dt) / abs(tau):
                break
            dt /= 2
        else:
            raise SpectraError(f"Krylov step collapsed; last error estimate {err:.3e}")
        v = nv * (y @ V[:steps])
        remaining -= dt
        if abs(remaining) < 1e-15 * abs(tau):
            remaining = 0.0
    return StateVector(v, psi.basis)


def _apply_local(amps: np.ndarray, local_dim: int, n_slots: int, slots, U: np.ndarray) -> np.ndarray:
    """Apply ``U`` to the given slots; slot ``s`` is digit ``s`` of the index."""
    psi = amps.reshape((local_dim,) * n_slots)
    axes = [n_slots - 1 - s for s in reversed(slots)]
    psi = np.moveaxis(psi, axes, range(len(axes)))
    shape = psi.shape
    psi = (U @ psi.reshape(local_dim ** len(slots), -1)).reshape(shape)
    return np.moveaxis(psi, range(len(axes)), axes).reshape(-1)


def evolve_factorized(psi: StateVector, lat: Lattice, params: ModelParams | None = None, tau: float | None = None) -> StateVector:
    """Apply ``prod_T exp(-i tau H'_T)`` triangle by triangle.

    Raises :class:`InterTriangleCoupling` if ``params.trunc_radius`` reaches a
    site in another triangle.
    """
    p = dual_params() if params is None else params
    if tau is None:
        tau = duality_time(p.rabi)
    if inter_triangle_couplings(lat, p):
        raise InterTriangleCoupling(
            f"trunc_radius={p.trunc_radius} couples sites of different triangles"
        )
    basis = psi.basis if psi.basis is not None else OccupationBasis(lat)
    amps = np.asarray(psi.amplitudes, dtype=complex)
    if basis.mode is BasisMode.TRIANGLE:
        for t in range(len(basis.triangles)):
            U = sla.expm(-1j * tau * single_triangle_basis_block(lat, t, p, basis.mode))
            amps = _apply_local(amps, 4, len(basis.triangles), [t], U)
    else:
        for t, tri in enumerate(basis.triangles):
            U = sla.expm(-1j * tau * single_triangle_basis_block(lat, t, p, basis.mode))
            amps = _apply_local(amps, 2, basis.n_sites, list(tri), U)
    return StateVector(amps, basis)


# --------------------------------------------------------------- persistence


def save_eigenresult(result: EigenResult, directory, stem: str = "eigen", extra: dict | None = None) -> Path:
    """Write ``<stem>.npy`` amplitudes plus a ``<stem>.json`` manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / f"{stem}.npy", result.eigenvectors)
    manifest = {
        "energies": [float(x) for x in result.eigenvalues],
        "residuals": [float(x) for x in result.residuals],
        "iterations": result.iterations,
        "converged": result.converged,
        "seeds": result.seeds,
        "amplitudes": f"{stem}.npy",
    }
    manifest.update(extra or {})
    path = d / f"{stem}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_eigenresult(path) -> EigenResult:
    path = Path(path)
    meta = json.loads(path.read_text())
    vecs = np.load(path.parent / meta["amplitudes"])
    return EigenResult(
        np.array(meta["energies"]),
        vecs,
        np.array(meta["residuals"]),
        meta["iterations"],
        meta["converged"],
        meta["seeds"],
    )
