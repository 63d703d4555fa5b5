"""String and loop observables, their normalisation, and phase labels.

X strings are measured in the triangle-restricted basis, where the single-site
operator ``X_i`` acts on the triangle block as

    g <-> r_i,   r_j <-> r_k   (j, k the other two slots),

which is the image of ``Z_j Z_k`` under the duality evolution.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import GeometryError, Lattice, PathKind, StringPath, dual_path, loop_path, open_path
from .operators import BasisMode, ModelParams, OccupationBasis, dual_params
from .spectra import StateVector, _apply_local, duality_time, evolve, evolve_factorized, InterTriangleCoupling

__all__ = [
    "ObservableError",
    "StringMeasurement",
    "PhaseLabel",
    "GroundStateLabel",
    "GroundStateName",
    "Thresholds",
    "TABLE1",
    "expect_z_string",
    "expect_x_string",
    "measure_string",
    "normalized_expectation",
    "consistent_with_zero",
    "classify_phase",
    "classify_ground_state",
    "measurements_to_csv",
    "phase_survey",
    "x_tilde_block",
]


class ObservableError(ValueError):
    pass


@dataclass(frozen=True)
class StringMeasurement:
    path_id: str
    raw: float
    normalized: float
    stderr: float = 0.0
    n_strings: int = 1
    indeterminate: bool = False
    kind: str = "Z"

    def __post_init__(self):
        if self.stderr < 0:
            raise ObservableError("stderr must be non-negative")

    @classmethod
    def exact(cls, value: float, path_id: str = "", kind: str = "Z") -> "StringMeasurement":
        return cls(path_id, float(value), float(value), 0.0, 1, False, kind)


class PhaseLabel(str, Enum):
    TRIVIAL = "trivial"
    QSL = "QSL"
    VBS = "VBS"
    INDETERMINATE = "indeterminate"


class GroundStateName(str, Enum):
    I = "I"
    E = "e"
    M = "m"
    EPSILON = "epsilon"
    PLUS = "plus"
    MINUS = "minus"
    INDETERMINATE = "indeterminate"


# (Z_C, X_C', Z_S, X_S')
TABLE1 = {
    GroundStateName.I: (1, 1, 0, 0),
    GroundStateName.E: (-1, 1, 0, 0),
    GroundStateName.M: (1, -1, 0, 0),
    GroundStateName.EPSILON: (-1, -1, 0, 0),
    GroundStateName.PLUS: (0, 0, 1, 1),
    GroundStateName.MINUS: (0, 0, -1, -1),
}


@dataclass(frozen=True)
class GroundStateLabel:
    name: GroundStateName
    values: tuple[float, float, float, float]
    distance: float = 0.0

    @property
    def label(self) -> str:
        return self.name.value


@dataclass(frozen=True)
class Thresholds:
    vanishing: float = 0.1
    finite: float = 0.3

    def __post_init__(self):
        if not 0 <= self.vanishing <= self.finite:
            raise ObservableError("need 0 <= vanishing <= finite")


# ------------------------------------------------------------ raw strings


def _basis_of(psi: StateVector, lat: Lattice | None) -> OccupationBasis:
    if psi.basis is not None:
        return psi.basis
    if lat is None:
        raise ObservableError("state carries no basis; pass the lattice")
    return OccupationBasis(lat)


def _z_parity(basis: OccupationBasis, sites) -> np.ndarray:
    par = np.zeros(basis.dim, dtype=np.int8)
    for i in sites:
        par ^= basis.site_occupation(i)
    return 1 - 2 * par.astype(float)


def expect_z_string(psi: StateVector, s: StringPath, lat: Lattice | None = None) -> float:
    """``<prod_{i in s} Z_i>`` with ``Z_i = 1 - 2 n_i``."""
    if s.kind is not PathKind.Z:
        raise ObservableError(f"expected a Z path, got {s.kind.value}")
    basis = _basis_of(psi, lat)
    p = np.abs(psi.amplitudes) ** 2
    return float(p @ _z_parity(basis, s.sites) / p.sum())


def x_tilde_block(slot: int) -> np.ndarray:
    """4x4 matrix of ``X`` on slot ``slot`` of a triangle, basis ``{g, r1, r2, r3}``."""
    m = np.zeros((4, 4))
    j, k = [q for q in range(3) if q != slot]
    m[0, slot + 1] = m[slot + 1, 0] = 1
    m[j + 1, k + 1] = m[k + 1, j + 1] = 1
    return m


def _apply_x_direct(psi: StateVector, sites, basis: OccupationBasis) -> np.ndarray:
    amps = np.asarray(psi.amplitudes, dtype=complex)
    if basis.mode is BasisMode.FULL:
        mask = 0
        for i in sites:
            mask |= 1 << i
        return amps[np.arange(basis.dim) ^ mask]
    seen = set()
    for i in sites:
        t, k = basis.slot[i]
        if t in seen:
            raise ObservableError(f"X string touches triangle {t} twice")
        seen.add(t)
        amps = _apply_local(amps, 4, len(basis.triangles), [int(t)], x_tilde_block(int(k)))
    return amps


def expect_x_string(
    psi: StateVector,
    s: StringPath,
    lat: Lattice,
    params: ModelParams | None = None,
    route: str = "duality",
) -> float:
    """``<prod_{i in s} X_i>``.

    ``route="duality"`` evolves by ``exp(-i tau H')`` at the duality time and
    measures the Z string on the pre-image path; ``route="direct"`` applies
    the X operators. Both agree in the triangle-restricted basis.
    """
    if s.kind is not PathKind.XDUAL:
        raise ObservableError(f"expected an Xdual path, got {s.kind.value}")
    basis = _basis_of(psi, lat)
    psi = StateVector(psi.amplitudes, basis)
    norm2 = psi.norm**2
    if route == "direct":
        return float(np.vdot(psi.amplitudes, _apply_x_direct(psi, s.sites, basis)).real / norm2)
    if route != "duality":
        raise ObservableError(f"unknown route {route!r}")
    pre = dual_path(lat, s)
    p = dual_params() if params is None else params
    try:
        evolved = evolve_factorized(psi, lat, p, duality_time(p.rabi))
    except InterTriangleCoupling:
        from .operators import build_dual_generator

        evolved = evolve(psi, build_dual_generator(lat, p, basis), duality_time(p.rabi))
    return expect_z_string(evolved, pre, lat)


def _union(a: StringPath, b: StringPath) -> StringPath:
    if set(a.sites) & set(b.sites):
        raise ObservableError("strings in a family must not share sites")
    return StringPath(a.kind, a.sites + b.sites, a.topology)


def _expect(psi, s, lat, params):
    if s.kind is PathKind.Z:
        return expect_z_string(psi, s, lat)
    return expect_x_string(psi, s, lat, params)


def measure_string(psi, s: StringPath, lat: Lattice, params=None, path_id: str = "") -> StringMeasurement:
    v = _expect(psi, s, lat, params)
    return StringMeasurement(path_id, v, v, 0.0, 1, False, s.kind.value)


def normalized_expectation(
    psi: StateVector,
    family: list[StringPath],
    lat: Lattice | None = None,
    params: ModelParams | None = None,
    path_id: str = "",
    atol: float = 1e-12,
) -> StringMeasurement:
    """Average of ``<S_i> / sqrt(<S_i S_{i+1}>)`` over neighbouring strings.

    The standard error is the population standard deviation of the ratios
    divided by the square root of their number. Any joint expectation not
    above ``atol`` marks the result indeterminate (``normalized`` is NaN).
    """
    if len(family) < 2:
        raise ObservableError("need at least two parallel strings")
    kinds = {s.kind for s in family}
    if len(kinds) != 1:
        raise ObservableError("mixed string kinds in one family")
    singles = [_expect(psi, s, lat, params) for s in family]
    ratios = []
    bad = False
    for a, b, va in zip(family, family[1:], singles):
        joint = _expect(psi, _union(a, b), lat, params)
        if joint <= atol:
            bad = True
            continue
        ratios.append(va / math.sqrt(joint))
    raw = float(np.mean(singles))
    kind = family[0].kind.value
    if bad or not ratios:
        return StringMeasurement(path_id, raw, float("nan"), 0.0, len(family), True, kind)
    r = np.asarray(ratios)
    return StringMeasurement(path_id, raw, float(r.mean()), float(r.std() / math.sqrt(r.size)), len(family), False, kind)


def phase_survey(
    psi: StateVector,
    lat: Lattice,
    params: ModelParams | None = None,
    columns=None,
    open_length: int | None = None,
) -> dict[str, StringMeasurement]:
    """Closed loops and open strings averaged over cylinder columns.

    Each column contributes its wrapping Z loop, the dual X loop, and an open
    Z string of ``open_length`` triangles (default: one short of the loop)
    with its dual. ``stderr`` is the population standard error over columns.
    """
    if columns is None:
        columns = []
        for c in range(lat.spec.cells_x):
            try:
                loop_path(lat, c)
            except GeometryError:
                continue
            columns.append(c)
    if not columns:
        raise ObservableError("no column supports a closed loop")
    length = lat.spec.cells_y - 1 if open_length is None else open_length
    vals = {"closed_z": [], "closed_x": [], "open_z": [], "open_x": []}
    for c in columns:
        zl = loop_path(lat, c)
        vals["closed_z"].append(expect_z_string(psi, zl, lat))
        vals["closed_x"].append(expect_x_string(psi, dual_path(lat, zl), lat, params))
        if length >= 1:
            oz = open_path(lat, c, 0, length)
            vals["open_z"].append(expect_z_string(psi, oz, lat))
            vals["open_x"].append(expect_x_string(psi, dual_path(lat, oz), lat, params))
    out = {}
    for name, v in vals.items():
        if not v:
            out[name] = StringMeasurement(name, float("nan"), float("nan"), 0.0, 0, True, name[-1].upper())
            continue
        a = np.asarray(v)
        kind = "Z" if name.endswith("z") else "Xdual"
        out[name] = StringMeasurement(name, float(a.mean()), float(a.mean()), float(a.std() / math.sqrt(a.size)), a.size, False, kind)
    return out


# ----------------------------------------------------------- classification


def _value(m) -> float:
    return m.normalized if isinstance(m, StringMeasurement) else float(m)


def consistent_with_zero(m, n_sigma: float = 2.0) -> bool:
    """``|v| <= n_sigma * stderr``; exact zeros always qualify."""
    v = _value(m)
    err = m.stderr if isinstance(m, StringMeasurement) else 0.0
    return bool(abs(v) <= n_sigma * err or v == 0)


def classify_phase(closed_z, closed_x, open_z, open_x, thresholds: Thresholds = Thresholds()) -> PhaseLabel:
    """Label a state from its closed and open string values.

    Arguments may be :class:`StringMeasurement` or plain numbers. Indeterminate
    measurements yield an indeterminate label.
    """
    args = (closed_z, closed_x, open_z, open_x)
    if any(isinstance(a, StringMeasurement) and a.indeterminate for a in args):
        return PhaseLabel.INDETERMINATE
    cz, cx, oz, ox = (abs(_value(a)) for a in args)
    if any(math.isnan(v) for v in (cz, cx, oz, ox)):
        return PhaseLabel.INDETERMINATE

    def zero(v):
        return v < thresholds.vanishing

    def finite(v):
        return v > thresholds.finite

    if finite(cz) and finite(cx) and zero(oz) and zero(ox):
        return PhaseLabel.QSL
    if zero(cz) and finite(cx):
        return PhaseLabel.TRIVIAL
    if zero(cx) and finite(cz):
        return PhaseLabel.VBS
    return PhaseLabel.INDETERMINATE


def classify_ground_state(zc, xc, zs, xs, tol: float = 0.25) -> GroundStateLabel:
    """Nearest row of the loop-value table within ``tol`` (max-norm).

    A measurement with a standard error that is consistent with zero under
    the 2-stderr rule is treated as 0.
    """
    vals = []
    for m in (zc, xc, zs, xs):
        v = _value(m)
        if isinstance(m, StringMeasurement) and m.stderr > 0 and consistent_with_zero(m):
            v = 0.0
        vals.append(v)
    vals = tuple(float(v) for v in vals)
    if any(math.isnan(v) for v in vals):
        return GroundStateLabel(GroundStateName.INDETERMINATE, vals, float("inf"))
    best, dist = None, float("inf")
    for name, row in TABLE1.items():
        d = max(abs(a - b) for a, b in zip(vals, row))
        if d < dist:
            best, dist = name, d
    if dist > tol:
        return GroundStateLabel(GroundStateName.INDETERMINATE, vals, dist)
    return GroundStateLabel(best, vals, dist)


# ------------------------------------------------------------------ output


def measurements_to_csv(rows) -> str:
    """CSV with columns state_id, path_id, kind, raw, normalized, stderr.

    ``rows`` is an iterable of ``(state_id, StringMeasurement)``.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state_id", "path_id", "kind", "raw", "normalized", "stderr"])
    for sid, m in rows:
        w.writerow([sid, m.path_id, m.kind, f"{m.raw:.12g}", f"{m.normalized:.12g}", f"{m.stderr:.12g}"])
    return buf.getvalue()
