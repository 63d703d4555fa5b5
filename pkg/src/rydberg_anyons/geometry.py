"""Ruby-lattice geometry, mixed-boundary punctures and string paths.

Coordinate convention
---------------------
The Ruby lattice is built from the edge midpoints of a Kagome lattice with
bond length ``2a``. Each Kagome triangle contributes a small Ruby triangle of
side ``a``, and each rectangle of the Ruby lattice has sides ``a`` and
``sqrt(3) a`` (the ``rho = sqrt(3)`` Ruby lattice). Every atom then has six
neighbours within ``2a`` (two at ``a``, two at ``sqrt(3) a``, two at ``2a``),
so a blockade radius of ``2.4a`` blockades exactly those six, and the next
shell sits at ``sqrt(7) a``.

Bravais vectors are ``A1 = (4a, 0)`` and ``A2 = (2a, 2 sqrt(3) a)``. Cell
``(ix, iy)`` sits at ``ix*A1 + iy*A2``. The cylinder identifies ``iy`` modulo
``cells_y``, i.e. it wraps along ``cells_y * A2``.

Per cell, sites 0-2 form the up triangle and sites 3-5 the down triangle.
Sites 2 and 5 lie on the Kagome line running along ``A2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "Boundary",
    "PathKind",
    "Topology",
    "LatticeSpec",
    "Site",
    "Lattice",
    "PunctureSpec",
    "StringPath",
    "GeometryError",
    "build_ruby_lattice",
    "single_triangle_lattice",
    "apply_puncture",
    "split_boundary",
    "puncture_boundary",
    "loop_path",
    "open_path",
    "connector_path",
    "dual_path",
    "winding_number",
    "lattice_to_json",
    "lattice_to_svg",
    "path_to_dict",
]

_SQ3 = math.sqrt(3.0)
_EPS = 1e-9


class GeometryError(ValueError):
    """Raised for invalid lattice, puncture or path requests."""


class Boundary(str, Enum):
    OPEN = "open"
    PERIODIC = "periodic"


class PathKind(str, Enum):
    Z = "Z"
    XDUAL = "Xdual"


class Topology(str, Enum):
    OPEN = "open"
    LOOP = "loop"


@dataclass(frozen=True)
class LatticeSpec:
    cells_x: int
    cells_y: int
    boundary_y: Boundary = Boundary.OPEN
    spacing: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "boundary_y", Boundary(self.boundary_y))
        if int(self.cells_x) < 1 or int(self.cells_y) < 1:
            raise GeometryError(
                f"cells_x and cells_y must be >= 1, got {self.cells_x}, {self.cells_y}"
            )
        if not self.spacing > 0:
            raise GeometryError(f"spacing must be positive, got {self.spacing}")


@dataclass(frozen=True)
class Site:
    index: int
    x: float
    y: float
    triangle: int
    cell: tuple[int, int]
    label: int  # position 0..5 inside the unit cell


@dataclass(frozen=True)
class Lattice:
    """Immutable Ruby-lattice geometry.

    ``segments`` maps anchor labels such as ``"p0:e"`` to the boundary sites of
    a puncture segment; ``segment_kind`` records whether each one condenses
    ``e`` or ``m`` anyons.
    """

    spec: LatticeSpec
    sites: tuple[Site, ...]
    triangles: tuple[tuple[int, int, int], ...]
    detuning_scale: np.ndarray
    removed_cells: frozenset = frozenset()
    segments: dict = field(default_factory=dict)
    segment_kind: dict = field(default_factory=dict)
    punctures: tuple = ()

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def positions(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.sites], dtype=float).reshape(-1, 2)

    @property
    def periodic(self) -> bool:
        return self.spec.boundary_y is Boundary.PERIODIC

    @property
    def wrap_vector(self) -> np.ndarray | None:
        if not self.periodic:
            return None
        a = self.spec.spacing
        return self.spec.cells_y * np.array([2.0 * a, 2.0 * _SQ3 * a])

    def triangle_of(self) -> np.ndarray:
        return np.array([s.triangle for s in self.sites], dtype=int)

    def displacement(self, i, j) -> np.ndarray:
        """Minimum-image displacement vectors from sites ``i`` to sites ``j``."""
        pos = self.positions
        d = pos[np.atleast_1d(j)] - pos[np.atleast_1d(i)]
        w = self.wrap_vector
        if w is not None:
            # project onto the wrap direction and fold into [-1/2, 1/2)
            t = d @ w / (w @ w)
            d = d - np.outer(np.round(t), w)
        return d

    def distances(self) -> np.ndarray:
        """Full minimum-image distance matrix (diagonal is zero)."""
        pos = self.positions
        d = pos[None, :, :] - pos[:, None, :]
        w = self.wrap_vector
        if w is not None:
            t = np.einsum("ijk,k->ij", d, w) / (w @ w)
            d = d - np.round(t)[..., None] * w
        return np.linalg.norm(d, axis=-1)

    def pairs_within(self, cutoff: float) -> list[tuple[int, int, float]]:
        """All site pairs ``i < j`` with distance ``<= cutoff``."""
        dist = self.distances()
        i, j = np.nonzero(np.triu(dist <= cutoff + _EPS, k=1))
        return [(int(a), int(b), float(dist[a, b])) for a, b in zip(i, j)]

    def adjacency(self, cutoff: float | None = None) -> dict[tuple[int, int], float]:
        if cutoff is None:
            cutoff = 2.0 * self.spec.spacing
        return {(i, j): r for i, j, r in self.pairs_within(cutoff)}

    def site_index(self, cell, label) -> int:
        for s in self.sites:
            if s.cell == tuple(cell) and s.label == label:
                return s.index
        raise GeometryError(f"no site with cell={cell} label={label}")

    def triangle_index(self, cell, up: bool = True) -> int:
        return self.sites[self.site_index(cell, 0 if up else 3)].triangle


def _cell_offsets(a: float) -> np.ndarray:
    v0 = np.array([0.0, 0.0])
    v1 = np.array([2.0 * a, 0.0])
    v2 = np.array([a, _SQ3 * a])
    A1 = np.array([4.0 * a, 0.0])
    A2 = np.array([2.0 * a, 2.0 * _SQ3 * a])
    v1p = v1 + A2 - A1
    v0p = v0 + A2
    return np.array(
        [
            (v0 + v1) / 2,
            (v1 + v2) / 2,
            (v0 + v2) / 2,
            (v2 + v1p) / 2,
            (v1p + v0p) / 2,
            (v2 + v0p) / 2,
        ]
    )


def build_ruby_lattice(spec: LatticeSpec) -> Lattice:
    """Six sites per unit cell grouped into an up and a down triangle."""
    a = spec.spacing
    A1 = np.array([4.0 * a, 0.0])
    A2 = np.array([2.0 * a, 2.0 * _SQ3 * a])
    offsets = _cell_offsets(a)
    sites = []
    triangles = []
    for ix in range(spec.cells_x):
        for iy in range(spec.cells_y):
            origin = ix * A1 + iy * A2
            for half in range(2):
                t = len(triangles)
                idx = []
                for k in range(3):
                    label = 3 * half + k
                    x, y = origin + offsets[label]
                    idx.append(len(sites))
                    sites.append(Site(len(sites), float(x), float(y), t, (ix, iy), label))
                triangles.append(tuple(idx))
    return Lattice(
        spec=spec,
        sites=tuple(sites),
        triangles=tuple(triangles),
        detuning_scale=np.ones(len(sites)),
    )


def single_triangle_lattice(spacing: float = 1.0) -> Lattice:
    """One isolated Ruby triangle (sites ordered i1, i2, i3)."""
    spec = LatticeSpec(1, 1, Boundary.OPEN, spacing)
    offsets = _cell_offsets(spacing)[:3]
    sites = tuple(Site(k, float(p[0]), float(p[1]), 0, (0, 0), k) for k, p in enumerate(offsets))
    return Lattice(spec=spec, sites=sites, triangles=((0, 1, 2),), detuning_scale=np.ones(3))


# ---------------------------------------------------------------- punctures


@dataclass(frozen=True)
class PunctureSpec:
    removed_cells: frozenset
    e_segment: frozenset = frozenset()
    m_segment: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "removed_cells", frozenset(tuple(c) for c in self.removed_cells))
        object.__setattr__(self, "e_segment", frozenset(int(i) for i in self.e_segment))
        object.__setattr__(self, "m_segment", frozenset(int(i) for i in self.m_segment))
        if self.e_segment & self.m_segment:
            raise GeometryError("e_segment and m_segment overlap")


def _check_interior(lat: Lattice, cells) -> None:
    spec = lat.spec
    if not cells:
        raise GeometryError("puncture removes no cells")
    present = {s.cell for s in lat.sites}
    for ix, iy in cells:
        if (ix, iy) not in present:
            raise GeometryError(f"cell {(ix, iy)} does not exist")
        if ix <= 0 or ix >= spec.cells_x - 1:
            raise GeometryError(f"cell {(ix, iy)} touches the outer x edge")
        if not lat.periodic and (iy <= 0 or iy >= spec.cells_y - 1):
            raise GeometryError(f"cell {(ix, iy)} touches the outer y edge")


def puncture_boundary(lat: Lattice, removed_cells) -> list[int]:
    """Sites (indices in ``lat``) within one Kagome bond (2a) of a removed site."""
    cells = {tuple(c) for c in removed_cells}
    removed = np.array([s.cell in cells for s in lat.sites])
    if not removed.any():
        return []
    dist = lat.distances()[:, removed].min(axis=1)
    cutoff = 2.0 * lat.spec.spacing + _EPS
    return [int(i) for i in np.nonzero((~removed) & (dist <= cutoff))[0]]


def split_boundary(lat: Lattice, removed_cells, mode: str = "half") -> PunctureSpec:
    """Build a :class:`PunctureSpec` with the boundary split by ``mode``.

    ``"half"`` assigns the sites on one side of the puncture (by polar angle
    around its centre, starting at angle 0) to the e segment and the rest to the
    m segment. ``"e"`` and ``"m"`` assign the whole boundary to one type.
    """
    _check_interior(lat, [tuple(c) for c in removed_cells])
    boundary = puncture_boundary(lat, removed_cells)
    if mode == "e":
        return PunctureSpec(frozenset(removed_cells), frozenset(boundary), frozenset())
    if mode == "m":
        return PunctureSpec(frozenset(removed_cells), frozenset(), frozenset(boundary))
    if mode != "half":
        raise GeometryError(f"unknown split mode {mode!r}")
    cells = {tuple(c) for c in removed_cells}
    removed = [s.index for s in lat.sites if s.cell in cells]
    anchor = removed[0]
    rel = lat.displacement(anchor, removed)
    centre = lat.positions[anchor] + rel.mean(axis=0)
    d = lat.displacement(anchor, boundary) + lat.positions[anchor] - centre
    angle = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    order = np.argsort(angle, kind="stable")
    half = len(boundary) // 2
    e = frozenset(boundary[i] for i in order[:half])
    m = frozenset(boundary[i] for i in order[half:])
    return PunctureSpec(frozenset(removed_cells), e, m)


def apply_puncture(lat: Lattice, p: PunctureSpec, e_scale: float = 0.48) -> Lattice:
    """Delete the puncture's cells and lower the detuning on its e segment.

    Site indices in ``p.e_segment``/``p.m_segment`` refer to ``lat`` and are
    remapped in the returned lattice. The anchors ``"p{k}:e"`` and
    ``"p{k}:m"`` are registered for the new puncture.
    """
    _check_interior(lat, p.removed_cells)
    boundary = set(puncture_boundary(lat, p.removed_cells))
    seg = set(p.e_segment) | set(p.m_segment)
    if seg != boundary:
        raise GeometryError("e_segment and m_segment must partition the puncture boundary")

    keep = [s for s in lat.sites if s.cell not in p.removed_cells]
    remap = {s.index: k for k, s in enumerate(keep)}
    tri_keep = [t for t in lat.triangles if t[0] in remap]
    tri_remap = {lat.sites[t[0]].triangle: k for k, t in enumerate(tri_keep)}
    sites = tuple(
        Site(remap[s.index], s.x, s.y, tri_remap[s.triangle], s.cell, s.label) for s in keep
    )
    triangles = tuple(tuple(remap[i] for i in t) for t in tri_keep)
    scale = np.array([lat.detuning_scale[s.index] for s in keep], dtype=float)
    for i in p.e_segment:
        scale[remap[i]] = e_scale

    segments = {k: tuple(remap[i] for i in v if i in remap) for k, v in lat.segments.items()}
    kinds = dict(lat.segment_kind)
    k = len(lat.punctures)
    segments[f"p{k}:e"] = tuple(sorted(remap[i] for i in p.e_segment))
    segments[f"p{k}:m"] = tuple(sorted(remap[i] for i in p.m_segment))
    kinds[f"p{k}:e"] = "e"
    kinds[f"p{k}:m"] = "m"
    return Lattice(
        spec=lat.spec,
        sites=sites,
        triangles=triangles,
        detuning_scale=scale,
        removed_cells=lat.removed_cells | p.removed_cells,
        segments=segments,
        segment_kind=kinds,
        punctures=lat.punctures + (p.removed_cells,),
    )


# -------------------------------------------------------------------- paths


@dataclass(frozen=True)
class StringPath:
    kind: PathKind
    sites: tuple[int, ...]
    topology: Topology = Topology.OPEN
    anchors: tuple[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PathKind(self.kind))
        object.__setattr__(self, "topology", Topology(self.topology))
        object.__setattr__(self, "sites", tuple(int(i) for i in self.sites))
        if len(set(self.sites)) != len(self.sites):
            raise GeometryError("string path visits a site twice")


def _triangle_groups(lat: Lattice, sites) -> dict[int, list[int]]:
    tri = lat.triangle_of()
    groups: dict[int, list[int]] = {}
    for i in sites:
        groups.setdefault(int(tri[i]), []).append(int(i))
    return groups


def dual_path(lat: Lattice, s: StringPath) -> StringPath:
    """Map a Z path to its X-dual path and back.

    A Z path must cut each triangle at exactly two sites ``i1, i2``; the dual
    keeps the third site ``i3``. The inverse map restores the two cut sites.
    """
    groups = _triangle_groups(lat, s.sites)
    order = list(dict.fromkeys(lat.sites[i].triangle for i in s.sites))
    out = []
    if s.kind is PathKind.Z:
        for t in order:
            cut = groups[t]
            if len(cut) != 2:
                raise GeometryError(
                    f"Z path cuts triangle {t} at {len(cut)} site(s); exactly two required"
                )
            out.extend(i for i in lat.triangles[t] if i not in cut)
        kind = PathKind.XDUAL
    else:
        for t in order:
            cut = groups[t]
            if len(cut) != 1:
                raise GeometryError(f"X-dual path touches triangle {t} at {len(cut)} sites")
            out.extend(i for i in lat.triangles[t] if i not in cut)
        kind = PathKind.Z
    return StringPath(kind, tuple(out), s.topology, s.anchors)


def _column_triangles(lat: Lattice, column: int) -> list[int]:
    if not 0 <= column < lat.spec.cells_x:
        raise GeometryError(f"column {column} out of range [0, {lat.spec.cells_x})")
    tris = []
    for iy in range(lat.spec.cells_y):
        try:
            tris.append(lat.triangle_index((column, iy), up=True))
        except GeometryError:
            raise GeometryError(f"column {column} is interrupted by a puncture") from None
    return tris


def _z_sites_of(lat: Lattice, triangles) -> tuple[int, ...]:
    # up triangles are cut at labels 0 and 1; label 2 lies on the A2 Kagome line
    out = []
    for t in triangles:
        out.extend(i for i in lat.triangles[t] if lat.sites[i].label % 3 != 2)
    return tuple(out)


def loop_path(lat: Lattice, column: int, kind=PathKind.Z) -> StringPath:
    """Closed string winding once around the cylinder at cell column ``column``.

    The Z loop runs through the up triangles of the column, cutting each at the
    two sites off the ``A2`` Kagome line; the X-dual loop is its image.
    """
    if not lat.periodic:
        raise GeometryError("loop_path requires a periodic (cylinder) lattice")
    z = StringPath(PathKind.Z, _z_sites_of(lat, _column_triangles(lat, column)), Topology.LOOP)
    return z if PathKind(kind) is PathKind.Z else dual_path(lat, z)


def open_path(lat: Lattice, column: int, start: int, length: int, kind=PathKind.Z) -> StringPath:
    """Open segment of ``length`` up triangles of a column, beginning at row ``start``."""
    tris = _column_triangles(lat, column)
    if not 1 <= length <= len(tris) - (1 if lat.periodic else 0):
        raise GeometryError(f"open path length {length} invalid for column of {len(tris)}")
    n = len(tris)
    if not lat.periodic and start + length > n:
        raise GeometryError("open path runs past the lattice edge")
    chosen = [tris[(start + k) % n] for k in range(length)]
    z = StringPath(PathKind.Z, _z_sites_of(lat, chosen), Topology.OPEN)
    return z if PathKind(kind) is PathKind.Z else dual_path(lat, z)


def winding_number(lat: Lattice, path: StringPath) -> int:
    """Number of times a closed path winds around the cylinder.

    Counted from the cell rows visited, so a half-circumference step (two-row
    cylinders) is taken as forward motion rather than folded ambiguously.
    """
    if not lat.periodic or path.topology is not Topology.LOOP:
        return 0
    tri = lat.triangle_of()
    order = list(dict.fromkeys(int(tri[i]) for i in path.sites))
    rows = [lat.sites[lat.triangles[t][0]].cell[1] for t in order]
    cy = lat.spec.cells_y
    total = 0
    for k in range(len(rows)):
        step = (rows[(k + 1) % len(rows)] - rows[k]) % cy
        if step > cy / 2:
            step -= cy
        total += step
    return abs(total) // cy


def _triangle_graph(lat: Lattice) -> dict[int, list[int]]:
    tri = lat.triangle_of()
    nbr: dict[int, set] = {t: set() for t in range(lat.n_triangles)}
    for i, j, _ in lat.pairs_within(_SQ3 * lat.spec.spacing):
        ti, tj = int(tri[i]), int(tri[j])
        if ti != tj:
            nbr[ti].add(tj)
            nbr[tj].add(ti)
    return {t: sorted(v) for t, v in nbr.items()}


def connector_path(lat: Lattice, from_anchor: str, to_anchor: str, kind=PathKind.Z) -> StringPath:
    """Open string whose ends terminate on two labelled boundary segments.

    Z strings join m segments and X-dual strings join e segments. The route is
    a shortest chain of neighbouring triangles; each triangle is cut at the
    sites facing its predecessor and successor.
    """
    kind = PathKind(kind)
    need = "m" if kind is PathKind.Z else "e"
    for anchor in (from_anchor, to_anchor):
        if anchor not in lat.segments:
            raise GeometryError(f"unknown anchor {anchor!r}")
        if lat.segment_kind[anchor] != need:
            raise GeometryError(
                f"{kind.value} strings terminate on {need} boundaries; {anchor!r} is "
                f"{lat.segment_kind[anchor]}"
            )
    tri = lat.triangle_of()
    src = {int(tri[i]) for i in lat.segments[from_anchor]}
    dst = {int(tri[i]) for i in lat.segments[to_anchor]}
    if not src or not dst:
        raise GeometryError("anchor segment is empty")
    graph = _triangle_graph(lat)
    prev: dict[int, int | None] = {t: None for t in sorted(src)}
    queue = sorted(src)
    found = None
    while queue and found is None:
        nxt = []
        for t in queue:
            if t in dst:
                found = t
                break
            for u in graph[t]:
                if u not in prev:
                    prev[u] = t
                    nxt.append(u)
        queue = nxt
    if found is None:
        raise GeometryError(f"no path between {from_anchor!r} and {to_anchor!r}")
    chain = [found]
    while prev[chain[-1]] is not None:
        chain.append(prev[chain[-1]])
    chain.reverse()

    pos = lat.positions
    centre = {t: pos[list(lat.triangles[t])].mean(axis=0) for t in chain}

    def nearest(t, target, exclude=()):
        cand = [i for i in lat.triangles[t] if i not in exclude]
        d = [np.linalg.norm(_min_vec(lat, pos[i], target)) for i in cand]
        return cand[int(np.argmin(d))]

    def seg_point(anchor, t):
        pts = lat.segments[anchor]
        d = [np.linalg.norm(_min_vec(lat, centre[t], pos[i])) for i in pts]
        return pos[pts[int(np.argmin(d))]]

    sites = []
    for k, t in enumerate(chain):
        before = centre[chain[k - 1]] if k > 0 else seg_point(from_anchor, t)
        after = centre[chain[k + 1]] if k + 1 < len(chain) else seg_point(to_anchor, t)
        a = nearest(t, before)
        b = nearest(t, after, exclude=(a,))
        sites.extend([a, b])
    z = StringPath(PathKind.Z, tuple(sites), Topology.OPEN, (from_anchor, to_anchor))
    return z if kind is PathKind.Z else dual_path(lat, z)


def _min_vec(lat: Lattice, p, q) -> np.ndarray:
    d = np.asarray(q, float) - np.asarray(p, float)
    w = lat.wrap_vector
    if w is not None:
        d = d - np.round(d @ w / (w @ w)) * w
    return d


# ------------------------------------------------------------ serialisation


def path_to_dict(path: StringPath) -> dict:
    return {
        "kind": path.kind.value,
        "sites": list(path.sites),
        "topology": path.topology.value,
        "anchors": list(path.anchors) if path.anchors else None,
    }


def lattice_to_json(lat: Lattice, paths: dict | None = None, indent: int | None = 2) -> str:
    doc = {
        "spec": {
            "cells_x": lat.spec.cells_x,
            "cells_y": lat.spec.cells_y,
            "boundary_y": lat.spec.boundary_y.value,
            "spacing": lat.spec.spacing,
        },
        "sites": [
            {
                "index": s.index,
                "x": s.x,
                "y": s.y,
                "triangle": s.triangle,
                "detuning_scale": float(lat.detuning_scale[s.index]),
            }
            for s in lat.sites
        ],
        "triangles": [list(t) for t in lat.triangles],
        "segments": {k: list(v) for k, v in lat.segments.items()},
        "paths": {k: path_to_dict(p) for k, p in (paths or {}).items()},
    }
    return json.dumps(doc, indent=indent)


def lattice_to_svg(lat: Lattice, paths: dict | None = None, scale: float = 30.0) -> str:
    pos = lat.positions * scale
    lo = pos.min(axis=0) - scale
    hi = pos.max(axis=0) + scale
    w, h = hi - lo
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}">']
    flip = lambda p: (p[0] - lo[0], hi[1] - p[1])  # noqa: E731
    for t in lat.triangles:
        pts = " ".join("%.1f,%.1f" % flip(pos[i]) for i in t)
        out.append(f'<polygon points="{pts}" fill="none" stroke="#999"/>')
    colours = ["#c00", "#06c", "#090", "#c60"]
    for k, p in enumerate((paths or {}).values()):
        for i in p.sites:
            x, y = flip(pos[i])
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{scale / 4:.1f}" fill="{colours[k % 4]}"/>')
    for s in lat.sites:
        x, y = flip(pos[s.index])
        fill = "#888" if lat.detuning_scale[s.index] != 1.0 else "#000"
        out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{scale / 8:.1f}" fill="{fill}"/>')
    out.append("</svg>")
    return "\n".join(out)
