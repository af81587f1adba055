"""Structured triangulations of the five-strip cell cross-section.

The cell is laid out along x as

    Fuel | AnodeGDL | Membrane | CathodeGDL | Air

with every strip spanning ``0 <= y <= L``.  Channels carry the inlets at
``y = 0`` and outlets at ``y = L``; the porous strips are closed by walls
there, the GDL portions of which act as current collectors.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class InvalidGeometryError(ValueError):
    pass


class Region(enum.IntEnum):
    FUEL = 0
    ANODE_GDL = 1
    MEMBRANE = 2
    CATHODE_GDL = 3
    AIR = 4


class Boundary(enum.IntEnum):
    INLET_A = 0
    INLET_C = 1
    OUTLET_A = 2
    OUTLET_C = 3
    WALL = 4
    COLLECTOR_A = 5
    COLLECTOR_C = 6
    # internal interfaces
    GAMMA_FUEL = 7
    GAMMA_AIR = 8
    GAMMA_A = 9
    GAMMA_C = 10


FLUID = frozenset({Region.FUEL, Region.AIR})
POROUS = frozenset({Region.ANODE_GDL, Region.MEMBRANE, Region.CATHODE_GDL})
GDL = frozenset({Region.ANODE_GDL, Region.CATHODE_GDL})
ALL_REGIONS = frozenset(Region)

INLETS = frozenset({Boundary.INLET_A, Boundary.INLET_C})
OUTLETS = frozenset({Boundary.OUTLET_A, Boundary.OUTLET_C})
COLLECTORS = frozenset({Boundary.COLLECTOR_A, Boundary.COLLECTOR_C})
# Newton cooling acts on the whole wall, collectors included
COOLED_WALL = frozenset({Boundary.WALL, Boundary.COLLECTOR_A, Boundary.COLLECTOR_C})
INTERFACES = frozenset({Boundary.GAMMA_FUEL, Boundary.GAMMA_AIR,
                        Boundary.GAMMA_A, Boundary.GAMMA_C})
FLUID_POROUS = frozenset({Boundary.GAMMA_FUEL, Boundary.GAMMA_AIR})
CATALYST = frozenset({Boundary.GAMMA_A, Boundary.GAMMA_C})

# interface tag -> (region on the left, region on the right)
INTERFACE_SIDES = {
    Boundary.GAMMA_FUEL: (Region.FUEL, Region.ANODE_GDL),
    Boundary.GAMMA_A: (Region.ANODE_GDL, Region.MEMBRANE),
    Boundary.GAMMA_C: (Region.MEMBRANE, Region.CATHODE_GDL),
    Boundary.GAMMA_AIR: (Region.CATHODE_GDL, Region.AIR),
}

_STRIP_ORDER = (Region.FUEL, Region.ANODE_GDL, Region.MEMBRANE,
                Region.CATHODE_GDL, Region.AIR)
_INTERFACE_ORDER = (Boundary.GAMMA_FUEL, Boundary.GAMMA_A,
                    Boundary.GAMMA_C, Boundary.GAMMA_AIR)
_BOTTOM_TAG = {Region.FUEL: Boundary.INLET_A, Region.AIR: Boundary.INLET_C,
               Region.ANODE_GDL: Boundary.COLLECTOR_A,
               Region.CATHODE_GDL: Boundary.COLLECTOR_C,
               Region.MEMBRANE: Boundary.WALL}
_TOP_TAG = {Region.FUEL: Boundary.OUTLET_A, Region.AIR: Boundary.OUTLET_C,
            Region.ANODE_GDL: Boundary.COLLECTOR_A,
            Region.CATHODE_GDL: Boundary.COLLECTOR_C,
            Region.MEMBRANE: Boundary.WALL}


@dataclass(frozen=True)
class CellGeometry:
    """Strip widths and channel length, all in metres."""

    w_fuel: float
    l_a: float
    l_m: float
    l_c: float
    w_air: float
    L: float

    def __post_init__(self):
        for name in ("w_fuel", "l_a", "l_m", "l_c", "w_air", "L"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidGeometryError(f"{name} must be strictly positive, got {value!r}")
        if self.l_a + self.l_m + self.l_c >= self.L:
            raise InvalidGeometryError(
                "porous layers must be thinner than the channel: "
                f"l_a + l_m + l_c = {self.l_a + self.l_m + self.l_c} >= L = {self.L}")

    @property
    def widths(self) -> tuple[float, ...]:
        return (self.w_fuel, self.l_a, self.l_m, self.l_c, self.w_air)

    @property
    def breakpoints(self) -> np.ndarray:
        """x-coordinates of the six strip boundaries."""
        return np.concatenate([[0.0], np.cumsum(self.widths)])

    @property
    def area(self) -> float:
        return sum(self.widths) * self.L


@dataclass(frozen=True)
class MultiregionMesh:
    """Tagged, conforming P1 triangulation of the cell.

    Interface edges store the adjacent triangles as ``(left, right)`` with the
    left triangle in ``INTERFACE_SIDES[tag][0]``.
    """

    geometry: CellGeometry
    divisions: tuple[tuple[int, ...], int]
    nodes: np.ndarray            # (N, 2)
    triangles: np.ndarray        # (T, 3)
    tri_region: np.ndarray       # (T,)
    boundary_edges: np.ndarray   # (B, 2)
    boundary_tag: np.ndarray     # (B,)
    boundary_tri: np.ndarray     # (B,)
    interface_edges: np.ndarray  # (E, 2)
    interface_tag: np.ndarray    # (E,)
    interface_tris: np.ndarray   # (E, 2)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = np.abs(self.signed_areas())
        return self._cache["areas"]

    def triangles_in(self, regions: Iterable[Region]) -> np.ndarray:
        regions = np.fromiter((int(r) for r in regions), dtype=int)
        return np.flatnonzero(np.isin(self.tri_region, regions))

    def nodes_in(self, regions: Iterable[Region]) -> np.ndarray:
        return np.unique(self.triangles[self.triangles_in(regions)])

    def edges(self, tags: Iterable[Boundary]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edges carrying any of ``tags``: (node pairs, tags, adjacent triangles).

        Adjacent triangles are returned as an (n, 2) array; for outer
        boundary edges both columns hold the single adjacent triangle.
        """
        tags = [Boundary(t) for t in tags]
        outer = np.array([int(t) for t in tags if t not in INTERFACES], dtype=int)
        inner = np.array([int(t) for t in tags if t in INTERFACES], dtype=int)
        mb = np.isin(self.boundary_tag, outer)
        mi = np.isin(self.interface_tag, inner)
        e = np.concatenate([self.boundary_edges[mb], self.interface_edges[mi]])
        t = np.concatenate([self.boundary_tag[mb], self.interface_tag[mi]])
        adj = np.concatenate([np.repeat(self.boundary_tri[mb, None], 2, axis=1),
                              self.interface_tris[mi]])
        return e.reshape(-1, 2), t, adj.reshape(-1, 2)

    def edge_nodes(self, tags: Iterable[Boundary]) -> np.ndarray:
        e, _, _ = self.edges(tags)
        return np.unique(e)

    def outward_normals(self, tags: Iterable[Boundary]) -> np.ndarray:
        """Unit normals of the tagged edges pointing out of their first adjacent triangle."""
        e, _, adj = self.edges(tags)
        p0, p1 = self.nodes[e[:, 0]], self.nodes[e[:, 1]]
        t = p1 - p0
        n = np.column_stack([t[:, 1], -t[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        centroid = self.nodes[self.triangles[adj[:, 0]]].mean(axis=1)
        flip = np.einsum("ij,ij->i", centroid - p0, n) > 0
        n[flip] *= -1
        return n


def build_mesh(geometry: CellGeometry, divisions_x: Sequence[int], divisions_y: int) -> MultiregionMesh:
    """Tensor-product mesh with ``divisions_x[k]`` columns in strip k and ``divisions_y`` rows.

    Each rectangle is cut along its lower-left/upper-right diagonal.
    """
    divisions_x = tuple(int(n) for n in divisions_x)
    if len(divisions_x) != 5:
        raise InvalidGeometryError(f"need 5 strip divisions, got {len(divisions_x)}")
    if min(divisions_x) < 1 or int(divisions_y) < 1:
        raise InvalidGeometryError(f"division counts must be >= 1: {divisions_x}, {divisions_y}")
    ny = int(divisions_y)
    bp = geometry.breakpoints

    xs = [np.linspace(bp[k], bp[k + 1], n + 1) for k, n in enumerate(divisions_x)]
    # pin shared columns to the exact breakpoint values
    x = np.concatenate([xs[0]] + [xk[1:] for xk in xs[1:]])
    y = np.linspace(0.0, geometry.L, ny + 1)
    nx = len(x) - 1
    col_region = np.repeat(np.array([int(r) for r in _STRIP_ORDER]), divisions_x)
    col_start = np.concatenate([[0], np.cumsum(divisions_x)])

    X, Y = np.meshgrid(x, y)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    n00, n10, n11, n01 = nid(I, J), nid(I + 1, J), nid(I + 1, J + 1), nid(I, J + 1)
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    # triangle 2c is the lower one of cell c, 2c+1 the upper one
    triangles = np.empty((2 * len(I), 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    tri_region = np.repeat(col_region[I], 2)

    def cell(i, j):
        return j * nx + i

    b_edges, b_tags, b_tris = [], [], []
    cols = np.arange(nx)
    b_edges.append(np.column_stack([nid(cols, 0), nid(cols + 1, 0)]))
    b_tags.append([int(_BOTTOM_TAG[Region(r)]) for r in col_region])
    b_tris.append(2 * cell(cols, 0))
    b_edges.append(np.column_stack([nid(cols + 1, ny), nid(cols, ny)]))
    b_tags.append([int(_TOP_TAG[Region(r)]) for r in col_region])
    b_tris.append(2 * cell(cols, ny - 1) + 1)
    rows = np.arange(ny)
    b_edges.append(np.column_stack([nid(0, rows + 1), nid(0, rows)]))
    b_tags.append([int(Boundary.WALL)] * ny)
    b_tris.append(2 * cell(0, rows) + 1)
    b_edges.append(np.column_stack([nid(nx, rows), nid(nx, rows + 1)]))
    b_tags.append([int(Boundary.WALL)] * ny)
    b_tris.append(2 * cell(nx - 1, rows))

    i_edges, i_tags, i_tris = [], [], []
    for k, tag in enumerate(_INTERFACE_ORDER):
        ic = col_start[k + 1]
        i_edges.append(np.column_stack([nid(ic, rows), nid(ic, rows + 1)]))
        i_tags.append([int(tag)] * ny)
        i_tris.append(np.column_stack([2 * cell(ic - 1, rows), 2 * cell(ic, rows) + 1]))

    arrays = dict(
        nodes=nodes,
        triangles=triangles,
        tri_region=tri_region.astype(np.int64),
        boundary_edges=np.concatenate(b_edges).astype(np.int64),
        boundary_tag=np.concatenate(b_tags).astype(np.int64),
        boundary_tri=np.concatenate(b_tris).astype(np.int64),
        interface_edges=np.concatenate(i_edges).astype(np.int64),
        interface_tag=np.concatenate(i_tags).astype(np.int64),
        interface_tris=np.concatenate(i_tris).astype(np.int64),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return MultiregionMesh(geometry=geometry, divisions=(divisions_x, ny), **arrays)


def refine(mesh: MultiregionMesh, factor: int = 2) -> MultiregionMesh:
    nx, ny = mesh.divisions
    return build_mesh(mesh.geometry, [factor * n for n in nx], factor * ny)


@dataclass
class ValidationReport:
    violations: list[str]
    max_aspect_ratio: float

    def __bool__(self) -> bool:
        return not self.violations

    @property
    def warnings(self) -> list[str]:
        if self.max_aspect_ratio > 100:
            return [f"max triangle aspect ratio {self.max_aspect_ratio:.1f}"]
        return []


def validate_mesh(mesh: MultiregionMesh) -> ValidationReport:
    violations = []
    valid_regions = {int(r) for r in Region}
    for t in np.flatnonzero(mesh.signed_areas() <= 0):
        violations.append(f"triangle {t} has non-positive signed area")
    for t in np.flatnonzero(~np.isin(mesh.tri_region, list(valid_regions))):
        violations.append(f"triangle {t} carries unknown region {mesh.tri_region[t]}")

    for k, (edge, tag, (tl, tr)) in enumerate(zip(mesh.interface_edges, mesh.interface_tag,
                                                   mesh.interface_tris)):
        left, right = INTERFACE_SIDES[Boundary(tag)]
        if not (set(edge) <= set(mesh.triangles[tl]) and set(edge) <= set(mesh.triangles[tr])):
            violations.append(f"interface edge {k} is not shared by its adjacent triangles")
        elif mesh.tri_region[tl] != left or mesh.tri_region[tr] != right:
            violations.append(
                f"interface edge {k} ({Boundary(tag).name}) joins regions "
                f"{mesh.tri_region[tl]}/{mesh.tri_region[tr]}, expected {int(left)}/{int(right)}")
        x0, x1 = mesh.nodes[edge, 0]
        if abs(x0 - x1) > 1e-12 * max(1.0, abs(x0)):
            violations.append(f"interface edge {k} is not vertical")

    for k, (edge, t) in enumerate(zip(mesh.boundary_edges, mesh.boundary_tri)):
        if not set(edge) <= set(mesh.triangles[t]):
            violations.append(f"boundary edge {k} does not belong to triangle {t}")

    p = mesh.nodes[mesh.triangles]
    lengths = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        # longest edge over inradius-like height
        heights = 2 * np.abs(mesh.signed_areas()) / lengths.max(axis=1)
        aspect = lengths.max(axis=1) / heights
    aspect = np.nan_to_num(aspect, nan=np.inf, posinf=np.inf)
    return ValidationReport(violations, float(aspect.max()) if len(aspect) else 0.0)


def measure(mesh: MultiregionMesh, tags: Iterable[Region | Boundary]) -> float:
    """Total area of tagged regions or total length of tagged edges."""
    tags = list(tags)
    if not tags:
        raise ValueError("tag set must be nonempty")
    if all(isinstance(t, Region) for t in tags):
        return float(mesh.areas[mesh.triangles_in(tags)].sum())
    if all(isinstance(t, Boundary) for t in tags):
        e, _, _ = mesh.edges(tags)
        return float(np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1).sum())
    raise ValueError(f"unknown or mixed tags: {tags!r}")
