"""P1 finite-element kernel: quadrature, dof layouts, assembly, solves and norms.

Coefficients passed to the assembly routines may be a number, an array of
values at the quadrature points of the selected elements/edges (shape
``(n, nq)``, or ``(n, nq, 2, 2)`` for tensors), or a callable mapping the
physical quadrature points ``(n, nq, 2)`` to such an array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .mesh import (CATALYST, COLLECTORS, FLUID, GDL, INLETS, INTERFACE_SIDES,
                   OUTLETS, POROUS, ALL_REGIONS, Boundary, MultiregionMesh, Region)


class SingularSystemError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates and weights summing to the reference measure."""

    kind: str
    points: np.ndarray
    weights: np.ndarray

    @property
    def shape_values(self) -> np.ndarray:
        """P1 shape functions at the points, (nq, 3) on triangles or (nq, 2) on edges."""
        if self.kind == "triangle":
            xi, eta = self.points[:, 0], self.points[:, 1]
            return np.column_stack([1 - xi - eta, xi, eta])
        s = self.points
        return np.column_stack([1 - s, s])

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def integrate_reference(self, f: Callable) -> float:
        if self.kind == "triangle":
            return float(np.dot(self.weights, f(self.points[:, 0], self.points[:, 1])))
        return float(np.dot(self.weights, f(self.points)))


_DUNAVANT4 = (
    (0.445948490915965, 0.223381589678011),
    (0.091576213509771, 0.109951743655322),
)


def quadrature(kind: str = "triangle", degree: int = 2) -> QuadratureRule:
    """Edge-midpoint rule (degree 2) or 6-point Dunavant (degree 4) on the
    unit right triangle; 2- or 3-point Gauss on the unit interval."""
    if kind == "triangle":
        if degree <= 2:
            pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
            return QuadratureRule(kind, pts, np.full(3, 1.0 / 6.0))
        if degree <= 4:
            pts, wts = [], []
            for a, w in _DUNAVANT4:
                pts += [[a, a], [1 - 2 * a, a], [a, 1 - 2 * a]]
                wts += [w / 2] * 3
            return QuadratureRule(kind, np.array(pts), np.array(wts))
        raise ValueError(f"no triangle rule of degree {degree}")
    if kind == "edge":
        if degree <= 3:
            g = 0.5 / np.sqrt(3.0)
            return QuadratureRule(kind, np.array([0.5 - g, 0.5 + g]), np.array([0.5, 0.5]))
        if degree <= 5:
            g = 0.5 * np.sqrt(0.6)
            return QuadratureRule(kind, np.array([0.5 - g, 0.5, 0.5 + g]),
                                  np.array([5.0, 8.0, 5.0]) / 18.0)
        raise ValueError(f"no edge rule of degree {degree}")
    raise ValueError(f"unknown quadrature domain {kind!r}")


TRI2 = quadrature("triangle", 2)
TRI4 = quadrature("triangle", 4)
EDGE3 = quadrature("edge", 3)


# ---------------------------------------------------------------------------
# geometry helpers

def p1_gradients(mesh: MultiregionMesh) -> np.ndarray:
    """Constant P1 basis gradients per triangle, shape (T, 3, 2)."""
    if "grads" not in mesh._cache:
        p = mesh.nodes[mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        mesh._cache["grads"] = ref @ np.linalg.inv(J)
    return mesh._cache["grads"]


def element_points(mesh: MultiregionMesh, tris: np.ndarray, rule: QuadratureRule = TRI2) -> np.ndarray:
    p = mesh.nodes[mesh.triangles[tris]]
    return np.einsum("qk,tkd->tqd", rule.shape_values, p)


# ---------------------------------------------------------------------------
# degrees of freedom

@dataclass(frozen=True)
class FieldDofs:
    """Dof map of one scalar field.

    ``elem_dofs`` is (T, 3) with -1 outside the support.  For broken fields
    ``node_dof`` holds the GDL-side copy and ``membrane_dof`` the extra
    membrane-side copy on catalyst-layer nodes (-1 elsewhere).
    """

    name: str
    regions: frozenset
    ndof: int
    elem_dofs: np.ndarray
    node_dof: np.ndarray
    dof_node: np.ndarray
    dirichlet: np.ndarray
    broken: bool = False
    membrane_dof: np.ndarray | None = None

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.ndof, dtype=bool)
        mask[self.dirichlet] = False
        return np.flatnonzero(mask)


@dataclass(frozen=True)
class DofLayout:
    mesh: MultiregionMesh
    fields: Mapping[str, FieldDofs]

    def __getitem__(self, name: str) -> FieldDofs:
        return self.fields[name]


def _continuous_field(mesh, name, regions, dirichlet_nodes):
    regions = frozenset(regions)
    tris = mesh.triangles_in(regions)
    support = np.unique(mesh.triangles[tris])
    node_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_dof[support] = np.arange(len(support))
    elem = np.full(mesh.triangles.shape, -1, dtype=np.int64)
    elem[tris] = node_dof[mesh.triangles[tris]]
    dirichlet = np.unique(node_dof[np.intersect1d(dirichlet_nodes, support)])
    return FieldDofs(name, regions, len(support), elem, node_dof, support, dirichlet)


def _broken_potential(mesh, dirichlet_nodes):
    regions = frozenset(POROUS)
    tris = mesh.triangles_in(regions)
    support = np.unique(mesh.triangles[tris])
    node_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_dof[support] = np.arange(len(support))
    cl_nodes = mesh.edge_nodes(CATALYST)
    membrane_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
    membrane_dof[cl_nodes] = len(support) + np.arange(len(cl_nodes))
    elem = np.full(mesh.triangles.shape, -1, dtype=np.int64)
    elem[tris] = node_dof[mesh.triangles[tris]]
    mem = mesh.triangles_in([Region.MEMBRANE])
    local = mesh.triangles[mem]
    dup = membrane_dof[local]
    elem[mem] = np.where(dup >= 0, dup, elem[mem])
    dof_node = np.concatenate([support, cl_nodes])
    # collectors lie on GDL edges, so only GDL-side copies are fixed
    dirichlet = np.unique(node_dof[np.intersect1d(dirichlet_nodes, support)])
    return FieldDofs("phi", regions, len(dof_node), elem, node_dof, dof_node, dirichlet,
                     broken=True, membrane_dof=membrane_dof)


def build_layout(mesh: MultiregionMesh) -> DofLayout:
    """Dof maps for velocity components, Darcy pressure, densities, temperature, potential."""
    io_nodes = mesh.edge_nodes(INLETS | OUTLETS)
    e, _, adj = mesh.edges([Boundary.WALL])
    fluid_wall = np.isin(mesh.tri_region[adj[:, 0]], [int(r) for r in FLUID])
    wall_nodes = np.unique(e[fluid_wall])
    collector_nodes = mesh.edge_nodes(COLLECTORS)
    fields = {
        "ux": _continuous_field(mesh, "ux", FLUID, np.union1d(io_nodes, wall_nodes)),
        "uy": _continuous_field(mesh, "uy", FLUID, io_nodes),
        "p": _continuous_field(mesh, "p", POROUS, np.array([], dtype=np.int64)),
        "rho1": _continuous_field(mesh, "rho1", ALL_REGIONS, io_nodes),
        "rho2": _continuous_field(mesh, "rho2", ALL_REGIONS, io_nodes),
        "theta": _continuous_field(mesh, "theta", ALL_REGIONS, io_nodes),
        "phi": _broken_potential(mesh, collector_nodes),
    }
    return DofLayout(mesh, fields)


def continuous_potential_field(mesh: MultiregionMesh) -> FieldDofs:
    """Unbroken P1 potential on the porous strips with the same collector data."""
    fd = _continuous_field(mesh, "phi_cont", POROUS, mesh.edge_nodes(COLLECTORS))
    return fd


def with_field(layout: DofLayout, fd: FieldDofs) -> DofLayout:
    fields = dict(layout.fields)
    fields[fd.name] = fd
    return DofLayout(layout.mesh, fields)


# ---------------------------------------------------------------------------
# interpolation

def _select_tris(mesh, fds: Sequence[FieldDofs], regions):
    support = frozenset.intersection(*[fd.regions for fd in fds])
    if regions is None:
        regions = support
    regions = frozenset(regions)
    if not regions <= support:
        raise ValueError(f"regions {sorted(r.name for r in regions - support)} "
                         f"outside the support of {[fd.name for fd in fds]}")
    return mesh.triangles_in(regions)


def interpolate(mesh: MultiregionMesh, fd: FieldDofs, values: np.ndarray, tris: np.ndarray,
                rule: QuadratureRule = TRI2) -> np.ndarray:
    """Values of a P1 field at the quadrature points of ``tris``, (n, nq)."""
    dofs = fd.elem_dofs[tris]
    if np.any(dofs < 0):
        raise ValueError(f"field {fd.name} is not defined on all requested triangles")
    return np.asarray(values)[dofs] @ rule.shape_values.T


def gradient(mesh: MultiregionMesh, fd: FieldDofs, values: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Per-triangle constant gradient, (n, 2)."""
    dofs = fd.elem_dofs[tris]
    if np.any(dofs < 0):
        raise ValueError(f"field {fd.name} is not defined on all requested triangles")
    return np.einsum("tk,tkd->td", np.asarray(values)[dofs], p1_gradients(mesh)[tris])


def _sample(coef, n, xy, nq, tensor=False):
    if callable(coef):
        coef = coef(xy)
    c = np.asarray(coef, dtype=float)
    if c.ndim == 0:
        return np.full((n, nq), float(c))
    if tensor and c.shape == (2, 2):
        return np.broadcast_to(c, (n, nq, 2, 2))
    if c.shape[:1] == (n,) and c.ndim == 1:
        return np.repeat(c[:, None], nq, axis=1)
    return c


def _coo(rows, cols, vals, shape):
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    m.sum_duplicates()
    return m


# ---------------------------------------------------------------------------
# volume assembly

def assemble_diffusion(mesh: MultiregionMesh, layout: DofLayout, field: str, coef=1.0,
                       regions: Iterable[Region] | None = None, trial: str | None = None,
                       rule: QuadratureRule = TRI2) -> sp.csr_matrix:
    """Matrix of ``sum_T int_T grad(test_i) . C grad(trial_j)``; C scalar or 2x2."""
    fi = layout[field]
    fj = layout[trial or field]
    tris = _select_tris(mesh, [fi, fj], regions)
    G = p1_gradients(mesh)[tris]
    area = mesh.areas[tris]
    xy = element_points(mesh, tris, rule)
    c = _sample(coef, len(tris), xy, len(rule.weights), tensor=True)
    w = rule.normalized_weights
    if c.ndim == 4:
        cbar = np.einsum("q,tqab->tab", w, c)
        K = np.einsum("t,tia,tab,tjb->tij", area, G, cbar, G)
    else:
        cbar = c @ w
        K = np.einsum("t,tia,tja->tij", area * cbar, G, G)
    rows = np.repeat(fi.elem_dofs[tris][:, :, None], 3, axis=2)
    cols = np.repeat(fj.elem_dofs[tris][:, None, :], 3, axis=1)
    return _coo(rows, cols, K, (fi.ndof, fj.ndof))


def assemble_mass(mesh: MultiregionMesh, layout: DofLayout, field: str, coef=1.0,
                  regions: Iterable[Region] | None = None, trial: str | None = None,
                  rule: QuadratureRule = TRI4) -> sp.csr_matrix:
    fi = layout[field]
    fj = layout[trial or field]
    tris = _select_tris(mesh, [fi, fj], regions)
    xy = element_points(mesh, tris, rule)
    c = _sample(coef, len(tris), xy, len(rule.weights))
    N = rule.shape_values
    M = np.einsum("t,q,tq,qi,qj->tij", mesh.areas[tris], rule.normalized_weights, c, N, N)
    rows = np.repeat(fi.elem_dofs[tris][:, :, None], 3, axis=2)
    cols = np.repeat(fj.elem_dofs[tris][:, None, :], 3, axis=1)
    return _coo(rows, cols, M, (fi.ndof, fj.ndof))


def assemble_convection(mesh: MultiregionMesh, layout: DofLayout, field: str, velocity,
                        regions: Iterable[Region] = FLUID,
                        rule: QuadratureRule = TRI4) -> sp.csr_matrix:
    """Matrix of ``int (trial_j) w . grad(test_i)``; the gradient sits on the test function.

    ``velocity`` is a (n, nq, 2) array or a callable of the quadrature points.
    """
    fd = layout[field]
    tris = _select_tris(mesh, [fd], regions)
    G = p1_gradients(mesh)[tris]
    xy = element_points(mesh, tris, rule)
    wv = velocity(xy) if callable(velocity) else np.asarray(velocity, dtype=float)
    wv = np.broadcast_to(wv, (len(tris), len(rule.weights), 2))
    N = rule.shape_values
    # sum_q w_q N_j(q) (w(q) . grad N_i)
    C = np.einsum("t,q,qj,tqa,tia->tij", mesh.areas[tris], rule.normalized_weights, N, wv, G)
    rows = np.repeat(fd.elem_dofs[tris][:, :, None], 3, axis=2)
    cols = np.repeat(fd.elem_dofs[tris][:, None, :], 3, axis=1)
    return _coo(rows, cols, C, (fd.ndof, fd.ndof))


def assemble_load(mesh: MultiregionMesh, layout: DofLayout, field: str, f,
                  regions: Iterable[Region] | None = None,
                  rule: QuadratureRule = TRI4) -> np.ndarray:
    """Vector of ``int f test_i``."""
    fd = layout[field]
    tris = _select_tris(mesh, [fd], regions)
    xy = element_points(mesh, tris, rule)
    c = _sample(f, len(tris), xy, len(rule.weights))
    loc = np.einsum("t,q,tq,qi->ti", mesh.areas[tris], rule.normalized_weights, c, rule.shape_values)
    return np.bincount(fd.elem_dofs[tris].ravel(), loc.ravel(), minlength=fd.ndof)


def assemble_gradient_load(mesh: MultiregionMesh, layout: DofLayout, field: str, f,
                           component: int, regions: Iterable[Region] | None = None,
                           rule: QuadratureRule = TRI2) -> np.ndarray:
    """Vector of ``int f d(test_i)/dx_component``."""
    fd = layout[field]
    tris = _select_tris(mesh, [fd], regions)
    xy = element_points(mesh, tris, rule)
    c = _sample(f, len(tris), xy, len(rule.weights))
    G = p1_gradients(mesh)[tris][:, :, component]
    loc = (mesh.areas[tris] * (c @ rule.normalized_weights))[:, None] * G
    return np.bincount(fd.elem_dofs[tris].ravel(), loc.ravel(), minlength=fd.ndof)


# ---------------------------------------------------------------------------
# edge assembly

@dataclass(frozen=True)
class EdgeSet:
    dofs: np.ndarray      # (n, 2)
    nodes: np.ndarray     # (n, 2)
    length: np.ndarray    # (n,)
    tris: np.ndarray      # (n,)
    normal: np.ndarray    # (n, 2) outward from ``tris``

    def points(self, mesh: MultiregionMesh, rule: QuadratureRule = EDGE3) -> np.ndarray:
        p = mesh.nodes[self.nodes]
        return np.einsum("qk,ekd->eqd", rule.shape_values, p)


def edge_set(mesh: MultiregionMesh, fd: FieldDofs, tags: Iterable[Boundary],
             side: Region | Iterable[Region] | None = None) -> EdgeSet:
    """Tagged edges seen from the adjacent triangle inside the field support.

    ``side`` restricts which adjacent region is used on interfaces.
    """
    tags = list(tags)
    e, _, adj = mesh.edges(tags)
    if side is None:
        allowed = {int(r) for r in fd.regions}
    else:
        side = [side] if isinstance(side, Region) else list(side)
        allowed = {int(r) for r in side} & {int(r) for r in fd.regions}
    reg = mesh.tri_region[adj]
    ok0 = np.isin(reg[:, 0], list(allowed))
    ok1 = np.isin(reg[:, 1], list(allowed))
    if not np.all(ok0 | ok1):
        raise ValueError(f"field {fd.name} is not defined next to all edges of {tags}")
    tri = np.where(ok0, adj[:, 0], adj[:, 1])
    loc = np.argmax(mesh.triangles[tri][:, :, None] == e[:, None, :], axis=1)
    dofs = np.take_along_axis(fd.elem_dofs[tri], loc, axis=1)
    p0, p1 = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    t = p1 - p0
    length = np.linalg.norm(t, axis=1)
    n = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    centroid = mesh.nodes[mesh.triangles[tri]].mean(axis=1)
    n[np.einsum("ij,ij->i", centroid - p0, n) > 0] *= -1
    return EdgeSet(dofs, e, length, tri, n)


def edge_interpolate(fd_values: np.ndarray, edges: EdgeSet, rule: QuadratureRule = EDGE3) -> np.ndarray:
    return np.asarray(fd_values)[edges.dofs] @ rule.shape_values.T


def assemble_boundary_mass(mesh: MultiregionMesh, layout: DofLayout, field: str, coef,
                           tags: Iterable[Boundary], trial: str | None = None,
                           side=None, rule: QuadratureRule = EDGE3) -> sp.csr_matrix:
    """Matrix of ``sum_E int_E c trial_j test_i``."""
    fi = layout[field]
    fj = layout[trial or field]
    ei = edge_set(mesh, fi, tags, side)
    ej = edge_set(mesh, fj, tags, side)
    c = _sample(coef, len(ei.length), ei.points(mesh, rule), len(rule.weights))
    N = rule.shape_values
    M = np.einsum("e,q,eq,qa,qb->eab", ei.length, rule.normalized_weights, c, N, N)
    rows = np.repeat(ei.dofs[:, :, None], 2, axis=2)
    cols = np.repeat(ej.dofs[:, None, :], 2, axis=1)
    return _coo(rows, cols, M, (fi.ndof, fj.ndof))


def assemble_boundary_load(mesh: MultiregionMesh, layout: DofLayout, field: str, g,
                           tags: Iterable[Boundary], side=None,
                           rule: QuadratureRule = EDGE3) -> np.ndarray:
    fd = layout[field]
    es = edge_set(mesh, fd, tags, side)
    c = _sample(g, len(es.length), es.points(mesh, rule), len(rule.weights))
    loc = np.einsum("e,q,eq,qa->ea", es.length, rule.normalized_weights, c, rule.shape_values)
    return np.bincount(es.dofs.ravel(), loc.ravel(), minlength=fd.ndof)


def _jump_sides(mesh, fd, tag):
    tag = Boundary(tag)
    if tag not in CATALYST:
        raise ValueError(f"{tag.name} is not a catalyst-layer interface")
    if not fd.broken:
        raise ValueError(f"field {fd.name} is continuous across {tag.name}")
    left, right = INTERFACE_SIDES[tag]
    gdl = left if left in GDL else right
    return edge_set(mesh, fd, [tag], side=gdl), edge_set(mesh, fd, [tag], side=Region.MEMBRANE)


def interface_jump(mesh: MultiregionMesh, layout: DofLayout, field: str, values: np.ndarray,
                   tag: Boundary, rule: QuadratureRule = EDGE3) -> np.ndarray:
    """GDL-side minus membrane-side trace at the edge quadrature points, (n, nq)."""
    g, m = _jump_sides(mesh, layout[field], tag)
    return edge_interpolate(values, g, rule) - edge_interpolate(values, m, rule)


def assemble_interface_jump(mesh: MultiregionMesh, layout: DofLayout, field: str, coef,
                            tag: Boundary, rule: QuadratureRule = EDGE3) -> sp.csr_matrix:
    """Matrix of ``int c [trial_j][test_i]`` with ``[w] = w_GDL - w_membrane``."""
    fd = layout[field]
    g, m = _jump_sides(mesh, fd, tag)
    c = _sample(coef, len(g.length), g.points(mesh, rule), len(rule.weights))
    N = rule.shape_values
    M = np.einsum("e,q,eq,qa,qb->eab", g.length, rule.normalized_weights, c, N, N)
    dofs = np.concatenate([g.dofs, m.dofs], axis=1)
    sign = np.array([1.0, 1.0, -1.0, -1.0])
    M4 = np.tile(M, (1, 2, 2)) * np.outer(sign, sign)
    rows = np.repeat(dofs[:, :, None], 4, axis=2)
    cols = np.repeat(dofs[:, None, :], 4, axis=1)
    return _coo(rows, cols, M4, (fd.ndof, fd.ndof))


def assemble_interface_jump_load(mesh: MultiregionMesh, layout: DofLayout, field: str, g_values,
                                 tag: Boundary, rule: QuadratureRule = EDGE3) -> np.ndarray:
    """Vector of ``int g [test_i]``."""
    fd = layout[field]
    g, m = _jump_sides(mesh, fd, tag)
    c = _sample(g_values, len(g.length), g.points(mesh, rule), len(rule.weights))
    loc = np.einsum("e,q,eq,qa->ea", g.length, rule.normalized_weights, c, rule.shape_values)
    out = np.bincount(g.dofs.ravel(), loc.ravel(), minlength=fd.ndof)
    out -= np.bincount(m.dofs.ravel(), loc.ravel(), minlength=fd.ndof)
    return out


# ---------------------------------------------------------------------------
# systems

@dataclass
class SparseSystem:
    """Square CSR system with Dirichlet rows already replaced by identity rows."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    offsets: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    dirichlet: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m or len(self.rhs) != n:
            raise ValueError(f"system is not square: {self.matrix.shape}, rhs {len(self.rhs)}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def data(self) -> np.ndarray:
        return self.matrix.data

    def split(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {name: x[a:b] for name, (a, b) in self.offsets.items()}

    def block(self, row: str, col: str) -> sp.csr_matrix:
        (a, b), (c, d) = self.offsets[row], self.offsets[col]
        return self.matrix[a:b, c:d]


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, dofs: np.ndarray, values: np.ndarray):
    """Symmetric elimination: move known columns to the rhs, identity rows."""
    A = sp.csr_matrix(A)
    b = np.array(b, dtype=float)
    n = A.shape[0]
    g = np.zeros(n)
    g[dofs] = values
    if np.any(g):
        b = b - A @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    b[dofs] = values
    return A, b


class BlockBuilder:
    """Accumulates field blocks of a monolithic system."""

    def __init__(self, layout: DofLayout, fields: Sequence[str]):
        self.layout = layout
        self.fields = list(fields)
        self.offsets = {}
        n = 0
        for f in self.fields:
            self.offsets[f] = (n, n + layout[f].ndof)
            n += layout[f].ndof
        self.n = n
        self._blocks: dict[tuple[str, str], sp.csr_matrix] = {}
        self.rhs = np.zeros(n)

    def add(self, row: str, col: str, mat: sp.spmatrix) -> None:
        key = (row, col)
        self._blocks[key] = self._blocks[key] + mat if key in self._blocks else sp.csr_matrix(mat)

    def add_rhs(self, row: str, vec: np.ndarray) -> None:
        a, b = self.offsets[row]
        self.rhs[a:b] += vec

    def matrix(self) -> sp.csr_matrix:
        grid = [[self._blocks.get((r, c)) for c in self.fields] for r in self.fields]
        for i, f in enumerate(self.fields):
            if grid[i][i] is None:
                nf = self.layout[f].ndof
                grid[i][i] = sp.csr_matrix((nf, nf))
        return sp.bmat(grid, format="csr")

    def dirichlet_dofs(self) -> np.ndarray:
        return np.concatenate([self.layout[f].dirichlet + self.offsets[f][0] for f in self.fields])

    def build(self, dirichlet_values: Mapping[str, np.ndarray] | None = None) -> SparseSystem:
        dirichlet_values = dirichlet_values or {}
        dofs, vals = [], []
        for f in self.fields:
            fd = self.layout[f]
            dofs.append(fd.dirichlet + self.offsets[f][0])
            v = dirichlet_values.get(f)
            vals.append(np.zeros(len(fd.dirichlet)) if v is None else np.asarray(v, dtype=float))
        dofs = np.concatenate(dofs)
        A, b = apply_dirichlet(self.matrix(), self.rhs, dofs, np.concatenate(vals))
        return SparseSystem(A, b, dict(self.offsets), dofs)


def _lu_solve(A: sp.csr_matrix, b: np.ndarray, rtol: float) -> np.ndarray:
    try:
        lu = splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(f"matrix of dimension {A.shape[0]} is singular: {exc}") from exc
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(A.shape[0])
    x = lu.solve(b)
    for _ in range(3):
        if not np.all(np.isfinite(x)):
            break
        r = b - A @ x
        if np.linalg.norm(r) <= rtol * bnorm:
            return x
        x = x + lu.solve(r)
    udiag = np.abs(lu.U.diagonal())
    k = int(np.argmin(udiag))
    raise SingularSystemError(
        f"numerically singular system: relative residual "
        f"{np.linalg.norm(b - A @ x) / bnorm:.3e}, smallest pivot {udiag[k]:.3e} at {k}")


def solve_sparse(system: SparseSystem, rtol: float = 1e-10) -> np.ndarray:
    """Direct LU solve with residual check and iterative refinement.

    Decoupled blocks (connected components of the matrix graph) are
    factorized separately, so a block-diagonal system gives exactly the
    same numbers as solving its blocks one by one.
    """
    A = sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = system.dim
    ncomp, labels = connected_components(A, directed=False)
    if ncomp == 1:
        return _lu_solve(A, b, rtol)
    x = np.zeros(n)
    sizes = np.bincount(labels, minlength=ncomp)
    single = sizes[labels] == 1
    diag = A.diagonal()
    if np.any(single & (diag == 0)):
        k = int(np.flatnonzero(single & (diag == 0))[0])
        raise SingularSystemError(f"zero pivot on isolated dof {k}")
    x[single] = b[single] / diag[single]
    order = np.argsort(labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)])
    for c in np.flatnonzero(sizes > 1):
        idx = order[starts[c]:starts[c + 1]]
        x[idx] = _lu_solve(A[idx][:, idx], b[idx], rtol)
    return x


# ---------------------------------------------------------------------------
# norms

def l2_norm(mesh: MultiregionMesh, fd: FieldDofs, values, regions=None) -> float:
    tris = _select_tris(mesh, [fd], regions)
    v = interpolate(mesh, fd, values, tris, TRI2)
    return float(np.sqrt(np.sum(mesh.areas[tris] * ((v**2) @ TRI2.normalized_weights))))


def lp_norm(mesh: MultiregionMesh, fd: FieldDofs, values, p: float, regions=None) -> float:
    """L^p norm; exact for p = 4 on P1 data."""
    tris = _select_tris(mesh, [fd], regions)
    v = interpolate(mesh, fd, values, tris, TRI4)
    return float(np.sum(mesh.areas[tris] * ((np.abs(v) ** p) @ TRI4.normalized_weights)) ** (1 / p))


def h1_seminorm(mesh: MultiregionMesh, fd: FieldDofs, values, regions=None) -> float:
    tris = _select_tris(mesh, [fd], regions)
    g = gradient(mesh, fd, values, tris)
    return float(np.sqrt(np.sum(mesh.areas[tris] * np.sum(g**2, axis=1))))


def boundary_l2_norm(mesh: MultiregionMesh, fd: FieldDofs, values, tags, side=None) -> float:
    es = edge_set(mesh, fd, tags, side)
    v = edge_interpolate(values, es)
    return float(np.sqrt(np.sum(es.length * ((v**2) @ EDGE3.normalized_weights))))


def cellwise_lt_norm(mesh: MultiregionMesh, values: np.ndarray, t: float, regions=GDL) -> float:
    """L^t norm of a per-triangle constant field over ``regions``."""
    tris = mesh.triangles_in(regions)
    return float(np.sum(mesh.areas[tris] * np.abs(values[tris]) ** t) ** (1 / t))


def vector_l2_norm(mesh, layout, ux, uy, regions=None) -> float:
    return float(np.hypot(l2_norm(mesh, layout["ux"], ux, regions),
                          l2_norm(mesh, layout["uy"], uy, regions)))


def sym_grad_norm(mesh, layout, ux, uy, regions=FLUID) -> float:
    """``||D u||_2`` with ``D = (grad + grad^T) / 2``."""
    tris = mesh.triangles_in(regions)
    gx = gradient(mesh, layout["ux"], ux, tris)
    gy = gradient(mesh, layout["uy"], uy, tris)
    dd = gx[:, 0] ** 2 + gy[:, 1] ** 2 + 0.5 * (gx[:, 1] + gy[:, 0]) ** 2
    return float(np.sqrt(np.sum(mesh.areas[tris] * dd)))


def div_norm(mesh, layout, ux, uy, regions=FLUID) -> float:
    tris = mesh.triangles_in(regions)
    d = gradient(mesh, layout["ux"], ux, tris)[:, 0] + gradient(mesh, layout["uy"], uy, tris)[:, 1]
    return float(np.sqrt(np.sum(mesh.areas[tris] * d**2)))


def norms(mesh: MultiregionMesh, fd: FieldDofs, values, regions=None,
          boundary_tags: Iterable[Boundary] | None = None, t: float | None = None) -> dict[str, float]:
    """Standard norms of one P1 field."""
    out = {
        "L2": l2_norm(mesh, fd, values, regions),
        "H1_semi": h1_seminorm(mesh, fd, values, regions),
        "L4": lp_norm(mesh, fd, values, 4, regions),
    }
    if boundary_tags is not None:
        out["boundary_L2"] = boundary_l2_norm(mesh, fd, values, boundary_tags)
    if t is not None:
        out[f"L{t:g}"] = lp_norm(mesh, fd, values, t, regions)
    return out


# ---------------------------------------------------------------------------
# state

@dataclass
class State:
    """Nodal solution of the coupled problem.

    ``Phi`` is stored per triangle (zero outside the GDLs); ``frozen`` keeps
    the data of the last auxiliary electrochemical solve so balances can be
    evaluated exactly.
    """

    ux: np.ndarray
    uy: np.ndarray
    p: np.ndarray
    rho: np.ndarray      # (2, n)
    theta: np.ndarray
    phi: np.ndarray
    Phi: np.ndarray
    frozen: object | None = None

    @classmethod
    def zeros(cls, layout: DofLayout) -> "State":
        return cls(
            ux=np.zeros(layout["ux"].ndof), uy=np.zeros(layout["uy"].ndof),
            p=np.zeros(layout["p"].ndof),
            rho=np.zeros((2, layout["rho1"].ndof)), theta=np.zeros(layout["theta"].ndof),
            phi=np.zeros(layout["phi"].ndof), Phi=np.zeros(layout.mesh.n_triangles),
        )

    def check(self, layout: DofLayout) -> None:
        expected = {"ux": layout["ux"].ndof, "uy": layout["uy"].ndof, "p": layout["p"].ndof,
                    "theta": layout["theta"].ndof, "phi": layout["phi"].ndof,
                    "Phi": layout.mesh.n_triangles}
        for name, n in expected.items():
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.rho.shape != (2, layout["rho1"].ndof):
            raise ValueError(f"rho has shape {self.rho.shape}")
        if np.any(self.Phi < 0):
            raise ValueError("Joule field must be non-negative")
