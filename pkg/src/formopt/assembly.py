"""Structured simplicial meshes, Lagrange dof maps and global assembly."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from formopt.form_tensors import FormSpec, affine_maps, geometry_vectors
from formopt.simplex_poly import SUPPORTED_DEGREES, UnsupportedElement, lagrange_basis

Kernel = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Mesh:
    dim: int
    vertices: np.ndarray
    cells: np.ndarray

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def cell_coordinates(self) -> np.ndarray:
        return self.vertices[self.cells]

    def measure(self) -> float:
        _, _, det = affine_maps(self.cell_coordinates())
        return float(np.abs(det).sum() / (2 if self.dim == 2 else 6))


def _orient(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    cells = cells.copy()
    _, _, det = affine_maps(vertices[cells])
    neg = det < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    return cells


def unit_square_mesh(n: int) -> Mesh:
    """(n+1)^2 vertices, 2 n^2 right triangles; every square is cut along
    the diagonal from (x, y) to (x+h, y+h)."""
    if n < 1:
        raise ValueError("n must be >= 1, got %r" % (n,))
    t = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(2, vertices, _orient(vertices, cells))


def unit_cube_mesh(n: int) -> Mesh:
    """(n+1)^3 vertices, 6 n^3 tetrahedra (Kuhn split of every cube)."""
    if n < 1:
        raise ValueError("n must be >= 1, got %r" % (n,))
    t = np.linspace(0.0, 1.0, n + 1)
    zz, yy, xx = np.meshgrid(t, t, t, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    k, j, i = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = (k * (n + 1) ** 2 + j * (n + 1) + i).ravel()
    step = np.array([1, n + 1, (n + 1) ** 2])
    tets = []
    # one tetrahedron per monotone path from corner (0,0,0) to (1,1,1)
    for perm in permutations(range(3)):
        offs = [0]
        for axis in perm:
            offs.append(offs[-1] + step[axis])
        tets.append(np.column_stack([base + o for o in offs]))
    cells = np.stack(tets, axis=1).reshape(-1, 4)
    return Mesh(3, vertices, _orient(vertices, cells))


@dataclass(frozen=True)
class DofMap:
    degree: int
    num_global_dofs: int
    cell_dofs: np.ndarray  # (ncells, |P_k|)
    node_keys: Tuple[Tuple[Tuple[int, int], ...], ...]  # per global dof: ((vertex, weight), ...)

    def node_coordinates(self, mesh: Mesh) -> np.ndarray:
        out = np.zeros((self.num_global_dofs, mesh.dim))
        for dof, key in enumerate(self.node_keys):
            for v, w in key:
                out[dof] += w * mesh.vertices[v]
        return out / self.degree


def build_dofmap(mesh: Mesh, degree: int) -> DofMap:
    """Continuous P_k dof map.

    Every lattice node is identified by its barycentric weights on the
    global vertices of the cell, so coincident nodes get the same key in
    every cell that contains them. Numbering: vertices, edge nodes (edges in
    sorted vertex-pair order, nodes from the lower to the higher vertex),
    face nodes (3D), then cell interiors.
    """
    if degree not in SUPPORTED_DEGREES.get(mesh.dim, ()):
        raise UnsupportedElement("unsupported degree %r in dimension %d" % (degree, mesh.dim))
    lattice = lagrange_basis(mesh.dim, degree).lattice
    cells = mesh.cells.tolist()
    keys_per_cell = []
    for ci, cell in enumerate(cells):
        row = []
        for lam in lattice:
            key = tuple(sorted((cell[j], w) for j, w in enumerate(lam) if w))
            if len(key) == mesh.dim + 1:
                key = key + ((-1, ci),)  # interior nodes belong to one cell
            row.append(key)
        keys_per_cell.append(row)

    unique = {key for row in keys_per_cell for key in row}

    def order(key):
        verts = tuple(v for v, _ in key if v >= 0)
        support = len(verts)
        if key[-1][0] == -1:
            return (mesh.dim + 1, key[-1][1], tuple(w for _, w in key[:-1]))
        # along the entity: increasing weight on the higher-numbered vertices
        return (support, verts, tuple(w for _, w in reversed(key)))

    ordered = sorted(unique, key=order)
    number = {key: i for i, key in enumerate(ordered)}
    cell_dofs = np.array([[number[k] for k in row] for row in keys_per_cell], dtype=np.int64)
    node_keys = tuple(tuple((v, w) for v, w in key if v >= 0) for key in ordered)
    return DofMap(degree, len(ordered), cell_dofs, node_keys)


def expected_num_dofs(mesh: Mesh, degree: int) -> int:
    """vertices + edges (k-1) + faces (k-1)(k-2)/2 + cells * interior count."""
    k = degree
    edges, faces = set(), set()
    for cell in mesh.cells.tolist():
        c = sorted(cell)
        for a in range(len(c)):
            for b in range(a + 1, len(c)):
                edges.add((c[a], c[b]))
        if mesh.dim == 3:
            for skip in range(4):
                faces.add(tuple(v for i, v in enumerate(c) if i != skip))
    if mesh.dim == 2:
        interior = (k - 1) * (k - 2) // 2
        return mesh.num_vertices + len(edges) * (k - 1) + mesh.num_cells * interior
    interior = (k - 1) * (k - 2) * (k - 3) // 6
    return (mesh.num_vertices + len(edges) * (k - 1) + len(faces) * (k - 1) * (k - 2) // 2
            + mesh.num_cells * interior)


class SparseMatrix:
    """Row-wise map storage: ``rows[i]`` maps column index to value."""

    def __init__(self, n: int):
        self.n = n
        self.rows: List[Dict[int, float]] = [dict() for _ in range(n)]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    def nnz(self) -> int:
        return sum(len(r) for r in self.rows)

    def row_items(self, i: int) -> List[Tuple[int, float]]:
        return sorted(self.rows[i].items())

    def matvec(self, u: Sequence[float]) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.zeros(self.n)
        for i, row in enumerate(self.rows):
            if row:
                cols = np.fromiter(row.keys(), dtype=np.int64, count=len(row))
                vals = np.fromiter(row.values(), dtype=float, count=len(row))
                out[i] = vals.dot(u[cols])
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for i, row in enumerate(self.rows):
            for j, v in row.items():
                out[i, j] = v
        return out

    def to_scipy(self):
        import scipy.sparse as sp

        ri, ci, vals = [], [], []
        for i, row in enumerate(self.rows):
            for j, v in sorted(row.items()):
                ri.append(i)
                ci.append(j)
                vals.append(v)
        return sp.csr_matrix((vals, (ri, ci)), shape=self.shape)


def cell_coefficients(spec: FormSpec, mesh: Mesh, dofmap: DofMap, coeffs: Dict[str, np.ndarray],
                      u: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Restrict global coefficient data to per-cell arrays.

    ``coeffs['w']`` is a global P_k vector; ``coeffs['beta']`` is either one
    constant d-vector or a (ncells, d) array.
    """
    out = {}
    sizes = spec.coefficient_sizes()
    if "w" in sizes:
        w = np.asarray(coeffs["w"], dtype=float)
        if w.shape != (dofmap.num_global_dofs,):
            raise ValueError("weight must have %d global entries" % dofmap.num_global_dofs)
        out["w"] = w[dofmap.cell_dofs]
    if "beta" in sizes:
        beta = np.asarray(coeffs["beta"], dtype=float)
        if beta.shape not in ((mesh.dim,), (mesh.num_cells, mesh.dim)):
            raise ValueError("beta must have shape (%d,) or (%d, %d)" % (mesh.dim, mesh.num_cells, mesh.dim))
        out["beta"] = np.broadcast_to(beta, (mesh.num_cells, mesh.dim))
    if "u" in sizes:
        if u is None:
            raise ValueError("action mode needs a global vector u")
        out["u"] = np.asarray(u, dtype=float)[dofmap.cell_dofs]
    return out


def geometry_batch(spec: FormSpec, mesh: Mesh, dofmap: DofMap, coeffs: Dict[str, np.ndarray],
                   u: Optional[np.ndarray] = None) -> np.ndarray:
    _, inv, det = affine_maps(mesh.cell_coordinates(), check=False)
    return geometry_vectors(spec, inv, det, cell_coefficients(spec, mesh, dofmap, coeffs, u))


def assemble_matrix(mesh: Mesh, dofmap: DofMap, spec: FormSpec, kernel: Kernel,
                    coeffs: Optional[Dict[str, np.ndarray]] = None) -> SparseMatrix:
    if spec.mode != "matrix":
        raise ValueError("assemble_matrix needs a matrix-mode form, got %s" % spec.label())
    g = geometry_batch(spec, mesh, dofmap, coeffs or {})
    values = kernel(g)
    return scatter_matrix(dofmap, values)


def scatter_matrix(dofmap: DofMap, values: np.ndarray) -> SparseMatrix:
    """Add (ncells, n*n) element matrices into a fresh sparse matrix."""
    A = SparseMatrix(dofmap.num_global_dofs)
    rows = A.rows
    n = dofmap.cell_dofs.shape[1]
    for dofs, vals in zip(dofmap.cell_dofs.tolist(), values.tolist()):
        for a, ra in enumerate(dofs):
            row = rows[ra]
            base = a * n
            for b, cb in enumerate(dofs):
                row[cb] = row.get(cb, 0.0) + vals[base + b]
    return A


def assemble_action(mesh: Mesh, dofmap: DofMap, spec: FormSpec, kernel: Kernel,
                    coeffs: Optional[Dict[str, np.ndarray]], u: np.ndarray) -> np.ndarray:
    if spec.mode != "action":
        raise ValueError("assemble_action needs an action-mode form, got %s" % spec.label())
    u = np.asarray(u, dtype=float)
    if u.shape != (dofmap.num_global_dofs,):
        raise ValueError("u has shape %r, expected (%d,)" % (u.shape, dofmap.num_global_dofs))
    g = geometry_batch(spec, mesh, dofmap, coeffs or {}, u)
    return scatter_vector(dofmap, kernel(g))


def scatter_vector(dofmap: DofMap, values: np.ndarray) -> np.ndarray:
    y = np.zeros(dofmap.num_global_dofs)
    np.add.at(y, dofmap.cell_dofs, values)
    return y


def default_coefficients(spec: FormSpec, mesh: Mesh, dofmap: DofMap, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    if spec.weighted:
        out["w"] = rng.uniform(-1.0, 1.0, dofmap.num_global_dofs)
    if spec.form == "advection":
        out["beta"] = rng.uniform(-1.0, 1.0, (mesh.num_cells, mesh.dim))
    return out
