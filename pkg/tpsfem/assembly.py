"""Sparse blocks of the smoothing system.

The assembled saddle point operator for unknowns ``[c; g1; g2; w]`` is::

    [ A    0     0     L   ]
    [ 0    aL    0    -G1' ]
    [ 0    0     aL   -G2' ]
    [ L   -G1   -G2    0   ]

with right-hand side ``[d; 0; 0; 0]``. Dirichlet dofs are eliminated symmetrically; their
contribution to the remaining rows is exposed through `TpsfemSystem.h`.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import sparse  # type: ignore

from .data import DataBuckets, ScatteredData
from .domain import BoundaryCondition, BoundaryKind, DirichletValues
from .helpers import barycentric, basis_gradients, signed_area2
from .mesh import TriMesh
from .tps_errors import AssemblyError, ContractViolationError

logger = logging.getLogger(__name__)

# Relative area below which a triangle counts as degenerate
_DEGENERATE = 1e-14

# ---------------------------------------------- Element kernels --------------------------------------
def element_matrices(corners: np.ndarray, triangle_ids=None):
    """Exact P1 element matrices for triangles given as (T, 3, 2) corners.

    Returns:
        tuple: (L, G1, G2, M) local (T, 3, 3) arrays where L[t, i, j] = int grad b_i . grad b_j,
        Gk[t, i, j] = int b_i d_k b_j = area / 3 * d_k b_j and M the mass matrix.

    Raises:
        AssemblyError: If a triangle has (numerically) zero area.
    """
    area2 = np.abs(signed_area2(corners))
    sides = np.linalg.norm(corners[:, [1, 2, 0], :] - corners, axis=2)
    bad = np.flatnonzero(area2 <= _DEGENERATE * sides.max(axis=1) ** 2)
    if bad.size:
        t = int(bad[0]) if triangle_ids is None else int(np.asarray(triangle_ids)[bad[0]])
        raise AssemblyError('triangle {} is degenerate (area {:.3g})'.format(t, 0.5 * area2[bad[0]]))
    grads, area = basis_gradients(corners)
    lap = area[:, None, None] * np.einsum('tik,tjk->tij', grads, grads)
    third = (area / 3.0)[:, None, None]
    g1 = np.broadcast_to(third * grads[:, None, :, 0], lap.shape).copy()
    g2 = np.broadcast_to(third * grads[:, None, :, 1], lap.shape).copy()
    mass = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    return lap, g1, g2, mass


def scatter(triangles: np.ndarray, local: np.ndarray, m: int) -> sparse.csr_matrix:
    """Sums (T, 3, 3) element matrices into an m x m sparse matrix."""
    rows = np.repeat(triangles[:, :, None], 3, axis=2)
    cols = np.repeat(triangles[:, None, :], 3, axis=1)
    return sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(m, m)).tocsr()


def assemble_fem_arrays(nodes: np.ndarray, triangles: np.ndarray):
    """(L, G1, G2) for explicit node and triangle arrays."""
    lap, g1, g2, _ = element_matrices(nodes[triangles])
    m = nodes.shape[0]
    return scatter(triangles, lap, m), scatter(triangles, g1, m), scatter(triangles, g2, m)


def assemble_fem(mesh: TriMesh):
    """Negative Laplacian L and gradient blocks G1, G2 of a mesh.

    Raises:
        AssemblyError: If a triangle is degenerate; the message names the triangle.
    """
    lap, g1, g2, _ = element_matrices(mesh.corners())
    m = mesh.n_nodes
    tris = mesh.triangles
    return scatter(tris, lap, m), scatter(tris, g1, m), scatter(tris, g2, m)


def assemble_mass_arrays(nodes: np.ndarray, triangles: np.ndarray) -> sparse.csr_matrix:
    _, _, _, mass = element_matrices(nodes[triangles])
    return scatter(triangles, mass, nodes.shape[0])


def assemble_mass(mesh: TriMesh) -> sparse.csr_matrix:
    return assemble_mass_arrays(mesh.nodes, mesh.triangles)


def basis_matrix(triangles: np.ndarray, owner: np.ndarray, lam: np.ndarray, m: int) -> sparse.csr_matrix:
    """Sparse n x m matrix of basis values b_p(x_i) from each point's triangle and barycentric coordinates."""
    n = owner.shape[0]
    rows = np.repeat(np.arange(n), 3)
    cols = triangles[owner].ravel()
    return sparse.coo_matrix((lam.ravel(), (rows, cols)), shape=(n, m)).tocsr()


def data_blocks(phi: sparse.csr_matrix, y: np.ndarray):
    """A = phi' phi / n and d = phi' y / n; both zero without data."""
    n = phi.shape[0]
    scale = 1.0 / n if n else 0.0
    return (phi.T @ phi).tocsr() * scale, phi.T @ y * scale


def assemble_data(mesh: TriMesh, data: ScatteredData, buckets: DataBuckets):
    """Data term A and data vector d, scaled by 1/n over the in-domain points.

    Raises:
        ContractViolationError: If buckets were built for another mesh version.
    """
    buckets.check(mesh)
    inside = buckets.inside
    owner = buckets.owner[inside]
    lam = barycentric(data.points[inside], mesh.corners(owner))
    phi = basis_matrix(mesh.triangles, owner, lam, mesh.n_nodes)
    return data_blocks(phi, data.responses[inside])


# ---------------------------------------------- System -----------------------------------------------
@dataclass
class TpsfemSystem:
    """Blocks of the smoothing system on one mesh, with its eliminated (fixed) dofs.

    `fixed_dofs` index the stacked 4m unknown vector; Dirichlet runs fix all four fields on
    boundary nodes while Neumann runs pin the constant modes of g1 and g2.
    """
    A: sparse.csr_matrix
    L: sparse.csr_matrix
    G1: sparse.csr_matrix
    G2: sparse.csr_matrix
    d: np.ndarray
    phi: sparse.csr_matrix
    y: np.ndarray
    node_xy: np.ndarray
    boundary_nodes: np.ndarray
    kind: BoundaryKind = BoundaryKind.DIRICHLET
    fixed_dofs: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))
    mesh: Optional[TriMesh] = None


    @property
    def m(self) -> int:
        return self.L.shape[0]


    @property
    def n(self) -> int:
        return self.phi.shape[0]


    @property
    def size(self) -> int:
        return 4 * self.m


    def operator(self, alpha: float) -> sparse.csr_matrix:
        """The full 4m x 4m saddle point operator for smoothing parameter alpha."""
        A, L, G1, G2 = self.A, self.L, self.G1, self.G2
        return sparse.bmat([
            [A, None, None, L],
            [None, alpha * L, None, -G1.T],
            [None, None, alpha * L, -G2.T],
            [L, -G1, -G2, None],
        ], format='csr')


    def rhs(self, d: Optional[np.ndarray] = None) -> np.ndarray:
        d = self.d if d is None else d
        out = np.zeros((self.size,) + d.shape[1:])
        out[:self.m] = d
        return out


    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        mask[self.fixed_dofs] = False
        return np.flatnonzero(mask)


    @property
    def constraint_rows(self) -> np.ndarray:
        """Node ids whose constraint row survives elimination."""
        free = self.free_dofs
        return free[free >= 3 * self.m] - 3 * self.m


    def lift(self) -> np.ndarray:
        """Stacked 4m vector holding the fixed values, zero elsewhere."""
        x = np.zeros(self.size)
        x[self.fixed_dofs] = self.fixed_values
        return x


    def h(self, alpha: float) -> np.ndarray:
        """Contribution of the fixed dofs to every row, K[:, fixed] @ values."""
        if self.fixed_dofs.size == 0:
            return np.zeros(self.size)
        return self.operator(alpha)[:, self.fixed_dofs] @ self.fixed_values


    def h_blocks(self, alpha: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        h = self.h(alpha)
        m = self.m
        return h[:m], h[m:2 * m], h[2 * m:3 * m], h[3 * m:]


    def split(self, x: np.ndarray):
        m = self.m
        return x[:m], x[m:2 * m], x[2 * m:3 * m], x[3 * m:]


    def nnz(self, alpha: float = 1.0) -> int:
        return int(self.operator(alpha).nnz)


def apply_dirichlet(system: TpsfemSystem, values: DirichletValues, nodes=None) -> TpsfemSystem:
    """Fixes s, u1, u2 and w on boundary nodes; Neumann systems are returned unchanged.

    Args:
        system (TpsfemSystem): assembled system.
        values (DirichletValues): constants or callables for each field.
        nodes (array, optional): boundary nodes to fix, all boundary nodes by default.

    Raises:
        ContractViolationError: If a requested node is not on the boundary.
    """
    if system.kind is BoundaryKind.NEUMANN:
        return system
    nodes = system.boundary_nodes if nodes is None else np.unique(np.asarray(nodes, dtype=np.int64))
    stray = np.setdiff1d(nodes, system.boundary_nodes)
    if stray.size:
        raise ContractViolationError('Dirichlet values requested for interior nodes {}'.format(stray.tolist()))
    xy = system.node_xy[nodes]
    m = system.m
    dofs = np.concatenate([nodes + k * m for k in range(4)])
    vals = np.concatenate([values.evaluate(name, xy) for name in DirichletValues.FIELDS])
    return dataclasses.replace(system, fixed_dofs=dofs, fixed_values=vals)


def pin_gradient_modes(system: TpsfemSystem, node: int = 0) -> TpsfemSystem:
    """Pins g1 and g2 to zero at one node, removing their constant null modes under Neumann conditions."""
    m = system.m
    dofs = np.array([m + node, 2 * m + node], dtype=np.int64)
    return dataclasses.replace(system, fixed_dofs=dofs, fixed_values=np.zeros(2))


def finish_system(system: TpsfemSystem, boundary: BoundaryCondition) -> TpsfemSystem:
    if boundary.kind is BoundaryKind.DIRICHLET:
        return apply_dirichlet(system, boundary.values)
    return pin_gradient_modes(system)


def assemble_system(mesh: TriMesh, data: ScatteredData, buckets: DataBuckets,
                    boundary: BoundaryCondition) -> TpsfemSystem:
    """All blocks for a mesh and its data buckets with the boundary treatment applied."""
    return SystemAssembler(mesh, data, boundary).assemble(buckets)


class SystemAssembler:
    """
    SystemAssembler keeps element matrices and basis rows between refinements and
    recomputes only the triangles reshaped since its last call.
    """
    def __init__(self, mesh: TriMesh, data: ScatteredData, boundary: BoundaryCondition):
        self.__logger = logging.getLogger('tpsfem.SystemAssembler')
        self.mesh = mesh
        self.data = data
        self.boundary = boundary
        self.recomputed_elements = 0
        self.recomputed_rows = 0
        self._version = None
        self._local = np.zeros((0, 3, 3, 3))
        self._owner = -np.ones(data.n, dtype=np.int64)
        self._lam = np.zeros((data.n, 3))


    def assemble(self, buckets: DataBuckets) -> TpsfemSystem:
        mesh = self.mesh
        buckets.check(mesh)
        T = mesh.n_triangles
        if self._version is None:
            changed = np.arange(T)
        else:
            changed = mesh.changed_since(self._version)
        if self._local.shape[0] < T:
            grown = np.zeros((T, 3, 3, 3))
            grown[:self._local.shape[0]] = self._local
            self._local = grown
        if changed.size:
            lap, g1, g2, _ = element_matrices(mesh.corners(changed), changed)
            self._local[changed] = np.stack([lap, g1, g2], axis=1)

        owner = buckets.owner
        stale = (owner >= 0) & ((owner != self._owner) | np.isin(owner, changed))
        rows = np.flatnonzero(stale)
        if rows.size:
            self._lam[rows] = barycentric(self.data.points[rows], mesh.corners(owner[rows]))
        self._owner = owner.copy()
        self._version = mesh.version
        self.recomputed_elements = int(changed.size)
        self.recomputed_rows = int(rows.size)
        self.__logger.debug('assembled {} nodes: {} elements and {} data rows recomputed'.format(
            mesh.n_nodes, changed.size, rows.size))

        m = mesh.n_nodes
        tris = mesh.triangles
        local = self._local[:T]
        L, G1, G2 = (scatter(tris, local[:, k], m) for k in range(3))
        inside = buckets.inside
        phi = basis_matrix(tris, owner[inside], self._lam[inside], m)
        y = self.data.responses[inside]
        A, d = data_blocks(phi, y)
        system = TpsfemSystem(A, L, G1, G2, d, phi, y, mesh.nodes, mesh.boundary_nodes(), self.boundary.kind,
                              mesh=mesh)
        return finish_system(system, self.boundary)
