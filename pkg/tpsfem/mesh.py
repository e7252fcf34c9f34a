"""Conforming triangular meshes refined by newest-node bisection.

Every triangle is stored as a node triple ``[a, b, n]``: ``(a, b)`` is its base edge and ``n``
its newest node. Bisecting the base inserts the midpoint ``m`` and produces ``[a, n, m]``
(which keeps the parent's id) and ``[n, b, m]`` (appended), so the remaining old edges become
the children's base edges.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .domain import BoundaryKind, DomainShape, DomainSpec
from .helpers import signed_area2
from .tps_errors import ConfigurationError, ContractViolationError, MeshError

logger = logging.getLogger(__name__)


class EdgeKind(enum.Enum):
    BASE = 'base'
    INTERFACE_BASE = 'interface_base'
    PLAIN = 'plain'
    BOUNDARY = 'boundary'


REFINABLE = (EdgeKind.BASE, EdgeKind.INTERFACE_BASE)


@dataclass
class BisectionResult:
    """Ids created or changed by one or more bisections."""
    new_nodes: List[int] = field(default_factory=list)
    new_edges: List[int] = field(default_factory=list)
    removed_edges: List[int] = field(default_factory=list)
    new_triangles: List[int] = field(default_factory=list)
    modified_triangles: List[int] = field(default_factory=list)
    depth: int = 0


    def merge(self, other: 'BisectionResult') -> 'BisectionResult':
        self.new_nodes.extend(other.new_nodes)
        self.new_edges.extend(other.new_edges)
        self.removed_edges.extend(other.removed_edges)
        self.new_triangles.extend(other.new_triangles)
        self.modified_triangles.extend(other.modified_triangles)
        self.depth = max(self.depth, other.depth)
        return self


def _key(p: int, q: int) -> Tuple[int, int]:
    return (p, q) if p < q else (q, p)


class TriMesh:
    """
    TriMesh is a refinable conforming P1 grid. Node, edge and triangle ids are stable:
    nodes and triangles are only ever appended, and a bisected edge stays in the edge
    table marked dead. Mutation is single-writer; `version` increases with every bisection.
    """
    def __init__(self, domain: DomainSpec, nodes, triangles, levels=None,
                 boundary_kind: BoundaryKind = BoundaryKind.DIRICHLET, node_parents=None):
        self.domain = domain
        self.boundary_kind = boundary_kind
        self.version = 0

        self._xy = [(float(x), float(y)) for x, y in nodes]
        self._tri = [[int(a), int(b), int(n)] for a, b, n in triangles]
        self._level = [0] * len(self._tri) if levels is None else [int(v) for v in levels]
        self._parent = [-1] * len(self._tri)
        self._stamp = [0] * len(self._tri)
        if node_parents is None:
            node_parents = [None] * len(self._xy)
        self._node_parents: List[Optional[Tuple[int, int]]] = list(node_parents)

        self._edges: List[Tuple[int, int]] = []
        self._edge_alive: List[bool] = []
        self._edge_tris: List[List[int]] = []
        self._edge_index: Dict[Tuple[int, int], int] = {}
        self._cache: Dict[str, object] = {}

        if len(self._level) != len(self._tri):
            raise ContractViolationError('levels must have one entry per triangle')
        for t, (a, b, n) in enumerate(self._tri):
            for p, q in ((a, b), (b, n), (n, a)):
                self._edge_tris[self._edge_or_new(p, q)].append(t)


    # ---------------------------------------------- Counts ----------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self._xy)


    @property
    def n_triangles(self) -> int:
        return len(self._tri)


    @property
    def n_edges(self) -> int:
        return sum(self._edge_alive)


    @property
    def edge_capacity(self) -> int:
        """Number of edge ids ever issued, dead edges included."""
        return len(self._edges)


    # ---------------------------------------------- Arrays ----------------------------------------------
    def _cached(self, name, build):
        if name not in self._cache:
            self._cache[name] = build()
        return self._cache[name]


    @property
    def nodes(self) -> np.ndarray:
        return self._cached('nodes', lambda: np.array(self._xy, dtype=float).reshape(-1, 2))


    @property
    def triangles(self) -> np.ndarray:
        return self._cached('triangles', lambda: np.array(self._tri, dtype=np.int64).reshape(-1, 3))


    @property
    def levels(self) -> np.ndarray:
        return np.array(self._level, dtype=np.int64)


    @property
    def triangle_parents(self) -> np.ndarray:
        return np.array(self._parent, dtype=np.int64)


    @property
    def node_parents(self) -> List[Optional[Tuple[int, int]]]:
        """Endpoints of the bisected edge for each node, None for initial nodes."""
        return list(self._node_parents)


    def newest_node(self, t: int) -> int:
        return self._tri[t][2]


    def corners(self, triangle_ids=None) -> np.ndarray:
        tris = self.triangles if triangle_ids is None else self.triangles[np.asarray(triangle_ids, dtype=np.int64)]
        return self.nodes[tris]


    def centroids(self) -> np.ndarray:
        return self._cached('centroids', lambda: self.corners().mean(axis=1))


    def areas(self) -> np.ndarray:
        return self._cached('areas', lambda: 0.5 * np.abs(signed_area2(self.corners())))


    def total_area(self) -> float:
        return float(math.fsum(self.areas()))


    def node_triangles(self) -> List[List[int]]:
        """Triangles incident to each node, in increasing id order."""
        def build():
            out: List[List[int]] = [[] for _ in range(self.n_nodes)]
            for t, tri in enumerate(self._tri):
                for p in tri:
                    out[p].append(t)
            return out
        return self._cached('node_triangles', build)


    def changed_since(self, version: int) -> np.ndarray:
        """Ids of triangles created or reshaped after the given mesh version."""
        stamps = np.array(self._stamp, dtype=np.int64)
        return np.flatnonzero(stamps > version)


    def root_triangle(self, t: int, n_old: int) -> int:
        """The triangle id below n_old that t descends from."""
        while t >= n_old:
            t = self._parent[t]
        return t


    # ---------------------------------------------- Edges -----------------------------------------------
    def _edge_or_new(self, p: int, q: int, result: Optional[BisectionResult] = None) -> int:
        k = _key(p, q)
        eid = self._edge_index.get(k)
        if eid is None:
            eid = len(self._edges)
            self._edges.append(k)
            self._edge_alive.append(True)
            self._edge_tris.append([])
            self._edge_index[k] = eid
            if result is not None:
                result.new_edges.append(eid)
        return eid


    def edge_id(self, p: int, q: int) -> int:
        try:
            return self._edge_index[_key(p, q)]
        except KeyError:
            raise ContractViolationError('no edge between nodes {} and {}'.format(p, q)) from None


    def edge_nodes(self, e: int) -> Tuple[int, int]:
        return self._edges[e]


    def edge_alive(self, e: int) -> bool:
        return 0 <= e < len(self._edges) and self._edge_alive[e]


    def edge_triangles(self, e: int) -> Tuple[int, ...]:
        return tuple(self._edge_tris[e])


    def alive_edges(self) -> List[int]:
        return [e for e, alive in enumerate(self._edge_alive) if alive]


    def triangle_edges(self, t: int) -> Tuple[int, int, int]:
        a, b, n = self._tri[t]
        return (self._edge_index[_key(a, b)], self._edge_index[_key(b, n)], self._edge_index[_key(n, a)])


    def base_edge(self, t: int) -> int:
        a, b, _ = self._tri[t]
        return self._edge_index[_key(a, b)]


    def edge_kind(self, e: int) -> EdgeKind:
        if not self.edge_alive(e):
            raise ContractViolationError('edge {} is not part of the mesh'.format(e))
        tris = self._edge_tris[e]
        is_base = [self.base_edge(t) == e for t in tris]
        if all(is_base):
            return EdgeKind.BASE
        if any(is_base):
            return EdgeKind.INTERFACE_BASE
        return EdgeKind.BOUNDARY if len(tris) == 1 else EdgeKind.PLAIN


    def is_candidate(self, e: int) -> bool:
        return self.edge_alive(e) and self.edge_kind(e) in REFINABLE


    def candidate_edges(self) -> List[int]:
        """Base and interface base edges, the edges error indicators are defined on."""
        return [e for e in self.alive_edges() if self.edge_kind(e) in REFINABLE]


    def is_boundary_edge(self, e: int) -> bool:
        return len(self._edge_tris[e]) == 1


    def boundary_edges(self) -> List[int]:
        return [e for e in self.alive_edges() if len(self._edge_tris[e]) == 1]


    def boundary_nodes(self) -> np.ndarray:
        def build():
            ids = {p for e in self.boundary_edges() for p in self._edges[e]}
            return np.array(sorted(ids), dtype=np.int64)
        return self._cached('boundary_nodes', build)


    def edge_midpoint(self, e: int) -> np.ndarray:
        p, q = self._edges[e]
        return 0.5 * (np.asarray(self._xy[p]) + np.asarray(self._xy[q]))


    def edge_length(self, e: int) -> float:
        p, q = self._edges[e]
        (x0, y0), (x1, y1) = self._xy[p], self._xy[q]
        return math.hypot(x1 - x0, y1 - y0)


    # ---------------------------------------------- Geometry --------------------------------------------
    def longest_edges(self) -> np.ndarray:
        c = self.corners()
        sides = np.linalg.norm(c[:, [1, 2, 0], :] - c, axis=2)
        return sides.max(axis=1)


    def mesh_size(self) -> float:
        """Longest edge over all triangles."""
        if self.n_triangles == 0:
            raise ContractViolationError('mesh has no triangles')
        return float(self.longest_edges().max())


    def angles(self) -> np.ndarray:
        """Interior angles in radians, shape (T, 3)."""
        c = self.corners()
        out = np.empty((self.n_triangles, 3))
        for i in range(3):
            u = c[:, (i + 1) % 3] - c[:, i]
            v = c[:, (i + 2) % 3] - c[:, i]
            cos = np.einsum('ij,ij->i', u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out[:, i] = np.arccos(np.clip(cos, -1.0, 1.0))
        return out


    def min_angle(self) -> float:
        return float(self.angles().min())


    # ---------------------------------------------- Bisection -------------------------------------------
    def bisect_edge(self, e: int) -> BisectionResult:
        """Bisects a base or interface base edge, refining coarser neighbours first so no hanging nodes appear.

        Args:
            e (int): id of an alive base or interface base edge.

        Returns:
            BisectionResult: every node, edge and triangle created or reshaped.

        Raises:
            ContractViolationError: If e is dead, plain, or a boundary edge that is not a base.
            MeshError: If the conformity closure recurses deeper than the triangle count.
        """
        kind = self.edge_kind(e)
        if kind not in REFINABLE:
            raise ContractViolationError('edge {} is {} and cannot be bisected'.format(e, kind.value))
        result = BisectionResult()
        self._refine(e, 0, result)
        return result


    def _refine(self, e: int, depth: int, result: BisectionResult) -> None:
        if depth > self.n_triangles:
            raise MeshError('bisection closure of edge {} exceeded depth {}'.format(e, self.n_triangles))
        result.depth = max(result.depth, depth)
        while self._edge_alive[e]:
            pending = [t for t in self._edge_tris[e] if self.base_edge(t) != e]
            if not pending:
                self._split(e, result)
                return
            self._refine(self.base_edge(pending[0]), depth + 1, result)


    def _split(self, e: int, result: BisectionResult) -> None:
        i, j = self._edges[e]
        (xi, yi), (xj, yj) = self._xy[i], self._xy[j]
        m = len(self._xy)
        self._xy.append((0.5 * (xi + xj), 0.5 * (yi + yj)))
        self._node_parents.append((i, j))
        result.new_nodes.append(m)

        self.version += 1
        tris = self._edge_tris[e]
        self._edge_tris[e] = []
        self._edge_alive[e] = False
        del self._edge_index[(i, j)]
        result.removed_edges.append(e)

        half = {i: self._edge_or_new(i, m, result), j: self._edge_or_new(m, j, result)}
        for t in tris:
            a, b, n = self._tri[t]
            t2 = len(self._tri)
            self._tri[t] = [a, n, m]
            self._tri.append([n, b, m])
            level = self._level[t] + 1
            self._level[t] = level
            self._level.append(level)
            self._parent.append(t)
            self._stamp[t] = self.version
            self._stamp.append(self.version)

            bn = self._edge_tris[self._edge_index[_key(b, n)]]
            bn[bn.index(t)] = t2
            self._edge_tris[half[a]].append(t)
            self._edge_tris[half[b]].append(t2)
            self._edge_tris[self._edge_or_new(n, m, result)].extend([t, t2])
            result.modified_triangles.append(t)
            result.new_triangles.append(t2)
        self._cache.clear()


    def uniform_refine(self) -> BisectionResult:
        """Bisects every triangle once along its base edge; the triangle count doubles."""
        snapshot = list(self._level)
        result = BisectionResult()
        for t in range(len(snapshot)):
            if self._level[t] == snapshot[t]:
                result.merge(self.bisect_edge(self.base_edge(t)))
        logger.debug('uniform refinement: {} nodes, {} triangles'.format(self.n_nodes, self.n_triangles))
        return result


    # ---------------------------------------------- Checks ----------------------------------------------
    def hanging_nodes(self) -> List[Tuple[int, int]]:
        """Brute-force list of (node, edge) pairs where the node lies inside the edge."""
        xy = self.nodes
        tol = 1e-12 * self.domain.scale
        found = []
        for e in self.alive_edges():
            p, q = self._edges[e]
            d = xy[q] - xy[p]
            rel = xy - xy[p]
            length2 = float(d @ d)
            cross = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / math.sqrt(length2)
            dot = rel @ d
            on = (cross <= tol) & (dot > tol * math.sqrt(length2)) & (dot < length2 - tol * math.sqrt(length2))
            found.extend((int(r), e) for r in np.flatnonzero(on))
        return found


    def check_conformity(self) -> List[str]:
        """Brute-force consistency check; returns a list of problems, empty when the mesh is conforming."""
        problems = []
        counts: Dict[Tuple[int, int], List[int]] = {}
        for t, (a, b, n) in enumerate(self._tri):
            for p, q in ((a, b), (b, n), (n, a)):
                counts.setdefault(_key(p, q), []).append(t)
        for k, tris in counts.items():
            if len(tris) > 2:
                problems.append('edge {} shared by {} triangles'.format(k, len(tris)))
            eid = self._edge_index.get(k)
            if eid is None or sorted(self._edge_tris[eid]) != sorted(tris):
                problems.append('edge table out of sync for {}'.format(k))
        if len(counts) != self.n_edges:
            problems.append('{} edges in triangles but {} alive'.format(len(counts), self.n_edges))
        for r, e in self.hanging_nodes():
            problems.append('node {} hangs on edge {}'.format(r, e))
        bad = np.flatnonzero(self.areas() <= 0.0)
        problems.extend('triangle {} has zero area'.format(t) for t in bad)
        outside = np.flatnonzero(~self.domain.contains(self.nodes))
        problems.extend('node {} lies outside the domain'.format(p) for p in outside)
        return problems


    def copy(self) -> 'TriMesh':
        other = TriMesh.__new__(TriMesh)
        other.domain = self.domain
        other.boundary_kind = self.boundary_kind
        other.version = self.version
        other._xy = list(self._xy)
        other._tri = [list(t) for t in self._tri]
        other._level = list(self._level)
        other._parent = list(self._parent)
        other._stamp = list(self._stamp)
        other._node_parents = list(self._node_parents)
        other._edges = list(self._edges)
        other._edge_alive = list(self._edge_alive)
        other._edge_tris = [list(ts) for ts in self._edge_tris]
        other._edge_index = dict(self._edge_index)
        other._cache = {}
        return other


    def boundary_records(self) -> List[list]:
        return [[p, q, self.boundary_kind.value] for p, q in (self._edges[e] for e in self.boundary_edges())]


def build_initial_grid(spec: DomainSpec, n_per_side: int,
                       boundary_kind: BoundaryKind = BoundaryKind.DIRICHLET) -> TriMesh:
    """Uniform grid with every cell split along its lower-left to upper-right diagonal.

    Both triangles of a cell take the diagonal as base, with the right-angle corner as
    newest node, so the first sweep of bisections cuts hypotenuses.

    Args:
        spec (DomainSpec): square or L-shaped domain; an L-shape cut must fall on grid lines.
        n_per_side (int): grid nodes along each side of the bounding box, at least 2.
        boundary_kind (BoundaryKind): flag applied to every boundary edge.

    Raises:
        ConfigurationError: If the domain is invalid or the grid cannot represent it.
    """
    spec.validate()
    if int(n_per_side) != n_per_side or n_per_side < 2:
        raise ConfigurationError('n_per_side must be an integer >= 2, got {}'.format(n_per_side))
    n = int(n_per_side)
    xs = np.linspace(spec.x_lo, spec.x_hi, n)
    ys = np.linspace(spec.y_lo, spec.y_hi, n)

    if spec.shape is DomainShape.LSHAPE:
        cx, cy = spec.cut_point
        kx = (cx - spec.x_lo) / (spec.x_hi - spec.x_lo) * (n - 1)
        ky = (cy - spec.y_lo) / (spec.y_hi - spec.y_lo) * (n - 1)
        if abs(kx - round(kx)) > 1e-9 or abs(ky - round(ky)) > 1e-9:
            raise ConfigurationError('L-shape cut {} does not fall on the {}x{} grid lines'.format((cx, cy), n, n))
        xs[int(round(kx))] = cx
        ys[int(round(ky))] = cy

    gx, gy = np.meshgrid(xs, ys)
    inside = spec.contains(np.column_stack([gx.ravel(), gy.ravel()])).reshape(n, n)
    ids = -np.ones((n, n), dtype=np.int64)
    ids[inside] = np.arange(int(inside.sum()))
    nodes = [(xs[i], ys[j]) for j in range(n) for i in range(n) if inside[j, i]]

    triangles = []
    for j in range(n - 1):
        for i in range(n - 1):
            centre = (0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]))
            if not spec.contains(centre)[0]:
                continue
            p00, p10, p01, p11 = ids[j, i], ids[j, i + 1], ids[j + 1, i], ids[j + 1, i + 1]
            triangles.append([p00, p11, p10])
            triangles.append([p00, p11, p01])
    mesh = TriMesh(spec, nodes, triangles, boundary_kind=boundary_kind)
    logger.debug('initial grid: {} nodes, {} triangles'.format(mesh.n_nodes, mesh.n_triangles))
    return mesh


def uniform_refine(mesh: TriMesh) -> TriMesh:
    """Refines mesh in place once uniformly and returns it."""
    mesh.uniform_refine()
    return mesh


def mesh_size(mesh: TriMesh) -> float:
    return mesh.mesh_size()


def bisect_edge(mesh: TriMesh, e: int) -> BisectionResult:
    return mesh.bisect_edge(e)


def make_mesh(domain: DomainSpec, nodes: Sequence, triangles: Sequence, levels=None,
              boundary_kind: BoundaryKind = BoundaryKind.DIRICHLET) -> TriMesh:
    """Builds a mesh from explicit arrays, triangles given as [base_a, base_b, newest]."""
    mesh = TriMesh(domain, nodes, triangles, levels, boundary_kind)
    problems = mesh.check_conformity()
    if problems:
        raise ContractViolationError('mesh is not conforming: {}'.format('; '.join(problems[:5])))
    return mesh
