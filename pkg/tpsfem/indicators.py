"""Per-edge error indicators used to mark edges for refinement.

Indicators live on base and interface base edges. For an edge e, tau_e denotes the
triangles sharing e. Five kinds are available:

* regression: RMSE of the data inside tau_e.
* auxiliary: energy norm distance between s and a local re-fit on the patch around e with e bisected.
* residual: local residual of the interpolated solution plus normal gradient jumps.
* recovery: distance between the piecewise constant gradient and its L2 projection.
* norm: integral over tau_e of the largest recovered second derivative.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from scipy.sparse.linalg import splu  # type: ignore

from .assembly import TpsfemSystem, assemble_fem_arrays, assemble_mass_arrays, basis_matrix, data_blocks
from .data import LOCATE_TOL, DataBuckets, ScatteredData
from .domain import BoundaryKind
from .helpers import barycentric, basis_gradients
from .solver import Smoother
from .tps_errors import ConfigurationError, IndicatorError

logger = logging.getLogger(__name__)


class IndicatorKind(enum.Enum):
    REGRESSION = 'regression'
    AUXILIARY = 'auxiliary'
    RESIDUAL = 'residual'
    RECOVERY = 'recovery'
    NORM = 'norm'


@dataclass
class IndicatorConfig:
    """Weights of the residual and jump terms of the residual indicator."""
    c1: float = 1.0
    c2: float = 1.0


    def validate(self) -> 'IndicatorConfig':
        if not (self.c1 >= 0 and self.c2 >= 0 and math.isfinite(self.c1) and math.isfinite(self.c2)):
            raise ConfigurationError('indicator constants must be finite and >= 0, got c1={} c2={}'.format(
                self.c1, self.c2))
        return self


@dataclass
class IndicatorField:
    """Indicator values keyed by edge id.

    `no_data` lists edges whose patch held no data (regression only); `skipped` lists edges
    whose evaluation failed and that carry no value.
    """
    kind: IndicatorKind
    values: Dict[int, float] = field(default_factory=dict)
    no_data: Set[int] = field(default_factory=set)
    skipped: Set[int] = field(default_factory=set)


    def __len__(self):
        return len(self.values)


    def max(self) -> float:
        return max(self.values.values()) if self.values else 0.0


    def top_fraction(self, fraction: float) -> Set[int]:
        """Edges in the top fraction by value, at least one, ties broken by smaller id."""
        if not self.values:
            return set()
        k = max(1, int(math.ceil(fraction * len(self.values))))
        ranked = sorted(self.values.items(), key=lambda item: (-item[1], item[0]))
        return {e for e, _ in ranked[:k]}


    def restricted(self, edges: Iterable[int]) -> 'IndicatorField':
        keep = set(edges)
        return IndicatorField(self.kind, {e: v for e, v in self.values.items() if e in keep},
                              self.no_data & keep, self.skipped & keep)


    def update(self, other: 'IndicatorField') -> 'IndicatorField':
        self.values.update(other.values)
        self.no_data |= other.no_data
        self.skipped = (self.skipped | other.skipped) - set(other.values)
        return self


# ---------------------------------------------- Recovery ---------------------------------------------
def nodal_gradients(nodes: np.ndarray, triangles: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Constant per-triangle gradient of nodal fields, values (m,) or (m, k) -> (T, 2) or (T, k, 2)."""
    grads, _ = basis_gradients(nodes[triangles])
    v = values[triangles]
    if v.ndim == 2:
        return np.einsum('tij,ti->tj', grads, v)
    return np.einsum('tij,tik->tkj', grads, v)


class MassProjector:
    """
    MassProjector computes L2 projections of piecewise constant fields onto P1 with one
    factorisation of the mass matrix.
    """
    def __init__(self, nodes: np.ndarray, triangles: np.ndarray):
        self.triangles = triangles
        self.m = nodes.shape[0]
        _, area = basis_gradients(nodes[triangles])
        self.areas = area
        try:
            self._lu = splu(assemble_mass_arrays(nodes, triangles).tocsc())
        except RuntimeError as e:
            raise IndicatorError('mass matrix factorisation failed: {}'.format(e)) from e


    def project(self, element_values: np.ndarray) -> np.ndarray:
        """Nodal coefficients of the projection of (T,) or (T, k) element constants."""
        vals = element_values.reshape(self.triangles.shape[0], -1)
        rhs = np.zeros((self.m, vals.shape[1]))
        weights = (self.areas / 3.0)[:, None] * vals
        for i in range(3):
            np.add.at(rhs, self.triangles[:, i], weights)
        out = self._lu.solve(rhs)
        return out.reshape((self.m,) + element_values.shape[1:])


def recovered_gradient(smoother: Smoother, projector: Optional[MassProjector] = None) -> np.ndarray:
    """Projected gradient of s, shape (m, 2); uses c only."""
    mesh = smoother.mesh
    projector = projector or MassProjector(mesh.nodes, mesh.triangles)
    return projector.project(smoother.element_gradients())


def second_derivative_max(smoother: Smoother, projector: Optional[MassProjector] = None) -> np.ndarray:
    """Largest absolute recovered second derivative at each node.

    First derivatives are recovered by projection; projecting the gradients of those gives
    D11, D22 and the two mixed terms, which are averaged.
    """
    mesh = smoother.mesh
    projector = projector or MassProjector(mesh.nodes, mesh.triangles)
    first = projector.project(smoother.element_gradients())
    hess = nodal_gradients(mesh.nodes, mesh.triangles, first)
    second = projector.project(hess.reshape(mesh.n_triangles, 4))
    d11, d12, d21, d22 = second[:, 0], second[:, 1], second[:, 2], second[:, 3]
    return np.max(np.abs(np.column_stack([d11, 0.5 * (d12 + d21), d22])), axis=1)


# ---------------------------------------------- Local problems ---------------------------------------
@dataclass
class LocalProblem:
    """Patch of all triangles touching tau_e with tau_e split at the midpoint of e.

    Local node k_mid = len(nodes) - 1 is the midpoint; `lift` holds the interpolated global
    fields (c, g1, g2, w) on every local node and supplies the Dirichlet values on `boundary`.
    """
    edge: int
    global_nodes: np.ndarray
    nodes: np.ndarray
    triangles: np.ndarray
    tau: np.ndarray
    boundary: np.ndarray
    lift: np.ndarray
    phi: object
    y: np.ndarray


    @property
    def m(self) -> int:
        return self.nodes.shape[0]


    def system(self) -> TpsfemSystem:
        L, G1, G2 = assemble_fem_arrays(self.nodes, self.triangles)
        A, d = data_blocks(self.phi, self.y)
        dofs = np.concatenate([self.boundary + k * self.m for k in range(4)])
        return TpsfemSystem(A, L, G1, G2, d, self.phi, self.y, self.nodes, self.boundary,
                            fixed_dofs=dofs, fixed_values=self.lift_vector()[dofs])


    def lift_vector(self) -> np.ndarray:
        return self.lift.reshape(-1)


def build_local_problem(smoother: Smoother, data: ScatteredData, buckets: DataBuckets, e: int,
                        node_triangles: Optional[List[List[int]]] = None) -> LocalProblem:
    """Local grid around edge e with the bisected tau_e and the data it contains."""
    mesh = smoother.mesh
    node_triangles = node_triangles or mesh.node_triangles()
    tris = mesh.triangles
    tau = mesh.edge_triangles(e)
    i, j = mesh.edge_nodes(e)
    patch = sorted({t for p in np.unique(tris[list(tau)]) for t in node_triangles[int(p)]})
    global_nodes = np.unique(tris[patch])
    local = {int(g): k for k, g in enumerate(global_nodes)}
    mid = len(global_nodes)
    nodes = np.vstack([mesh.nodes[global_nodes], mesh.edge_midpoint(e)[None, :]])

    local_tris, tau_children, parent_of = [], [], []
    for t in patch:
        a, b, n = (int(v) for v in tris[t])
        if t in tau:
            k = next(v for v in (a, b, n) if v not in (i, j))
            for child in ([local[i], local[k], mid], [local[k], local[j], mid]):
                tau_children.append(len(local_tris))
                local_tris.append(child)
                parent_of.append(t)
        else:
            local_tris.append([local[a], local[b], local[n]])
            parent_of.append(t)
    local_tris = np.array(local_tris, dtype=np.int64)
    parent_of = np.array(parent_of, dtype=np.int64)

    counts: Dict[Tuple[int, int], int] = {}
    for a, b, n in local_tris:
        for p, q in ((a, b), (b, n), (n, a)):
            key = (min(p, q), max(p, q))
            counts[key] = counts.get(key, 0) + 1
    boundary = np.array(sorted({p for key, c in counts.items() if c == 1 for p in key}), dtype=np.int64)

    fields = np.vstack([smoother.c, smoother.g1, smoother.g2, smoother.w])
    lift = np.empty((4, mid + 1))
    lift[:, :mid] = fields[:, global_nodes]
    lift[:, mid] = 0.5 * (fields[:, i] + fields[:, j])

    members = buckets.points_in_all(patch)
    pts = data.points[members]
    owner = np.empty(members.size, dtype=np.int64)
    first_child = {int(parent_of[c]): c for c in reversed(tau_children)}
    plain = {int(parent_of[k]): k for k in range(len(local_tris)) if k not in tau_children}
    global_owner = buckets.owner[members]
    for row, t in enumerate(global_owner):
        t = int(t)
        if t in plain:
            owner[row] = plain[t]
            continue
        c0 = first_child[t]
        lam = barycentric(pts[row], nodes[local_tris[c0]])
        owner[row] = c0 if lam.min() >= -LOCATE_TOL else c0 + 1
    lam = barycentric(pts, nodes[local_tris[owner]])
    phi = basis_matrix(local_tris, owner, lam, mid + 1)
    return LocalProblem(e, global_nodes, nodes, local_tris, np.array(tau_children, dtype=np.int64),
                        boundary, lift, phi, data.responses[members])


def solve_local(problem: LocalProblem, alpha: float) -> Tuple[TpsfemSystem, np.ndarray, np.ndarray]:
    """Dense solve of the local smoothing problem with the lifted boundary values.

    Returns:
        tuple: (local system, dense operator, stacked local solution).
    """
    system = problem.system()
    K = system.operator(alpha).toarray()
    lift = system.lift()
    free = system.free_dofs
    rhs = system.rhs() - K @ lift
    x = lift.copy()
    try:
        x[free] = np.linalg.solve(K[np.ix_(free, free)], rhs[free])
    except np.linalg.LinAlgError as e:
        raise IndicatorError('local solve failed for edge {}: {}'.format(problem.edge, e), edge=problem.edge) from e
    if not np.all(np.isfinite(x)):
        raise IndicatorError('local solve for edge {} is not finite'.format(problem.edge), edge=problem.edge)
    return system, K, x


def edge_jump(smoother: Smoother, f: int) -> Tuple[float, float]:
    """Normal gradient jump of s across edge f and the edge length.

    Interior edges give n . (grad s_t - grad s_t'); boundary edges give 0 under Dirichlet
    conditions and -n . grad s_t under Neumann conditions.
    """
    mesh = smoother.mesh
    p, q = mesh.edge_nodes(f)
    xy = mesh.nodes
    tangent = xy[q] - xy[p]
    length = float(np.hypot(tangent[0], tangent[1]))
    normal = np.array([tangent[1], -tangent[0]]) / length
    grads = smoother.element_gradients()
    ts = mesh.edge_triangles(f)
    if len(ts) == 2:
        return float(normal @ (grads[ts[0]] - grads[ts[1]])), length
    if mesh.boundary_kind is BoundaryKind.DIRICHLET:
        return 0.0, length
    return float(-normal @ grads[ts[0]]), length


# ---------------------------------------------- Context ----------------------------------------------
class IndicatorContext:
    """
    IndicatorContext caches what several edges of one smoother share: per-point residuals,
    the mass projector, the recovered gradient and the nodal second derivative bound.
    """
    def __init__(self, smoother: Smoother, data: Optional[ScatteredData] = None,
                 buckets: Optional[DataBuckets] = None, config: Optional[IndicatorConfig] = None,
                 alpha: Optional[float] = None):
        self.smoother = smoother
        self.mesh = smoother.mesh
        self.data = data
        self.buckets = buckets
        self.config = (config or IndicatorConfig()).validate()
        self.alpha = smoother.alpha if alpha is None else alpha
        if buckets is not None:
            buckets.check(self.mesh)
        self._residuals = None
        self._projector = None
        self._recovered = None
        self._d2max = None


    def _need_data(self):
        if self.data is None or self.buckets is None:
            raise ConfigurationError('this indicator needs the data and its buckets')


    @property
    def projector(self) -> MassProjector:
        if self._projector is None:
            self._projector = MassProjector(self.mesh.nodes, self.mesh.triangles)
        return self._projector


    def point_residuals(self) -> np.ndarray:
        if self._residuals is None:
            self._need_data()
            res = np.full(self.data.n, np.nan)
            inside = self.buckets.inside
            owner = self.buckets.owner[inside]
            lam = barycentric(self.data.points[inside], self.mesh.corners(owner))
            fitted = np.einsum('ij,ij->i', lam, self.smoother.c[self.mesh.triangles[owner]])
            res[inside] = fitted - self.data.responses[inside]
            self._residuals = res
        return self._residuals


    def count(self, e: int) -> int:
        self._need_data()
        return int(self.buckets.edge_points(self.mesh, e).size)


    # ---- indicators ----
    def regression(self, e: int) -> float:
        self._need_data()
        idx = self.buckets.edge_points(self.mesh, e)
        if idx.size == 0:
            return 0.0
        r = self.point_residuals()[idx]
        return float(np.sqrt(np.mean(r ** 2)))


    def auxiliary(self, e: int) -> float:
        self._need_data()
        problem = build_local_problem(self.smoother, self.data, self.buckets, e, self.mesh.node_triangles())
        _, _, x = solve_local(problem, self.alpha)
        diff = problem.lift[0] - x[:problem.m]
        corners = problem.nodes[problem.triangles[problem.tau]]
        grads, area = basis_gradients(corners)
        g = np.einsum('tij,ti->tj', grads, diff[problem.triangles[problem.tau]])
        return float(np.sqrt(np.sum(area * np.sum(g ** 2, axis=1))))


    def residual(self, e: int) -> float:
        self._need_data()
        problem = build_local_problem(self.smoother, self.data, self.buckets, e, self.mesh.node_triangles())
        system = problem.system()
        lift = problem.lift_vector()
        r = (system.operator(self.alpha) @ lift - system.rhs())[:problem.m]
        r[problem.boundary] = 0.0
        mass = assemble_mass_arrays(problem.nodes, problem.triangles)
        r_norm2 = float(r @ (mass @ r))

        tau = self.mesh.edge_triangles(e)
        h_e = float(max(self.mesh.longest_edges()[list(tau)]))
        jump2 = 0.0
        for f in sorted({f for t in tau for f in self.mesh.triangle_edges(t)}):
            j, length = edge_jump(self.smoother, f)
            jump2 += j * j * length
        return float(np.sqrt(self.config.c1 * h_e ** 2 * r_norm2 + self.config.c2 * h_e * jump2))


    def recovery(self, e: int) -> float:
        if self._recovered is None:
            self._recovered = recovered_gradient(self.smoother, self.projector)
        grads = self.smoother.element_gradients()
        areas = self.mesh.areas()
        total = 0.0
        for t in self.mesh.edge_triangles(e):
            delta = self._recovered[self.mesh.triangles[t]] - grads[t][None, :]
            total += areas[t] / 12.0 * float(np.sum(delta ** 2) + np.sum(np.sum(delta, axis=0) ** 2))
        return float(np.sqrt(total))


    def norm(self, e: int) -> float:
        if self._d2max is None:
            self._d2max = second_derivative_max(self.smoother, self.projector)
        areas = self.mesh.areas()
        return float(sum(areas[t] * np.mean(self._d2max[self.mesh.triangles[t]]) for t in self.mesh.edge_triangles(e)))


    def eta(self, kind: IndicatorKind, e: int) -> float:
        return getattr(self, kind.value)(e)


def compute_field(kind: IndicatorKind, smoother: Smoother, data: Optional[ScatteredData] = None,
                  buckets: Optional[DataBuckets] = None, edges: Optional[Iterable[int]] = None,
                  config: Optional[IndicatorConfig] = None, context: Optional[IndicatorContext] = None) -> IndicatorField:
    """Indicator values on the given edges, all base and interface base edges by default.

    Edges whose evaluation fails are logged and listed in `skipped` without a value.
    """
    ctx = context or IndicatorContext(smoother, data, buckets, config)
    mesh = smoother.mesh
    edges = mesh.candidate_edges() if edges is None else list(edges)
    out = IndicatorField(kind)
    for e in edges:
        if not mesh.is_candidate(e):
            raise IndicatorError('edge {} is not a base or interface base edge'.format(e), edge=e)
        try:
            value = ctx.eta(kind, e)
        except IndicatorError as err:
            logger.warning('skipping edge {}: {}'.format(e, err))
            out.skipped.add(e)
            continue
        if not (math.isfinite(value) and value >= 0):
            logger.warning('skipping edge {}: indicator value {}'.format(e, value))
            out.skipped.add(e)
            continue
        out.values[e] = value
        if kind is IndicatorKind.REGRESSION and ctx.count(e) == 0:
            out.no_data.add(e)
    logger.debug('{} indicator on {} edges, max {:.3e}'.format(kind.value, len(out), out.max()))
    return out


# ---------------------------------------------- Single edge ------------------------------------------
def eta_regression(smoother: Smoother, data: ScatteredData, buckets: DataBuckets, e: int) -> float:
    return IndicatorContext(smoother, data, buckets).regression(e)


def eta_auxiliary(smoother: Smoother, data: ScatteredData, buckets: DataBuckets, e: int,
                  alpha: Optional[float] = None) -> float:
    return IndicatorContext(smoother, data, buckets, alpha=alpha).auxiliary(e)


def eta_residual(smoother: Smoother, data: ScatteredData, buckets: DataBuckets, e: int,
                 config: Optional[IndicatorConfig] = None) -> float:
    return IndicatorContext(smoother, data, buckets, config).residual(e)


def eta_recovery(smoother: Smoother, e: int) -> float:
    return IndicatorContext(smoother).recovery(e)


def eta_norm(smoother: Smoother, e: int) -> float:
    return IndicatorContext(smoother).norm(e)
