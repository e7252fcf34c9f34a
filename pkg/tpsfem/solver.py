"""Direct solution of the smoothing system and evaluation of the fitted surface."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import splu  # type: ignore

from .assembly import TpsfemSystem
from .data import ScatteredData, locate_points
from .domain import BoundaryKind
from .helpers import as_points, barycentric, basis_gradients
from .mesh import TriMesh
from .tps_errors import ContractViolationError, DomainError, EmptyDataError, MetricError, SolverError

logger = logging.getLogger(__name__)

# Constraint rows must satisfy |Lc - G1 g1 - G2 g2| <= CONSTRAINT_RTOL * |Lc| + CONSTRAINT_ATOL
CONSTRAINT_RTOL = 1e-8
CONSTRAINT_ATOL = 1e-12


class SaddleFactorization:
    """
    SaddleFactorization holds the sparse LU factors of the reduced operator for one alpha,
    so the data solve and any number of probe solves share a single factorisation.
    """
    def __init__(self, system: TpsfemSystem, alpha: float):
        if not (alpha > 0 and math.isfinite(alpha)):
            raise ContractViolationError('alpha must be positive and finite, got {}'.format(alpha))
        self.system = system
        self.alpha = alpha
        self.operator = system.operator(alpha)
        self.free = system.free_dofs
        self._lu = None
        self._h_free = system.h(alpha)[self.free]
        if self.free.size:
            reduced = self.operator[self.free][:, self.free].tocsc()
            try:
                self._lu = splu(reduced)
            except RuntimeError as e:
                raise SolverError('factorisation failed for alpha={:.3e}, m={}: {}'.format(alpha, system.m, e),
                                  alpha=alpha, m=system.m) from e
        logger.debug('factorised {} free dofs, alpha={:.3e}, m={}'.format(self.free.size, alpha, system.m))


    def solve(self, b: Optional[np.ndarray] = None, homogeneous: bool = False) -> np.ndarray:
        """Solves for the stacked unknowns.

        Args:
            b (ndarray, optional): stacked right-hand side, shape (4m,) or (4m, k); the data rhs by default.
            homogeneous (bool): treat fixed values as zero, as needed for influence operator probes.

        Returns:
            ndarray: stacked [c; g1; g2; w] with the same trailing shape as b.
        """
        b = self.system.rhs() if b is None else b
        x = np.zeros(b.shape)
        if not homogeneous:
            lift = self.system.lift()
            x += lift.reshape((-1,) + (1,) * (b.ndim - 1))
        if self._lu is not None:
            rhs = b[self.free]
            if not homogeneous:
                rhs = rhs - self._h_free.reshape((-1,) + (1,) * (b.ndim - 1))
            x[self.free] = self._lu.solve(np.ascontiguousarray(rhs))
        if not np.all(np.isfinite(x)):
            raise SolverError('non-finite solution for alpha={:.3e}, m={}'.format(self.alpha, self.system.m),
                              alpha=self.alpha, m=self.system.m)
        return x


    def relative_residual(self, x: np.ndarray, b: Optional[np.ndarray] = None) -> float:
        b = self.system.rhs() if b is None else b
        r = (self.operator @ x - b)[self.free]
        scale = np.linalg.norm(b[self.free] - self._h_free)
        norm = float(np.linalg.norm(r))
        return norm / scale if scale > 0 else norm


def factorize(system: TpsfemSystem, alpha: float) -> SaddleFactorization:
    return SaddleFactorization(system, alpha)


class Smoother:
    """
    Smoother is the fitted surface s(x) = b(x)'c together with the gradient fields g1, g2 and
    the multiplier w, all as nodal values on the mesh version it was computed for.
    """
    def __init__(self, mesh: TriMesh, c, g1, g2, w, alpha: float, metadata: Optional[Dict] = None):
        self.mesh = mesh
        self.mesh_version = mesh.version
        self.c = np.asarray(c, dtype=float)
        self.g1 = np.asarray(g1, dtype=float)
        self.g2 = np.asarray(g2, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.alpha = float(alpha)
        self.metadata = dict(metadata or {})
        for name in ('c', 'g1', 'g2', 'w'):
            if getattr(self, name).shape != (mesh.n_nodes,):
                raise ContractViolationError('{} has shape {}, mesh has {} nodes'.format(
                    name, getattr(self, name).shape, mesh.n_nodes))
        self._grads = None


    @property
    def m(self) -> int:
        return self.c.shape[0]


    def _check_fresh(self):
        if self.mesh.version != self.mesh_version:
            raise ContractViolationError('smoother was computed on mesh version {}, mesh is at {}; prolong it first'
                                         .format(self.mesh_version, self.mesh.version))


    def element_gradients(self) -> np.ndarray:
        """Constant gradient of s on every triangle, shape (T, 2)."""
        self._check_fresh()
        if self._grads is None:
            grads, _ = basis_gradients(self.mesh.corners())
            self._grads = np.einsum('tij,ti->tj', grads, self.c[self.mesh.triangles])
        return self._grads


    def _locate(self, points) -> Tuple[np.ndarray, np.ndarray]:
        self._check_fresh()
        pts = as_points(points)
        owner, inside = locate_points(self.mesh, pts)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise DomainError('point ({:.6g}, {:.6g}) lies outside the domain'.format(bad[0], bad[1]))
        return pts, owner


    def evaluate_many(self, points) -> np.ndarray:
        pts, owner = self._locate(points)
        lam = barycentric(pts, self.mesh.corners(owner))
        return np.einsum('ij,ij->i', lam, self.c[self.mesh.triangles[owner]])


    def evaluate(self, x) -> float:
        """Value of s at a single point.

        Raises:
            DomainError: If x lies outside the domain.
        """
        return float(self.evaluate_many(x)[0])


    def evaluate_grad_many(self, points) -> np.ndarray:
        _, owner = self._locate(points)
        return self.element_gradients()[owner]


    def evaluate_grad(self, x) -> Tuple[float, float]:
        """Gradient of s at a single point, from the smallest-id triangle containing it."""
        g = self.evaluate_grad_many(x)[0]
        return (float(g[0]), float(g[1]))


    def smoothing_energy(self, system: TpsfemSystem) -> float:
        return float(self.g1 @ (system.L @ self.g1) + self.g2 @ (system.L @ self.g2))


    def prolong(self, mesh: Optional[TriMesh] = None) -> 'Smoother':
        """Extends all four fields to nodes added by bisection, each new node taking the mean of its edge's endpoints."""
        mesh = self.mesh if mesh is None else mesh
        parents = mesh.node_parents
        fields = np.zeros((4, mesh.n_nodes))
        fields[:, :self.m] = np.vstack([self.c, self.g1, self.g2, self.w])
        for p in range(self.m, mesh.n_nodes):
            i, j = parents[p]
            fields[:, p] = 0.5 * (fields[:, i] + fields[:, j])
        metadata = dict(self.metadata, prolonged_from=self.m)
        return Smoother(mesh, fields[0], fields[1], fields[2], fields[3], self.alpha, metadata)


    def to_dict(self) -> dict:
        return {
            'alpha': self.alpha,
            'c': self.c.tolist(),
            'g1': self.g1.tolist(),
            'g2': self.g2.tolist(),
            'w': self.w.tolist(),
        }


def constraint_residual(system: TpsfemSystem, c, g1, g2) -> Tuple[float, float]:
    """Norm of the surviving constraint rows and the tolerance they must meet."""
    lc = system.L @ c
    r = (lc - system.G1 @ g1 - system.G2 @ g2)[system.constraint_rows]
    return float(np.linalg.norm(r)), CONSTRAINT_RTOL * float(np.linalg.norm(lc)) + CONSTRAINT_ATOL


def solve(system: TpsfemSystem, alpha: float, factorization: Optional[SaddleFactorization] = None) -> Smoother:
    """Solves the smoothing system for alpha.

    Args:
        system (TpsfemSystem): assembled system with its boundary treatment.
        alpha (float): smoothing parameter, > 0.
        factorization (SaddleFactorization, optional): factors for the same system and alpha.

    Returns:
        Smoother: the fitted fields with residual diagnostics in `metadata`.

    Raises:
        SolverError: If the factorisation fails or produces non-finite values.
    """
    if system.mesh is None:
        raise ContractViolationError('system has no mesh attached')
    fac = factorization if factorization is not None else factorize(system, alpha)
    x = fac.solve()
    c, g1, g2, w = system.split(x)
    residual, bound = constraint_residual(system, c, g1, g2)
    if residual > bound:
        logger.warning('constraint residual {:.3e} exceeds {:.3e} (alpha={:.3e}, m={})'.format(
            residual, bound, alpha, system.m))
    metadata = {
        'alpha': alpha,
        'm': system.m,
        'n': system.n,
        'constraint_residual': residual,
        'constraint_bound': bound,
        'system_residual': fac.relative_residual(x),
        'pinned_dofs': system.fixed_dofs.tolist() if system.kind is BoundaryKind.NEUMANN else [],
    }
    logger.debug('solved m={} alpha={:.3e} constraint residual {:.3e}'.format(system.m, alpha, residual))
    return Smoother(system.mesh, c, g1, g2, w, alpha, metadata)


# ---------------------------------------------- Metrics ----------------------------------------------
@dataclass
class FitMetrics:
    rmse: float
    rmspe: float
    max: float


def metrics_from_residuals(residuals: np.ndarray, y: np.ndarray) -> FitMetrics:
    """RMSE, RMSPE (residuals divided by max y) and largest absolute residual.

    Raises:
        EmptyDataError: If there are no residuals.
        MetricError: If max y is zero.
    """
    if residuals.size == 0:
        raise EmptyDataError('no data points to measure the fit on')
    rmse_value = float(np.sqrt(np.mean(residuals ** 2)))
    y_max = float(np.max(y))
    if y_max == 0.0:
        raise MetricError('RMSPE is undefined when max(y) = 0')
    rmspe_value = float(np.sqrt(np.mean((residuals / y_max) ** 2)))
    return FitMetrics(rmse_value, rmspe_value, float(np.max(np.abs(residuals))))


def residuals(smoother: Smoother, data: ScatteredData) -> Tuple[np.ndarray, np.ndarray]:
    """(s(x_i) - y_i, y_i) over the in-domain points."""
    inside = smoother.mesh.domain.contains(data.points)
    if not np.any(inside):
        raise EmptyDataError('no data points inside the domain')
    y = data.responses[inside]
    return smoother.evaluate_many(data.points[inside]) - y, y


def rmse(smoother: Smoother, data: ScatteredData) -> float:
    r, _ = residuals(smoother, data)
    return float(np.sqrt(np.mean(r ** 2)))


def rmspe(smoother: Smoother, data: ScatteredData) -> float:
    r, y = residuals(smoother, data)
    return metrics_from_residuals(r, y).rmspe


def max_err(smoother: Smoother, data: ScatteredData) -> float:
    r, _ = residuals(smoother, data)
    return float(np.max(np.abs(r)))


def fit_metrics(smoother: Smoother, data: ScatteredData) -> FitMetrics:
    r, y = residuals(smoother, data)
    return metrics_from_residuals(r, y)
