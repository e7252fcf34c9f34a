"""Radial basis function smoothers used as cost baselines.

A thin plate spline with an affine tail and three compactly supported kernels are fitted by
least squares at control points picked from the data. Each fit reports the fill of its
control-point kernel matrix, the time taken and the RMSE over the data.
"""
import enum
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy import sparse  # type: ignore
from scipy.sparse.linalg import splu  # type: ignore
from scipy.spatial import cKDTree  # type: ignore
from scipy.special import xlogy  # type: ignore

from .assembly import assemble_system
from .data import ScatteredData, locate
from .domain import BoundaryCondition, DomainSpec
from .gcv import GcvConfig, alpha_initial
from .helpers import Stopwatch, as_points
from .mesh import build_initial_grid
from .solver import rmse, solve
from .tps_errors import ConfigurationError, SelectionError, SolverError

logger = logging.getLogger(__name__)

# Relative ridge added when the normal equations are singular
_RIDGE = 1e-10

# Data rows per block when accumulating dense normal equations
_CHUNK = 4096

COMPARISON_HEADER = ('technique', 'kernel', 'n_basis', 'radius', 'nnz', 'ratio', 'time_s', 'rmse')


class KernelKind(enum.Enum):
    TPS = 'tps'
    WENDLAND_C0 = 'wendland_c0'
    WENDLAND_C2 = 'wendland_c2'
    BUHMANN = 'buhmann'


COMPACT_KINDS = (KernelKind.WENDLAND_C0, KernelKind.WENDLAND_C2, KernelKind.BUHMANN)


def tps_profile(r):
    """r^2 log r with the limit 0 at r = 0."""
    r = np.asarray(r, dtype=float)
    return xlogy(r * r, r)


def wendland_c0(r):
    r = np.asarray(r, dtype=float)
    return np.clip(1.0 - r, 0.0, None) ** 2


def wendland_c2(r):
    r = np.asarray(r, dtype=float)
    return np.clip(1.0 - r, 0.0, None) ** 4 * (4.0 * r + 1.0)


def buhmann(r):
    """1/3 + r^2 - 4r^3/3 + 2r^2 log r on [0, 1], zero beyond."""
    r = np.asarray(r, dtype=float)
    inside = 1.0 / 3.0 + r ** 2 - 4.0 * r ** 3 / 3.0 + 2.0 * xlogy(r * r, r)
    return np.where(r <= 1.0, inside, 0.0)


PROFILES = {
    KernelKind.TPS: tps_profile,
    KernelKind.WENDLAND_C0: wendland_c0,
    KernelKind.WENDLAND_C2: wendland_c2,
    KernelKind.BUHMANN: buhmann,
}


@dataclass(frozen=True)
class Kernel:
    """A radial profile; compact kinds are evaluated as profile(r / radius)."""
    kind: KernelKind
    radius: Optional[float] = None


    @property
    def compact(self) -> bool:
        return self.kind in COMPACT_KINDS


    def validate(self) -> 'Kernel':
        if self.compact and not (self.radius is not None and self.radius > 0 and math.isfinite(self.radius)):
            raise ConfigurationError('{} needs a positive radius, got {}'.format(self.kind.value, self.radius))
        return self


    def __call__(self, r):
        profile = PROFILES[self.kind]
        if self.compact:
            return profile(np.asarray(r, dtype=float) / self.radius)
        return profile(r)


@dataclass
class ControlPointSet:
    """Data points closest to the nodes of a square grid of the given spacing."""
    points: np.ndarray
    indices: np.ndarray
    spacing: float


    @property
    def n(self) -> int:
        return int(self.points.shape[0])


def select_control_points(data: ScatteredData, domain: DomainSpec, spacing: float) -> ControlPointSet:
    """Nearest data point to every grid node inside the domain, unless farther than spacing / 3.

    Raises:
        ConfigurationError: If spacing is not positive.
        SelectionError: If no grid node has a data point close enough.
    """
    if not (spacing > 0 and math.isfinite(spacing)):
        raise ConfigurationError('control grid spacing must be positive, got {}'.format(spacing))
    if data.n == 0:
        raise SelectionError('no data to select control points from')
    xs = np.arange(domain.x_lo, domain.x_hi + 0.5 * spacing, spacing)
    ys = np.arange(domain.y_lo, domain.y_hi + 0.5 * spacing, spacing)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    grid = grid[domain.contains(grid)]
    distance, nearest = cKDTree(data.points).query(grid)
    chosen = np.unique(nearest[distance <= spacing / 3.0])
    if chosen.size == 0:
        raise SelectionError('no data point lies within {:.3g} of the control grid'.format(spacing / 3.0))
    logger.debug('selected {} control points from {} grid nodes'.format(chosen.size, grid.shape[0]))
    return ControlPointSet(data.points[chosen], chosen, float(spacing))


def radius_for_coverage(data: ScatteredData, control: ControlPointSet, target: int, iterations: int = 60) -> float:
    """Smallest radius (by bisection) at which the median control point sees target data points."""
    if not 1 <= target <= data.n:
        raise ConfigurationError('coverage target must lie in [1, {}], got {}'.format(data.n, target))
    tree = cKDTree(data.points)

    def median_count(radius: float) -> float:
        return float(np.median(tree.query_ball_point(control.points, radius, return_length=True)))

    both = np.vstack([data.points, control.points])
    lo, hi = 0.0, float(np.hypot(*np.ptp(both, axis=0))) * (1.0 + 1e-9) + 1e-12
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if median_count(mid) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * hi:
            break
    return hi


def _pairs(x: np.ndarray, centres: np.ndarray, radius: float):
    # (row, col, distance) of every point within radius of a centre, as in a sparse kernel evaluation
    neighbours = cKDTree(centres).query_ball_tree(cKDTree(x), radius)
    counts = np.fromiter((len(n) for n in neighbours), dtype=np.int64, count=len(neighbours))
    cols = np.repeat(np.arange(centres.shape[0]), counts)
    rows = np.fromiter((i for n in neighbours for i in n), dtype=np.int64, count=int(counts.sum()))
    dist = np.linalg.norm(x[rows] - centres[cols], axis=1)
    keep = dist < radius
    return rows[keep], cols[keep], dist[keep]


def design_matrix(points, centres: np.ndarray, kernel: Kernel):
    """Kernel values Psi_j(x_i); sparse csr for compact kernels, dense otherwise."""
    x = as_points(points)
    if kernel.validate().compact:
        rows, cols, dist = _pairs(x, centres, kernel.radius)
        return sparse.csr_matrix((kernel(dist), (rows, cols)), shape=(x.shape[0], centres.shape[0]))
    diff = x[:, None, :] - centres[None, :, :]
    return kernel(np.sqrt(np.einsum('ijk,ijk->ij', diff, diff)))


def kernel_matrix(control: ControlPointSet, kernel: Kernel):
    """Kernel values between control points; entries are nonzero exactly when the distance is below the radius."""
    return design_matrix(control.points, control.points, kernel)


def _affine(points: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(points.shape[0]), points])


@dataclass
class RbfFit:
    kernel: Kernel
    control: ControlPointSet
    weights: np.ndarray
    tail: Optional[np.ndarray]
    nnz: int
    ratio: float
    time_s: float
    rmse: float
    ridge: bool = False


    def evaluate(self, points) -> np.ndarray:
        x = as_points(points)
        out = np.zeros(x.shape[0])
        for start in range(0, x.shape[0], _CHUNK):
            block = x[start:start + _CHUNK]
            values = design_matrix(block, self.control.points, self.kernel) @ self.weights
            if self.tail is not None:
                values = values + _affine(block) @ self.tail
            out[start:start + _CHUNK] = values
        return out


def _solve_dense(normal: np.ndarray, rhs: np.ndarray):
    try:
        return np.linalg.solve(normal, rhs), False
    except np.linalg.LinAlgError:
        shift = _RIDGE * max(float(np.trace(normal)) / normal.shape[0], 1.0)
        logger.warning('singular normal equations, retrying with ridge {:.3e}'.format(shift))
        return np.linalg.solve(normal + shift * np.eye(normal.shape[0]), rhs), True


def _solve_sparse(normal: sparse.csr_matrix, rhs: np.ndarray):
    try:
        return splu(normal.tocsc()).solve(rhs), False
    except RuntimeError:
        shift = _RIDGE * max(float(normal.diagonal().mean()), 1.0)
        logger.warning('singular normal equations, retrying with ridge {:.3e}'.format(shift))
        return splu((normal + shift * sparse.identity(normal.shape[0])).tocsc()).solve(rhs), True


def fit_rbf(data: ScatteredData, control: ControlPointSet, kernel: Kernel) -> RbfFit:
    """Least-squares fit of sum_j w_j Psi_j(x) to all data through the normal equations.

    The thin plate spline carries an affine tail; compact kernels are assembled sparse.

    Raises:
        SolverError: If the fit is not finite even after the ridge retry.
    """
    kernel.validate()
    watch = Stopwatch()
    with watch:
        if kernel.compact:
            B = design_matrix(data.points, control.points, kernel)
            coef, ridge = _solve_sparse((B.T @ B).tocsr(), B.T @ data.responses)
            weights, tail = coef, None
        else:
            k = control.n + 3
            normal = np.zeros((k, k))
            rhs = np.zeros(k)
            for start in range(0, data.n, _CHUNK):
                block = data.points[start:start + _CHUNK]
                B = np.hstack([design_matrix(block, control.points, kernel), _affine(block)])
                normal += B.T @ B
                rhs += B.T @ data.responses[start:start + _CHUNK]
            coef, ridge = _solve_dense(normal, rhs)
            weights, tail = coef[:control.n], coef[control.n:]
    if not np.all(np.isfinite(coef)):
        raise SolverError('{} fit with {} control points is not finite'.format(kernel.kind.value, control.n))
    # the thin plate spline matrix is stored whole even where r^2 log r vanishes
    nnz = int(kernel_matrix(control, kernel).nnz) if kernel.compact else control.n * control.n
    fit = RbfFit(kernel, control, weights, tail, nnz, nnz / float(control.n) ** 2, watch.elapsed, 0.0, ridge)
    fit.rmse = float(np.sqrt(np.mean((fit.evaluate(data.points) - data.responses) ** 2)))
    logger.debug('{} fit: n_basis={} nnz={} rmse={:.4g}'.format(kernel.kind.value, control.n, nnz, fit.rmse))
    return fit


@dataclass
class ComparisonRow:
    technique: str
    kernel: str
    n_basis: int
    radius: float
    nnz: int
    ratio: float
    time_s: float
    rmse: float


    def row(self) -> list:
        return [getattr(self, name) for name in COMPARISON_HEADER]


def _row(fit: RbfFit, technique: str) -> ComparisonRow:
    radius = fit.kernel.radius if fit.kernel.radius is not None else float('nan')
    return ComparisonRow(technique, fit.kernel.kind.value, fit.control.n, radius, fit.nnz, fit.ratio,
                         fit.time_s, fit.rmse)


def compare_kernels(data: ScatteredData, domain: DomainSpec, spacings: Sequence[float],
                    targets: Iterable[int] = (100, 200),
                    kinds: Iterable[KernelKind] = tuple(KernelKind)) -> List[ComparisonRow]:
    """TPS and compact kernel rows for each control grid spacing and coverage target."""
    kinds = list(kinds)
    rows = []
    for spacing in spacings:
        control = select_control_points(data, domain, spacing)
        if KernelKind.TPS in kinds:
            rows.append(_row(fit_rbf(data, control, Kernel(KernelKind.TPS)), 'tps'))
        for target in targets:
            target = min(int(target), data.n)
            radius = radius_for_coverage(data, control, target)
            for kind in kinds:
                if kind in COMPACT_KINDS:
                    rows.append(_row(fit_rbf(data, control, Kernel(kind, radius)), 'csrbf'))
    return rows


def tpsfem_rows(data: ScatteredData, domain: DomainSpec, boundary: BoundaryCondition, sweeps: Iterable[int],
                gcv: Optional[GcvConfig] = None, nodes_per_side: int = 5) -> List[ComparisonRow]:
    """Rows for the finite element smoother on uniformly refined grids.

    nnz and ratio describe the assembled 4m x 4m saddle point operator.
    """
    gcv = gcv or GcvConfig()
    rows = []
    for count in sorted(set(sweeps)):
        mesh = build_initial_grid(domain, nodes_per_side, boundary.kind)
        for _ in range(count):
            mesh.uniform_refine()
        watch = Stopwatch()
        with watch:
            system = assemble_system(mesh, data, locate(mesh, data), boundary)
            alpha = alpha_initial(system, gcv).alpha
            smoother = solve(system, alpha)
        nnz = system.nnz(alpha)
        rows.append(ComparisonRow('tpsfem', 'p1', mesh.n_nodes, float('nan'), nnz, nnz / float(system.size) ** 2,
                                  watch.elapsed, rmse(smoother, data)))
    return rows
