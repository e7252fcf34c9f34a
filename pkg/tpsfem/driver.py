"""Outer solve and refine loop.

Each outer iteration refines the grid (uniformly, or by marking edges with large indicator
values until the node count has doubled), picks the next alpha and solves the full system.
Inside an adaptive iteration the surface is never re-solved: nodes created by bisection take
the average of their edge's endpoints and only edges without a value get a fresh indicator.
"""
import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Set

import numpy as np

from .assembly import SystemAssembler
from .data import DataBuckets, ScatteredData, locate, max_data_gap, rebucket
from .domain import BoundaryCondition, DomainSpec
from .gcv import AlphaSearch, GcvConfig, alpha_initial, alpha_update
from .helpers import Stopwatch
from .indicators import IndicatorConfig, IndicatorContext, IndicatorField, IndicatorKind, compute_field
from .mesh import TriMesh, build_initial_grid
from .observer import Subject
from .solver import FitMetrics, Smoother, metrics_from_residuals, residuals, solve
from .tps_errors import ConfigurationError, ContractViolationError, EmptyDataError, GcvScoreError, \
    MetricError, RunAbortedError, SolverError

METRICS_HEADER = ('iter', 'nodes', 'alpha', 'rmse', 'rmspe', 'max', 'solve_s', 'build_s', 'indicator_s')

STOP_TOLERANCE = 'tolerance'
STOP_MAX_ITERS = 'max_iters'
STOP_STALL = 'stall'
STOP_ABORTED = 'aborted'


class RefineMode(enum.Enum):
    UNIFORM = 'uniform'
    ADAPTIVE = 'adaptive'


# Default outer iteration limits per mode
OUTER_LIMITS = {RefineMode.UNIFORM: 10, RefineMode.ADAPTIVE: 8}


@dataclass
class RefineConfig:
    """Settings of the outer loop.

    Args:
        mode (RefineMode): uniform sweeps or indicator driven bisection.
        indicator (IndicatorKind): indicator used in adaptive mode.
        rmse_tol (float): stop once the RMSE is at or below this value.
        max_outer_iters (int, optional): outer iteration cap; 10 uniform, 8 adaptive by default.
        doubling_factor (float): the inner loop runs until nodes reach this multiple of the entry count.
        mark_fraction (float): edges with eta >= mark_fraction * max eta are marked.
        stall_threshold (float): relative RMSE improvement counted as a stall.
        stall_count (int): consecutive stalls that stop the run; 0 disables the rule.
        initial_nodes_per_side (int): grid nodes per side of the starting mesh.
    """
    mode: RefineMode = RefineMode.ADAPTIVE
    indicator: IndicatorKind = IndicatorKind.NORM
    rmse_tol: float = 0.0
    max_outer_iters: Optional[int] = None
    doubling_factor: float = 2.0
    mark_fraction: float = 0.75
    stall_threshold: float = 0.10
    stall_count: int = 2
    initial_nodes_per_side: int = 5
    indicator_config: IndicatorConfig = field(default_factory=IndicatorConfig)
    gcv: GcvConfig = field(default_factory=GcvConfig)


    @property
    def outer_limit(self) -> int:
        return OUTER_LIMITS[self.mode] if self.max_outer_iters is None else self.max_outer_iters


    def validate(self) -> 'RefineConfig':
        if not 0 < self.mark_fraction <= 1:
            raise ConfigurationError('mark fraction must lie in (0, 1], got {}'.format(self.mark_fraction))
        if not self.rmse_tol >= 0:
            raise ConfigurationError('rmse tolerance must be >= 0, got {}'.format(self.rmse_tol))
        if self.outer_limit < 0:
            raise ConfigurationError('max outer iterations must be >= 0, got {}'.format(self.outer_limit))
        if not self.doubling_factor > 1:
            raise ConfigurationError('doubling factor must exceed 1, got {}'.format(self.doubling_factor))
        if self.stall_count < 0 or not self.stall_threshold >= 0:
            raise ConfigurationError('stall rule needs count >= 0 and threshold >= 0')
        if self.initial_nodes_per_side < 2:
            raise ConfigurationError('initial grid needs at least 2 nodes per side')
        self.indicator_config.validate()
        self.gcv.validate()
        return self


    def to_dict(self) -> dict:
        out = asdict(self)
        out['mode'] = self.mode.value
        out['indicator'] = self.indicator.value
        out['max_outer_iters'] = self.outer_limit
        out['rmse_tol'] = self.rmse_tol if math.isfinite(self.rmse_tol) else 'inf'
        return out


@dataclass
class IterationRecord:
    iter: int
    nodes: int
    alpha: float
    rmse: float
    rmspe: float
    max: float
    solve_s: float = 0.0
    build_s: float = 0.0
    indicator_s: float = 0.0
    gcv_score: float = float('nan')
    marked: int = 0


    def row(self) -> list:
        return [getattr(self, name) for name in METRICS_HEADER]


@dataclass
class RunResult:
    """Final surface, mesh and per-iteration records of one run.

    Unpacks as ``smoother, records = result``.
    """
    smoother: Optional[Smoother]
    mesh: TriMesh
    records: List[IterationRecord]
    stop_reason: str
    buckets: Optional[DataBuckets] = None
    alpha_search: Optional[AlphaSearch] = None
    diagnostics: Dict = field(default_factory=dict)


    def __iter__(self):
        return iter((self.smoother, self.records))


    @property
    def final(self) -> IterationRecord:
        return self.records[-1]


def mark(etas: IndicatorField, gamma: float, already_refined: Iterable[int] = ()) -> Set[int]:
    """Edges whose value reaches gamma times the largest eligible value.

    Raises:
        ContractViolationError: If no eligible edge carries a value.
    """
    if not 0 < gamma <= 1:
        raise ConfigurationError('gamma must lie in (0, 1], got {}'.format(gamma))
    skip = set(already_refined)
    eligible = {e: v for e, v in etas.values.items() if e not in skip}
    if not eligible:
        raise ContractViolationError('no eligible edge to mark')
    threshold = gamma * max(eligible.values())
    return {e for e, v in eligible.items() if v >= threshold}


class AdaptiveDriver(Subject):
    """
    AdaptiveDriver runs the solve and refine loop and publishes 'iteration', 'refine' and
    'stop' events to registered callbacks.
    """
    def __init__(self, data: ScatteredData, domain: DomainSpec, boundary: BoundaryCondition,
                 config: Optional[RefineConfig] = None, mesh: Optional[TriMesh] = None):
        super().__init__()
        self.__logger = logging.getLogger('tpsfem.AdaptiveDriver')
        self.data = data
        self.domain = domain
        self.boundary = boundary
        self.config = config or RefineConfig()
        self.mesh = mesh


    def stop_reason(self, records: List[IterationRecord]) -> Optional[str]:
        cfg = self.config
        if records[-1].rmse <= cfg.rmse_tol:
            return STOP_TOLERANCE
        if len(records) - 1 >= cfg.outer_limit:
            return STOP_MAX_ITERS
        if cfg.stall_count and len(records) > cfg.stall_count:
            recent = records[-cfg.stall_count - 1:]
            gains = [(a.rmse - b.rmse) / a.rmse for a, b in zip(recent, recent[1:])]
            if all(g < cfg.stall_threshold for g in gains):
                return STOP_STALL
        return None


    def run(self) -> RunResult:
        """Runs until a stop rule fires.

        Raises:
            ConfigurationError: If the configuration is invalid.
            EmptyDataError: If no data point lies inside the domain.
            RunAbortedError: If a solve fails; the error carries the partial result.
        """
        cfg = self.config.validate()
        self.domain.validate()
        if self.data.n == 0:
            raise EmptyDataError('no data to fit')
        build, solve_w = Stopwatch(), Stopwatch()
        with build:
            mesh = self.mesh or build_initial_grid(self.domain, cfg.initial_nodes_per_side, self.boundary.kind)
            buckets = locate(mesh, self.data)
            if buckets.n_inside == 0:
                raise EmptyDataError('none of the {} data points lies inside the domain'.format(self.data.n))
            assembler = SystemAssembler(mesh, self.data, self.boundary)
            system = assembler.assemble(buckets)
        result = RunResult(None, mesh, [], STOP_ABORTED, buckets)
        try:
            with solve_w:
                search = alpha_initial(system, cfg.gcv)
                smoother = solve(system, search.alpha)
        except SolverError as e:
            raise RunAbortedError('initial solve failed: {}'.format(e), result=result) from e
        result.alpha_search = search
        result.smoother = smoother
        self._record(result, 0, smoother, solve_w.elapsed, build.elapsed, 0.0, search.score, 0)

        k = 0
        while True:
            reason = self.stop_reason(result.records)
            if reason is not None:
                break
            k += 1
            build, solve_w, ind = Stopwatch(), Stopwatch(), Stopwatch()
            marked = 0
            if cfg.mode is RefineMode.UNIFORM:
                with build:
                    mesh.uniform_refine()
                    buckets = rebucket(mesh, buckets, self.data)
                self.notify('refine', k, 1, mesh.n_nodes)
            else:
                buckets, marked = self._refine_adaptive(k, mesh, smoother, buckets, build, ind)
            result.buckets = buckets
            alpha = smoother.alpha
            try:
                with build:
                    system = assembler.assemble(buckets)
                with solve_w:
                    try:
                        update = alpha_update(alpha, system, cfg.gcv)
                        alpha, score = update.alpha, update.score
                    except GcvScoreError as e:
                        self.__logger.warning('keeping alpha {:.3e}: {}'.format(alpha, e))
                        score = float('nan')
                    smoother = solve(system, alpha)
            except SolverError as e:
                result.stop_reason = STOP_ABORTED
                result.diagnostics = self._diagnostics(result, mesh)
                self.notify('stop', STOP_ABORTED)
                raise RunAbortedError('outer iteration {} failed: {}'.format(k, e), result=result) from e
            result.smoother = smoother
            self._record(result, k, smoother, solve_w.elapsed, build.elapsed, ind.elapsed, score, marked)

        result.stop_reason = reason
        result.diagnostics = self._diagnostics(result, mesh)
        self.__logger.info('stopped after {} outer iterations ({}): {} nodes, rmse {:.4g}'.format(
            k, reason, mesh.n_nodes, result.final.rmse))
        self.notify('stop', reason)
        return result


    def _record(self, result: RunResult, k: int, smoother: Smoother, solve_s: float, build_s: float,
                indicator_s: float, score: float, marked: int) -> None:
        r, y = residuals(smoother, self.data)
        try:
            metrics = metrics_from_residuals(r, y)
        except MetricError as e:
            metrics = FitMetrics(float(np.sqrt(np.mean(r ** 2))), float('nan'), float(np.max(np.abs(r))))
            self.__logger.warning('iteration {}: rmspe left undefined: {}'.format(k, e))
        record = IterationRecord(k, smoother.m, smoother.alpha, metrics.rmse, metrics.rmspe, metrics.max,
                                 solve_s, build_s, indicator_s, score, marked)
        result.records.append(record)
        self.__logger.info('iteration {}: {} nodes, alpha {:.3e}, rmse {:.4g}'.format(
            k, record.nodes, record.alpha, record.rmse))
        self.notify('iteration', record)


    def _refine_adaptive(self, k: int, mesh: TriMesh, smoother: Smoother, buckets: DataBuckets,
                         build: Stopwatch, ind: Stopwatch):
        cfg = self.config
        target = cfg.doubling_factor * mesh.n_nodes
        with ind:
            etas = compute_field(cfg.indicator, smoother, self.data, buckets, config=cfg.indicator_config)
        passes, marked_total = 0, 0
        while mesh.n_nodes < target:
            stale = {e for e in etas.values if not mesh.is_candidate(e)}
            with build:
                try:
                    marked = mark(etas, cfg.mark_fraction, stale)
                except ContractViolationError:
                    marked = {max(mesh.candidate_edges(), key=lambda e: (mesh.edge_length(e), -e))}
                    self.__logger.warning('no indicator values left, bisecting longest edge {}'.format(
                        next(iter(marked))))
                for e in sorted(marked, key=lambda e: (-etas.values.get(e, 0.0), e)):
                    if mesh.is_candidate(e):
                        mesh.bisect_edge(e)
                buckets = rebucket(mesh, buckets, self.data)
                smoother = smoother.prolong(mesh)
            for e in stale | marked:
                etas.values.pop(e, None)
            fresh = [e for e in mesh.candidate_edges() if e not in etas.values and e not in etas.skipped]
            with ind:
                context = IndicatorContext(smoother, self.data, buckets, cfg.indicator_config)
                etas.update(compute_field(cfg.indicator, smoother, self.data, buckets, edges=fresh,
                                            context=context))
            passes += 1
            marked_total += len(marked)
            self.__logger.debug('pass {}: marked {}, {} nodes'.format(passes, len(marked), mesh.n_nodes))
            self.notify('refine', k, passes, mesh.n_nodes)
        return buckets, marked_total


    def _diagnostics(self, result: RunResult, mesh: TriMesh) -> dict:
        out = {
            'mesh_size': mesh.mesh_size(),
            'min_angle': mesh.min_angle(),
            'nodes': mesh.n_nodes,
            'triangles': mesh.n_triangles,
            'data_gap': max_data_gap(self.data, self.domain, mesh.mesh_size() / 4.0),
            'outside': int(result.buckets.outside.size) if result.buckets is not None else 0,
        }
        if result.smoother is not None:
            out.update({key: result.smoother.metadata.get(key) for key in
                        ('constraint_residual', 'constraint_bound', 'system_residual', 'pinned_dofs')})
        if result.alpha_search is not None:
            out['gcv_evaluations'] = [[a, v if math.isfinite(v) else None] for a, v in result.alpha_search.evaluations]
        return out


def run(data: ScatteredData, domain: DomainSpec, boundary: BoundaryCondition,
        config: Optional[RefineConfig] = None) -> RunResult:
    """Fits data on domain, refining until a stop rule fires.

    Returns:
        RunResult: unpacks as ``smoother, records``.
    """
    return AdaptiveDriver(data, domain, boundary, config).run()
