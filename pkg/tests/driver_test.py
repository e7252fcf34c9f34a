import math
import unittest
from unittest.mock import Mock, patch

import numpy as np
import pytest

from tpsfem import driver
from tpsfem.data import NoiseSpec, ScatteredData, gen_bump, gen_peaks
from tpsfem.domain import BoundaryCondition, DomainSpec
from tpsfem.driver import (
    METRICS_HEADER, STOP_ABORTED, STOP_MAX_ITERS, STOP_STALL, STOP_TOLERANCE,
    AdaptiveDriver, IterationRecord, RefineConfig, RefineMode, mark, run,
)
from tpsfem.indicators import IndicatorField, IndicatorKind
from tpsfem.solver import solve
from tpsfem.tps_errors import (
    ConfigurationError, ContractViolationError, EmptyDataError, GcvScoreError, RunAbortedError, SolverError,
)

from conftest import plane_data


def records(*rmses):
    return [IterationRecord(k, 25 * 2 ** k, 1e-6, r, r, r) for k, r in enumerate(rmses)]


def field(values):
    return IndicatorField(IndicatorKind.NORM, dict(values))


class TestMark(unittest.TestCase):
    def test_threshold(self):
        self.assertEqual(mark(field({1: 1.0, 2: 2.0, 3: 10.0}), 0.75), {3})
        self.assertEqual(mark(field({1: 1.0, 2: 2.0, 3: 10.0}), 0.1), {1, 2, 3})

    def test_all_equal(self):
        self.assertEqual(mark(field({4: 0.5, 9: 0.5, 2: 0.5}), 0.75), {2, 4, 9})

    def test_gamma_one_marks_maximum(self):
        self.assertEqual(mark(field({1: 3.0, 2: 3.0, 3: 1.0}), 1.0), {1, 2})

    def test_already_refined_excluded(self):
        self.assertEqual(mark(field({1: 1.0, 2: 2.0, 3: 10.0}), 0.75, already_refined=[3]), {2})

    def test_nothing_eligible(self):
        with self.assertRaises(ContractViolationError):
            mark(field({1: 1.0}), 0.5, already_refined={1})

    def test_bad_gamma(self):
        for gamma in (0.0, 1.5):
            with self.assertRaises(ConfigurationError):
                mark(field({1: 1.0}), gamma)


class TestStopRules(unittest.TestCase):
    def driver(self, **kwargs):
        return AdaptiveDriver(plane_data(n=10), DomainSpec.square(), BoundaryCondition(), RefineConfig(**kwargs))

    def test_tolerance_first(self):
        d = self.driver(rmse_tol=0.5, max_outer_iters=0)
        self.assertEqual(d.stop_reason(records(0.4)), STOP_TOLERANCE)

    def test_max_iters(self):
        d = self.driver(max_outer_iters=2)
        self.assertIsNone(d.stop_reason(records(1.0, 0.5)))
        self.assertEqual(d.stop_reason(records(1.0, 0.5, 0.2)), STOP_MAX_ITERS)

    def test_stall(self):
        d = self.driver(max_outer_iters=10)
        self.assertEqual(d.stop_reason(records(1.0, 0.95, 0.93)), STOP_STALL)
        self.assertIsNone(d.stop_reason(records(1.0, 0.95, 0.5)))
        self.assertIsNone(d.stop_reason(records(1.0, 0.95)))

    def test_stall_disabled(self):
        d = self.driver(max_outer_iters=10, stall_count=0)
        self.assertIsNone(d.stop_reason(records(1.0, 1.0, 1.0, 1.0)))

    def test_default_limits(self):
        self.assertEqual(RefineConfig(mode=RefineMode.UNIFORM).outer_limit, 10)
        self.assertEqual(RefineConfig().outer_limit, 8)


@pytest.mark.parametrize('config', [
    RefineConfig(mark_fraction=0.0),
    RefineConfig(rmse_tol=-1.0),
    RefineConfig(max_outer_iters=-1),
    RefineConfig(doubling_factor=1.0),
    RefineConfig(stall_count=-1),
    RefineConfig(initial_nodes_per_side=1),
])
def test_config_rejected(config):
    with pytest.raises(ConfigurationError):
        config.validate()


def test_config_to_dict():
    out = RefineConfig(rmse_tol=math.inf, mode=RefineMode.UNIFORM).to_dict()
    assert out['rmse_tol'] == 'inf'
    assert out['mode'] == 'uniform'
    assert out['max_outer_iters'] == 10


def test_record_row_matches_header():
    record = IterationRecord(2, 81, 1e-6, 0.1, 0.01, 0.3, 0.5, 0.2, 0.1, gcv_score=4.0, marked=3)
    assert len(record.row()) == len(METRICS_HEADER)
    assert record.row()[:3] == [2, 81, 1e-6]


class TestRun(unittest.TestCase):


    def setUp(self):
        self.data = gen_bump(400, noise=NoiseSpec(sigma=0.02, seed=3))
        self.boundary = BoundaryCondition.dirichlet()


    def test_infinite_tolerance_gives_one_record(self):
        result = run(self.data, DomainSpec.square(), self.boundary, RefineConfig(rmse_tol=math.inf))
        self.assertEqual(len(result.records), 1)
        self.assertEqual(result.stop_reason, STOP_TOLERANCE)
        self.assertEqual(result.records[0].iter, 0)
        self.assertEqual(result.records[0].nodes, 25)
        smoother, recs = result
        self.assertIs(smoother, result.smoother)
        self.assertIs(recs, result.records)
        self.assertTrue(1e-10 <= result.final.alpha <= 1e-4)


    def test_uniform_run(self):
        config = RefineConfig(mode=RefineMode.UNIFORM, max_outer_iters=2, stall_count=0)
        result = run(self.data, DomainSpec.square(), self.boundary, config)
        self.assertEqual([r.nodes for r in result.records], [25, 41, 81])
        self.assertEqual(result.stop_reason, STOP_MAX_ITERS)
        alphas = [r.alpha for r in result.records]
        self.assertEqual(alphas, sorted(alphas, reverse=True))
        diagnostics = result.diagnostics
        self.assertEqual(diagnostics['nodes'], 81)
        self.assertEqual(diagnostics['outside'], 0)
        self.assertAlmostEqual(diagnostics['min_angle'], math.pi / 4)
        self.assertTrue(diagnostics['gcv_evaluations'])


    def test_events(self):
        driver_ = AdaptiveDriver(self.data, DomainSpec.square(), self.boundary,
                                 RefineConfig(mode=RefineMode.UNIFORM, max_outer_iters=1))
        on_iteration, on_refine, on_stop = Mock(), Mock(), Mock()
        driver_.register('iteration', on_iteration)
        driver_.register('refine', on_refine)
        driver_.register('stop', on_stop)
        result = driver_.run()
        self.assertEqual(on_iteration.call_count, 2)
        self.assertIs(on_iteration.call_args_list[1][0][0], result.records[1])
        on_refine.assert_called_once_with(1, 1, 41)
        on_stop.assert_called_once_with(STOP_MAX_ITERS)


    def test_no_data_inside(self):
        data = ScatteredData([(5.0, 5.0)], [1.0])
        with self.assertRaises(EmptyDataError):
            run(data, DomainSpec.square(), self.boundary)


    def test_zero_responses_leave_rmspe_undefined(self):
        rng = np.random.default_rng(8)
        data = ScatteredData(rng.uniform(0.0, 1.0, size=(200, 2)), np.zeros(200))
        result = run(data, DomainSpec.square(), self.boundary,
                     RefineConfig(mode=RefineMode.UNIFORM, rmse_tol=math.inf))
        record = result.final
        self.assertTrue(math.isnan(record.rmspe))
        self.assertAlmostEqual(record.rmse, 0.0, places=12)
        self.assertAlmostEqual(record.max, 0.0, places=12)


    def test_non_positive_responses_with_neumann_boundary(self):
        rng = np.random.default_rng(9)
        y = -np.abs(rng.normal(size=300))
        y[0] = 0.0
        data = ScatteredData(rng.uniform(0.0, 1.0, size=(300, 2)), y)
        config = RefineConfig(mode=RefineMode.UNIFORM, max_outer_iters=1, stall_count=0)
        result = run(data, DomainSpec.square(), BoundaryCondition.neumann(), config)
        self.assertEqual(len(result.records), 2)
        for record in result.records:
            self.assertTrue(math.isnan(record.rmspe))
            self.assertGreater(record.rmse, 0.0)
            self.assertTrue(math.isfinite(record.max))


    def test_failed_gcv_keeps_alpha(self):
        config = RefineConfig(mode=RefineMode.UNIFORM, max_outer_iters=1)
        with patch.object(driver, 'alpha_update', side_effect=GcvScoreError('flat')):
            result = run(self.data, DomainSpec.square(), self.boundary, config)
        self.assertEqual(result.records[1].alpha, result.records[0].alpha)
        self.assertTrue(math.isnan(result.records[1].gcv_score))


    def test_abort_carries_partial_result(self):
        calls = []

        def failing(system, alpha):
            if calls:
                raise SolverError('singular', alpha=alpha, m=system.m)
            calls.append(alpha)
            return solve(system, alpha)

        config = RefineConfig(mode=RefineMode.UNIFORM, max_outer_iters=3)
        on_stop = Mock()
        driver_ = AdaptiveDriver(self.data, DomainSpec.square(), self.boundary, config)
        driver_.register('stop', on_stop)
        with patch.object(driver, 'solve', side_effect=failing):
            with self.assertRaises(RunAbortedError) as ctx:
                driver_.run()
        partial = ctx.exception.result
        self.assertEqual(partial.stop_reason, STOP_ABORTED)
        self.assertEqual(len(partial.records), 1)
        self.assertEqual(partial.mesh.n_nodes, 41)
        on_stop.assert_called_once_with(STOP_ABORTED)


    def test_initial_failure(self):
        with patch.object(driver, 'solve', side_effect=SolverError('singular')):
            with self.assertRaises(RunAbortedError) as ctx:
                run(self.data, DomainSpec.square(), self.boundary)
        self.assertEqual(ctx.exception.result.records, [])


@pytest.mark.parametrize('kind', list(IndicatorKind))
def test_adaptive_iteration_doubles_nodes(kind):
    data = gen_bump(800, noise=NoiseSpec(sigma=0.01, seed=2))
    config = RefineConfig(indicator=kind, max_outer_iters=1)
    refine = Mock()
    driver_ = AdaptiveDriver(data, DomainSpec.square(), BoundaryCondition.dirichlet(), config)
    driver_.register('refine', refine)
    result = driver_.run()
    assert len(result.records) == 2
    assert result.records[1].nodes >= 2 * result.records[0].nodes
    assert result.records[1].marked > 0
    assert result.mesh.check_conformity() == []
    assert refine.call_count >= 1
    assert result.records[1].alpha <= result.records[0].alpha
    assert result.buckets.mesh_version == result.mesh.version


def test_adaptive_run_is_deterministic():
    data = gen_bump(500, noise=NoiseSpec(sigma=0.02, seed=4))
    config = RefineConfig(indicator=IndicatorKind.RECOVERY, max_outer_iters=2)
    first = run(data, DomainSpec.square(), BoundaryCondition.dirichlet(), config)
    second = run(data, DomainSpec.square(), BoundaryCondition.dirichlet(), config)
    assert [r.row()[:6] for r in first.records] == [r.row()[:6] for r in second.records]
    np.testing.assert_array_equal(first.smoother.c, second.smoother.c)


@pytest.mark.slow
def test_peaks_uniform_reproduction():
    data = gen_peaks(62500, noise=NoiseSpec(sigma=0.02, seed=1))
    config = RefineConfig(mode=RefineMode.UNIFORM, max_outer_iters=10, stall_count=0)
    result = run(data, DomainSpec.square(-3.0, 3.0), BoundaryCondition.dirichlet(), config)
    assert result.final.nodes == 16641
    assert 0.016 <= result.final.rmse <= 0.026
    assert result.final.max <= 0.15


@pytest.mark.slow
@pytest.mark.parametrize('kind', [
    IndicatorKind.AUXILIARY, IndicatorKind.RESIDUAL, IndicatorKind.RECOVERY, IndicatorKind.NORM,
])
def test_peaks_adaptive_efficiency(kind):
    data = gen_peaks(62500, noise=NoiseSpec(sigma=0.02, seed=1))
    config = RefineConfig(indicator=kind, rmse_tol=0.026)
    result = run(data, DomainSpec.square(-3.0, 3.0), BoundaryCondition.dirichlet(), config)
    assert result.final.rmse <= 0.026
    assert result.final.nodes <= 7500


@pytest.mark.slow
def test_regression_indicator_fits_no_better_than_recovery():
    data = gen_peaks(62500, noise=NoiseSpec(sigma=0.02, seed=1))
    final = {}
    for kind in (IndicatorKind.REGRESSION, IndicatorKind.RECOVERY):
        config = RefineConfig(indicator=kind, max_outer_iters=4, stall_count=0)
        result = run(data, DomainSpec.square(-3.0, 3.0), BoundaryCondition.dirichlet(), config)
        assert result.stop_reason == STOP_MAX_ITERS
        final[kind] = result.final.rmse
    assert final[IndicatorKind.REGRESSION] >= final[IndicatorKind.RECOVERY]
