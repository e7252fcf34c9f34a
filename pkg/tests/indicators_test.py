import math
import unittest

import numpy as np
import pytest

from tpsfem.assembly import assemble_system
from tpsfem.data import NoiseSpec, ScatteredData, gen_bump, locate
from tpsfem.domain import BoundaryCondition, BoundaryKind, DirichletValues, DomainSpec
from tpsfem.gcv import GcvConfig, alpha_initial
from tpsfem.indicators import (
    IndicatorContext, IndicatorField, IndicatorKind, build_local_problem, compute_field, edge_jump,
    eta_auxiliary, eta_norm, eta_recovery, eta_regression, eta_residual, second_derivative_max,
)
from tpsfem.mesh import EdgeKind, build_initial_grid, make_mesh, uniform_refine
from tpsfem.solver import Smoother, solve
from tpsfem.tps_errors import ConfigurationError, IndicatorError

from conftest import plane_data


def fitted_plane():
    mesh = build_initial_grid(DomainSpec.square(), 5)
    data = plane_data(a=2.0, b=3.0, c=-1.0)
    buckets = locate(mesh, data)
    boundary = BoundaryCondition(values=DirichletValues.plane(2.0, 3.0, -1.0))
    smoother = solve(assemble_system(mesh, data, buckets, boundary), 1e-4)
    return smoother, data, buckets


def fitted_bump(side=9):
    mesh = build_initial_grid(DomainSpec.square(), side)
    data = gen_bump(600, noise=NoiseSpec(sigma=0.02, seed=9))
    buckets = locate(mesh, data)
    smoother = solve(assemble_system(mesh, data, buckets, BoundaryCondition.dirichlet()), 1e-5)
    return smoother, data, buckets


def nodal_smoother(mesh, c, g=0.0):
    m = mesh.n_nodes
    return Smoother(mesh, c, np.full(m, g), np.full(m, -g), np.zeros(m), 1e-4)


@pytest.mark.parametrize('kind', list(IndicatorKind))
def test_plane_gives_zero_field(kind):
    smoother, data, buckets = fitted_plane()
    field = compute_field(kind, smoother, data, buckets)
    assert set(field.values) == set(smoother.mesh.candidate_edges())
    assert not field.skipped
    assert field.max() == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize('kind', list(IndicatorKind))
def test_noisy_data_gives_finite_positive_field(kind):
    smoother, data, buckets = fitted_bump()
    field = compute_field(kind, smoother, data, buckets)
    assert len(field) == len(smoother.mesh.candidate_edges())
    values = np.array(list(field.values.values()))
    assert np.all(np.isfinite(values)) and np.all(values >= 0)
    assert field.max() > 0


class TestIndicatorField(unittest.TestCase):
    def test_top_fraction(self):
        field = IndicatorField(IndicatorKind.NORM, {1: 1.0, 2: 2.0, 3: 10.0})
        self.assertEqual(field.top_fraction(0.5), {2, 3})
        self.assertEqual(field.top_fraction(0.01), {3})

    def test_top_fraction_ties(self):
        field = IndicatorField(IndicatorKind.NORM, {5: 1.0, 2: 1.0})
        self.assertEqual(field.top_fraction(0.5), {2})
        self.assertEqual(IndicatorField(IndicatorKind.NORM).top_fraction(0.5), set())

    def test_update_clears_skipped(self):
        field = IndicatorField(IndicatorKind.AUXILIARY, {1: 1.0}, skipped={4})
        field.update(IndicatorField(IndicatorKind.AUXILIARY, {4: 3.0}))
        self.assertEqual(field.values, {1: 1.0, 4: 3.0})
        self.assertEqual(field.skipped, set())
        self.assertEqual(field.max(), 3.0)

    def test_restricted(self):
        field = IndicatorField(IndicatorKind.REGRESSION, {1: 1.0, 2: 2.0}, no_data={2}, skipped={7})
        part = field.restricted([2, 7])
        self.assertEqual(part.values, {2: 2.0})
        self.assertEqual(part.no_data, {2})
        self.assertEqual(part.skipped, {7})


class TestRegression(unittest.TestCase):
    def test_rmse_over_patch(self):
        mesh = build_initial_grid(DomainSpec.square(), 3)
        data = ScatteredData([(0.1, 0.3), (0.3, 0.1), (0.9, 0.9)], [3.0, 4.0, 10.0])
        buckets = locate(mesh, data)
        smoother = nodal_smoother(mesh, np.zeros(mesh.n_nodes))
        e = mesh.candidate_edges()[0]
        self.assertEqual(set(mesh.edge_triangles(e)), {0, 1})
        self.assertAlmostEqual(eta_regression(smoother, data, buckets, e), math.sqrt(12.5))

    def test_edges_without_data(self):
        mesh = build_initial_grid(DomainSpec.square(), 3)
        data = ScatteredData([(0.1, 0.3)], [1.0])
        buckets = locate(mesh, data)
        smoother = nodal_smoother(mesh, np.zeros(mesh.n_nodes))
        field = compute_field(IndicatorKind.REGRESSION, smoother, data, buckets)
        candidates = mesh.candidate_edges()
        self.assertEqual(field.no_data, set(candidates[1:]))
        self.assertEqual(field.values[candidates[1]], 0.0)

    def test_needs_data(self):
        mesh = build_initial_grid(DomainSpec.square(), 3)
        smoother = nodal_smoother(mesh, np.zeros(mesh.n_nodes))
        with self.assertRaises(ConfigurationError):
            IndicatorContext(smoother).regression(mesh.candidate_edges()[0])


def test_non_candidate_edge_rejected(grid5):
    smoother = nodal_smoother(grid5, np.zeros(grid5.n_nodes))
    plain = next(e for e in grid5.alive_edges() if grid5.edge_kind(e) is EdgeKind.PLAIN)
    with pytest.raises(IndicatorError):
        compute_field(IndicatorKind.NORM, smoother, edges=[plain])


class TestEdgeJump(unittest.TestCase):
    def test_two_triangles(self):
        mesh = make_mesh(DomainSpec.square(), [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)],
                         [[0, 3, 1], [0, 3, 2]])
        smoother = nodal_smoother(mesh, np.array([0.0, 0.0, 1.0, 0.0]))
        jump, length = edge_jump(smoother, mesh.edge_id(0, 3))
        self.assertAlmostEqual(abs(jump), math.sqrt(2.0))
        self.assertAlmostEqual(length, math.sqrt(2.0))

    def test_dirichlet_boundary(self):
        mesh = build_initial_grid(DomainSpec.square(), 3)
        smoother = nodal_smoother(mesh, mesh.nodes[:, 0].copy())
        for f in mesh.boundary_edges():
            self.assertEqual(edge_jump(smoother, f)[0], 0.0)

    def test_neumann_boundary(self):
        mesh = build_initial_grid(DomainSpec.square(), 3, BoundaryKind.NEUMANN)
        smoother = nodal_smoother(mesh, mesh.nodes[:, 0].copy())
        for f in mesh.boundary_edges():
            mid = mesh.edge_midpoint(f)
            vertical = mid[0] in (0.0, 1.0)
            self.assertAlmostEqual(abs(edge_jump(smoother, f)[0]), 1.0 if vertical else 0.0)


class TestLocalProblem(unittest.TestCase):
    def test_patch_layout(self):
        smoother, data, buckets = fitted_bump(side=5)
        mesh = smoother.mesh
        e = mesh.candidate_edges()[5]
        problem = build_local_problem(smoother, data, buckets, e)
        patch = {t for p in mesh.triangles[list(mesh.edge_triangles(e))].ravel()
                 for t in mesh.node_triangles()[int(p)]}
        self.assertEqual(problem.triangles.shape[0], len(patch) + 2)
        self.assertEqual(problem.tau.size, 4)
        mid = problem.m - 1
        np.testing.assert_allclose(problem.nodes[mid], mesh.edge_midpoint(e))
        self.assertNotIn(mid, problem.boundary.tolist())
        i, j = mesh.edge_nodes(e)
        self.assertAlmostEqual(problem.lift[0, mid], 0.5 * (smoother.c[i] + smoother.c[j]))
        self.assertEqual(problem.phi.shape, (problem.y.size, problem.m))
        np.testing.assert_allclose(np.asarray(problem.phi.sum(axis=1)).ravel(), 1.0)

    def test_fixed_values_come_from_lift(self):
        smoother, data, buckets = fitted_bump(side=5)
        problem = build_local_problem(smoother, data, buckets, smoother.mesh.candidate_edges()[5])
        system = problem.system()
        self.assertEqual(system.fixed_dofs.size, 4 * problem.boundary.size)
        np.testing.assert_allclose(system.lift()[system.fixed_dofs], problem.lift_vector()[system.fixed_dofs])


class TestRecoveryAndNorm(unittest.TestCase):


    def setUp(self):
        self.mesh = build_initial_grid(DomainSpec.square(), 9)
        uniform_refine(uniform_refine(self.mesh))
        self.x = self.mesh.nodes[:, 0]


    def test_independent_of_gradient_fields(self):
        a = nodal_smoother(self.mesh, self.x ** 2, g=0.0)
        b = nodal_smoother(self.mesh, self.x ** 2, g=5.0)
        for e in self.mesh.candidate_edges()[:20]:
            self.assertEqual(eta_recovery(a, e), eta_recovery(b, e))
            self.assertEqual(eta_norm(a, e), eta_norm(b, e))


    def test_norm_of_parabola(self):
        smoother = nodal_smoother(self.mesh, self.x ** 2)
        centre = np.array([0.5, 0.5])
        e = min(self.mesh.candidate_edges(),
                key=lambda f: (np.linalg.norm(self.mesh.edge_midpoint(f) - centre), f))
        area = float(sum(self.mesh.areas()[t] for t in self.mesh.edge_triangles(e)))
        self.assertAlmostEqual(eta_norm(smoother, e) / area, 2.0, delta=0.2)
        d2 = second_derivative_max(smoother)
        self.assertGreater(float(np.median(d2)), 1.5)


    def test_recovery_of_plane(self):
        smoother = nodal_smoother(self.mesh, 2.0 * self.x)
        for e in self.mesh.candidate_edges()[:20]:
            self.assertAlmostEqual(eta_recovery(smoother, e), 0.0, places=10)


def test_single_edge_wrappers_agree_with_field():
    smoother, data, buckets = fitted_bump(side=5)
    e = smoother.mesh.candidate_edges()[3]
    context = IndicatorContext(smoother, data, buckets)
    assert eta_auxiliary(smoother, data, buckets, e) == pytest.approx(context.auxiliary(e))
    assert eta_residual(smoother, data, buckets, e) == pytest.approx(context.residual(e))
    field = compute_field(IndicatorKind.AUXILIARY, smoother, data, buckets, edges=[e], context=context)
    assert field.values[e] == pytest.approx(context.auxiliary(e))


def bump_field(kind, sigma):
    mesh = build_initial_grid(DomainSpec.square(), 5)
    for _ in range(4):
        uniform_refine(mesh)
    data = gen_bump(8000, noise=NoiseSpec(sigma=sigma, seed=5))
    buckets = locate(mesh, data)
    system = assemble_system(mesh, data, buckets, BoundaryCondition.dirichlet())
    smoother = solve(system, alpha_initial(system, GcvConfig()).alpha)
    return compute_field(kind, smoother, data, buckets)


@pytest.mark.slow
@pytest.mark.parametrize('kind', [IndicatorKind.RECOVERY, IndicatorKind.REGRESSION, IndicatorKind.NORM])
def test_top_decile_stable_under_small_noise(kind):
    clean = bump_field(kind, 0.0)
    noisy = bump_field(kind, 0.01)
    assert len(clean.values) > 200
    top_clean = clean.top_fraction(0.1)
    top_noisy = noisy.top_fraction(0.1)
    assert len(top_clean & top_noisy) / len(top_clean) >= 0.6


def top_decile_overlap(kind):
    clean = bump_field(kind, 0.0).top_fraction(0.1)
    noisy = bump_field(kind, 0.01).top_fraction(0.1)
    return len(clean & noisy) / len(clean)


@pytest.mark.slow
def test_regression_top_decile_moves_most_under_noise():
    regression = top_decile_overlap(IndicatorKind.REGRESSION)
    assert regression <= top_decile_overlap(IndicatorKind.RECOVERY)
    assert regression <= top_decile_overlap(IndicatorKind.NORM)
