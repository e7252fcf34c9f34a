import math
import unittest

import numpy as np
import pytest

from tpsfem.domain import BoundaryCondition, BoundaryKind, DirichletValues, DomainShape, DomainSpec, Quadrant
from tpsfem.tps_errors import ConfigurationError, ContractViolationError


class TestDomainSpec(unittest.TestCase):
    def test_square_defaults(self):
        d = DomainSpec.square()
        self.assertEqual(d.box, (0.0, 1.0, 0.0, 1.0))
        self.assertEqual(d.area, 1.0)
        self.assertAlmostEqual(d.diameter, math.sqrt(2.0))

    def test_lshape_area(self):
        self.assertAlmostEqual(DomainSpec.lshape().area, 0.75)

    def test_lshape_contains(self):
        d = DomainSpec.lshape()
        pts = [(0.25, 0.25), (0.75, 0.75), (0.5, 0.75), (0.75, 0.5), (1.0, 0.5)]
        np.testing.assert_array_equal(d.contains(pts), [True, False, True, True, True])

    def test_lshape_other_quadrant(self):
        d = DomainSpec.lshape(excluded=Quadrant.LOWER_LEFT)
        np.testing.assert_array_equal(d.contains([(0.1, 0.1), (0.9, 0.9)]), [False, True])

    def test_contains_closed_box(self):
        d = DomainSpec.square(-3.0, 3.0)
        np.testing.assert_array_equal(d.contains([(-3.0, 3.0), (3.0 + 1e-6, 0.0)]), [True, False])

    def test_validate_rejects_empty_box(self):
        with self.assertRaises(ConfigurationError):
            DomainSpec.square(1.0, 1.0).validate()

    def test_validate_rejects_cut_outside(self):
        with self.assertRaises(ConfigurationError):
            DomainSpec.lshape(cut=(1.5, 0.5)).validate()

    def test_probe_grid_includes_corners(self):
        probes = DomainSpec.square().probe_grid(0.25)
        self.assertEqual(probes.shape, (25, 2))
        self.assertIn([1.0, 1.0], probes.tolist())

    def test_probe_grid_resolution(self):
        with self.assertRaises(ConfigurationError):
            DomainSpec.square().probe_grid(0.0)

    def test_from_dict(self):
        d = DomainSpec.lshape(0.0, 2.0, cut=(1.5, 0.5), excluded=Quadrant.LOWER_RIGHT)
        back = DomainSpec.from_dict(d.to_dict())
        self.assertEqual(back.shape, DomainShape.LSHAPE)
        self.assertEqual(back.cut_point, (1.5, 0.5))
        self.assertEqual(back.excluded, Quadrant.LOWER_RIGHT)


class TestDirichletValues(unittest.TestCase):
    def test_constants(self):
        values = DirichletValues(s=2100.0)
        np.testing.assert_array_equal(values.evaluate('s', np.zeros((3, 2))), [2100.0] * 3)
        np.testing.assert_array_equal(values.evaluate('u1', np.zeros((2, 2))), [0.0, 0.0])

    def test_plane(self):
        values = DirichletValues.plane(1.0, 3.0, -1.0)
        xy = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.0]])
        np.testing.assert_allclose(values.evaluate('s', xy), [1.0, 3.0, 2.5])
        np.testing.assert_allclose(values.evaluate('u1', xy), [3.0] * 3)
        np.testing.assert_allclose(values.evaluate('u2', xy), [-1.0] * 3)

    def test_unknown_field(self):
        with self.assertRaises(ContractViolationError):
            DirichletValues().evaluate('v', np.zeros((1, 2)))

    def test_describe(self):
        self.assertEqual(DirichletValues.plane(0, 1, 2).describe()['s'], 'callable')


@pytest.mark.parametrize('boundary,kind,has_values', [
    (BoundaryCondition.neumann(), 'neumann', False),
    (BoundaryCondition.dirichlet(s=2100.0), 'dirichlet', True),
])
def test_boundary_condition_to_dict(boundary, kind, has_values):
    out = boundary.to_dict()
    assert out['kind'] == kind
    assert ('values' in out) == has_values
    assert BoundaryKind(out['kind']) is boundary.kind
