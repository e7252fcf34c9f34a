import math

import numpy as np
import pytest

from tpsfem.assembly import assemble_system
from tpsfem.data import ScatteredData, load_xyz, locate
from tpsfem.domain import BoundaryCondition, BoundaryKind, DomainSpec, Quadrant
from tpsfem.driver import METRICS_HEADER, IterationRecord
from tpsfem.export import (
    INDICATOR_HEADER, OUTSIDE_HEADER, SURFACE_HEADER, dump_blocks, load_mesh_json, load_smoother_json,
    read_csv, read_json, save_mesh_json, save_smoother_json, surface_samples, write_indicator_csv, write_json,
    write_metrics_csv, write_outside_csv, write_surface_csv, write_xyz,
)
from tpsfem.indicators import IndicatorField, IndicatorKind
from tpsfem.mesh import build_initial_grid
from tpsfem.solver import Smoother
from tpsfem.tps_errors import FormatError
from tpsfem.version import FORMAT_VERSION


def header(path):
    with open(path) as fh:
        return fh.readline().strip().split(',')


class TestJson:
    def test_version_is_written(self, tmp_path):
        path = tmp_path / 'out.json'
        write_json(path, {'a': 1.5, 'bad': float('nan'), 'nested': [math.inf, np.float64(2.0)]})
        body = read_json(path)
        assert body['format_version'] == FORMAT_VERSION
        assert body['bad'] is None
        assert body['nested'] == [None, 2.0]
        assert list(body)[-1] == 'format_version'

    @pytest.mark.parametrize('text', [
        '{not json',
        '{"a": 1}',
        '{"format_version": "2.1.0"}',
        '{"format_version": "0.1.0"}',
        '{"format_version": "latest"}',
    ])
    def test_rejected(self, tmp_path, text):
        path = tmp_path / 'bad.json'
        path.write_text(text)
        with pytest.raises(FormatError):
            read_json(path)


def test_mesh_round_trip(tmp_path):
    mesh = build_initial_grid(DomainSpec.lshape(excluded=Quadrant.LOWER_LEFT), 5, BoundaryKind.NEUMANN)
    mesh.bisect_edge(mesh.candidate_edges()[4])
    path = tmp_path / 'mesh.json'
    save_mesh_json(path, mesh)
    back = load_mesh_json(path)
    np.testing.assert_array_equal(back.nodes, mesh.nodes)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_array_equal(back.levels, mesh.levels)
    assert back.node_parents == mesh.node_parents
    assert back.boundary_kind is BoundaryKind.NEUMANN
    assert back.domain.excluded is Quadrant.LOWER_LEFT
    assert {back.edge_nodes(e) for e in back.candidate_edges()} == {mesh.edge_nodes(e) for e in mesh.candidate_edges()}
    assert back.check_conformity() == []


def test_malformed_mesh(tmp_path):
    path = tmp_path / 'mesh.json'
    write_json(path, {'nodes': []})
    with pytest.raises(FormatError):
        load_mesh_json(path)


def test_smoother_round_trip(tmp_path, grid5):
    m = grid5.n_nodes
    smoother = Smoother(grid5, np.arange(m) / 7.0, np.ones(m), -np.ones(m), np.zeros(m), 1e-6)
    path = tmp_path / 'smoother.json'
    save_smoother_json(path, smoother)
    back = load_smoother_json(path, grid5)
    np.testing.assert_array_equal(back.c, smoother.c)
    assert back.alpha == 1e-6


def test_smoother_for_other_mesh(tmp_path, grid5):
    m = grid5.n_nodes
    path = tmp_path / 'smoother.json'
    save_smoother_json(path, Smoother(grid5, np.zeros(m), np.zeros(m), np.zeros(m), np.zeros(m), 1.0))
    with pytest.raises(FormatError):
        load_smoother_json(path, build_initial_grid(DomainSpec.square(), 3))


def test_metrics_csv(tmp_path):
    path = tmp_path / 'metrics.csv'
    write_metrics_csv(path, [IterationRecord(0, 25, 1e-6, 0.1, 0.01, 0.5, 0.25, 0.125, 0.0)])
    assert header(path) == list(METRICS_HEADER)
    assert header(path) == ['iter', 'nodes', 'alpha', 'rmse', 'rmspe', 'max', 'solve_s', 'build_s', 'indicator_s']
    rows = read_csv(path)
    assert rows[0]['nodes'] == '25'
    assert float(rows[0]['alpha']) == 1e-6


def test_indicator_csv(tmp_path, grid5):
    e = grid5.candidate_edges()[0]
    path = tmp_path / 'indicators.csv'
    write_indicator_csv(path, IndicatorField(IndicatorKind.NORM, {e: 0.5}), grid5)
    assert header(path) == list(INDICATOR_HEADER)
    row = read_csv(path)[0]
    assert int(row['edge_id']) == e
    assert float(row['x_mid']) == pytest.approx(grid5.edge_midpoint(e)[0])


def test_surface_samples(tmp_path):
    mesh = build_initial_grid(DomainSpec.lshape(), 5)
    m = mesh.n_nodes
    smoother = Smoother(mesh, mesh.nodes[:, 0].copy(), np.zeros(m), np.zeros(m), np.zeros(m), 1.0)
    samples = surface_samples(smoother, per_side=11)
    assert samples.shape[1] == 3
    assert mesh.domain.contains(samples[:, :2]).all()
    np.testing.assert_allclose(samples[:, 2], samples[:, 0], atol=1e-12)
    path = tmp_path / 'surface.csv'
    write_surface_csv(path, smoother, per_side=11)
    assert header(path) == list(SURFACE_HEADER)
    assert len(read_csv(path)) == samples.shape[0]


def test_outside_csv(tmp_path, grid5):
    data = ScatteredData([(0.5, 0.5), (2.0, 0.5)], [1.0, 2.0])
    path = tmp_path / 'outside.csv'
    write_outside_csv(path, data, locate(grid5, data))
    assert header(path) == list(OUTSIDE_HEADER)
    rows = read_csv(path)
    assert [r['index'] for r in rows] == ['1']


def test_xyz_round_trip(tmp_path):
    data = ScatteredData([(0.1, 0.2), (1.0 / 3.0, 2.5)], [3.0, -1e-7])
    path = tmp_path / 'data.xyz'
    write_xyz(path, data)
    back = load_xyz(path)
    np.testing.assert_array_equal(back.points, data.points)
    np.testing.assert_array_equal(back.responses, data.responses)


def test_dump_blocks(tmp_path, grid5, plane, plane_buckets):
    system = assemble_system(grid5, plane, plane_buckets, BoundaryCondition.dirichlet())
    path = tmp_path / 'blocks.txt'
    dump_blocks(path, system)
    lines = path.read_text().splitlines()
    names = [line.split()[0] for line in lines]
    assert names.count('L') == system.L.nnz
    assert names.count('d') == int(np.count_nonzero(system.d))
    first_l = next(line for line in lines if line.startswith('L '))
    _, i, j, value = first_l.split()
    assert float(value) == system.L[int(i), int(j)]
    assert names[0] == 'A'
