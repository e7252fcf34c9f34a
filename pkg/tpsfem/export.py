"""Plain text outputs: versioned JSON for meshes, smoothers and run metadata, CSV tables and XYZ data.

Floats are written with ``repr`` so equal runs produce identical files.
"""
import csv
import json
import logging
import math
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .assembly import TpsfemSystem
from .data import DataBuckets, ScatteredData
from .domain import BoundaryKind, DomainSpec
from .driver import METRICS_HEADER, IterationRecord
from .indicators import IndicatorField
from .mesh import TriMesh
from .rbf_baselines import COMPARISON_HEADER, ComparisonRow
from .solver import Smoother
from .tps_errors import FormatError
from .version import FORMAT_VERSION, FormatRequirements, compare_version_compatibility

logger = logging.getLogger(__name__)

INDICATOR_HEADER = ('edge_id', 'x_mid', 'y_mid', 'eta')
SURFACE_HEADER = ('x', 'y', 's')
OUTSIDE_HEADER = ('index', 'x', 'y', 'z')


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _clean(value):
    # JSON has no NaN or infinity
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


# ---------------------------------------------- JSON -------------------------------------------------
def write_json(path, payload: dict) -> None:
    """Writes payload with a trailing format_version field."""
    body = dict(_clean(payload))
    body.pop('format_version', None)
    body['format_version'] = FORMAT_VERSION
    with open(path, 'w') as fh:
        json.dump(body, fh, indent=1)
        fh.write('\n')


def read_json(path, requirements: Optional[FormatRequirements] = None) -> dict:
    """Reads a JSON export and checks its format version.

    Raises:
        FormatError: If the file is not JSON, lacks a version or has an unreadable version.
    """
    try:
        with open(path, 'r') as fh:
            body = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError('{}: not valid JSON: {}'.format(path, e)) from e
    if not isinstance(body, dict) or 'format_version' not in body:
        raise FormatError('{}: missing format_version'.format(path))
    error = compare_version_compatibility(str(body['format_version']), requirements or FormatRequirements())
    if error is not None:
        raise FormatError('{}: {}'.format(path, error))
    return body


def mesh_to_dict(mesh: TriMesh) -> dict:
    return {
        'domain': mesh.domain.to_dict(),
        'boundary_kind': mesh.boundary_kind.value,
        'nodes': mesh.nodes.tolist(),
        'triangles': mesh.triangles.tolist(),
        'levels': mesh.levels.tolist(),
        'parents': [list(p) if p is not None else None for p in mesh.node_parents],
        'boundary': mesh.boundary_records(),
    }


def save_mesh_json(path, mesh: TriMesh) -> None:
    write_json(path, mesh_to_dict(mesh))


def load_mesh_json(path) -> TriMesh:
    body = read_json(path)
    try:
        domain = DomainSpec.from_dict(body['domain'])
        parents = [tuple(p) if p is not None else None for p in body.get('parents', [])] or None
        return TriMesh(domain, body['nodes'], body['triangles'], body['levels'],
                       BoundaryKind(body['boundary_kind']), parents)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError('{}: malformed mesh: {}'.format(path, e)) from e


def save_smoother_json(path, smoother: Smoother) -> None:
    write_json(path, smoother.to_dict())


def load_smoother_json(path, mesh: TriMesh) -> Smoother:
    body = read_json(path)
    try:
        return Smoother(mesh, body['c'], body['g1'], body['g2'], body['w'], body['alpha'])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError('{}: malformed smoother: {}'.format(path, e)) from e


# ---------------------------------------------- CSV --------------------------------------------------
def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path) -> List[dict]:
    with open(path, 'r', newline='') as fh:
        return list(csv.DictReader(fh))


def write_metrics_csv(path, records: Iterable[IterationRecord]) -> None:
    write_csv(path, METRICS_HEADER, (r.row() for r in records))


def write_comparison_csv(path, rows: Iterable[ComparisonRow]) -> None:
    write_csv(path, COMPARISON_HEADER, (r.row() for r in rows))


def write_indicator_csv(path, etas: IndicatorField, mesh: TriMesh) -> None:
    rows = []
    for e in sorted(etas.values):
        x, y = mesh.edge_midpoint(e)
        rows.append([e, x, y, etas.values[e]])
    write_csv(path, INDICATOR_HEADER, rows)


def surface_samples(smoother: Smoother, per_side: int = 101) -> np.ndarray:
    """(x, y, s) on a regular grid over the domain's box, skipping points outside the domain."""
    probes = smoother.mesh.domain.probe_grid(smoother.mesh.domain.scale / (per_side - 1))
    return np.column_stack([probes, smoother.evaluate_many(probes)])


def write_surface_csv(path, smoother: Smoother, per_side: int = 101) -> None:
    write_csv(path, SURFACE_HEADER, surface_samples(smoother, per_side).tolist())


def write_outside_csv(path, data: ScatteredData, buckets: DataBuckets) -> None:
    idx = buckets.outside
    rows = [[int(i), data.points[i, 0], data.points[i, 1], data.responses[i]] for i in idx]
    write_csv(path, OUTSIDE_HEADER, rows)


def write_xyz(path, data: ScatteredData) -> None:
    """One ``x y z`` record per line, no header."""
    with open(path, 'w') as fh:
        for (x, y), z in zip(data.points.tolist(), data.responses.tolist()):
            fh.write('{} {} {}\n'.format(repr(x), repr(y), repr(z)))


def dump_blocks(path, system: TpsfemSystem) -> None:
    """Writes the nonzeros of A, L, G1, G2 and d as ``block row col value`` lines."""
    with open(path, 'w') as fh:
        for name in ('A', 'L', 'G1', 'G2'):
            block = getattr(system, name).tocoo()
            order = np.lexsort((block.col, block.row))
            for k in order:
                fh.write('{} {} {} {}\n'.format(name, int(block.row[k]), int(block.col[k]), repr(float(block.data[k]))))
        for i in np.flatnonzero(system.d):
            fh.write('d {} 0 {}\n'.format(int(i), repr(float(system.d[i]))))
    logger.debug('dumped system blocks of {} nodes to {}'.format(system.m, path))
