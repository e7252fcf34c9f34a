"""Scattered data: loading, synthetic generators, point location and per-triangle buckets."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree  # type: ignore

from .domain import Box, DomainSpec
from .helpers import as_points, barycentric
from .mesh import TriMesh
from .tps_errors import ConfigurationError, ContractViolationError, DataParseError, EmptyDataError

logger = logging.getLogger(__name__)

# Barycentric tolerance for containment tests
LOCATE_TOL = 1e-12

# Nearest centroids tried before falling back to a walk
_CANDIDATES = 8

# Rejection rounds before giving up on a region that misses the domain
_MAX_DRAWS = 1000


@dataclass
class AffineTransform:
    """Uniform scale plus shift, x' = scale * x + shift."""
    scale: float = 1.0
    shift: Tuple[float, float] = (0.0, 0.0)


    @classmethod
    def fit(cls, points: np.ndarray, target: Box) -> 'AffineTransform':
        """Aspect preserving map of the points' bounding box into the centre of target."""
        lo, hi = points.min(axis=0), points.max(axis=0)
        span = hi - lo
        tw, th = target[1] - target[0], target[3] - target[2]
        ratios = [t / s for t, s in ((tw, span[0]), (th, span[1])) if s > 0]
        scale = min(ratios) if ratios else 1.0
        centre = 0.5 * (lo + hi)
        tc = (0.5 * (target[0] + target[1]), 0.5 * (target[2] + target[3]))
        return cls(float(scale), (float(tc[0] - scale * centre[0]), float(tc[1] - scale * centre[1])))


    def apply(self, points) -> np.ndarray:
        return as_points(points) * self.scale + np.asarray(self.shift)


    def inverse(self, points) -> np.ndarray:
        return (as_points(points) - np.asarray(self.shift)) / self.scale


    def to_dict(self) -> dict:
        return {'scale': self.scale, 'shift': list(self.shift)}


@dataclass
class ScatteredData:
    """Predictor points x_i in domain units with responses y_i."""
    points: np.ndarray
    responses: np.ndarray
    transform: AffineTransform = field(default_factory=AffineTransform)
    source: str = ''


    def __post_init__(self):
        self.points = as_points(self.points) if len(self.points) else np.zeros((0, 2))
        self.responses = np.asarray(self.responses, dtype=float).ravel()
        if self.points.shape[0] != self.responses.shape[0]:
            raise ContractViolationError('{} points but {} responses'.format(self.points.shape[0],
                                                                             self.responses.shape[0]))


    @property
    def n(self) -> int:
        return int(self.responses.shape[0])


    def subset(self, index) -> 'ScatteredData':
        return ScatteredData(self.points[index], self.responses[index], self.transform, self.source)


@dataclass
class NoiseSpec:
    """Gaussian noise added to synthetic responses, drawn from a seeded generator."""
    sigma: float = 0.0
    seed: int = 0
    mean: float = 0.0


    def validate(self) -> 'NoiseSpec':
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigurationError('noise sigma must be finite and >= 0, got {}'.format(self.sigma))
        return self


# ---------------------------------------------- Loading ----------------------------------------------
def load_xyz(path, target: Optional[Box] = None) -> ScatteredData:
    """Reads whitespace separated ``x y z`` records.

    Blank lines and text after ``#`` are ignored. When target is given the points are
    scaled into it by an aspect preserving, centred affine map; responses are never scaled.

    Args:
        path: file to read.
        target (Box, optional): (x_lo, x_hi, y_lo, y_hi) box to scale the points into.

    Returns:
        ScatteredData: the records, with the transform used.

    Raises:
        DataParseError: If a record has fewer than three numeric fields.
        EmptyDataError: If the file holds no records.
    """
    xs, ys, zs = [], [], []
    with open(path, 'r') as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split('#', 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) < 3:
                raise DataParseError('{}:{}: expected 3 fields, got {}'.format(path, lineno, len(fields)))
            try:
                x, y, z = float(fields[0]), float(fields[1]), float(fields[2])
            except ValueError:
                raise DataParseError('{}:{}: non-numeric field in {!r}'.format(path, lineno, text)) from None
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
                raise DataParseError('{}:{}: non-finite value in {!r}'.format(path, lineno, text))
            xs.append(x)
            ys.append(y)
            zs.append(z)
    if not zs:
        raise EmptyDataError('{}: no data records'.format(path))
    points = np.column_stack([xs, ys])
    transform = AffineTransform() if target is None else AffineTransform.fit(points, target)
    logger.debug('loaded {} records from {}'.format(len(zs), path))
    return ScatteredData(transform.apply(points), np.asarray(zs), transform, str(path))


# ---------------------------------------------- Generators -------------------------------------------
PEAKS_REGION: Box = (-2.4, 2.4, -2.4, 2.4)
PEAKS_DOMAIN: Box = (-3.0, 3.0, -3.0, 3.0)
BUMP_REGION: Box = (0.0, 1.0, 0.0, 1.0)


def peaks(x, y):
    """Three local maxima and three local minima on [-3, 3]^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (3.0 * (1.0 - x) ** 2 * np.exp(-x ** 2 - (y + 1.0) ** 2)
            - 10.0 * (x / 5.0 - x ** 3 - y ** 5) * np.exp(-x ** 2 - y ** 2)
            - np.exp(-(x + 1.0) ** 2 - y ** 2) / 3.0)


def bump(x, y):
    """Gaussian bump centred on (0.5, 0.5)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.exp(-50.0 * (x - 0.5) ** 2) * np.exp(-50.0 * (y - 0.5) ** 2)


def gen_samples(func: Callable, n: int, region: Box, noise: NoiseSpec,
                domain: Optional[DomainSpec] = None, source: str = '') -> ScatteredData:
    """n uniform samples of func over region, optionally restricted to a domain by rejection.

    Points are drawn before noise, so two calls with the same seed and different sigma
    share their points.
    """
    if int(n) != n or n < 1:
        raise ConfigurationError('sample count must be a positive integer, got {}'.format(n))
    noise.validate()
    rng = np.random.default_rng(noise.seed)
    lo = np.array([region[0], region[2]])
    hi = np.array([region[1], region[3]])
    kept = np.zeros((0, 2))
    for _ in range(_MAX_DRAWS):
        if kept.shape[0] >= n:
            break
        draw = rng.uniform(lo, hi, size=(int(n) - kept.shape[0], 2))
        if domain is not None:
            draw = draw[domain.contains(draw)]
        kept = np.vstack([kept, draw])
    if kept.shape[0] < n:
        raise ConfigurationError('sampling region {} barely overlaps the domain'.format(region))
    values = func(kept[:, 0], kept[:, 1])
    if noise.sigma > 0:
        values = values + rng.normal(noise.mean, noise.sigma, size=kept.shape[0])
    return ScatteredData(kept, values, source=source)


def gen_peaks(n: int, region: Box = PEAKS_REGION, noise: NoiseSpec = None,
              domain: Optional[DomainSpec] = None) -> ScatteredData:
    return gen_samples(peaks, n, region, noise or NoiseSpec(), domain, source='peaks')


def gen_bump(n: int, region: Box = BUMP_REGION, noise: NoiseSpec = None,
             domain: Optional[DomainSpec] = None) -> ScatteredData:
    return gen_samples(bump, n, region, noise or NoiseSpec(), domain, source='bump')


# ---------------------------------------------- Location ---------------------------------------------
def _tie_break(mesh: TriMesh, t: int, lam: np.ndarray) -> int:
    # smallest id among all triangles containing a point that sits on an edge or vertex of t
    on = np.flatnonzero(lam <= LOCATE_TOL)
    if on.size == 0:
        return t
    tri = mesh.triangles[t]
    if on.size == 1:
        k = on[0]
        p, q = tri[(k + 1) % 3], tri[(k + 2) % 3]
        return min(mesh.edge_triangles(mesh.edge_id(int(p), int(q))))
    vertex = tri[3 - on[0] - on[1]] if on.size == 2 else tri[int(np.argmax(lam))]
    return min(mesh.node_triangles()[int(vertex)])


def _scan(mesh: TriMesh, point: np.ndarray, triangle_ids=None) -> int:
    ids = np.arange(mesh.n_triangles) if triangle_ids is None else np.asarray(triangle_ids)
    lam = barycentric(point[None, :], mesh.corners(ids))
    worst = lam.min(axis=1)
    hits = np.flatnonzero(worst >= -LOCATE_TOL)
    if hits.size:
        return int(ids[hits[0]])
    return int(ids[int(np.argmax(worst))])


def _walk(mesh: TriMesh, point: np.ndarray, start: int) -> int:
    # step across the edge opposite the most negative barycentric coordinate
    t = start
    for _ in range(mesh.n_triangles):
        lam = barycentric(point, mesh.corners([t])[0])
        k = int(np.argmin(lam))
        if lam[k] >= -LOCATE_TOL:
            return t
        tri = mesh.triangles[t]
        p, q = int(tri[(k + 1) % 3]), int(tri[(k + 2) % 3])
        across = [s for s in mesh.edge_triangles(mesh.edge_id(p, q)) if s != t]
        if not across:
            break
        t = across[0]
    return -1


def locate_points(mesh: TriMesh, points) -> Tuple[np.ndarray, np.ndarray]:
    """Containing triangle for each point, -1 outside the domain.

    Returns:
        tuple: (triangle ids, inside mask). Points on shared edges or vertices go to the
        incident triangle with the smallest id.
    """
    pts = as_points(points)
    inside = mesh.domain.contains(pts)
    owner = -np.ones(pts.shape[0], dtype=np.int64)
    idx = np.flatnonzero(inside)
    if idx.size == 0 or mesh.n_triangles == 0:
        return owner, inside

    k = min(_CANDIDATES, mesh.n_triangles)
    tree = cKDTree(mesh.centroids())
    _, cand = tree.query(pts[idx], k=k)
    cand = np.asarray(cand).reshape(idx.size, k)
    lam = barycentric(pts[idx][:, None, :], mesh.nodes[mesh.triangles[cand]])
    ok = lam.min(axis=2) >= -LOCATE_TOL
    first = np.argmax(ok, axis=1)
    rows = np.arange(idx.size)
    found = ok[rows, first]
    hit_lam = lam[rows, first]
    owner[idx] = np.where(found, cand[rows, first], -1)

    for row in np.flatnonzero(found & (hit_lam.min(axis=1) <= LOCATE_TOL)):
        owner[idx[row]] = _tie_break(mesh, int(cand[row, first[row]]), hit_lam[row])
    for row in np.flatnonzero(~found):
        i = idx[row]
        t = _walk(mesh, pts[i], int(cand[row, 0]))
        if t < 0:
            t = _scan(mesh, pts[i])
        owner[i] = _tie_break(mesh, t, barycentric(pts[i], mesh.corners([t])[0]))
    return owner, inside


class DataBuckets:
    """
    DataBuckets assigns every in-domain data point to exactly one triangle of a given mesh version.
    """
    def __init__(self, mesh: TriMesh, owner: np.ndarray):
        self.mesh_version = mesh.version
        self.n_triangles = mesh.n_triangles
        self.owner = np.asarray(owner, dtype=np.int64)
        self.inside = np.flatnonzero(self.owner >= 0)
        self.outside = np.flatnonzero(self.owner < 0)
        order = self.inside[np.argsort(self.owner[self.inside], kind='stable')]
        self._order = order
        self._starts = np.searchsorted(self.owner[order], np.arange(self.n_triangles + 1))


    @property
    def n_inside(self) -> int:
        return int(self.inside.size)


    def check(self, mesh: TriMesh) -> None:
        if mesh.version != self.mesh_version or mesh.n_triangles != self.n_triangles:
            raise ContractViolationError('data buckets refer to mesh version {}, mesh is at {}'.format(
                self.mesh_version, mesh.version))


    def points_in(self, t: int) -> np.ndarray:
        """Data indices bucketed in triangle t, increasing."""
        return self._order[self._starts[t]:self._starts[t + 1]]


    def points_in_all(self, triangle_ids) -> np.ndarray:
        parts = [self.points_in(int(t)) for t in triangle_ids]
        return np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)


    def edge_points(self, mesh: TriMesh, e: int) -> np.ndarray:
        """Data indices inside the triangles sharing edge e, each counted once."""
        return self.points_in_all(mesh.edge_triangles(e))


    def counts(self) -> np.ndarray:
        return np.diff(self._starts)


def locate(mesh: TriMesh, data: ScatteredData) -> DataBuckets:
    """Buckets every data point into its containing triangle; out-of-domain points are reported."""
    owner, inside = locate_points(mesh, data.points)
    buckets = DataBuckets(mesh, owner)
    if buckets.outside.size:
        logger.warning('{} of {} data points lie outside the domain'.format(buckets.outside.size, data.n))
    return buckets


def rebucket(mesh: TriMesh, buckets: DataBuckets, data: ScatteredData) -> DataBuckets:
    """Moves points of bisected triangles into the descendants of their former triangle.

    Ties on shared edges go to the smallest id among those descendants.
    """
    n_old = buckets.n_triangles
    owner = buckets.owner.copy()
    groups = {}
    for t in range(n_old, mesh.n_triangles):
        groups.setdefault(mesh.root_triangle(t, n_old), []).append(t)
    for root, family in groups.items():
        members = buckets.points_in(root)
        if members.size == 0:
            continue
        ids = np.array(sorted([root] + family), dtype=np.int64)
        lam = barycentric(data.points[members][:, None, :], mesh.nodes[mesh.triangles[ids]])
        worst = lam.min(axis=2)
        ok = worst >= -LOCATE_TOL
        pick = np.where(ok.any(axis=1), np.argmax(ok, axis=1), np.argmax(worst, axis=1))
        owner[members] = ids[pick]
    return DataBuckets(mesh, owner)


def max_data_gap(data: ScatteredData, domain: DomainSpec, resolution: float) -> float:
    """Largest distance from a probe point of the domain to its nearest data point."""
    if data.n < 1:
        raise EmptyDataError('max_data_gap needs at least one data point')
    probes = domain.probe_grid(resolution)
    distance, _ = cKDTree(data.points).query(probes)
    return float(np.max(distance))
