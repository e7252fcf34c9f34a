import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .tps_errors import ConfigurationError, ContractViolationError


class DomainShape(enum.Enum):
    SQUARE = 'square'
    LSHAPE = 'lshape'


class Quadrant(enum.Enum):
    UPPER_RIGHT = 'upper_right'
    UPPER_LEFT = 'upper_left'
    LOWER_LEFT = 'lower_left'
    LOWER_RIGHT = 'lower_right'


class BoundaryKind(enum.Enum):
    DIRICHLET = 'dirichlet'
    NEUMANN = 'neumann'


Box = Tuple[float, float, float, float]

# Relative tolerance used for domain membership and grid alignment tests
_TOL = 1e-12


@dataclass
class DomainSpec:
    """Rectangular or L-shaped fitting domain.

    The L-shape is the bounding box minus the quadrant of the box that lies beyond
    `cut` in the direction of `excluded`. Points on the re-entrant edges belong to the
    domain.

    Args:
        shape (DomainShape): square or lshape.
        x_lo, x_hi, y_lo, y_hi (float): bounding box.
        excluded (Quadrant): corner quadrant removed for lshape.
        cut (tuple, optional): corner of the removed quadrant, defaults to the box centre.
    """
    shape: DomainShape = DomainShape.SQUARE
    x_lo: float = 0.0
    x_hi: float = 1.0
    y_lo: float = 0.0
    y_hi: float = 1.0
    excluded: Quadrant = Quadrant.UPPER_RIGHT
    cut: Optional[Tuple[float, float]] = None


    @classmethod
    def square(cls, x_lo=0.0, x_hi=1.0, y_lo=None, y_hi=None) -> 'DomainSpec':
        y_lo = x_lo if y_lo is None else y_lo
        y_hi = x_hi if y_hi is None else y_hi
        return cls(DomainShape.SQUARE, x_lo, x_hi, y_lo, y_hi)


    @classmethod
    def lshape(cls, x_lo=0.0, x_hi=1.0, y_lo=None, y_hi=None,
               excluded=Quadrant.UPPER_RIGHT, cut=None) -> 'DomainSpec':
        y_lo = x_lo if y_lo is None else y_lo
        y_hi = x_hi if y_hi is None else y_hi
        return cls(DomainShape.LSHAPE, x_lo, x_hi, y_lo, y_hi, excluded, cut)


    def validate(self) -> 'DomainSpec':
        bounds = (self.x_lo, self.x_hi, self.y_lo, self.y_hi)
        if not all(math.isfinite(v) for v in bounds):
            raise ConfigurationError('domain bounds must be finite, got {}'.format(bounds))
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ConfigurationError('domain bounds must satisfy x_lo < x_hi and y_lo < y_hi, got {}'.format(bounds))
        if self.shape is DomainShape.LSHAPE:
            cx, cy = self.cut_point
            if not (self.x_lo < cx < self.x_hi and self.y_lo < cy < self.y_hi):
                raise ConfigurationError('L-shape cut {} must lie strictly inside the box'.format((cx, cy)))
        return self


    @property
    def box(self) -> Box:
        return (self.x_lo, self.x_hi, self.y_lo, self.y_hi)


    @property
    def cut_point(self) -> Tuple[float, float]:
        if self.cut is not None:
            return (float(self.cut[0]), float(self.cut[1]))
        return (0.5 * (self.x_lo + self.x_hi), 0.5 * (self.y_lo + self.y_hi))


    @property
    def scale(self) -> float:
        return max(self.x_hi - self.x_lo, self.y_hi - self.y_lo)


    @property
    def diameter(self) -> float:
        return math.hypot(self.x_hi - self.x_lo, self.y_hi - self.y_lo)


    def _excluded_box(self) -> Box:
        cx, cy = self.cut_point
        xs = (cx, self.x_hi) if self.excluded in (Quadrant.UPPER_RIGHT, Quadrant.LOWER_RIGHT) else (self.x_lo, cx)
        ys = (cy, self.y_hi) if self.excluded in (Quadrant.UPPER_RIGHT, Quadrant.UPPER_LEFT) else (self.y_lo, cy)
        return (xs[0], xs[1], ys[0], ys[1])


    @property
    def area(self) -> float:
        total = (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)
        if self.shape is DomainShape.LSHAPE:
            ex = self._excluded_box()
            total -= (ex[1] - ex[0]) * (ex[3] - ex[2])
        return total


    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed domain."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        tol = _TOL * self.scale
        x, y = pts[:, 0], pts[:, 1]
        inside = (x >= self.x_lo - tol) & (x <= self.x_hi + tol) & (y >= self.y_lo - tol) & (y <= self.y_hi + tol)
        if self.shape is DomainShape.LSHAPE:
            inside &= ~self._beyond_cut(x, y, tol)
        return inside


    def _beyond_cut(self, x, y, tol):
        cx, cy = self.cut_point
        if self.excluded in (Quadrant.UPPER_RIGHT, Quadrant.LOWER_RIGHT):
            in_x = x > cx + tol
        else:
            in_x = x < cx - tol
        if self.excluded in (Quadrant.UPPER_RIGHT, Quadrant.UPPER_LEFT):
            in_y = y > cy + tol
        else:
            in_y = y < cy - tol
        return in_x & in_y


    def probe_grid(self, resolution: float) -> np.ndarray:
        """Points of a uniform lattice with the given step that lie inside the domain, box corners included."""
        if not resolution > 0:
            raise ConfigurationError('probe resolution must be positive, got {}'.format(resolution))
        nx = int(math.ceil((self.x_hi - self.x_lo) / resolution - _TOL)) + 1
        ny = int(math.ceil((self.y_hi - self.y_lo) / resolution - _TOL)) + 1
        gx, gy = np.meshgrid(np.linspace(self.x_lo, self.x_hi, nx), np.linspace(self.y_lo, self.y_hi, ny))
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        return pts[self.contains(pts)]


    def to_dict(self) -> dict:
        return {
            'shape': self.shape.value,
            'box': list(self.box),
            'excluded': self.excluded.value if self.shape is DomainShape.LSHAPE else None,
            'cut': list(self.cut_point) if self.shape is DomainShape.LSHAPE else None,
        }


    @classmethod
    def from_dict(cls, payload: dict) -> 'DomainSpec':
        x_lo, x_hi, y_lo, y_hi = (float(v) for v in payload['box'])
        shape = DomainShape(payload['shape'])
        if shape is DomainShape.SQUARE:
            return cls(shape, x_lo, x_hi, y_lo, y_hi)
        cut = tuple(float(v) for v in payload['cut']) if payload.get('cut') else None
        return cls(shape, x_lo, x_hi, y_lo, y_hi, Quadrant(payload['excluded']), cut)


Value = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


@dataclass
class DirichletValues:
    """Prescribed boundary values for s, u1, u2 and the multiplier w.

    Each entry is a constant or a callable f(x, y) evaluated at boundary node coordinates.
    """
    s: Value = 0.0
    u1: Value = 0.0
    u2: Value = 0.0
    w: Value = 0.0

    FIELDS = ('s', 'u1', 'u2', 'w')


    @classmethod
    def plane(cls, a: float, b: float, c: float) -> 'DirichletValues':
        """Values consistent with the surface s = a + b*x + c*y."""
        return cls(s=lambda x, y: a + b * x + c * y, u1=b, u2=c)


    def evaluate(self, name: str, xy: np.ndarray) -> np.ndarray:
        if name not in self.FIELDS:
            raise ContractViolationError('unknown boundary field {!r}'.format(name))
        value = getattr(self, name)
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if callable(value):
            out = np.asarray(value(xy[:, 0], xy[:, 1]), dtype=float)
            return np.broadcast_to(out, (xy.shape[0],)).copy()
        return np.full(xy.shape[0], float(value))


    def describe(self) -> dict:
        return {name: (float(v) if not callable(v) else 'callable') for name, v in
                ((n, getattr(self, n)) for n in self.FIELDS)}


@dataclass
class BoundaryCondition:
    """Boundary treatment for the whole domain boundary."""
    kind: BoundaryKind = BoundaryKind.DIRICHLET
    values: DirichletValues = field(default_factory=DirichletValues)


    @classmethod
    def neumann(cls) -> 'BoundaryCondition':
        return cls(BoundaryKind.NEUMANN)


    @classmethod
    def dirichlet(cls, s=0.0, u1=0.0, u2=0.0, w=0.0) -> 'BoundaryCondition':
        return cls(BoundaryKind.DIRICHLET, DirichletValues(s, u1, u2, w))


    def to_dict(self) -> dict:
        out = {'kind': self.kind.value}
        if self.kind is BoundaryKind.DIRICHLET:
            out['values'] = self.values.describe()
        return out
