import time

import numpy as np


class Stopwatch:
    """
    Stopwatch accumulates wall time over one or more `with` blocks.
    """
    def __init__(self):
        self.elapsed = 0.0
        self._start = None


    def __enter__(self):
        self._start = time.perf_counter()
        return self


    def __exit__(self, type, value, traceback):
        self.elapsed += time.perf_counter() - self._start
        self._start = None


def as_points(points):
    """
    as_points coerces a single (x, y) pair or a sequence of pairs into an (n, 2) float array
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError('expected points of shape (n, 2), got {}'.format(pts.shape))
    return pts


def signed_area2(corners):
    """Twice the signed area of triangles given as (..., 3, 2) corner arrays."""
    x, y = corners[..., 0], corners[..., 1]
    return (x[..., 1] - x[..., 0]) * (y[..., 2] - y[..., 0]) - (x[..., 2] - x[..., 0]) * (y[..., 1] - y[..., 0])


def barycentric(points, corners):
    """
    barycentric returns the (..., 3) barycentric coordinates of points (..., 2)
    with respect to triangles (..., 3, 2); the leading shapes must broadcast
    """
    x, y = points[..., 0], points[..., 1]
    x0, y0 = corners[..., 0, 0], corners[..., 0, 1]
    x1, y1 = corners[..., 1, 0], corners[..., 1, 1]
    x2, y2 = corners[..., 2, 0], corners[..., 2, 1]
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    l1 = ((x - x0) * (y2 - y0) - (x2 - x0) * (y - y0)) / det
    l2 = ((x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def basis_gradients(corners):
    """
    basis_gradients returns (grads, area) for triangles (..., 3, 2): grads[..., i, :] is the
    constant gradient of the i-th barycentric coordinate and area is unsigned
    """
    x, y = corners[..., 0], corners[..., 1]
    det = signed_area2(corners)
    grads = np.empty(corners.shape, dtype=float)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[..., i, 0] = (y[..., j] - y[..., k]) / det
        grads[..., i, 1] = (x[..., k] - x[..., j]) / det
    return grads, 0.5 * np.abs(det)
