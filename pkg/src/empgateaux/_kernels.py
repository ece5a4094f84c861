"""Hot inner loops: product-kernel sums.

Every kernel here has a pure-numpy implementation and, when numba is
available, a compiled twin with the same signature.  ``kde_sums`` picks
one according to :mod:`empgateaux._accel`.
"""

import math

import numpy as np

from ._accel import BACKEND, maybe_njit

UNIFORM = 0
GAUSSIAN = 1

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK = 1 << 20


def _profile_numpy(u, code):
    if code == UNIFORM:
        return np.where(np.abs(u) <= 1.0, 0.5, 0.0)
    return _INV_SQRT_2PI * np.exp(-0.5 * u * u)


def kde_sums_numpy(points, centers, weights, bw, code):
    """out[i, c] = sum_j prod_l K_bw(points[i, l] - centers[j, l]) * weights[j, c]."""
    m, d = points.shape
    n = centers.shape[0]
    out = np.zeros((m, weights.shape[1]))
    if n == 0 or m == 0:
        return out
    step = max(1, _CHUNK // max(n * d, 1))
    scale = bw**-d
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        u = (points[lo:hi, None, :] - centers[None, :, :]) / bw
        k = np.prod(_profile_numpy(u, code), axis=2) * scale
        out[lo:hi] = k @ weights
    return out


@maybe_njit(cache=True, fastmath=True)
def _gaussian_sums_numba(points, centers, weights, bw):
    # one exp per (point, center) pair keeps the inner loop branch free
    m, d = points.shape
    n = centers.shape[0]
    ncol = weights.shape[1]
    out = np.zeros((m, ncol))
    inv = 1.0 / bw
    scale = (0.3989422804014327 * inv) ** d
    k = np.empty(n)
    for i in range(m):
        for j in range(n):
            q = 0.0
            for l in range(d):
                u = (points[i, l] - centers[j, l]) * inv
                q += u * u
            k[j] = math.exp(-0.5 * q)
        for c in range(ncol):
            acc = 0.0
            for j in range(n):
                acc += k[j] * weights[j, c]
            out[i, c] = scale * acc
    return out


@maybe_njit(cache=True)
def kde_sums_numba(points, centers, weights, bw, code):
    if code == 1:
        return _gaussian_sums_numba(points, centers, weights, bw)
    m, d = points.shape
    n = centers.shape[0]
    ncol = weights.shape[1]
    out = np.zeros((m, ncol))
    scale = bw**-d
    for i in range(m):
        for j in range(n):
            k = scale
            for l in range(d):
                u = (points[i, l] - centers[j, l]) / bw
                if code == 0:
                    if abs(u) <= 1.0:
                        k *= 0.5
                    else:
                        k = 0.0
                        break
                else:
                    k *= 0.3989422804014327 * math.exp(-0.5 * u * u)
            if k != 0.0:
                for c in range(ncol):
                    out[i, c] += k * weights[j, c]
    return out


def kde_sums(points, centers, weights, bw, code, backend=None):
    """Dispatch to the selected backend; inputs are coerced to float64."""
    explicit = backend is not None
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if centers.ndim == 1:
        centers = centers[:, None]
    if weights.ndim == 1:
        weights = weights[:, None]
    backend = backend or BACKEND
    # numpy's vectorised exp beats a scalar libm call per pair, so the
    # gaussian kernel stays on numpy unless the twin is asked for by name
    if backend == "numba" and BACKEND == "numba" and (code == UNIFORM or explicit):
        return kde_sums_numba(points, centers, weights, float(bw), int(code))
    return kde_sums_numpy(points, centers, weights, float(bw), int(code))
