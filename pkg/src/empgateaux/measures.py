"""Kernels, smoothed point masses, kernel density models and epsilon-mixtures.

Everything a functional is evaluated against lives here.  Two families of
distributions are supported:

* :class:`DiscreteDistribution` -- finite support, exact arithmetic paths.
* :class:`DensityModel` / :class:`DtrDensityModel` -- product-kernel density
  estimates in which treatment coordinates are matched exactly and every
  other coordinate is smoothed.

:func:`perturb` builds the lazy mixture ``(1 - eps) * base + eps * direction``
for either family.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvalidInput, InvalidParameter, LayoutError

DEFAULT_BANDWIDTH = 0.05
DEFAULT_OVERLAP_FLOOR = 1e-4


class Kernel(enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"

    @property
    def code(self) -> int:
        return _kernels.UNIFORM if self is Kernel.UNIFORM else _kernels.GAUSSIAN

    @classmethod
    def parse(cls, value) -> "Kernel":
        if isinstance(value, Kernel):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidParameter(f"unknown kernel {value!r}") from None

    def profile(self, u):
        """Base kernel K(u) (unit bandwidth)."""
        u = np.asarray(u, dtype=float)
        if self is Kernel.UNIFORM:
            return np.where(np.abs(u) <= 1.0, 0.5, 0.0)
        return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        """Standardized draws from K."""
        if self is Kernel.UNIFORM:
            return rng.uniform(-1.0, 1.0, size=size)
        return rng.standard_normal(size=size)

    @property
    def support_radius(self) -> float:
        return 1.0 if self is Kernel.UNIFORM else 8.0


def kernel_eval(kernel: Kernel, u, lam: float):
    """Scaled one-dimensional kernel ``K(u / lam) / lam``."""
    if not lam > 0:
        raise InvalidParameter(f"bandwidth must be positive, got {lam!r}")
    out = Kernel.parse(kernel).profile(np.asarray(u, dtype=float) / lam) / lam
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Point-treatment observations ``(x, a, y)``; ``x`` has shape (n, d)."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.a, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if not (len(x) == len(a) == len(y)):
            raise LayoutError("x, a and y must have the same number of rows")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def rows(self) -> np.ndarray:
        """Observations as flat points laid out ``x1..xd, a, y``."""
        return np.column_stack([self.x, self.a, self.y])

    @classmethod
    def from_rows(cls, rows) -> "Dataset":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return cls(rows[:, :-2], rows[:, -2], rows[:, -1])


@dataclass(frozen=True)
class DtrDataset:
    """Multi-stage observations: covariate ``x[:, t]`` then treatment ``a[:, t]``
    at each stage ``t``, followed by a final outcome ``y``."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape != a.shape or x.shape[0] != len(y):
            raise LayoutError("DTR data needs x and a of shape (n, T) and y of length n")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def T(self) -> int:
        return self.x.shape[1]

    def rows(self) -> np.ndarray:
        """Flat points laid out ``x1, a1, ..., xT, aT, y``."""
        cols = []
        for t in range(self.T):
            cols += [self.x[:, t], self.a[:, t]]
        return np.column_stack(cols + [self.y])

    @classmethod
    def from_rows(cls, rows) -> "DtrDataset":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        T = (rows.shape[1] - 1) // 2
        return cls(rows[:, 0 : 2 * T : 2], rows[:, 1 : 2 * T : 2], rows[:, -1])


def mpo_layout(d: int) -> np.ndarray:
    """Discrete mask for an ``x1..xd, a, y`` point."""
    return np.array([False] * d + [True, False])


def dtr_layout(T: int) -> np.ndarray:
    return np.array([False, True] * T + [False])


def read_dataset_csv(path) -> Dataset:
    """Read a ``x1,...,xd,a,y`` CSV file."""
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        body = [row for row in reader if row]
    if len(header) < 3 or header[-2:] != ["a", "y"]:
        raise InvalidInput(f"{path}: expected header x1,...,xd,a,y")
    if not body:
        raise InvalidInput(f"{path}: no observations")
    try:
        rows = np.array([[float(v) for v in row] for row in body])
    except ValueError as exc:
        raise InvalidInput(f"{path}: {exc}") from None
    if rows.shape[1] != len(header):
        raise InvalidInput(f"{path}: ragged rows")
    return Dataset.from_rows(rows)


def write_dataset_csv(data: Dataset, path) -> None:
    header = [f"x{j + 1}" for j in range(data.d)] + ["a", "y"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data.rows():
            w.writerow([repr(float(v)) for v in row])


def read_triples_csv(path) -> np.ndarray:
    """Read ``s,a,s_next`` transitions into an (n, 3) integer array."""
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"triples file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["s", "a", "s_next"]:
            raise InvalidInput(f"{path}: expected header s,a,s_next")
        try:
            rows = [[int(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise InvalidInput(f"{path}: {exc}") from None
    return np.array(rows, dtype=int).reshape(-1, 3)


def write_triples_csv(triples, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "a", "s_next"])
        for s, a, s2 in np.asarray(triples, dtype=int):
            w.writerow([s, a, s2])


# ---------------------------------------------------------------------------
# point masses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothedDelta:
    """Product-kernel bump at ``center``; discrete coordinates are matched
    by indicator rather than smoothed."""

    center: np.ndarray
    bandwidth: float
    kernel: Kernel = Kernel.UNIFORM
    discrete_mask: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        mask = (
            np.zeros(len(c), dtype=bool)
            if self.discrete_mask is None
            else np.asarray(self.discrete_mask, dtype=bool).reshape(-1)
        )
        if len(mask) != len(c):
            raise LayoutError("discrete_mask length differs from center length")
        if not self.bandwidth > 0:
            raise InvalidParameter(f"bandwidth must be positive, got {self.bandwidth!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "discrete_mask", mask)
        object.__setattr__(self, "kernel", Kernel.parse(self.kernel))

    @property
    def dim(self) -> int:
        return len(self.center)

    def evaluate(self, points, coords=None) -> np.ndarray:
        """Density at ``points`` (m, k) over the coordinates ``coords``.

        Dropping coordinates yields the corresponding marginal because
        every kernel factor integrates (or sums) to one.
        """
        coords = np.arange(self.dim) if coords is None else np.asarray(coords)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != len(coords):
            raise LayoutError(f"expected {len(coords)} coordinates, got {pts.shape[1]}")
        out = np.ones(len(pts))
        for col, j in enumerate(coords):
            if self.discrete_mask[j]:
                out = out * (pts[:, col] == self.center[j])
            else:
                out = out * self.kernel.profile((pts[:, col] - self.center[j]) / self.bandwidth)
                out = out / self.bandwidth
        return out

    def outcome_mean(self, j: int) -> float:
        """First moment of the coordinate-``j`` factor: the center, by symmetry."""
        return float(self.center[j])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        noise = self.kernel.draw(rng, (n, self.dim)) * self.bandwidth
        noise[:, self.discrete_mask] = 0.0
        return self.center[None, :] + noise


def smoothed_delta_eval(delta: SmoothedDelta, point) -> float:
    point = np.asarray(point, dtype=float).reshape(-1)
    if len(point) != delta.dim:
        raise LayoutError(f"point has {len(point)} coordinates, delta has {delta.dim}")
    return float(delta.evaluate(point[None, :])[0])


@dataclass(frozen=True)
class Dirac:
    """Exact point mass, used as the perturbation direction on finite supports."""

    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(-1))

    @property
    def dim(self) -> int:
        return len(self.point)


# ---------------------------------------------------------------------------
# finite-support distributions
# ---------------------------------------------------------------------------


class DiscreteDistribution:
    """Probability vector over a list of atoms (rows of ``atoms``)."""

    def __init__(self, atoms, probs, *, validate: bool = True):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        probs = np.asarray(probs, dtype=float).reshape(-1)
        if len(atoms) != len(probs):
            raise LayoutError("one probability per atom required")
        if validate:
            if np.any(probs < 0):
                raise InvalidParameter("probabilities must be nonnegative")
            if abs(math.fsum(probs) - 1.0) > 1e-12:
                raise InvalidParameter(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        self.atoms = atoms
        self.probs = probs

    @classmethod
    def uniform(cls, atoms) -> "DiscreteDistribution":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))

    @classmethod
    def empirical(cls, rows) -> "DiscreteDistribution":
        """Empirical measure of the rows (duplicates merged)."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        atoms, counts = np.unique(rows, axis=0, return_counts=True)
        return cls(atoms, counts / counts.sum())

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def support(self):
        return self.atoms, self.probs

    def prob(self, point) -> float:
        point = np.asarray(point, dtype=float).reshape(-1)
        hit = np.all(self.atoms == point[None, :], axis=1)
        return float(self.probs[hit].sum())

    def density_eval(self, point) -> float:
        return self.prob(point)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = np.clip(self.probs, 0.0, None)
        idx = rng.choice(len(p), size=n, p=p / p.sum())
        return self.atoms[idx]

    def __repr__(self):
        return f"DiscreteDistribution(n_atoms={len(self.probs)}, dim={self.dim})"


# ---------------------------------------------------------------------------
# kernel density models
# ---------------------------------------------------------------------------


class DensityModel:
    """Kernel density estimate of ``(x, a, y)`` with exact matching on ``a``.

    ``p(y, a, x) = n^-1 sum_i 1{a_i = a} K_h(x - x_i) K_h(y - y_i)``, with the
    product kernel taken over the coordinates of ``x``.
    """

    def __init__(
        self,
        data: Dataset,
        h: float = DEFAULT_BANDWIDTH,
        kernel: Kernel = Kernel.UNIFORM,
        overlap_floor: float = DEFAULT_OVERLAP_FLOOR,
        quad_panels: int = 4000,
    ):
        if len(data) < 2:
            raise InvalidInput("density estimation needs at least two observations")
        if not h > 0:
            raise InvalidParameter(f"bandwidth must be positive, got {h!r}")
        if not overlap_floor > 0:
            raise InvalidParameter("overlap floor must be positive")
        self.data = data
        self.h = float(h)
        self.kernel = Kernel.parse(kernel)
        self.nu = float(overlap_floor)
        self.quad_panels = int(quad_panels)
        self.n = len(data)
        self.arms = np.unique(data.a)
        self._tables: dict = {}
        self._rule = None
        self._rule_moments: dict = {}

    @property
    def d(self) -> int:
        return self.data.d

    @property
    def layout(self) -> np.ndarray:
        return mpo_layout(self.d)

    def _weights(self, arm) -> np.ndarray:
        treated = (self.data.a == arm).astype(float)
        return np.column_stack([np.ones(self.n), treated, treated * self.data.y]) / self.n

    # -- pointwise queries (closed kernel support convention) -----------------
    def moments(self, x, arm, fast: bool = False) -> np.ndarray:
        """Columns ``p(x)``, ``p(arm, x)`` and ``int y p(y, arm, x) dy`` at ``x``.

        With ``fast=True`` a uniform-kernel one-dimensional model answers from
        its piecewise-constant table; the answer is exact off the kernel edges
        ``x_i +- h`` (a null set).
        """
        x = np.asarray(x, dtype=float)
        x = x.reshape(-1, self.d)
        if fast and self.kernel is Kernel.UNIFORM and self.d == 1:
            breaks, values = self._table(arm)
            idx = np.searchsorted(breaks, x[:, 0], side="right")
            return values[idx]
        return _kernels.kde_sums(x, self.data.x, self._weights(arm), self.h, self.kernel.code)

    def _table(self, arm):
        if arm not in self._tables:
            xs = self.data.x[:, 0]
            breaks = np.unique(np.concatenate([xs - self.h, xs + self.h]))
            mids = np.concatenate(
                [[breaks[0] - 1.0], 0.5 * (breaks[1:] + breaks[:-1]), [breaks[-1] + 1.0]]
            )
            vals = _kernels.kde_sums(mids[:, None], self.data.x, self._weights(arm), self.h, self.kernel.code)
            self._tables[arm] = (breaks, vals)
        return self._tables[arm]

    def p_x(self, x) -> np.ndarray:
        w = np.ones((self.n, 1)) / self.n
        return _kernels.kde_sums(np.asarray(x, dtype=float).reshape(-1, self.d), self.data.x, w, self.h, self.kernel.code)[:, 0]

    def p_ax(self, a, x) -> np.ndarray:
        return self.moments(x, a)[:, 1]

    def p_yax(self, y, a, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        y = np.asarray(y, dtype=float).reshape(-1)
        pts = np.column_stack([x, y])
        centers = np.column_stack([self.data.x, self.data.y])
        w = ((self.data.a == a).astype(float) / self.n)[:, None]
        return _kernels.kde_sums(pts, centers, w, self.h, self.kernel.code)[:, 0]

    def density_eval(self, point) -> float:
        """Joint density at a flat ``x1..xd, a, y`` point."""
        p = np.asarray(point, dtype=float).reshape(-1)
        if len(p) != self.d + 2:
            raise LayoutError(f"expected {self.d + 2} coordinates, got {len(p)}")
        return float(self.p_yax(p[-1:], p[-2], p[None, : self.d])[0])

    # -- integration support --------------------------------------------------
    def breakpoints(self) -> np.ndarray:
        xs = self.data.x[:, 0]
        return np.unique(np.concatenate([xs - self.h, xs + self.h]))

    def quadrature_rule(self):
        """Nodes/weights integrating this model's x-functions exactly
        (uniform kernel) or to high order (Gaussian, composite Gauss-Legendre)."""
        if self.d != 1:
            raise InvalidParameter("quadrature integration is only available for one-dimensional x")
        if self._rule is None:
            if self.kernel is Kernel.UNIFORM:
                b = self.breakpoints()
                self._rule = (0.5 * (b[1:] + b[:-1]), np.diff(b))
            else:
                xs = self.data.x[:, 0]
                pad = self.kernel.support_radius * self.h
                self._rule = gauss_legendre_panels(xs.min() - pad, xs.max() + pad, self.quad_panels)
        return self._rule

    def rule_moments(self, arm) -> np.ndarray:
        if arm not in self._rule_moments:
            nodes, _ = self.quadrature_rule()
            self._rule_moments[arm] = self.moments(nodes, arm, fast=True)
        return self._rule_moments[arm]

    def sample_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.n, size=n)
        return self.data.x[idx] + self.kernel.draw(rng, (n, self.d)) * self.h

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.n, size=n)
        x = self.data.x[idx] + self.kernel.draw(rng, (n, self.d)) * self.h
        y = self.data.y[idx] + self.kernel.draw(rng, n) * self.h
        return np.column_stack([x, self.data.a[idx], y])

    def __repr__(self):
        return f"DensityModel(n={self.n}, d={self.d}, h={self.h}, kernel={self.kernel.value})"


def gauss_legendre_panels(lo: float, hi: float, panels: int, order: int = 5):
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * g[None, :]).reshape(-1)
    weights = (half[:, None] * w[None, :]).reshape(-1)
    return nodes, weights


def fit_kde(
    data: Dataset,
    h: float = DEFAULT_BANDWIDTH,
    kernel: Kernel = Kernel.UNIFORM,
    overlap_floor: float = DEFAULT_OVERLAP_FLOOR,
) -> DensityModel:
    if len(data) == 0:
        raise InvalidInput("empty dataset")
    return DensityModel(data, h=h, kernel=kernel, overlap_floor=overlap_floor)


class DtrDensityModel:
    """Kernel density estimate over multi-stage histories.

    Prefix densities ``p(x_1..x_t, a_1..a_s)`` smooth every covariate and
    match every treatment exactly.
    """

    def __init__(
        self,
        data: DtrDataset,
        h: float = DEFAULT_BANDWIDTH,
        kernel: Kernel = Kernel.UNIFORM,
        overlap_floor: float = DEFAULT_OVERLAP_FLOOR,
    ):
        if len(data) < 2:
            raise InvalidInput("density estimation needs at least two observations")
        if not h > 0:
            raise InvalidParameter(f"bandwidth must be positive, got {h!r}")
        self.data = data
        self.h = float(h)
        self.kernel = Kernel.parse(kernel)
        self.nu = float(overlap_floor)
        self.n = len(data)

    @property
    def T(self) -> int:
        return self.data.T

    @property
    def layout(self) -> np.ndarray:
        return dtr_layout(self.T)

    def _match(self, regime, s: int) -> np.ndarray:
        regime = np.asarray(regime, dtype=float)
        return np.all(self.data.a[:, :s] == regime[None, :s], axis=1).astype(float)

    def prefix(self, xbar, regime, s: int, with_outcome: bool = False) -> np.ndarray:
        """``p(x_1..x_t, a_1..a_s = regime)`` for ``xbar`` of shape (m, t).

        With ``with_outcome`` the second column is ``int y p(y, ...) dy``.
        """
        xbar = np.atleast_2d(np.asarray(xbar, dtype=float))
        t = xbar.shape[1]
        w = self._match(regime, s) / self.n
        cols = [w, w * self.data.y] if with_outcome else [w]
        weights = np.column_stack(cols)
        if t == 0:
            return np.tile(weights.sum(axis=0), (len(xbar), 1))
        return _kernels.kde_sums(xbar, self.data.x[:, :t], weights, self.h, self.kernel.code)

    def sample_stage(self, xbar, regime, t: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``x_{t+1}`` given prefixes ``xbar`` (m, t) under the regime."""
        m = len(xbar)
        w = self._match(regime, t)
        if t > 0:
            k = np.prod(self.kernel.profile((xbar[:, None, :] - self.data.x[None, :, :t]) / self.h), axis=2)
            w = k * w[None, :]
        else:
            w = np.tile(w, (m, 1))
        tot = w.sum(axis=1)
        if np.any(tot <= 0):
            raise InvalidInput("regime history with zero estimated mass")
        cdf = np.cumsum(w, axis=1) / tot[:, None]
        u = rng.uniform(size=m)
        idx = np.minimum((cdf < u[:, None]).sum(axis=1), self.n - 1)
        return self.data.x[idx, t] + self.kernel.draw(rng, m) * self.h


# ---------------------------------------------------------------------------
# perturbation mixtures
# ---------------------------------------------------------------------------


class PerturbedDistribution:
    """``(1 - eps) * base + eps * direction``, evaluated lazily.

    ``eps`` may be negative only through :func:`perturb_signed` (used by the
    central difference); such mixtures are signed measures.
    """

    def __init__(self, base, direction, eps: float):
        self.base = base
        self.direction = direction
        self.eps = float(eps)

    @property
    def nu(self) -> float:
        return getattr(self.base, "nu", DEFAULT_OVERLAP_FLOOR)

    @property
    def layout(self) -> np.ndarray:
        return self.base.layout

    @property
    def dim(self) -> int:
        return self.direction.dim

    # discrete ---------------------------------------------------------------
    def support(self):
        atoms, probs = self.base.support()
        point = self.direction.point
        hit = np.all(atoms == point[None, :], axis=1)
        probs = (1.0 - self.eps) * probs
        if hit.any():
            probs = probs + self.eps * hit
            return atoms, probs
        return np.vstack([atoms, point[None, :]]), np.append(probs, self.eps)

    # continuous -------------------------------------------------------------
    def density_eval(self, point) -> float:
        point = np.asarray(point, dtype=float).reshape(-1)
        if isinstance(self.direction, Dirac):
            return (1.0 - self.eps) * self.base.density_eval(point) + self.eps * float(
                np.all(point == self.direction.point)
            )
        return (1.0 - self.eps) * self.base.density_eval(point) + self.eps * smoothed_delta_eval(
            self.direction, point
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not 0.0 <= self.eps <= 1.0:
            raise InvalidParameter("cannot sample from a signed mixture")
        from_delta = rng.uniform(size=n) < self.eps
        out = self.base.sample(n, rng)
        k = int(from_delta.sum())
        if k:
            if isinstance(self.direction, Dirac):
                out[from_delta] = self.direction.point
            else:
                out[from_delta] = self.direction.sample(k, rng)
        return out

    def __repr__(self):
        return f"PerturbedDistribution(base={self.base!r}, eps={self.eps})"


def _check_layout(base, direction):
    dim = getattr(base, "dim", None)
    if dim is None:
        dim = len(base.layout)
    if direction.dim != dim:
        raise LayoutError(f"direction has {direction.dim} coordinates, base has {dim}")


def perturb(base, direction, eps: float) -> PerturbedDistribution:
    """Mixture ``(1 - eps) * base + eps * direction`` for ``eps`` in [0, 1]."""
    if not 0.0 <= eps <= 1.0:
        raise InvalidParameter(f"eps must lie in [0, 1], got {eps!r}")
    _check_layout(base, direction)
    return PerturbedDistribution(base, direction, eps)


def perturb_signed(base, direction, eps: float) -> PerturbedDistribution:
    """Same mixture formula extended to ``eps`` in (-1, 1)."""
    if not -1.0 < eps <= 1.0:
        raise InvalidParameter(f"eps must lie in (-1, 1], got {eps!r}")
    _check_layout(base, direction)
    return PerturbedDistribution(base, direction, eps)


def direction_for(base, o, lam: float | None = None, kernel: Kernel | None = None):
    """Point mass at ``o`` suited to ``base``: exact for finite supports,
    kernel-smoothed (treatments matched exactly) for density models."""
    o = np.asarray(o, dtype=float).reshape(-1)
    if isinstance(base, DiscreteDistribution) or (
        isinstance(base, PerturbedDistribution) and isinstance(base.direction, Dirac)
    ):
        return Dirac(o)
    if lam is None or not lam > 0:
        raise InvalidParameter("a positive smoothing bandwidth lambda is required for density bases")
    kernel = Kernel.parse(kernel) if kernel is not None else Kernel.UNIFORM
    return SmoothedDelta(o, lam, kernel, base.layout)


def sample(dist, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. draws, reproducible for a given seed."""
    if n < 1:
        raise InvalidParameter("n must be at least 1")
    return dist.sample(n, np.random.default_rng(seed))


@dataclass
class ClipCounter:
    """Counts denominators raised to the overlap floor."""

    count: int = 0
    events: list = field(default_factory=list)

    def add(self, k: int, where: str = ""):
        if k:
            self.count += int(k)
            if where:
                self.events.append((where, int(k)))
