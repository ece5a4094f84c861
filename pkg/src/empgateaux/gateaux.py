"""Empirical Gateaux derivatives and one-step estimates.

The derivative at observation ``o`` is a difference quotient of plug-in
evaluations at ``(1 - eps) * base + eps * delta_o``.  Continuous bases use a
kernel-smoothed delta of bandwidth ``lam``; finite supports use an exact
point mass.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GateauxError, InvalidParameter, NumericFailure
from .functionals import _window_rule, is_discrete, mpo_moments, root_of
from .measures import (
    ClipCounter,
    DensityModel,
    Dirac,
    Kernel,
    direction_for,
    perturb,
    perturb_signed,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIN_EPS = 1e-12
MIN_SUCCESS = 0.95


@dataclass(frozen=True)
class DiffScheme:
    """``forward``: (psi(P_eps) - psi(P)) / eps.
    ``central``: (psi(P_eps) - psi(P_-eps)) / (2 eps)."""

    kind: str = "forward"
    eps: float = 1e-6

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in ("forward", "central"):
            raise InvalidParameter(f"unknown difference scheme {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        check_eps(self.eps)


def check_eps(eps) -> float:
    eps = float(eps)
    if not math.isfinite(eps) or eps <= 0:
        raise InvalidParameter("eps must be positive")
    if eps < MIN_EPS:
        raise InvalidParameter(f"eps below {MIN_EPS:g} is under the double-precision differencing floor")
    if eps >= 1:
        raise InvalidParameter("eps must be below 1")
    return eps


@dataclass
class GateauxReport:
    phi: np.ndarray
    plugin: float
    one_step: float
    eps: float
    lam: float | None
    scheme: str
    n: int
    clip_count: int = 0
    fallbacks: int = 0
    failures: dict = field(default_factory=dict)
    basis_changes: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "plugin": self.plugin,
            "one_step": self.one_step,
            "n": self.n,
            "eps": self.eps,
            "lambda": self.lam,
            "scheme": self.scheme,
            "clip_count": self.clip_count,
            "central_fallbacks": self.fallbacks,
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "basis_changes": self.basis_changes,
            "phi": [None if not math.isfinite(v) else float(v) for v in self.phi],
            **self.extra,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "GateauxReport":
        phi = np.array([np.nan if v is None else v for v in d["phi"]], dtype=float)
        known = {
            "schema_version", "plugin", "one_step", "n", "eps", "lambda", "scheme",
            "clip_count", "central_fallbacks", "failures", "basis_changes", "phi",
        }
        return cls(
            phi=phi,
            plugin=d["plugin"],
            one_step=d["one_step"],
            eps=d["eps"],
            lam=d["lambda"],
            scheme=d["scheme"],
            n=d["n"],
            clip_count=d.get("clip_count", 0),
            fallbacks=d.get("central_fallbacks", 0),
            failures={int(k): v for k, v in d.get("failures", {}).items()},
            basis_changes=d.get("basis_changes"),
            extra={k: v for k, v in d.items() if k not in known},
        )

    def summary(self) -> str:
        lam = "n/a" if self.lam is None else f"{self.lam:.6g}"
        return (
            f"plugin={self.plugin:.6g} one_step={self.one_step:.6g} "
            f"n={self.n} eps={self.eps:.6g} lambda={lam}"
        )


# ---------------------------------------------------------------------------


def _negative_mixture(base, direction, eps) -> bool:
    """Would ``(1 + eps) * base - eps * direction`` go negative anywhere the
    functional looks?"""
    if isinstance(direction, Dirac):
        atoms, probs = base.support()
        hit = np.all(atoms == direction.point[None, :], axis=1)
        if not hit.any():
            return True
        return bool(np.any((1.0 + eps) * probs - eps * hit < 0))
    root = root_of(base)
    if not isinstance(root, DensityModel) or root.d != 1:
        return True
    nodes, _ = _window_rule(root, [direction])
    arm = direction.center[root.d]
    mom = mpo_moments(base, nodes, arm)
    dx = direction.evaluate(nodes[:, None], coords=[0])
    neg_x = (1.0 + eps) * mom[:, 0] - eps * dx
    neg_ax = (1.0 + eps) * mom[:, 1] - eps * dx
    return bool(np.any(neg_x < 0) or np.any(neg_ax < 0))


def _derivative(fnl, base, o, eps, lam, scheme, kernel, plugin, clip):
    direction = direction_for(base, o, lam, kernel)
    if scheme == "central":
        if _negative_mixture(base, direction, eps):
            log.info("central difference would leave the nonnegative cone; using forward")
        else:
            up = fnl(perturb(base, direction, eps), clip)
            down = fnl(perturb_signed(base, direction, -eps), clip)
            return (up - down) / (2.0 * eps), False
        fell_back = True
    else:
        fell_back = False
    if plugin is None:
        plugin = fnl(base, clip)
    return (fnl(perturb(base, direction, eps), clip) - plugin) / eps, fell_back


def empirical_gateaux(
    fnl,
    base,
    o,
    eps: float = 1e-6,
    lam: float | None = None,
    scheme: str = "forward",
    kernel: Kernel | str | None = None,
    plugin: float | None = None,
    clip: ClipCounter | None = None,
) -> float:
    """Finite-difference derivative of ``fnl`` at ``base`` toward ``o``.

    ``lam`` is the smoothing bandwidth of the delta (ignored on finite
    supports).  Pass ``plugin = fnl(base)`` to skip recomputing it.  A
    central difference that would need a negative mixture falls back to
    the forward quotient.
    """
    scheme = DiffScheme(scheme, eps).kind
    value, _ = _derivative(fnl, base, o, check_eps(eps), lam, scheme, kernel, plugin, clip)
    return float(value)


def observations(data) -> np.ndarray:
    if hasattr(data, "rows"):
        return data.rows()
    return np.atleast_2d(np.asarray(data, dtype=float))


def _map(fn, items, threads):
    if threads is None or threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def one_step(
    fnl,
    base,
    data,
    eps: float = 1e-6,
    lam: float | None = None,
    scheme: str = "forward",
    kernel: Kernel | str | None = None,
    threads: int = 1,
) -> GateauxReport:
    """Plug-in value plus the mean empirical Gateaux derivative over ``data``.

    Per-observation failures are recorded by index; the estimate averages
    the successes provided at least 95% of observations succeed.
    """
    scheme = DiffScheme(scheme, eps).kind
    obs = observations(data)
    if len(obs) == 0:
        raise InvalidParameter("data must be nonempty")
    clip = ClipCounter()
    plugin = float(fnl(base, clip))

    def work(i):
        c = ClipCounter()
        try:
            v, fb = _derivative(fnl, base, obs[i], eps, lam, scheme, kernel, plugin, c)
            return i, float(v), fb, c.count, None
        except GateauxError as exc:
            return i, math.nan, False, c.count, f"{type(exc).__name__}: {exc}"

    results = sorted(_map(work, range(len(obs)), threads))
    phi = np.array([r[1] for r in results])
    failures = {r[0]: r[4] for r in results if r[4] is not None}
    ok = len(obs) - len(failures)
    if ok < MIN_SUCCESS * len(obs):
        raise NumericFailure(f"{len(failures)} of {len(obs)} derivative evaluations failed")
    mean_phi = math.fsum(phi[np.isfinite(phi)]) / ok
    return GateauxReport(
        phi=phi,
        plugin=plugin,
        one_step=plugin + mean_phi,
        eps=float(eps),
        lam=None if is_discrete(base) else lam,
        scheme=scheme,
        n=len(obs),
        clip_count=clip.count + sum(r[3] for r in results),
        fallbacks=sum(r[2] for r in results),
        failures=failures,
    )


def sweep(
    fnl,
    base,
    data,
    eps_grid,
    lambda_grid,
    reference,
    scheme: str = "forward",
    kernel: Kernel | str | None = None,
    threads: int = 1,
) -> np.ndarray:
    """MAE of the empirical derivative against ``reference`` on an
    ``(eps, lambda)`` grid.  ``reference`` is a callable on observations or a
    precomputed array.  Failed cells are NaN."""
    eps_grid = [float(e) for e in eps_grid]
    lambda_grid = [float(v) for v in lambda_grid]
    if not eps_grid or not lambda_grid:
        raise InvalidParameter("sweep grids must be nonempty")
    obs = observations(data)
    ref = np.asarray(reference if not callable(reference) else [reference(o) for o in obs], dtype=float)
    plugin = float(fnl(base))
    out = np.full((len(eps_grid), len(lambda_grid)), np.nan)
    cells = [(i, j) for i in range(len(eps_grid)) for j in range(len(lambda_grid))]

    def work(cell):
        i, j = cell
        try:
            phi = np.array(
                [
                    _derivative(fnl, base, o, check_eps(eps_grid[i]), lambda_grid[j], scheme, kernel, plugin, None)[0]
                    for o in obs
                ]
            )
            return cell, float(np.mean(np.abs(phi - ref)))
        except GateauxError as exc:
            log.warning("sweep cell eps=%g lambda=%g failed: %s", eps_grid[i], lambda_grid[j], exc)
            return cell, math.nan

    for (i, j), v in _map(work, cells, threads):
        out[i, j] = v
    return out


def write_sweep_csv(path, matrix, eps_grid, lambda_grid) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps"] + [f"lambda={lam!r}" for lam in lambda_grid])
        for e, row in zip(eps_grid, matrix):
            w.writerow([repr(float(e))] + [repr(float(v)) for v in row])


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    lams = [float(c.split("=", 1)[1]) for c in rows[0][1:]]
    eps = [float(r[0]) for r in rows[1:]]
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return mat, eps, lams
