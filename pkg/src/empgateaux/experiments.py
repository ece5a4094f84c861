"""Data-generating processes, the Monte Carlo derivative evaluator and the
simulation drivers (epsilon-lambda sweeps, estimator comparisons)."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GateauxError, InvalidParameter
from .functionals import (
    Integrator,
    MeanPotentialOutcome,
    _regression,
    induced_propensity,
    mpo_moments,
)
from .gateaux import SCHEMA_VERSION, observations, one_step, sweep
from .measures import (
    Dataset,
    DiscreteDistribution,
    Kernel,
    SmoothedDelta,
    fit_kde,
    perturb,
)
from .oracle import Nuisances, aipw_score, exact_derivative_discrete

log = logging.getLogger(__name__)

PROPENSITY_MODES = ("logistic-sin", "raw-sin")
DGP_KINDS = ("piecewise", "discrete-cube", "dtr-discrete", "random-mdp")


@dataclass(frozen=True)
class DgpSpec:
    kind: str = "piecewise"
    n: int = 500
    seed: int = 0
    noise_sd: float = 1.0
    propensity_mode: str = "logistic-sin"
    T: int = 2
    nS: int = 5
    nA: int = 3

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise InvalidParameter(f"unknown DGP kind {self.kind!r}")
        if self.n < 1:
            raise InvalidParameter("n must be at least 1")
        if self.noise_sd < 0:
            raise InvalidParameter("noise_sd must be nonnegative")
        if self.propensity_mode not in PROPENSITY_MODES:
            raise InvalidParameter(f"propensity_mode must be one of {PROPENSITY_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(base_seed: int, index: int) -> int:
    """Independent per-replication seed from ``(base_seed, index)``."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# piecewise-linear simulation design
# ---------------------------------------------------------------------------

# E[Y | A, X] on [0,1]: pieces (lo, hi, intercept(a), slope(a))
_PIECES = (
    (0.0, 0.25, lambda a: 3.0 * (2 * a - 1), lambda a: -5.0 * a),
    (0.25, 0.5, lambda a: 3.0 + 0.0 * a, lambda a: 5.0 * a),
    (0.5, 0.75, lambda a: 0.0 * a, lambda a: -5.0 * a),
    (0.75, 1.0, lambda a: 0.0 * a, lambda a: 5.0 * a),
)


def piecewise_mean(a, x) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.zeros(np.broadcast(a, x).shape)
    for k, (lo, hi, icpt, slope) in enumerate(_PIECES):
        inside = (x >= lo) & ((x < hi) if k < len(_PIECES) - 1 else (x <= hi))
        out = np.where(inside, icpt(a) + slope(a) * x, out)
    return out


def piecewise_truth(arm: int = 1) -> float:
    """``E[Y(arm)]`` for ``X ~ U[0,1]`` by exact integration of each linear piece."""
    return float(
        sum(icpt(arm) * (hi - lo) + 0.5 * slope(arm) * (hi**2 - lo**2) for lo, hi, icpt, slope in _PIECES)
    )


def propensity(x, mode: str = "logistic-sin") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if mode == "logistic-sin":
        return 1.0 / (1.0 + np.exp(-np.sin(20.0 * x)))
    if mode == "raw-sin":
        return np.clip(np.sin(20.0 * x) + 0.5, 0.05, 0.95)
    raise InvalidParameter(f"unknown propensity mode {mode!r}")


def dgp_piecewise(n: int, seed, spec: DgpSpec | None = None):
    """Draw ``n`` observations; returns ``(Dataset, E[Y(1)])``."""
    spec = spec or DgpSpec()
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    a = (rng.uniform(size=n) < propensity(x, spec.propensity_mode)).astype(float)
    y = piecewise_mean(a, x) + spec.noise_sd * rng.standard_normal(n)
    return Dataset(x[:, None], a, y), piecewise_truth(1)


# ---------------------------------------------------------------------------
# finite supports
# ---------------------------------------------------------------------------


def discrete_cube() -> DiscreteDistribution:
    """Uniform distribution on ``(X, A, Y) in {0,1}^3``."""
    atoms = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
    return DiscreteDistribution.uniform(atoms)


def random_tabulated(seed, nx: int = 2, y_values=(0.0, 1.0, 2.5)) -> DiscreteDistribution:
    """Random full-support distribution on ``{0..nx-1} x {0,1} x y_values``."""
    rng = np.random.default_rng(seed)
    atoms = np.array(list(itertools.product(range(nx), [0.0, 1.0], y_values)), dtype=float)
    p = rng.dirichlet(np.ones(len(atoms))) * 0.8 + 0.2 / len(atoms)
    return DiscreteDistribution(atoms, p / math.fsum(p), validate=False)


def dtr_discrete(T: int = 2, seed=0, y_values=(0.0, 1.0, 3.0)) -> DiscreteDistribution:
    """Random sequential design on binary covariates and treatments.

    Atoms are laid out ``x1, a1, ..., xT, aT, y``; stage propensities stay in
    ``[0.2, 0.8]``.
    """
    if T < 1:
        raise InvalidParameter("T must be at least 1")
    rng = np.random.default_rng(seed)
    atoms, probs = [], []
    cache: dict = {}

    def draw(key, k, lo=0.0):
        if key not in cache:
            v = rng.dirichlet(np.ones(k))
            cache[key] = lo + (1 - k * lo) * v
        return cache[key]

    for hist in itertools.product([0.0, 1.0], repeat=2 * T):
        p = 1.0
        for t in range(T):
            past = hist[: 2 * t]
            p *= draw(("x", past), 2, 0.1)[int(hist[2 * t])]
            p *= draw(("a", hist[: 2 * t + 1]), 2, 0.2)[int(hist[2 * t + 1])]
        py = draw(("y", hist), len(y_values), 0.05)
        for yv, q in zip(y_values, py):
            atoms.append(list(hist) + [yv])
            probs.append(p * q)
    probs = np.array(probs)
    return DiscreteDistribution(np.array(atoms), probs / math.fsum(probs), validate=False)


def dtr_balanced(T: int = 2, y_values=(0.0, 1.0, 3.0)) -> DiscreteDistribution:
    """Uniform distribution over binary histories and ``y_values``: every
    stage propensity is one half."""
    if T < 1:
        raise InvalidParameter("T must be at least 1")
    atoms = np.array([list(h) + [y] for h in itertools.product([0.0, 1.0], repeat=2 * T) for y in y_values])
    return DiscreteDistribution.uniform(atoms)


# ---------------------------------------------------------------------------
# Monte Carlo derivative for uniform smoothing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    n_mc: int
    clipped: int = 0


def mc_phi_uniform(
    model,
    o,
    eps: float,
    lam: float,
    n_mc: int = 10_000,
    seed=0,
    arm: float = 1.0,
    plugin: float | None = None,
    kernel: Kernel | str = Kernel.UNIFORM,
) -> MCEstimate:
    """Monte Carlo form of the forward difference toward ``o``.

    With ``x_k`` drawn from the smoothed delta's covariate marginal,

        phi = mean_k [ mu_eps(x_k)
                       + (1 - eps) p(x_k) 1{a_i = arm} (y_i - mu(x_k)) / p_eps(arm, x_k) ]
              - psi(P)

    which equals ``(psi(P_eps) - psi(P)) / eps`` in expectation.  The same
    draws feed both terms.  Where an overlap-floor clip is active the second
    term falls back to the equivalent ``(1 - eps) p (mu_eps - mu) / (eps delta)``.
    """
    if n_mc < 1:
        raise InvalidParameter("n_mc must be at least 1")
    o = np.asarray(o, dtype=float).reshape(-1)
    d = model.d
    delta = SmoothedDelta(o, lam, kernel, model.layout)
    view = perturb(model, delta, eps)
    rng = np.random.default_rng(seed)
    xs = delta.sample(n_mc, rng)[:, :d]
    nu = model.nu
    m0 = model.moments(xs, arm, fast=True)
    mv = mpo_moments(view, xs, arm)
    mu0 = _regression(m0, nu, None, "")
    mu_v = _regression(mv, nu, None, "")
    dx = delta.evaluate(xs, coords=list(range(d)))
    treated = float(o[d] == arm)
    y_i = o[d + 1]
    ok = (m0[:, 1] >= nu * m0[:, 0]) & (mv[:, 1] >= nu * mv[:, 0]) & (m0[:, 1] > 0) & (mv[:, 1] > 0)
    closed = np.where(ok, m0[:, 0] * treated * (y_i - mu0) / np.where(ok, mv[:, 1], 1.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        generic = m0[:, 0] * (mu_v - mu0) / (eps * dx)
    second = (1.0 - eps) * np.where(ok, closed, generic)
    summand = mu_v + second
    if plugin is None:
        plugin = MeanPotentialOutcome(arm, Integrator("quadrature"))(model)
    return MCEstimate(
        value=float(np.mean(summand) - plugin),
        se=float(np.std(summand, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf,
        n_mc=n_mc,
        clipped=int(np.count_nonzero(~ok)),
    )


# ---------------------------------------------------------------------------
# rate schedule
# ---------------------------------------------------------------------------


def rate_schedule(
    n: int,
    d: int = 1,
    beta: float = 3.0,
    r_mu: float = 0.25,
    r_e: float = 0.25,
    delta: float = 0.05,
    c_eps: float = 1.0,
    anchor=(500, 0.05),
):
    """``(eps, lambda)`` meeting the smoothing and perturbation rate conditions.

    ``lambda = c_lambda n^(-1/(2 beta))`` with ``c_lambda`` chosen so that
    ``lambda(anchor_n) = anchor_lambda``, and
    ``eps = c_eps n^-(max(r_mu, r_e) + delta) lambda^(d/2)``.
    """
    if n < 1 or d < 1:
        raise InvalidParameter("n and d must be positive")
    if min(beta, r_mu, r_e) <= 0 or delta < 0:
        raise InvalidParameter("rate exponents must be positive")
    n0, lam0 = anchor
    lam = lam0 * (n0 / n) ** (1.0 / (2.0 * beta))
    eps = c_eps * n ** (-(max(r_mu, r_e) + delta)) * lam ** (d / 2.0)
    return float(eps), float(lam)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    matrix: np.ndarray
    eps_grid: list
    lambda_grid: list
    meta: dict = field(default_factory=dict)


DEFAULT_EPS_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
DEFAULT_LAMBDA_GRID = (0.2, 0.1, 0.05)


def _setting(config: dict):
    """Base distribution, evaluation points, functional and reference for
    a sweep or estimate configuration."""
    spec = DgpSpec(**config.get("dgp", {}))
    arm = float(config.get("arm", 1))
    integ = Integrator(**config.get("integrator", {"method": "quadrature"}))
    fnl = MeanPotentialOutcome(arm, integ)
    if spec.kind == "discrete-cube":
        base = discrete_cube()
        obs = base.atoms
        ref = np.array([exact_derivative_discrete(fnl, base, o) for o in obs])
        return base, obs, fnl, ref
    if spec.kind != "piecewise":
        raise InvalidParameter(f"sweeps support piecewise and discrete-cube designs, not {spec.kind!r}")
    data, _ = dgp_piecewise(spec.n, spec.seed, spec)
    base = fit_kde(data, config.get("h", 0.05), config.get("kernel", "uniform"), config.get("overlap_floor", 1e-4))
    obs = observations(data)
    n_obs = config.get("n_obs")
    if n_obs is not None:
        obs = obs[: int(n_obs)]
    psi = fnl(base)
    nuis = Nuisances.induced(base, arm)
    ref = np.array([aipw_score(nuis, psi, o) for o in obs])
    return base, obs, fnl, ref


def run_sweep_experiment(config: dict) -> SweepResult:
    """Mean absolute error of the empirical derivative against the analytic
    score over an ``(eps, lambda)`` grid.

    Continuous designs use the augmented-IPW score with the nuisances
    induced by the fitted density as reference; the discrete cube uses
    the exact derivative.
    """
    base, obs, fnl, ref = _setting(config)
    eps_grid = list(config.get("eps_grid", DEFAULT_EPS_GRID))
    lam_grid = list(config.get("lambda_grid", DEFAULT_LAMBDA_GRID))
    mat = sweep(
        fnl, base, obs, eps_grid, lam_grid, ref,
        scheme=config.get("scheme", "forward"),
        kernel=config.get("delta_kernel"),
        threads=int(config.get("threads", 1)),
    )
    ref_kind = "exact" if isinstance(base, DiscreteDistribution) else "aipw-induced"
    return SweepResult(mat, eps_grid, lam_grid, {"n_obs": len(obs), "reference": ref_kind})


ESTIMATORS = ("dm", "ipw", "one-step")


def _estimate_once(n, seed, config):
    spec = DgpSpec(**{**config.get("dgp", {}), "n": n, "seed": seed})
    data, truth = dgp_piecewise(n, seed, spec)
    h = config.get("h", 0.05)
    eps = config.get("eps", 1e-3)
    lam = config.get("lambda", h)
    if config.get("schedule", "fixed") == "rate":
        eps, lam = rate_schedule(n, **config.get("rate", {}))
        h = lam
    arm = float(config.get("arm", 1))
    model = fit_kde(data, h, config.get("kernel", "uniform"), config.get("overlap_floor", 1e-4))
    fnl = MeanPotentialOutcome(arm, Integrator(**config.get("integrator", {"method": "quadrature"})))
    out = {}
    estimators = config.get("estimators", ESTIMATORS)
    if "dm" in estimators:
        out["dm"] = fnl(model)
    if "ipw" in estimators:
        e = induced_propensity(model, arm, data.x)
        clip_lo = config.get("ipw_clip", 0.01)
        e = np.clip(e, clip_lo, 1.0)
        out["ipw"] = float(np.mean((data.a == arm) * data.y / e))
    if "one-step" in estimators:
        rep = one_step(
            fnl, model, data, eps, lam, config.get("scheme", "forward"), config.get("delta_kernel"),
            threads=int(config.get("threads", 1)),
        )
        out["one-step"] = rep.one_step
    if "oracle" in estimators:
        out["oracle"] = truth
    return {k: v - truth for k, v in out.items()}


def run_comparison_experiment(n_list, n_seeds: int, config: dict | None = None) -> list:
    """Per-(estimator, n) mean absolute error and RMSE over seeds.

    Seeds are derived from ``config["base_seed"]`` and the replication
    index; replications that raise are logged and dropped (at most 5%).
    """
    config = dict(config or {})
    base_seed = int(config.get("base_seed", 0))
    rows = []
    for n in n_list:
        errs: dict = {}
        failed = 0
        for k in range(n_seeds):
            try:
                res = _estimate_once(int(n), derive_seed(base_seed, k), config)
            except GateauxError as exc:
                log.warning("n=%d replication %d failed: %s", n, k, exc)
                failed += 1
                continue
            for est, err in res.items():
                errs.setdefault(est, []).append(err)
        if failed > 0.05 * n_seeds:
            raise GateauxError(f"{failed} of {n_seeds} replications failed at n={n}")
        for est, e in errs.items():
            e = np.asarray(e)
            rows.append(
                {
                    "estimator": est,
                    "n": int(n),
                    "mean_abs_error": float(np.mean(np.abs(e))),
                    "rmse": float(np.sqrt(np.mean(e**2))),
                    "mean_error": float(np.mean(e)),
                    "replications": int(len(e)),
                }
            )
    return rows


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` on ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

COMPARISON_COLUMNS = ("estimator", "n", "mean_abs_error", "rmse", "mean_error", "replications", "schema_version")


def write_comparison_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            out = {k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()}
            w.writerow({**out, "schema_version": SCHEMA_VERSION})


def _color(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    return f"rgb({int(255 * t)},{int(80 + 100 * (1 - t))},{int(255 * (1 - t))})"


def heatmap_svg(path, matrix, eps_grid, lambda_grid, title="MAE") -> None:
    """Single-file SVG heatmap; rows are eps, columns lambda."""
    cw, ch, left, top = 90, 36, 90, 40
    rows, cols = len(eps_grid), len(lambda_grid)
    vals = np.log10(np.where(np.isfinite(matrix) & (matrix > 0), matrix, np.nan))
    lo, hi = np.nanmin(vals), np.nanmax(vals)
    span = hi - lo if hi > lo else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + cw * cols + 20}" height="{top + ch * rows + 40}" font-family="monospace" font-size="11">',
        f'<text x="{left}" y="20">{title} (rows: eps, columns: lambda)</text>',
    ]
    for j, lam in enumerate(lambda_grid):
        parts.append(f'<text x="{left + cw * j + 8}" y="{top + ch * rows + 16}">{lam:g}</text>')
    for i, e in enumerate(eps_grid):
        parts.append(f'<text x="8" y="{top + ch * i + 22}">{e:g}</text>')
        for j in range(cols):
            v = matrix[i, j]
            fill = "#cccccc" if not np.isfinite(vals[i, j]) else _color((vals[i, j] - lo) / span)
            parts.append(f'<rect x="{left + cw * j}" y="{top + ch * i}" width="{cw}" height="{ch}" fill="{fill}"/>')
            parts.append(f'<text x="{left + cw * j + 6}" y="{top + ch * i + 22}" fill="white">{v:.3g}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def lines_svg(path, rows, metric="mean_abs_error", title="error vs n") -> None:
    """Log-log line chart of ``metric`` against ``n`` per estimator."""
    W, H, pad = 480, 320, 50
    series: dict = {}
    for r in rows:
        series.setdefault(r["estimator"], []).append((r["n"], r[metric]))
    pts = [(n, v) for s in series.values() for n, v in s if v > 0]
    if not pts:
        raise InvalidParameter("nothing to plot")
    lx = np.log10([p[0] for p in pts])
    ly = np.log10([p[1] for p in pts])
    x0, x1 = lx.min(), max(lx.max(), lx.min() + 1e-9)
    y0, y1 = ly.min(), max(ly.max(), ly.min() + 1e-9)

    def sx(n):
        return pad + (math.log10(n) - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(v):
        return H - pad - (math.log10(v) - y0) / (y1 - y0) * (H - 2 * pad)

    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="monospace" font-size="11">',
        f'<text x="{pad}" y="20">{title}</text>',
    ]
    for k, (name, s) in enumerate(sorted(series.items())):
        s = sorted(p for p in s if p[1] > 0)
        col = palette[k % len(palette)]
        path_d = " ".join(f"{'M' if i == 0 else 'L'}{sx(n):.1f},{sy(v):.1f}" for i, (n, v) in enumerate(s))
        parts.append(f'<path d="{path_d}" stroke="{col}" fill="none" stroke-width="2"/>')
        parts.append(f'<text x="{W - pad - 60}" y="{pad + 14 * k}" fill="{col}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
