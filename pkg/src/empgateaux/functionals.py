"""Plug-in statistical functionals and the nuisances their densities induce.

A functional is a callable ``fnl(view) -> float`` where ``view`` is a
:class:`~empgateaux.measures.DiscreteDistribution`, a density model, or a
:class:`~empgateaux.measures.PerturbedDistribution` built on either.

Finite supports are evaluated by exact summation.  Density models are
integrated in the regression form ``int mu(x) p(x) dx`` with either

* ``Integrator("quadrature")`` -- exact for uniform kernels in one
  dimension (every integrand is piecewise constant between kernel edges),
  composite Gauss-Legendre otherwise; or
* ``Integrator("mc")`` -- stratified Monte Carlo over the mixture
  components of ``p(x)``.  Each component owns a fixed random stream, so
  a base distribution and its perturbation are integrated with common
  random numbers.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ._dual import Dual
from .errors import DegenerateError, InvalidParameter, LayoutError
from .measures import (
    ClipCounter,
    DensityModel,
    Dirac,
    DiscreteDistribution,
    DtrDensityModel,
    Kernel,
    PerturbedDistribution,
    gauss_legendre_panels,
)


@dataclass(frozen=True)
class Integrator:
    method: str = "mc"
    n_mc: int = 2000
    seed: int = 0
    raw: bool = False

    def __post_init__(self):
        if self.method not in ("mc", "quadrature"):
            raise InvalidParameter(f"unknown integration method {self.method!r}")
        if self.n_mc < 1:
            raise InvalidParameter("n_mc must be positive")

    def to_dict(self):
        return {"method": self.method, "n_mc": self.n_mc, "seed": self.seed, "raw": self.raw}


# ---------------------------------------------------------------------------
# view helpers
# ---------------------------------------------------------------------------


def root_of(view):
    while isinstance(view, PerturbedDistribution):
        view = view.base
    return view


def is_discrete(view) -> bool:
    if isinstance(view, DiscreteDistribution):
        return True
    if isinstance(view, PerturbedDistribution):
        return isinstance(view.direction, Dirac) and is_discrete(view.base)
    return False


def _chain(view):
    """(root_scale, root, [(weight, delta)]) such that the view's density is
    ``root_scale * root + sum weight * delta``."""
    weights = []
    s = 1.0
    v = view
    while isinstance(v, PerturbedDistribution):
        weights.append((s * v.eps, v.direction))
        s *= 1.0 - v.eps
        v = v.base
    return s, v, weights


# ---------------------------------------------------------------------------
# finite supports: g-formula by exact summation
# ---------------------------------------------------------------------------


def _stage_columns(view, kind: str, T: int):
    atoms, _ = view.support()
    k = atoms.shape[1]
    if kind == "mpo":
        d = k - 2
        if d < 1:
            raise LayoutError("mean potential outcome needs atoms laid out x..., a, y")
        return [list(range(d))], [d], k - 1
    if k != 2 * T + 1:
        raise LayoutError(f"DTR with T={T} needs atoms of length {2 * T + 1}, got {k}")
    return [[2 * t] for t in range(T)], [2 * t + 1 for t in range(T)], k - 1


def history_tables(atoms, probs, regime, xcols, acols, ycol):
    """Masses of covariate histories on a finite support.

    ``M[t][h]``: histories ``h = (x_1..x_t)`` with treatments matched before
    stage ``t``; ``N[t][h]``: matched through stage ``t``; ``Y[h]``: outcome
    mass of fully matched histories.  ``N[0][()]`` is the total mass.
    """
    T = len(acols)
    M = [defaultdict(float) for _ in range(T + 1)]
    N = [defaultdict(float) for _ in range(T + 1)]
    Ysum = defaultdict(float)
    total = 0.0
    for row, p in zip(atoms, probs):
        if p == 0.0 and not (isinstance(p, Dual) and p.du != 0.0):
            continue
        total = total + p
        hist = ()
        for t in range(T):
            hist = hist + tuple(row[xcols[t]])
            M[t + 1][hist] += p
            if row[acols[t]] != regime[t]:
                break
            N[t + 1][hist] += p
        else:
            Ysum[hist] += p * row[ycol]
    N[0][()] = total
    return M, N, Ysum


def g_formula_discrete(view, regime, xcols, acols, ycol, nu, clip: ClipCounter | None = None) -> float:
    """Sequential g-formula on a finite (possibly signed) support.

    Writes ``M_t``, ``N_t`` for the masses of covariate histories through
    stage ``t`` with treatments matched before / through stage ``t``.
    """
    atoms, probs = view.support()
    T = len(acols)
    regime = [float(r) for r in regime]
    M, N, Ysum = history_tables(atoms, probs, regime, xcols, acols, ycol)
    if not N[T] or all(v == 0.0 for v in N[T].values()):
        raise DegenerateError(f"regime {regime} has zero probability")
    # backward recursion over the history tree
    Q = {}
    for hist, n_T in N[T].items():
        den = n_T
        floor = nu * abs(M[T].get(hist, 1.0))
        if abs(den) < floor:
            if clip is not None:
                clip.add(1, "g-formula outcome")
            den = floor
        Q[hist] = Ysum[hist] / den if den != 0.0 else 0.0
    widths = [len(c) for c in xcols]
    for t in range(T, 0, -1):
        parent_len = sum(widths[: t - 1])
        acc = defaultdict(float)
        for hist, m in M[t].items():
            q = Q.get(hist, 0.0)
            if hist not in Q and m != 0.0:
                if clip is not None:
                    clip.add(1, "g-formula stage")
            acc[hist[:parent_len]] += q * m
        Qprev = {}
        for parent, s in acc.items():
            den = N[t - 1].get(parent, 0.0)
            floor = nu * abs(M[t - 1].get(parent, 1.0)) if t >= 2 else nu
            if abs(den) < floor or den == 0.0:
                if clip is not None:
                    clip.add(1, "g-formula stage")
                den = floor
            Qprev[parent] = s / den if den != 0.0 else 0.0
        Q = Qprev
    val = Q.get((), 0.0)
    return val if isinstance(val, Dual) else float(val)


# ---------------------------------------------------------------------------
# density views: moments on nodes
# ---------------------------------------------------------------------------



def mpo_moments(view, nodes, arm, fast: bool = True) -> np.ndarray:
    """Columns ``p(x)``, ``p(arm, x)``, ``int y p(y, arm, x) dy`` at ``nodes``."""
    s, root, terms = _chain(view)
    if not isinstance(root, DensityModel):
        raise LayoutError(f"expected a DensityModel view, got {type(root).__name__}")
    out = s * root.moments(nodes, arm, fast=fast)
    d = root.d
    pts = np.asarray(nodes, dtype=float).reshape(-1, d)
    for w, delta in terms:
        if w == 0.0:
            continue
        dx = delta.evaluate(pts, coords=list(range(d)))
        ind = float(delta.center[d] == arm)
        ybar = delta.outcome_mean(d + 1)
        out = out + w * np.column_stack([dx, dx * ind, dx * ind * ybar])
    return out


def _raw_outcome_moment(view, nodes, arm) -> np.ndarray:
    """``int y p(y, arm, x) dy`` by y-quadrature of the joint density."""
    s, root, terms = _chain(view)
    ys = root.data.y
    lo = ys.min() - 10 * root.h
    hi = ys.max() + 10 * root.h
    for _, delta in terms:
        lo = min(lo, delta.center[-1] - 10 * delta.bandwidth)
        hi = max(hi, delta.center[-1] + 10 * delta.bandwidth)
    if root.kernel is Kernel.UNIFORM and all(dl.kernel is Kernel.UNIFORM for _, dl in terms):
        b = np.concatenate([ys - root.h, ys + root.h] + [[dl.center[-1] - dl.bandwidth, dl.center[-1] + dl.bandwidth] for _, dl in terms])
        b = np.unique(b)
        ynodes, yw = 0.5 * (b[1:] + b[:-1]), np.diff(b)
    else:
        step = min([root.h] + [dl.bandwidth for _, dl in terms])
        ynodes, yw = gauss_legendre_panels(lo, hi, int(np.ceil((hi - lo) / step * 8)))
    pts = np.asarray(nodes, dtype=float).reshape(-1, root.d)
    out = np.empty(len(pts))
    for i, x in enumerate(pts):
        X = np.repeat(x[None, :], len(ynodes), axis=0)
        dens = s * root.p_yax(ynodes, arm, X)
        for w, delta in terms:
            full = np.column_stack([X, np.full(len(ynodes), arm), ynodes])
            dens = dens + w * delta.evaluate(full)
        out[i] = np.sum(yw * ynodes * dens)
    return out


def _full_rule(view):
    """Quadrature rule over the whole x-range of a (possibly perturbed) view."""
    s, root, terms = _chain(view)
    deltas = [dl for _, dl in terms]
    if not deltas:
        return root.quadrature_rule()
    if root.kernel is Kernel.UNIFORM and all(dl.kernel is Kernel.UNIFORM for dl in deltas):
        extra = np.concatenate([[dl.center[0] - dl.bandwidth, dl.center[0] + dl.bandwidth] for dl in deltas])
        b = np.unique(np.concatenate([root.breakpoints(), extra]))
        return 0.5 * (b[1:] + b[:-1]), np.diff(b)
    nodes, _ = root.quadrature_rule()
    lo = min([nodes.min()] + [dl.center[0] - 8 * dl.bandwidth for dl in deltas])
    hi = max([nodes.max()] + [dl.center[0] + 8 * dl.bandwidth for dl in deltas])
    step = min([root.h] + [dl.bandwidth for dl in deltas])
    return gauss_legendre_panels(lo, hi, int(np.ceil((hi - lo) / step * 20)))


def _window_rule(root, deltas):
    """Rule covering only the supports of the perturbation directions.

    Outside these windows a perturbed view's regression equals the base
    regression, so the remaining integral is a multiple of the base value.
    """
    if root.kernel is Kernel.UNIFORM and all(dl.kernel is Kernel.UNIFORM for dl in deltas):
        lo = np.array([dl.center[0] - dl.bandwidth for dl in deltas])
        hi = np.array([dl.center[0] + dl.bandwidth for dl in deltas])
        br = root.breakpoints()
        inner = [br[(br > l) & (br < u)] for l, u in zip(lo, hi)]
        b = np.unique(np.concatenate([lo, hi] + inner))
        mids = 0.5 * (b[1:] + b[:-1])
        keep = np.any((mids[:, None] > lo[None, :]) & (mids[:, None] < hi[None, :]), axis=1)
        return mids[keep], np.diff(b)[keep]
    lo = min(dl.center[0] - dl.kernel.support_radius * dl.bandwidth for dl in deltas)
    hi = max(dl.center[0] + dl.kernel.support_radius * dl.bandwidth for dl in deltas)
    step = min([root.h] + [dl.bandwidth for dl in deltas])
    return gauss_legendre_panels(lo, hi, int(np.ceil((hi - lo) / step * 20)))


def _regression(mom, nu, clip, where):
    # floor in propensity units so the limit eps -> 0 is continuous
    px = mom[:, 0]
    den = mom[:, 1]
    floor = nu * px
    low = den < floor
    if clip is not None:
        clip.add(int(np.count_nonzero(low & (px > 0))), where)
    den = np.where(low, floor, den)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, mom[:, 2] / safe, 0.0)


def _base_value(root, arm, integ: Integrator, clip):
    key = ("psi", arm, integ.method, integ.n_mc, integ.seed)
    cache = root._rule_moments
    if key not in cache:
        counter = ClipCounter()
        if integ.method == "quadrature":
            nodes, weights = root.quadrature_rule()
            mom = root.rule_moments(arm)
            val = float(np.sum(weights * mom[:, 0] * _regression(mom, root.nu, counter, "regression")))
        else:
            _, mom = _mc_base(root, arm, integ)
            val = float(np.mean(_regression(mom, root.nu, counter, "regression")))
        cache[key] = (val, counter.count)
    val, clipped = cache[key]
    if clip is not None and clipped:
        clip.add(clipped, "regression")
    return val


def _mpo_density(view, arm, integ: Integrator, clip) -> float:
    s, root, terms = _chain(view)
    nu = root.nu
    terms = [(w, dl) for w, dl in terms if w != 0.0]
    if integ.raw:
        if integ.method == "quadrature":
            nodes, weights = _full_rule(view)
            pw = weights
        else:
            nodes, _ = _mc_base(root, arm, integ)
            pw = np.full(len(nodes), 1.0 / len(nodes))
        mom = mpo_moments(view, nodes, arm).copy()
        mom[:, 2] = _raw_outcome_moment(view, nodes, arm)
        mu = _regression(mom, nu, clip, "regression")
        if integ.method == "quadrature":
            return float(np.sum(pw * mom[:, 0] * mu))
        total = s * float(np.sum(pw * mu))
        for k, (w, delta) in enumerate(terms):
            pts = delta.sample(integ.n_mc, np.random.default_rng([integ.seed, 1, k]))[:, : root.d]
            mom = mpo_moments(view, pts, arm).copy()
            mom[:, 2] = _raw_outcome_moment(view, pts, arm)
            total += w * float(np.mean(_regression(mom, nu, clip, "regression")))
        return total

    base = _base_value(root, arm, integ, clip)
    if not terms:
        return base
    deltas = [dl for _, dl in terms]
    if integ.method == "quadrature":
        # psi(view) = s * psi(root) + s * int_W p (mu_v - mu) + sum_k w_k int delta_k mu_v
        nodes, weights = _window_rule(root, deltas)
        m0 = root.moments(nodes, arm, fast=True)
        mv = mpo_moments(view, nodes, arm)
        mu0 = _regression(m0, nu, None, "")
        mu_v = _regression(mv, nu, clip, "regression")
        total = s * base + s * float(np.sum(weights * m0[:, 0] * (mu_v - mu0)))
        for w, delta in terms:
            dx = delta.evaluate(nodes[:, None], coords=[0])
            total += w * float(np.sum(weights * dx * mu_v))
        return total
    # Monte Carlo: base draws shared with the unperturbed value (common random numbers)
    pts, m0 = _mc_base(root, arm, integ)
    mv = mpo_moments(view, pts, arm)
    diff = _regression(mv, nu, clip, "regression") - _regression(m0, nu, None, "")
    total = s * (base + float(np.mean(diff)))
    for k, (w, delta) in enumerate(terms):
        rng = np.random.default_rng([integ.seed, 1, k])
        dpts = delta.sample(integ.n_mc, rng)[:, : root.d]
        total += w * float(np.mean(_regression(mpo_moments(view, dpts, arm), nu, clip, "regression")))
    return total


def _mc_base(root: DensityModel, arm, integ: Integrator):
    key = ("mc", integ.n_mc, integ.seed, arm)
    cache = root._rule_moments
    if key not in cache:
        rng = np.random.default_rng([integ.seed, 0])
        pts = root.sample_x(integ.n_mc, rng)
        cache[key] = (pts, root.moments(pts, arm, fast=True))
    return cache[key]


# ---------------------------------------------------------------------------
# public nuisance queries
# ---------------------------------------------------------------------------


def _discrete_conditional(view, a, x):
    atoms, probs = view.support()
    d = atoms.shape[1] - 2
    x = np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, d)
    px = np.empty(len(x))
    pax = np.empty(len(x))
    m = np.empty(len(x))
    for i, xi in enumerate(x):
        hit = np.all(atoms[:, :d] == xi[None, :], axis=1)
        arm = hit & (atoms[:, d] == a)
        px[i] = probs[hit].sum()
        pax[i] = probs[arm].sum()
        m[i] = (probs[arm] * atoms[arm, d + 1]).sum()
    return np.column_stack([px, pax, m])


def _view_nu(view) -> float:
    return getattr(root_of(view), "nu", 1e-4)


def _squeeze(out, x):
    return float(out[0]) if np.ndim(x) <= 1 and len(out) == 1 else out


def induced_regression(dist, a, x, clip: ClipCounter | None = None):
    """``int y p(y, a, x) dy / p(a, x)``: Nadaraya-Watson for a KDE view.

    Denominators below the overlap floor are raised to it and recorded in
    ``clip``.
    """
    mom = _discrete_conditional(dist, a, x) if is_discrete(dist) else mpo_moments(dist, x, a, fast=False)
    return _squeeze(_regression(mom, _view_nu(dist), clip, "induced_regression"), x)


def induced_propensity(dist, a, x, clip: ClipCounter | None = None):
    """``p(a, x) / p(x)``, clipped into ``[nu, 1]``."""
    nu = _view_nu(dist)
    mom = _discrete_conditional(dist, a, x) if is_discrete(dist) else mpo_moments(dist, x, a, fast=False)
    px = mom[:, 0]
    low = px < nu
    if clip is not None:
        clip.add(int(np.count_nonzero(low)), "induced_propensity")
    e = mom[:, 1] / np.where(low, nu, px)
    return _squeeze(np.clip(e, nu, 1.0), x)


def nadaraya_watson(data, a, x, h, kernel=Kernel.UNIFORM):
    """Closed-form NW estimate from the raw sample (no density objects)."""
    kernel = Kernel.parse(kernel)
    x = np.asarray(x, dtype=float).reshape(-1, data.d)
    u = (x[:, None, :] - data.x[None, :, :]) / h
    k = np.prod(kernel.profile(u), axis=2) * (data.a == a)[None, :]
    return (k @ data.y) / k.sum(axis=1)


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantFunctional:
    value: float = 0.0
    kind: str = field(default="constant", init=False)

    def __call__(self, view, clip: ClipCounter | None = None) -> float:
        return float(self.value)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class MeanPotentialOutcome:
    """``E[E[Y | A = arm, X]]`` evaluated at a distribution view."""

    arm: float = 1.0
    integrator: Integrator = Integrator()
    kind: str = field(default="mpo", init=False)

    def __call__(self, view, clip: ClipCounter | None = None) -> float:
        return mean_potential_outcome(view, self.arm, self.integrator, clip)

    def to_dict(self):
        return {"kind": "mpo", "arm": _num(self.arm), "integrator": self.integrator.to_dict()}


@dataclass(frozen=True)
class DtrValue:
    """g-formula value of a static regime over ``T`` stages."""

    regime: tuple = (1, 1)
    T: int = 2
    integrator: Integrator = Integrator()
    max_continuous_T: int = 2
    kind: str = field(default="dtr", init=False)

    def __post_init__(self):
        if self.T < 1:
            raise InvalidParameter("horizon T must be at least 1")
        object.__setattr__(self, "regime", tuple(float(r) for r in self.regime))
        if len(self.regime) != self.T:
            raise InvalidParameter(f"regime has {len(self.regime)} entries, T={self.T}")

    def __call__(self, view, clip: ClipCounter | None = None) -> float:
        return dtr_g_formula(view, self.regime, self.T, self.integrator, clip, self.max_continuous_T)

    def to_dict(self):
        return {
            "kind": "dtr",
            "regime": [_num(r) for r in self.regime],
            "T": self.T,
            "integrator": self.integrator.to_dict(),
        }


def _num(v):
    v = float(v)
    return int(v) if v.is_integer() else v


def functional_from_dict(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    integ = Integrator(**spec.pop("integrator", {}))
    if kind == "mpo":
        arm = spec.pop("arm", 1)
        _reject_extra(spec)
        return MeanPotentialOutcome(arm=float(arm), integrator=integ)
    if kind == "dtr":
        regime = spec.pop("regime")
        T = spec.pop("T", len(regime))
        _reject_extra(spec)
        return DtrValue(regime=tuple(regime), T=int(T), integrator=integ)
    if kind == "constant":
        value = spec.pop("value", 0.0)
        _reject_extra(spec)
        return ConstantFunctional(float(value))
    raise InvalidParameter(f"unknown functional kind {kind!r}")


def functional_from_json(text: str):
    return functional_from_dict(json.loads(text))


def _reject_extra(spec):
    if spec:
        raise InvalidParameter(f"unknown functional keys: {sorted(spec)}")


def mean_potential_outcome(view, a=1.0, integ: Integrator = Integrator(), clip: ClipCounter | None = None) -> float:
    """Plug-in mean potential outcome for arm ``a``."""
    if is_discrete(view):
        atoms, probs = view.support()
        d = atoms.shape[1] - 2
        arm_mass = probs[atoms[:, d] == a].sum()
        if arm_mass == 0.0:
            raise DegenerateError(f"arm {a} has zero probability")
        xcols, acols, ycol = _stage_columns(view, "mpo", 1)
        return g_formula_discrete(view, [a], xcols, acols, ycol, _view_nu(view), clip)
    root = root_of(view)
    if not np.any(root.data.a == a):
        raise DegenerateError(f"arm {a} has no observations")
    return _mpo_density(view, a, integ, clip)


def dtr_g_formula(view, regime, T: int, integ: Integrator = Integrator(), clip=None, max_continuous_T: int = 2) -> float:
    """g-formula value of the static regime ``regime`` over ``T`` stages."""
    if T < 1:
        raise InvalidParameter("horizon T must be at least 1")
    regime = [float(r) for r in regime]
    if len(regime) != T:
        raise InvalidParameter("regime length must equal T")
    if is_discrete(view):
        xcols, acols, ycol = _stage_columns(view, "dtr", T)
        return g_formula_discrete(view, regime, xcols, acols, ycol, _view_nu(view), clip)
    root = root_of(view)
    if not isinstance(root, DtrDensityModel):
        raise LayoutError("continuous DTR evaluation needs a DtrDensityModel view")
    if T != root.T:
        raise LayoutError(f"model has {root.T} stages, functional expects {T}")
    if T > max_continuous_T:
        raise InvalidParameter(f"continuous DTR limited to T <= {max_continuous_T}")
    return _dtr_importance(view, regime, integ, clip)


# ---------------------------------------------------------------------------
# continuous DTR: defensive importance sampling with common random numbers
# ---------------------------------------------------------------------------


def _dtr_prefix(view, xbar, regime, s, with_outcome=False):
    scale, root, terms = _chain(view)
    out = scale * root.prefix(xbar, regime, s, with_outcome)
    t = xbar.shape[1]
    for w, delta in terms:
        if w == 0.0:
            continue
        c = delta.center
        val = np.ones(len(xbar))
        for k in range(t):
            val = val * delta.kernel.profile((xbar[:, k] - c[2 * k]) / delta.bandwidth) / delta.bandwidth
        match = all(c[2 * k + 1] == regime[k] for k in range(s))
        val = val * float(match)
        cols = [val, val * c[-1]] if with_outcome else [val]
        out = out + w * np.column_stack(cols)
    return out


def _dtr_target(view, X, regime, nu, clip):
    """Integrand of the g-formula at full covariate histories ``X`` (m, T)."""
    T = X.shape[1]
    full = _dtr_prefix(view, X, regime, T, with_outcome=True)
    den = full[:, 0]
    base = _dtr_prefix(view, X, regime, T - 1)[:, 0]
    floor = nu * base
    low = den < floor
    if clip is not None:
        clip.add(int(np.count_nonzero(low & (base > 0))), "dtr regression")
    den = np.where(low, floor, den)
    g = np.where(den > 0, full[:, 1] / np.where(den > 0, den, 1.0), 0.0)
    for t in range(1, T + 1):
        num = _dtr_prefix(view, X[:, :t], regime, t - 1)[:, 0]
        prev = _dtr_prefix(view, X[:, : t - 1], regime, t - 1)[:, 0]
        # treatment at stage t-1 is the only thing that can vanish here
        parent = _dtr_prefix(view, X[:, : t - 1], regime, t - 2)[:, 0] if t >= 2 else np.ones(len(X))
        fl = nu * parent
        lowp = prev < fl
        if clip is not None:
            clip.add(int(np.count_nonzero(lowp & (num > 0))), "dtr transition")
        prev = np.where(lowp, fl, prev)
        g = g * np.where(prev > 0, num / np.where(prev > 0, prev, 1.0), 0.0)
    return g


def _dtr_proposal_density(root, X, regime, deltas, wdelta):
    T = X.shape[1]
    q = np.ones(len(X))
    for t in range(1, T + 1):
        num = root.prefix(X[:, :t], regime, t - 1)[:, 0]
        prev = root.prefix(X[:, : t - 1], regime, t - 1)[:, 0]
        q = q * np.where(prev > 0, num / np.where(prev > 0, prev, 1.0), 0.0)
    q = (1.0 - wdelta) * q
    for delta in deltas:
        val = np.ones(len(X))
        for k in range(T):
            val = val * delta.kernel.profile((X[:, k] - delta.center[2 * k]) / delta.bandwidth) / delta.bandwidth
        q = q + wdelta / len(deltas) * val
    return q


def _dtr_importance(view, regime, integ: Integrator, clip) -> float:
    _, root, terms = _chain(view)
    deltas = [dl for _, dl in terms]
    wdelta = 0.5 if deltas else 0.0
    nu = root.nu
    T = root.T
    rng = np.random.default_rng([integ.seed, 0])
    X = np.empty((integ.n_mc, 0))
    for t in range(T):
        X = np.column_stack([X, root.sample_stage(X, regime, t, rng)])
    comps = [(1.0 - wdelta, X)]
    for k, delta in enumerate(deltas):
        r = np.random.default_rng([integ.seed, 1, k])
        pts = delta.sample(integ.n_mc, r)[:, 0 : 2 * T : 2]
        comps.append((wdelta / len(deltas), pts))
    total = 0.0
    for w, pts in comps:
        q = _dtr_proposal_density(root, pts, regime, deltas, wdelta)
        g = _dtr_target(view, pts, regime, nu, clip)
        total += w * np.mean(np.where(q > 0, g / np.where(q > 0, q, 1.0), 0.0))
    return float(total)
