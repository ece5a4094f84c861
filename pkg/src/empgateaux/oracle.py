"""Closed-form influence functions used as ground truth for the numerical
derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._dual import Dual
from .errors import DegenerateError, InvalidParameter, LayoutError, SupportError
from .functionals import (
    ConstantFunctional,
    DtrValue,
    MeanPotentialOutcome,
    history_tables,
    induced_propensity,
    induced_regression,
    is_discrete,
)
from .measures import DEFAULT_OVERLAP_FLOOR, DiscreteDistribution, perturb_signed, Dirac


@dataclass(frozen=True)
class Nuisances:
    """Outcome regression ``mu`` and propensity ``e`` for one arm."""

    mu: Callable
    e: Callable
    source: str = "true-dgp"
    nu: float = DEFAULT_OVERLAP_FLOOR
    arm: float = 1.0

    def propensity(self, x) -> float:
        return float(np.clip(self.e(x), self.nu, 1.0))

    @classmethod
    def induced(cls, view, arm=1.0) -> "Nuisances":
        """Nuisances implied by a distribution's own density ratios."""
        nu = getattr(view, "nu", DEFAULT_OVERLAP_FLOOR)
        src = "exact" if is_discrete(view) else "induced-by-density"
        return cls(
            mu=lambda x: induced_regression(view, arm, np.atleast_1d(x)),
            e=lambda x: induced_propensity(view, arm, np.atleast_1d(x)),
            source=src,
            nu=nu,
            arm=arm,
        )


def aipw_score(nuis: Nuisances, psi: float, o) -> float:
    """``1{a = arm} / e(x) * (y - mu(x)) + mu(x) - psi`` at ``o = (x..., a, y)``."""
    o = np.asarray(o, dtype=float).reshape(-1)
    x, a, y = o[:-2], o[-2], o[-1]
    mu = float(nuis.mu(x))
    out = mu - psi
    if a == nuis.arm:
        out += (y - mu) / nuis.propensity(x)
    return float(out)


def aipw_scores(nuis: Nuisances, psi: float, obs) -> np.ndarray:
    return np.array([aipw_score(nuis, psi, o) for o in np.atleast_2d(obs)])


# ---------------------------------------------------------------------------
# exact derivative on finite supports
# ---------------------------------------------------------------------------


class _DualSupport(DiscreteDistribution):
    """Finite support whose probabilities are dual numbers in the mixture
    weight; evaluating a functional on it returns value and derivative."""

    def __init__(self, atoms, probs, nu):
        self.atoms = atoms
        self.probs = probs
        self.nu = nu

    def support(self):
        return self.atoms, self.probs


def _dual_mixture(dist, o):
    atoms, probs = dist.support()
    o = np.asarray(o, dtype=float).reshape(-1)
    if o.shape[0] != atoms.shape[1]:
        raise LayoutError(f"observation has {o.shape[0]} coordinates, support has {atoms.shape[1]}")
    hit = np.all(atoms == o[None, :], axis=1)
    if not hit.any():
        atoms = np.vstack([atoms, o[None, :]])
        probs = np.append(probs, 0.0)
        hit = np.append(hit, True)
    duals = np.empty(len(probs), dtype=object)
    for k, (p, h) in enumerate(zip(probs, hit)):
        duals[k] = Dual(p, float(h) - p)
    return _DualSupport(atoms, duals, getattr(dist, "nu", DEFAULT_OVERLAP_FLOOR))


def exact_derivative_discrete(fnl, dist, o, fallback_eps: float = 1e-7) -> float:
    """``d/d eps psi((1 - eps) P + eps delta_o)`` at ``eps = 0``.

    Ratio-of-polynomial functionals (mean potential outcome, regime value,
    constants) are differentiated exactly with dual numbers.  Anything else
    falls back to a central difference at ``fallback_eps``.
    """
    if not is_discrete(dist):
        raise InvalidParameter("exact derivative needs a finite support")
    if isinstance(fnl, ConstantFunctional):
        return 0.0
    if isinstance(fnl, (MeanPotentialOutcome, DtrValue)):
        val = fnl(_dual_mixture(dist, o))
        return float(val.du) if isinstance(val, Dual) else 0.0
    direction = Dirac(np.asarray(o, dtype=float))
    up = fnl(perturb_signed(dist, direction, fallback_eps))
    down = fnl(perturb_signed(dist, direction, -fallback_eps))
    return (up - down) / (2.0 * fallback_eps)


# ---------------------------------------------------------------------------
# multi-stage regimes
# ---------------------------------------------------------------------------


def dtr_eif(dist, regime, T: int, o) -> float:
    """Efficient influence function of the g-formula value at ``o``.

    ``phi = Q_1 - psi + sum_t [prod_{k<=t} 1{a_k = r_k} / pi_k] (Q_{t+1} - Q_t)``
    with ``Q_{T+1} = y``, nested regressions ``Q_t`` and stage propensities
    ``pi_k``, all computed exactly from the finite support.
    """
    if not is_discrete(dist):
        raise InvalidParameter("dtr_eif needs a finite support")
    regime = [float(r) for r in regime]
    if len(regime) != T:
        raise InvalidParameter("regime length must equal T")
    atoms, probs = dist.support()
    if atoms.shape[1] != 2 * T + 1:
        raise LayoutError(f"expected {2 * T + 1} coordinates per atom, got {atoms.shape[1]}")
    xcols = [[2 * t] for t in range(T)]
    acols = [2 * t + 1 for t in range(T)]
    M, N, Ysum = history_tables(atoms, probs, regime, xcols, acols, T * 2)
    if not any(v != 0.0 for v in N[T].values()):
        raise DegenerateError(f"regime {regime} has zero probability")
    # nested regressions Q_t keyed by covariate history through stage t
    Q = [dict() for _ in range(T + 2)]
    Q[T] = {h: Ysum[h] / n for h, n in N[T].items() if n != 0.0}
    for t in range(T - 1, -1, -1):
        acc = {}
        for hist, m in M[t + 1].items():
            acc[hist[:t]] = acc.get(hist[:t], 0.0) + Q[t + 1].get(hist, 0.0) * m
        Q[t] = {h: s / N[t][h] for h, s in acc.items() if N[t].get(h, 0.0) != 0.0}
    psi = Q[0][()]

    o = np.asarray(o, dtype=float).reshape(-1)
    if len(o) != 2 * T + 1:
        raise LayoutError(f"observation needs {2 * T + 1} coordinates")
    xs = [o[2 * t] for t in range(T)]
    acts = [o[2 * t + 1] for t in range(T)]
    y = o[-1]

    def q(t, hist):
        if hist not in Q[t]:
            raise SupportError(f"history {hist} has zero on-regime probability")
        return Q[t][hist]

    phi = q(1, tuple(xs[:1])) - psi
    weight = 1.0
    for t in range(1, T + 1):
        if acts[t - 1] != regime[t - 1]:
            break
        hist = tuple(xs[:t])
        m = M[t].get(hist, 0.0)
        n = N[t].get(hist, 0.0)
        if m == 0.0 or n == 0.0:
            raise SupportError(f"history {hist} has zero on-regime probability")
        weight = weight * m / n
        nxt = y if t == T else q(t + 1, tuple(xs[: t + 1]))
        phi += weight * (nxt - q(t, hist))
    return float(phi)


# ---------------------------------------------------------------------------
# tabular MDPs
# ---------------------------------------------------------------------------


def mdp_influence(sol, mdp, o, d=None) -> float:
    """Closed-form derivative of the optimal policy value toward ``(s, a, s')``.

    ``(1 - gamma) V(s) + mu(s, a) / d(s, a) * (r(s, a) + gamma V(s') - V(s)) - psi``.
    The residual term enters with a plus sign: differentiating the dual
    program's flow constraints gives ``gamma mu/d (V(s') - (P V)(s, a))``,
    which complementary slackness turns into the Bellman residual.
    """
    s, a, s2 = (int(v) for v in o)
    d = mdp.d if d is None else d
    if d[s, a] <= 0:
        raise SupportError(f"state-action pair ({s}, {a}) has zero occupancy")
    V = sol.V
    resid = mdp.r[s, a] + mdp.gamma * V[s2] - V[s]
    return float((1 - mdp.gamma) * V[s] + sol.mu[s, a] / d[s, a] * resid - sol.objective)


def envelope_influence(sol, mdp, o, d=None) -> float:
    """Derivative of the optimal value valid with extra occupancy constraints.

    Only the flow constraints and the initial distribution move with the
    perturbation, so the envelope theorem gives
    ``(1 - gamma)(V(s) - mu0' V) + gamma mu(s, a)/d(s, a) (V(s') - (P V)(s, a))``
    with ``V`` the multipliers of the flow constraints.
    """
    s, a, s2 = (int(v) for v in o)
    d = mdp.d if d is None else d
    if d[s, a] <= 0:
        raise SupportError(f"state-action pair ({s}, {a}) has zero occupancy")
    V = sol.V
    g = mdp.gamma
    return float(
        (1 - g) * (V[s] - mdp.mu0 @ V) + g * sol.mu[s, a] / d[s, a] * (V[s2] - mdp.P[s, a] @ V)
    )


def mdp_influence_means(sol, mdp, influence=mdp_influence) -> dict:
    """Mean of the closed-form influence under two weightings of ``s``.

    ``"mu0"`` averages the ``(1 - gamma) V(s)`` part under the initial
    distribution and the residual part under the data joint; ``"data"``
    averages everything under the data joint ``d(s, a) P(s' | s, a)``.
    """
    joint = mdp.d[:, :, None] * mdp.P
    total = 0.0
    for s in range(mdp.nS):
        for a in range(mdp.nA):
            for s2 in range(mdp.nS):
                if joint[s, a, s2] > 0:
                    total += joint[s, a, s2] * influence(sol, mdp, (s, a, s2))
    state_term_data = (1 - mdp.gamma) * (mdp.d.sum(axis=1) @ sol.V)
    state_term_mu0 = (1 - mdp.gamma) * (mdp.mu0 @ sol.V)
    return {"data": float(total), "mu0": float(total - state_term_data + state_term_mu0)}
