"""Tabular infinite-horizon MDPs through the occupancy linear program.

The optimal value is computed from the dual (occupancy) program

    max  sum_{s,a} mu(s,a) r(s,a)
    s.t. sum_a mu(s',a) - gamma sum_{s,a} P(s'|s,a) mu(s,a) = (1-gamma) mu0(s')
         mu >= 0,  plus optional linear constraints on mu,

solved by a dense two-phase simplex with Bland's rule.  The value function
is read off as the multipliers of the flow constraints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InvalidInput, InvalidParameter, SupportError, UnboundedError
from .gateaux import GateauxReport, _map, check_eps

PIVOT_TOL = 1e-11
DEGENERACY_TOL = 1e-10


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TabularMDP:
    """``P[s, a, s']``, rewards ``r[s, a]``, discount, initial distribution
    and the data occupancy ``d[s, a]`` (uniform when omitted)."""

    P: np.ndarray
    r: np.ndarray
    gamma: float
    mu0: np.ndarray
    d: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        r = np.asarray(self.r, dtype=float)
        mu0 = np.asarray(self.mu0, dtype=float).reshape(-1)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidInput(f"P must have shape (nS, nA, nS), got {P.shape}")
        nS, nA = P.shape[:2]
        if r.shape != (nS, nA):
            raise InvalidInput(f"r must have shape ({nS}, {nA}), got {r.shape}")
        if mu0.shape != (nS,):
            raise InvalidInput("mu0 length must equal nS")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidParameter(f"gamma must lie in (0, 1), got {self.gamma}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise InvalidInput("each row of P must be a probability vector")
        if np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > 1e-12:
            raise InvalidInput("mu0 must be a probability vector")
        d = np.full((nS, nA), 1.0 / (nS * nA)) if self.d is None else np.asarray(self.d, dtype=float)
        if d.shape != (nS, nA) or np.any(d < 0) or abs(d.sum() - 1.0) > 1e-12:
            raise InvalidInput("d must be a probability matrix of shape (nS, nA)")
        for name, v in (("P", P), ("r", r), ("mu0", mu0), ("d", d)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def nS(self) -> int:
        return self.P.shape[0]

    @property
    def nA(self) -> int:
        return self.P.shape[1]

    @property
    def joint(self) -> np.ndarray:
        """``p(s, a, s') = d(s, a) P(s' | s, a)``."""
        return self.d[:, :, None] * self.P

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "nS": self.nS,
            "nA": self.nA,
            "gamma": self.gamma,
            "P": self.P.tolist(),
            "r": self.r.tolist(),
            "mu0": self.mu0.tolist(),
            "d": self.d.tolist(),
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "TabularMDP":
        try:
            P = np.asarray(spec["P"], dtype=float)
            mdp = cls(P=P, r=spec["r"], gamma=spec["gamma"], mu0=spec["mu0"], d=spec.get("d"))
        except KeyError as exc:
            raise InvalidInput(f"MDP spec is missing {exc}") from None
        for key in ("nS", "nA"):
            if key in spec and spec[key] != getattr(mdp, key):
                raise InvalidInput(f"{key}={spec[key]} disagrees with the P tensor")
        return mdp


def load_mdp(path) -> TabularMDP:
    try:
        with open(path) as fh:
            return TabularMDP.from_dict(json.load(fh))
    except FileNotFoundError:
        raise InvalidInput(f"no such file: {path}") from None


def random_mdp(nS: int, nA: int, gamma: float = 0.9, seed=0, d_mix: float = 0.0) -> TabularMDP:
    """Dense random MDP with full-support ``mu0`` and ``d``.

    ``d`` is uniform over pairs, blended with weight ``d_mix`` toward a
    Dirichlet draw.  Less uniform coverage means larger ``mu / d`` ratios
    and more curvature along the perturbation path.
    """
    if not 0.0 <= d_mix < 1.0:
        raise InvalidParameter(f"d_mix must lie in [0, 1), got {d_mix}")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(nS), size=(nS, nA))
    P = P / P.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(nS, nA))
    mu0 = rng.dirichlet(np.ones(nS))
    mu0 = mu0 / mu0.sum()
    d = d_mix * rng.dirichlet(np.ones(nS * nA)).reshape(nS, nA) + (1.0 - d_mix) / (nS * nA)
    d = d / d.sum()
    return TabularMDP(P=P, r=r, gamma=gamma, mu0=mu0, d=d)


def single_state_mdp(r: float = 1.0, gamma: float = 0.9) -> TabularMDP:
    return TabularMDP(P=np.ones((1, 1, 1)), r=[[r]], gamma=gamma, mu0=[1.0], d=[[1.0]])


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

_SENSES = ("<=", "==", ">=")


@dataclass(frozen=True)
class LinearConstraintSet:
    """Rows ``coef . vec(mu) (sense) rhs`` over occupancy variables
    flattened as ``s * nA + a``."""

    rows: np.ndarray
    senses: tuple
    bounds: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1)
        senses = tuple(str(s) for s in self.senses)
        if len(senses) != rows.shape[0] or len(bounds) != rows.shape[0]:
            raise InvalidInput("constraint rows, senses and bounds must have equal length")
        if any(s not in _SENSES for s in senses):
            raise InvalidInput(f"constraint senses must be among {_SENSES}")
        if not np.all(np.isfinite(rows)) or not np.all(np.isfinite(bounds)):
            raise InvalidInput("constraint coefficients must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "bounds", bounds)

    def __len__(self):
        return len(self.senses)

    @classmethod
    def state_cap(cls, mdp: TabularMDP, state: int, bound: float) -> "LinearConstraintSet":
        """``sum_a mu(state, a) <= bound``."""
        row = np.zeros((mdp.nS, mdp.nA))
        row[state, :] = 1.0
        return cls(row.reshape(1, -1), ("<=",), [bound])

    def to_dict(self, nA: int | None = None) -> dict:
        out = []
        for row, s, b in zip(self.rows, self.senses, self.bounds):
            coef = row.reshape(-1, nA).tolist() if nA else row.tolist()
            out.append({"coef": coef, "sense": s, "rhs": float(b)})
        return {"schema_version": 1, "rows": out}

    @classmethod
    def from_dict(cls, spec: dict, mdp: TabularMDP) -> "LinearConstraintSet":
        rows, senses, bounds = [], [], []
        for item in spec.get("rows", []):
            coef = np.asarray(item["coef"], dtype=float).reshape(-1)
            if coef.size != mdp.nS * mdp.nA:
                raise InvalidInput(f"constraint row has {coef.size} coefficients, expected {mdp.nS * mdp.nA}")
            rows.append(coef)
            senses.append(item.get("sense", "<="))
            bounds.append(item["rhs"])
        if not rows:
            raise InvalidInput("constraint file has no rows")
        return cls(np.array(rows), tuple(senses), bounds)


def load_constraints(path, mdp: TabularMDP) -> LinearConstraintSet:
    try:
        with open(path) as fh:
            return LinearConstraintSet.from_dict(json.load(fh), mdp)
    except FileNotFoundError:
        raise InvalidInput(f"no such file: {path}") from None


# ---------------------------------------------------------------------------
# simplex
# ---------------------------------------------------------------------------


@dataclass
class SimplexResult:
    x: np.ndarray
    y: np.ndarray
    basis: tuple
    objective: float
    reduced_costs: np.ndarray
    iterations: int
    degenerate: bool


def _run_bland(T, basis, cost, max_iter):
    """Pivot a canonical tableau ``[B^-1 A | B^-1 b]`` to optimality for
    ``max cost . x`` using Bland's smallest-index rule."""
    ncol = T.shape[1] - 1
    it = 0
    while True:
        cb = cost[basis]
        rc = cost - cb @ T[:, :ncol]
        rc[basis] = 0.0
        entering = np.flatnonzero(rc > PIVOT_TOL)
        if entering.size == 0:
            return it
        j = int(entering[0])
        col = T[:, j]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            raise UnboundedError("linear program is unbounded")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        i = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, i, j)
        basis[i] = j
        it += 1
        if it > max_iter:
            raise InfeasibleError("simplex iteration limit reached")


def _pivot(T, i, j):
    T[i] /= T[i, j]
    for k in range(T.shape[0]):
        if k != i and T[k, j] != 0.0:
            T[k] -= T[k, j] * T[i]


def simplex(c, A, b, max_iter: int = 10_000) -> SimplexResult:
    """``max c.x  s.t.  A x = b, x >= 0`` by two-phase simplex (Bland's rule).

    The returned primal/dual pair is recomputed from the optimal basis by
    direct linear solves, so it does not inherit tableau round-off.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign
    # phase 1 on [A I | b]
    T = np.hstack([A, np.eye(m), b[:, None]])
    basis = list(range(n, n + m))
    cost1 = np.concatenate([np.zeros(n), -np.ones(m)])
    it = _run_bland(T, basis, cost1, max_iter)
    if T[:, -1] @ (np.asarray(basis) >= n) > 1e-9 * max(1.0, np.abs(b).max()):
        raise InfeasibleError("linear program is infeasible")
    # drive zero-level artificials out; drop redundant rows
    keep = list(range(m))
    for i in range(m):
        if basis[i] >= n:
            cand = np.flatnonzero(np.abs(T[i, :n]) > 1e-9)
            if cand.size:
                _pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
            else:
                keep.remove(i)
    T = np.hstack([T[keep][:, :n], T[keep][:, -1:]])
    basis = [basis[i] for i in keep]
    it += _run_bland(T, basis, c.copy(), max_iter)
    B = A[keep][:, basis]
    xb = np.linalg.solve(B, b[keep])
    yk = np.linalg.solve(B.T, c[basis])
    x = np.zeros(n)
    x[basis] = xb
    y = np.zeros(m)
    y[keep] = yk
    y = y * sign
    rc = c - A.T @ (y * sign)
    nonbasic = np.setdiff1d(np.arange(n), basis)
    degenerate = bool(np.any(np.abs(rc[nonbasic]) < DEGENERACY_TOL) or np.any(xb < DEGENERACY_TOL))
    return SimplexResult(
        x=x, y=y, basis=tuple(sorted(int(v) for v in basis)), objective=float(c @ x),
        reduced_costs=rc, iterations=it, degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# policy LP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LPSolution:
    V: np.ndarray
    mu: np.ndarray
    basis: tuple
    objective: float
    degenerate: bool = False
    constraint_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    status: str = "optimal"

    @property
    def policy(self) -> np.ndarray:
        return np.argmax(self.mu, axis=1)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "V": self.V.tolist(),
            "mu": self.mu.tolist(),
            "basis": list(self.basis),
            "policy": self.policy.tolist(),
            "degenerate": self.degenerate,
            "constraint_duals": self.constraint_duals.tolist(),
            "status": self.status,
        }


def _flow_matrix(mdp: TabularMDP) -> np.ndarray:
    nS, nA = mdp.nS, mdp.nA
    A = np.zeros((nS, nS * nA))
    for s in range(nS):
        for a in range(nA):
            col = s * nA + a
            A[:, col] -= mdp.gamma * mdp.P[s, a]
            A[s, col] += 1.0
    return A


def solve_policy_lp(mdp: TabularMDP, constraints: LinearConstraintSet | None = None) -> LPSolution:
    """Optimal occupancy, value function and basis of the (constrained)
    policy linear program."""
    nS, nA = mdp.nS, mdp.nA
    nv = nS * nA
    A = _flow_matrix(mdp)
    b = (1.0 - mdp.gamma) * mdp.mu0
    c = mdp.r.reshape(-1)
    k = 0 if constraints is None else len(constraints)
    if k:
        slack_cols = []
        for i, s in enumerate(constraints.senses):
            if s != "==":
                col = np.zeros(k)
                col[i] = 1.0 if s == "<=" else -1.0
                slack_cols.append(col)
        S = np.array(slack_cols).T if slack_cols else np.zeros((k, 0))
        A = np.block([[A, np.zeros((nS, S.shape[1]))], [constraints.rows, S]])
        b = np.concatenate([b, constraints.bounds])
        c = np.concatenate([c, np.zeros(S.shape[1])])
    res = simplex(c, A, b)
    return LPSolution(
        V=res.y[:nS],
        mu=res.x[:nv].reshape(nS, nA),
        basis=res.basis,
        objective=res.objective,
        degenerate=res.degenerate,
        constraint_duals=res.y[nS:],
    )


def duality_residuals(sol: LPSolution, mdp: TabularMDP) -> dict:
    """Primal violation, dual violation and duality gap of an unconstrained
    solution (all zero up to round-off at an optimum)."""
    g = mdp.gamma
    PV = mdp.P @ sol.V
    slack = sol.V[:, None] - g * PV - mdp.r
    flow = sol.mu.sum(axis=1) - g * np.einsum("sa,sat->t", sol.mu, mdp.P) - (1 - g) * mdp.mu0
    return {
        "primal": float(max(0.0, -slack.min())),
        "dual": float(max(np.abs(flow).max(), max(0.0, -sol.mu.min()))),
        "gap": float(abs((1 - g) * mdp.mu0 @ sol.V - np.sum(sol.mu * mdp.r))),
    }


def bellman_residual_mean(sol: LPSolution, mdp: TabularMDP) -> float:
    """``sum_{s,a} mu(s,a) (r + gamma P V - V)(s,a)``."""
    resid = mdp.r + mdp.gamma * (mdp.P @ sol.V) - sol.V[:, None]
    return float(math.fsum((sol.mu * resid).ravel()))


@dataclass(frozen=True)
class VIResult:
    V: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float


def value_iteration(
    mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 1_000_000, gamma: float | None = None
) -> VIResult:
    """Bellman optimality iteration started from ``max_a r(s,a) / (1 - gamma)``.

    Stops once successive iterates differ by at most ``tol`` in sup norm.
    ``gamma`` overrides the model's discount and may be zero.
    """
    if not tol > 0:
        raise InvalidParameter("tol must be positive")
    g = mdp.gamma if gamma is None else float(gamma)
    if not 0.0 <= g < 1.0:
        raise InvalidParameter(f"gamma must lie in [0, 1), got {g}")
    V = mdp.r.max(axis=1) / (1.0 - g)
    for it in range(1, max_iter + 1):
        Q = mdp.r + g * (mdp.P @ V)
        V_new = Q.max(axis=1)
        res = float(np.max(np.abs(V_new - V)))
        V = V_new
        if res <= tol:
            break
    Q = mdp.r + g * (mdp.P @ V)
    return VIResult(V=V, policy=Q.argmax(axis=1), iterations=it, residual=float(np.max(np.abs(Q.max(axis=1) - V))))


# ---------------------------------------------------------------------------
# perturbation and derivatives
# ---------------------------------------------------------------------------


def _obs(mdp, o):
    try:
        s, a, s2 = (int(v) for v in o)
    except (TypeError, ValueError):
        raise InvalidInput(f"observation must be (s, a, s'), got {o!r}") from None
    if not (0 <= s < mdp.nS and 0 <= a < mdp.nA and 0 <= s2 < mdp.nS):
        raise InvalidInput(f"observation {o!r} outside the state/action spaces")
    return s, a, s2


def perturb_mdp(mdp: TabularMDP, o, eps: float) -> TabularMDP:
    """Mix the data joint and initial distribution toward ``o = (s, a, s')``.

    ``P_eps(.|s,a) = ((1-eps) p(s,a,.) + eps 1{o}) / ((1-eps) d(s,a) + eps 1{(s,a)})``.
    """
    if not 0.0 <= eps < 1.0:
        raise InvalidParameter(f"eps must lie in [0, 1), got {eps!r}")
    s, a, s2 = _obs(mdp, o)
    if eps == 0.0:
        return mdp
    joint = (1.0 - eps) * mdp.joint
    joint[s, a, s2] += eps
    d = (1.0 - eps) * mdp.d
    d[s, a] += eps
    P = mdp.P.copy()
    P[s, a] = joint[s, a] / d[s, a]
    P[s, a] /= P[s, a].sum()
    mu0 = (1.0 - eps) * mdp.mu0
    mu0[s] += eps
    return TabularMDP(P=P, r=mdp.r, gamma=mdp.gamma, mu0=mu0 / mu0.sum(), d=d / d.sum())


@dataclass(frozen=True)
class FdResult:
    value: float
    basis_stable: bool
    objective: float
    perturbed_objective: float


def fd_derivative(
    mdp: TabularMDP,
    o,
    eps: float = 1e-6,
    constraints: LinearConstraintSet | None = None,
    base: LPSolution | None = None,
) -> FdResult:
    """Forward difference of the optimal value toward ``o``.

    Only black-box LP solves are used.  ``basis_stable`` reports whether the
    optimal basis survived the perturbation.
    """
    eps = check_eps(eps)
    base = solve_policy_lp(mdp, constraints) if base is None else base
    pert = solve_policy_lp(perturb_mdp(mdp, o, eps), constraints)
    return FdResult(
        value=(pert.objective - base.objective) / eps,
        basis_stable=pert.basis == base.basis,
        objective=base.objective,
        perturbed_objective=pert.objective,
    )


def estimate_from_triples(mdp: TabularMDP, triples) -> TabularMDP:
    """Plug-in model: empirical occupancy and transition frequencies.

    Rewards, discount and ``mu0`` are taken from ``mdp``; rows of unseen
    state-action pairs keep ``mdp``'s transitions and get zero occupancy.
    """
    tr = np.asarray(triples, dtype=int).reshape(-1, 3)
    if len(tr) == 0:
        raise InvalidInput("no triples")
    for o in tr:
        _obs(mdp, o)
    counts = np.zeros((mdp.nS, mdp.nA, mdp.nS))
    np.add.at(counts, (tr[:, 0], tr[:, 1], tr[:, 2]), 1.0)
    sa = counts.sum(axis=2)
    P = mdp.P.copy()
    seen = sa > 0
    P[seen] = counts[seen] / sa[seen][:, None]
    return TabularMDP(P=P, r=mdp.r, gamma=mdp.gamma, mu0=mdp.mu0, d=sa / sa.sum())


def one_step_policy_value(
    mdp: TabularMDP,
    triples,
    eps: float = 1e-6,
    constraints: LinearConstraintSet | None = None,
    estimate: bool = True,
    threads: int = 1,
) -> GateauxReport:
    """Plug-in optimal value plus the mean finite-difference derivative over
    ``triples``.  With ``estimate`` the model's occupancy and transitions are
    first replaced by their empirical versions from ``triples``."""
    eps = check_eps(eps)
    tr = np.asarray(triples, dtype=int).reshape(-1, 3)
    model = estimate_from_triples(mdp, tr) if estimate else mdp
    unseen = sorted({(int(s), int(a)) for s, a, _ in tr if model.d[s, a] <= 0})
    if unseen:
        raise SupportError(f"triples visit state-action pairs with zero occupancy: {unseen}")
    base = solve_policy_lp(model, constraints)

    def work(i):
        r = fd_derivative(model, tr[i], eps, constraints, base)
        return r.value, r.basis_stable

    results = _map(work, range(len(tr)), threads)
    phi = np.array([v for v, _ in results])
    unstable = [i for i, (_, ok) in enumerate(results) if not ok]
    return GateauxReport(
        phi=phi,
        plugin=base.objective,
        one_step=base.objective + math.fsum(phi) / len(phi),
        eps=eps,
        lam=None,
        scheme="forward",
        n=len(tr),
        basis_changes=unstable,
        extra={"degenerate": base.degenerate},
    )


def sample_triples(mdp: TabularMDP, n: int, seed=0) -> np.ndarray:
    """``n`` draws of ``(s, a, s')`` from ``d(s,a) P(s'|s,a)``."""
    rng = np.random.default_rng(seed)
    flat = mdp.joint.reshape(-1)
    idx = rng.choice(flat.size, size=n, p=flat / flat.sum())
    s, rem = np.divmod(idx, mdp.nA * mdp.nS)
    a, s2 = np.divmod(rem, mdp.nS)
    return np.column_stack([s, a, s2])
