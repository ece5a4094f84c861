import itertools

import numpy as np
import pytest

from empgateaux.errors import LayoutError, SupportError
from empgateaux.experiments import discrete_cube, dtr_balanced, dtr_discrete, random_tabulated
from empgateaux.functionals import ConstantFunctional, DtrValue, MeanPotentialOutcome, mean_potential_outcome
from empgateaux.measures import DiscreteDistribution
from empgateaux.mdp import bellman_residual_mean, fd_derivative, random_mdp, single_state_mdp, solve_policy_lp
from empgateaux.oracle import (
    Nuisances,
    aipw_score,
    dtr_eif,
    envelope_influence,
    exact_derivative_discrete,
    mdp_influence,
    mdp_influence_means,
)

DISCRETE = [discrete_cube()] + [random_tabulated(s) for s in range(5)]


def test_aipw_cube_examples(cube):
    nuis = Nuisances.induced(cube)
    assert nuis.source == "exact"
    assert aipw_score(nuis, 0.5, (0.0, 1.0, 1.0)) == 1.0
    for x, y in itertools.product((0.0, 1.0), repeat=2):
        assert aipw_score(nuis, 0.5, (x, 0.0, y)) == nuis.mu(np.array([x])) - 0.5


def test_aipw_mean_zero_when_outcome_is_regression():
    mu = lambda x: 1.0 + 2.0 * float(x[0])  # noqa: E731
    e = lambda x: 0.25 + 0.5 * float(x[0])  # noqa: E731
    nuis = Nuisances(mu, e)
    xs = np.array([0.0, 1.0])
    psi = float(np.mean([mu([x]) for x in xs]))
    total = 0.0
    for x in xs:
        for a in (0.0, 1.0):
            pa = e([x]) if a == 1 else 1 - e([x])
            total += 0.5 * pa * aipw_score(nuis, psi, (x, a, mu([x])))
    assert total == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("o,expected", [((0.0, 1.0, 1.0), 1.0), ((0.0, 1.0, 0.0), -1.0)])
def test_exact_derivative_examples(cube, o, expected):
    assert exact_derivative_discrete(MeanPotentialOutcome(), cube, o) == pytest.approx(expected, abs=1e-15)


def test_exact_derivative_constant_and_layout(cube):
    assert exact_derivative_discrete(ConstantFunctional(2.0), cube, (0.0, 1.0, 1.0)) == 0.0
    with pytest.raises(LayoutError):
        exact_derivative_discrete(MeanPotentialOutcome(), cube, (0.0, 1.0))


@pytest.mark.parametrize("k", range(len(DISCRETE)))
def test_aipw_equals_exact_derivative(k):
    dist = DISCRETE[k]
    fnl = MeanPotentialOutcome()
    psi = fnl(dist)
    nuis = Nuisances.induced(dist)
    for o in dist.atoms:
        assert exact_derivative_discrete(fnl, dist, o) == pytest.approx(aipw_score(nuis, psi, o), abs=1e-8)


@pytest.mark.parametrize("k", range(len(DISCRETE)))
def test_influence_mean_zero(k):
    dist = DISCRETE[k]
    atoms, probs = dist.support()
    total = sum(p * exact_derivative_discrete(MeanPotentialOutcome(), dist, o) for o, p in zip(atoms, probs))
    assert total == pytest.approx(0.0, abs=1e-9)


def test_off_support_observation(cube):
    # a point outside the support still has a well-defined derivative
    fnl = MeanPotentialOutcome()
    nuis = Nuisances.induced(cube)
    o = (0.0, 1.0, 3.0)
    assert exact_derivative_discrete(fnl, cube, o) == pytest.approx(aipw_score(nuis, 0.5, o), abs=1e-12)


def test_dtr_eif_t1_is_aipw():
    dist = random_tabulated(3)
    nuis = Nuisances.induced(dist)
    psi = mean_potential_outcome(dist, 1.0)
    for o in dist.atoms:
        assert dtr_eif(dist, [1.0], 1, o) == pytest.approx(aipw_score(nuis, psi, o), abs=1e-12)


@pytest.mark.parametrize("dist", [dtr_balanced(2), dtr_discrete(2, 0), dtr_discrete(2, 1)])
def test_dtr_eif_matches_exact_and_is_mean_zero(dist):
    regime = (1.0, 0.0)
    fnl = DtrValue(regime, 2)
    atoms, probs = dist.support()
    total = 0.0
    for o, p in zip(atoms, probs):
        eif = dtr_eif(dist, regime, 2, o)
        assert eif == pytest.approx(exact_derivative_discrete(fnl, dist, o), abs=1e-6)
        total += p * eif
    assert total == pytest.approx(0.0, abs=1e-9)


def test_dtr_eif_unseen_history():
    dist = DiscreteDistribution(np.array([[0.0, 1.0, 0.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0, 0.0]]), [0.5, 0.5])
    with pytest.raises(SupportError):
        dtr_eif(dist, (1.0, 1.0), 2, (1.0, 1.0, 0.0, 1.0, 0.0))


def test_mdp_influence_single_state():
    for r, g in ((1.0, 0.9), (-2.0, 0.3)):
        mdp = single_state_mdp(r, g)
        sol = solve_policy_lp(mdp)
        assert mdp_influence(sol, mdp, (0, 0, 0)) == pytest.approx(0.0, abs=1e-12)


def test_mdp_influence_off_policy_action():
    mdp = random_mdp(4, 3, seed=11)
    sol = solve_policy_lp(mdp)
    s = 2
    a = next(a for a in range(mdp.nA) if sol.mu[s, a] == 0.0)
    val = mdp_influence(sol, mdp, (s, a, 1))
    assert val == pytest.approx((1 - mdp.gamma) * sol.V[s] - sol.objective, abs=1e-12)


def test_mdp_influence_zero_occupancy():
    mdp = random_mdp(3, 2, seed=1)
    d = mdp.d.copy()
    d[0, 1] = 0.0
    with pytest.raises(SupportError):
        mdp_influence(solve_policy_lp(mdp), mdp, (0, 1, 0), d=d)


def test_mdp_influence_matches_fd_on_random_mdp():
    mdp = random_mdp(5, 3, seed=4)
    sol = solve_policy_lp(mdp)
    worst = max(
        abs(fd_derivative(mdp, o, 1e-6, base=sol).value - mdp_influence(sol, mdp, o))
        for o in np.argwhere(mdp.joint > 0)
    )
    assert worst <= 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_bellman_residual_identity_and_means(seed):
    mdp = random_mdp(6, 3, seed=seed)
    sol = solve_policy_lp(mdp)
    assert bellman_residual_mean(sol, mdp) == pytest.approx(0.0, abs=1e-9)
    means = mdp_influence_means(sol, mdp)
    assert means["mu0"] == pytest.approx(0.0, abs=1e-9)
    env = mdp_influence_means(sol, mdp, envelope_influence)
    assert env["mu0"] == pytest.approx(0.0, abs=1e-9)


def test_envelope_equals_closed_form_without_constraints():
    mdp = random_mdp(5, 2, seed=9)
    sol = solve_policy_lp(mdp)
    for o in np.argwhere(mdp.joint > 0):
        assert envelope_influence(sol, mdp, o) == pytest.approx(mdp_influence(sol, mdp, o), abs=1e-9)
