import json

import numpy as np
import pytest

from empgateaux.errors import InfeasibleError, InvalidInput, InvalidParameter, SupportError, UnboundedError
from empgateaux.mdp import (
    LinearConstraintSet,
    TabularMDP,
    duality_residuals,
    estimate_from_triples,
    fd_derivative,
    load_constraints,
    load_mdp,
    one_step_policy_value,
    perturb_mdp,
    random_mdp,
    sample_triples,
    simplex,
    single_state_mdp,
    solve_policy_lp,
    value_iteration,
)
from empgateaux.oracle import envelope_influence, mdp_influence


def chain_mdp():
    """Two states, one action, 0 -> 1 -> 1, rewards (0, 1)."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 1] = 1.0
    return TabularMDP(P=P, r=[[0.0], [1.0]], gamma=0.5, mu0=[0.5, 0.5])


def test_simplex_small_lp():
    # max x + 2y  s.t.  x + y + s1 = 4, x + 3y + s2 = 6
    res = simplex([1, 2, 0, 0], [[1, 1, 1, 0], [1, 3, 0, 1]], [4, 6])
    assert res.objective == pytest.approx(5.0, abs=1e-12)
    assert np.allclose(res.x[:2], [3.0, 1.0])
    assert res.basis == (0, 1)


def test_simplex_infeasible_and_unbounded():
    with pytest.raises(InfeasibleError):
        simplex([1, 0], [[1, 1], [1, 1]], [1, 2])
    with pytest.raises(UnboundedError):
        simplex([1, 0], [[1, -1]], [1])


def test_single_state_lp():
    mdp = single_state_mdp(1.0, 0.9)
    sol = solve_policy_lp(mdp)
    assert sol.objective == pytest.approx(1.0, abs=1e-12)
    assert sol.V[0] == pytest.approx(10.0, abs=1e-12)


def test_chain_matches_value_iteration():
    mdp = chain_mdp()
    sol = solve_policy_lp(mdp)
    vi = value_iteration(mdp, tol=1e-13)
    assert np.max(np.abs(sol.V - vi.V)) <= 1e-10
    assert np.allclose(sol.V, [1.0, 2.0])


def test_value_iteration_examples():
    mdp = single_state_mdp(2.0, 0.8)
    vi = value_iteration(mdp)
    assert vi.iterations == 1 and vi.V[0] == pytest.approx(10.0)
    m = random_mdp(4, 3, seed=2)
    assert np.array_equal(value_iteration(m, gamma=0.0).V, m.r.max(axis=1))
    with pytest.raises(InvalidParameter):
        value_iteration(m, tol=0.0)


@pytest.mark.parametrize("seed", range(10))
def test_duality_and_vi_agreement(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(int(rng.integers(2, 11)), int(rng.integers(1, 5)), seed=seed)
    sol = solve_policy_lp(mdp)
    res = duality_residuals(sol, mdp)
    assert max(res.values()) <= 1e-9
    assert sol.mu.sum() == pytest.approx(1.0, abs=1e-9)
    tol = 1e-11
    assert np.max(np.abs(sol.V - value_iteration(mdp, tol=tol).V)) <= 1e-6


def test_binding_constraint_lowers_objective():
    mdp = random_mdp(5, 3, seed=8)
    sol = solve_policy_lp(mdp)
    s = int(np.argmax(sol.mu.sum(axis=1)))
    cap = LinearConstraintSet.state_cap(mdp, s, 0.95 * sol.mu[s].sum())
    con = solve_policy_lp(mdp, cap)
    assert con.objective < sol.objective
    assert con.mu[s].sum() == pytest.approx(0.95 * sol.mu[s].sum(), abs=1e-10)


def test_infeasible_constraints():
    mdp = random_mdp(4, 2, seed=1)
    cap = LinearConstraintSet(np.ones((1, 8)), ("<=",), [0.5])
    with pytest.raises(InfeasibleError):
        solve_policy_lp(mdp, cap)


def test_perturb_mdp_examples():
    mdp = random_mdp(5, 3, seed=3)
    assert perturb_mdp(mdp, (0, 1, 2), 0.0) is mdp
    one = single_state_mdp()
    pert = perturb_mdp(one, (0, 0, 0), 0.3)
    assert np.array_equal(pert.P, one.P) and np.array_equal(pert.mu0, one.mu0)
    for o in [(0, 0, 0), (4, 2, 1), (2, 1, 3)]:
        p = perturb_mdp(mdp, o, 0.2)
        assert np.max(np.abs(p.P.sum(axis=2) - 1.0)) <= 1e-14
    with pytest.raises(InvalidParameter):
        perturb_mdp(mdp, (0, 0, 0), 1.0)
    with pytest.raises(InvalidInput):
        perturb_mdp(mdp, (0, 5, 0), 0.1)


def test_fd_single_state_is_zero():
    mdp = single_state_mdp()
    for eps in (1e-2, 1e-6):
        assert fd_derivative(mdp, (0, 0, 0), eps).value == 0.0


def test_fd_matches_closed_form_with_slope_one():
    mdp = random_mdp(5, 3, seed=6)
    sol = solve_policy_lp(mdp)
    grid = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    s = 0
    o = (s, int(sol.policy[s]), 1)
    exact = mdp_influence(sol, mdp, o)
    runs = [fd_derivative(mdp, o, e, base=sol) for e in grid]
    errs = [abs(r.value - exact) for r in runs]
    assert errs[-1] <= 1e-4
    keep = [i for i, r in enumerate(runs) if r.basis_stable]
    k = np.polyfit(np.log(np.array(grid)[keep]), np.log(np.array(errs)[keep]), 1)[0]
    assert 0.9 <= k <= 1.1


def test_nonbinding_constraint_reproduces_unconstrained():
    mdp = random_mdp(5, 3, seed=12)
    sol = solve_policy_lp(mdp)
    loose = LinearConstraintSet.state_cap(mdp, 0, 0.5 * (1.0 + sol.mu[0].sum()))
    csol = solve_policy_lp(mdp, loose)
    for o in [(0, int(sol.policy[0]), 2), (3, 1, 0)]:
        a = fd_derivative(mdp, o, 1e-6, base=sol).value
        b = fd_derivative(mdp, o, 1e-6, loose, base=csol).value
        assert b == pytest.approx(a, abs=1e-8)
        assert envelope_influence(csol, mdp, o) == pytest.approx(mdp_influence(sol, mdp, o), abs=1e-9)


def test_binding_constraint_envelope_close_to_fd():
    mdp = random_mdp(5, 3, seed=8)
    sol = solve_policy_lp(mdp)
    s = int(np.argmax(sol.mu.sum(axis=1)))
    cap = LinearConstraintSet.state_cap(mdp, s, 0.95 * sol.mu[s].sum())
    csol = solve_policy_lp(mdp, cap)
    for o in np.argwhere(mdp.joint > 0)[::7]:
        fd = fd_derivative(mdp, o, 1e-6, cap, base=csol)
        if fd.basis_stable:
            assert fd.value == pytest.approx(envelope_influence(csol, mdp, o), abs=1e-4)


def test_one_step_policy_value_examples():
    one = single_state_mdp()
    rep = one_step_policy_value(one, [(0, 0, 0)] * 5, 1e-6)
    assert rep.one_step == rep.plugin
    mdp = random_mdp(4, 2, seed=5)
    tr = sample_triples(mdp, 400, seed=1)
    a = one_step_policy_value(mdp, tr, 1e-6)
    sol = solve_policy_lp(estimate_from_triples(mdp, tr))
    loose = LinearConstraintSet.state_cap(mdp, 0, 0.5 * (1.0 + sol.mu[0].sum()))
    b = one_step_policy_value(mdp, tr, 1e-6, loose)
    assert b.one_step == pytest.approx(a.one_step, abs=1e-8)
    assert a.basis_changes == []


def test_one_step_policy_value_adjustment_mean_zero():
    # weight triples by the plug-in joint and move the state term onto mu0
    mdp = random_mdp(4, 2, seed=7)
    sol = solve_policy_lp(mdp)
    g = mdp.gamma
    total = 0.0
    for s, a, s2 in np.argwhere(mdp.joint > 0):
        fd = fd_derivative(mdp, (s, a, s2), 1e-7, base=sol).value
        total += mdp.joint[s, a, s2] * (fd - (1 - g) * sol.V[s])
    total += (1 - g) * mdp.mu0 @ sol.V
    assert total == pytest.approx(0.0, abs=1e-5)


def test_one_step_policy_value_unseen_pair():
    mdp = random_mdp(3, 2, seed=0)
    est = estimate_from_triples(mdp, [[0, 0, 1], [1, 1, 2]])
    with pytest.raises(SupportError, match=r"\(2, 0\)"):
        one_step_policy_value(est, [[2, 0, 0]], 1e-6, estimate=False)


def test_mdp_validation():
    with pytest.raises(InvalidInput):
        TabularMDP(P=np.full((2, 1, 2), 0.6), r=[[0.0], [0.0]], gamma=0.9, mu0=[0.5, 0.5])
    with pytest.raises(InvalidParameter):
        TabularMDP(P=np.ones((1, 1, 1)), r=[[0.0]], gamma=1.0, mu0=[1.0])


def test_json_roundtrips(tmp_path):
    mdp = random_mdp(3, 2, seed=4)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(mdp.to_dict()))
    back = load_mdp(path)
    assert np.array_equal(back.P, mdp.P) and np.array_equal(back.d, mdp.d)
    cap = LinearConstraintSet.state_cap(mdp, 1, 0.3)
    cpath = tmp_path / "c.json"
    cpath.write_text(json.dumps(cap.to_dict(mdp.nA)))
    again = load_constraints(cpath, mdp)
    assert np.array_equal(again.rows, cap.rows) and again.senses == cap.senses
    with pytest.raises(InvalidInput, match="missing.json"):
        load_mdp(tmp_path / "missing.json")


def test_degenerate_flag():
    # two identical actions tie at the optimum
    P = np.zeros((2, 2, 2))
    P[:, :, 0] = 1.0
    mdp = TabularMDP(P=P, r=[[1.0, 1.0], [0.0, 0.0]], gamma=0.5, mu0=[1.0, 0.0])
    assert solve_policy_lp(mdp).degenerate
    assert not solve_policy_lp(random_mdp(4, 2, seed=3)).degenerate
