import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from empgateaux import _kernels
from empgateaux.functionals import DtrValue, MeanPotentialOutcome
from empgateaux.measures import Dirac, DiscreteDistribution, Kernel, perturb
from empgateaux.mdp import perturb_mdp, random_mdp
from empgateaux.oracle import Nuisances, aipw_score, dtr_eif, exact_derivative_discrete

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

weights = st.lists(st.floats(0.05, 1.0), min_size=12, max_size=12)
outcomes = st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=3, unique=True)


def mpo_dist(w, ys):
    atoms = np.array([[x, a, y] for x in (0.0, 1.0) for a in (0.0, 1.0) for y in ys])
    p = np.asarray(w) / np.sum(w)
    return DiscreteDistribution(atoms, p, validate=False)


@SETTINGS
@given(weights, outcomes)
def test_exact_derivative_equals_aipw_and_is_mean_zero(w, ys):
    dist = mpo_dist(w, ys)
    fnl = MeanPotentialOutcome()
    psi = fnl(dist)
    nuis = Nuisances.induced(dist)
    total = 0.0
    for o, p in zip(*dist.support()):
        phi = exact_derivative_discrete(fnl, dist, o)
        assert phi == pytest.approx(aipw_score(nuis, psi, o), abs=1e-8)
        total += p * phi
    assert total == pytest.approx(0.0, abs=1e-9)


@SETTINGS
@given(weights, outcomes, st.floats(0.0, 1.0, exclude_max=True), st.integers(0, 11))
def test_mixture_is_a_probability_and_bounded(w, ys, eps, k):
    dist = mpo_dist(w, ys)
    view = perturb(dist, Dirac(dist.atoms[k]), eps)
    _, probs = view.support()
    assert probs.min() >= 0 and probs.sum() == pytest.approx(1.0, abs=1e-12)
    value = MeanPotentialOutcome()(view)
    assert min(ys) - 1e-12 <= value <= max(ys) + 1e-12


@SETTINGS
@given(weights, outcomes)
def test_eps_zero_is_bitwise(w, ys):
    dist = mpo_dist(w, ys)
    fnl = MeanPotentialOutcome()
    assert fnl(perturb(dist, Dirac(dist.atoms[0]), 0.0)) == fnl(dist)


@SETTINGS
@given(st.lists(st.floats(0.05, 1.0), min_size=32, max_size=32), st.tuples(st.integers(0, 1), st.integers(0, 1)))
def test_dtr_eif_mean_zero_and_exact(w, regime):
    atoms = np.array(
        [[x1, a1, x2, a2, y] for x1 in (0.0, 1.0) for a1 in (0.0, 1.0) for x2 in (0.0, 1.0) for a2 in (0.0, 1.0) for y in (0.0, 2.0)]
    )
    dist = DiscreteDistribution(atoms, np.asarray(w) / np.sum(w), validate=False)
    fnl = DtrValue(regime, 2)
    total = 0.0
    for o, p in zip(atoms, dist.probs):
        eif = dtr_eif(dist, regime, 2, o)
        assert eif == pytest.approx(exact_derivative_discrete(fnl, dist, o), abs=1e-8)
        total += p * eif
    assert total == pytest.approx(0.0, abs=1e-9)


@SETTINGS
@given(st.integers(0, 10_000), st.floats(1e-8, 0.99), st.data())
def test_perturbed_mdp_rows_are_distributions(seed, eps, data):
    mdp = random_mdp(4, 3, seed=seed)
    o = (data.draw(st.integers(0, 3)), data.draw(st.integers(0, 2)), data.draw(st.integers(0, 3)))
    pert = perturb_mdp(mdp, o, eps)
    assert np.max(np.abs(pert.P.sum(axis=2) - 1.0)) <= 1e-14
    assert pert.mu0.sum() == pytest.approx(1.0, abs=1e-14)


@SETTINGS
@given(st.sampled_from(list(Kernel)), st.floats(-3.0, 3.0), st.floats(0.01, 2.0))
def test_kernel_symmetry(kernel, u, lam):
    from empgateaux.measures import kernel_eval

    assert kernel_eval(kernel, u, lam) == kernel_eval(kernel, -u, lam) >= 0


@pytest.mark.skipif(not _kernels.BACKEND == "numba", reason="numba unavailable")
@pytest.mark.parametrize("code", [_kernels.UNIFORM, _kernels.GAUSSIAN])
def test_backends_agree(code):
    rng = np.random.default_rng(0)
    pts = rng.uniform(size=(300, 2))
    cen = rng.uniform(size=(500, 2))
    w = rng.normal(size=(500, 3))
    a = _kernels.kde_sums_numpy(pts, cen, w, 0.1, code)
    b = _kernels.kde_sums_numba(pts, cen, w, 0.1, code)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_numpy_backend_env_var():
    code = "from empgateaux import _accel, _kernels; print(_accel.BACKEND, _kernels.BACKEND)"
    env = {**os.environ, "EMPGATEAUX_BACKEND": "numpy"}
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert out.stdout.split() == ["numpy", "numpy"]
