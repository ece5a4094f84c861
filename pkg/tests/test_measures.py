import math

import numpy as np
import pytest

from empgateaux.errors import InvalidInput, InvalidParameter, LayoutError
from empgateaux.measures import (
    Dataset,
    Dirac,
    DiscreteDistribution,
    Kernel,
    SmoothedDelta,
    direction_for,
    fit_kde,
    kernel_eval,
    mpo_layout,
    perturb,
    read_dataset_csv,
    sample,
    smoothed_delta_eval,
    write_dataset_csv,
)


@pytest.mark.parametrize(
    "kernel,u,lam,expected",
    [
        (Kernel.UNIFORM, 0.2, 0.5, 1.0),
        (Kernel.GAUSSIAN, 0.0, 1.0, 1.0 / math.sqrt(2 * math.pi)),
        (Kernel.UNIFORM, 2.0, 0.5, 0.0),
    ],
)
def test_kernel_eval_values(kernel, u, lam, expected):
    assert kernel_eval(kernel, u, lam) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, -1.0])
def test_kernel_eval_rejects_bad_bandwidth(lam):
    with pytest.raises(InvalidParameter):
        kernel_eval(Kernel.UNIFORM, 0.0, lam)


@pytest.mark.parametrize("kernel", list(Kernel))
def test_kernel_normalized_and_symmetric(kernel):
    u = np.linspace(-10, 10, 400_001)
    k = kernel.profile(u)
    assert np.trapezoid(k, u) == pytest.approx(1.0, abs=1e-4)
    assert np.array_equal(k, kernel.profile(-u))


def test_smoothed_delta_examples():
    delta = SmoothedDelta([0.5, 1.0, 1.0], 0.1, Kernel.UNIFORM, mpo_layout(1))
    assert smoothed_delta_eval(delta, [0.5, 1.0, 1.0]) == pytest.approx(25.0)
    assert smoothed_delta_eval(delta, [0.5, 0.0, 1.0]) == 0.0
    with pytest.raises(LayoutError):
        smoothed_delta_eval(delta, [0.5, 1.0])


def test_smoothed_delta_integrates_to_one():
    delta = SmoothedDelta([0.5, 1.0, 1.0], 0.1, Kernel.UNIFORM, mpo_layout(1))
    # midpoint grid on [0.3, 0.7] x [0.8, 1.2] at the matched treatment
    g = 0.3 + (np.arange(400) + 0.5) * 0.001
    xx, yy = np.meshgrid(g, g + 0.5)
    pts = np.column_stack([xx.ravel(), np.ones(xx.size), yy.ravel()])
    assert delta.evaluate(pts).sum() * 1e-6 == pytest.approx(1.0, abs=1e-9)


def test_fit_kde_examples():
    single = Dataset(np.zeros((2, 1)), np.ones(2), np.zeros(2))
    model = fit_kde(single, 1.0, Kernel.GAUSSIAN)
    assert model.density_eval([0.0, 1.0, 0.0]) == pytest.approx(1 / (2 * math.pi), abs=1e-12)
    assert model.density_eval([0.0, 0.0, 0.0]) == 0.0
    sym = fit_kde(Dataset(np.array([[-0.3], [0.3]]), np.ones(2), np.zeros(2)), 0.5, Kernel.GAUSSIAN)
    left, right = sym.p_x([[-0.1]])[0], sym.p_x([[0.1]])[0]
    assert left == pytest.approx(right, abs=1e-12)


def test_fit_kde_rejects_empty():
    with pytest.raises(InvalidInput):
        fit_kde(Dataset(np.zeros((0, 1)), np.zeros(0), np.zeros(0)), 0.1)


def test_marginalization_consistency(piecewise_model, rng):
    _, model, _ = piecewise_model
    xq = rng.uniform(0, 1, 5)
    ys = np.linspace(model.data.y.min() - 1, model.data.y.max() + 1, 40_001)
    for x in xq:
        for arm in (0.0, 1.0):
            joint = model.p_yax(ys, arm, np.full((len(ys), 1), x))
            assert np.trapezoid(joint, ys) == pytest.approx(model.p_ax(arm, [[x]])[0], abs=1e-3)
        total = model.p_ax(0.0, [[x]])[0] + model.p_ax(1.0, [[x]])[0]
        assert total == pytest.approx(model.p_x([[x]])[0], rel=1e-12)


def test_fast_table_matches_direct_sums(piecewise_model, rng):
    _, model, _ = piecewise_model
    x = rng.uniform(-0.1, 1.1, 300)[:, None]
    assert np.allclose(model.moments(x, 1.0, fast=True), model.moments(x, 1.0), rtol=1e-12, atol=1e-12)


def test_perturb_discrete_example():
    base = DiscreteDistribution(np.array([[0.0], [1.0]]), [0.5, 0.5])
    atoms, probs = perturb(base, Dirac([1.0]), 0.1).support()
    assert np.allclose(probs, [0.45, 0.55])


@pytest.mark.parametrize("eps", [-0.1, 1.1])
def test_perturb_rejects_eps(eps):
    base = DiscreteDistribution(np.array([[0.0], [1.0]]), [0.5, 0.5])
    with pytest.raises(InvalidParameter):
        perturb(base, Dirac([1.0]), eps)


def test_perturb_continuous_endpoints_and_linearity(piecewise_model, rng):
    data, model, _ = piecewise_model
    o = data.rows()[0]
    delta = direction_for(model, o, 0.05)
    pts = model.sample(20, rng)
    for eps in (0.0, 0.3, 1.0):
        view = perturb(model, delta, eps)
        for p in pts:
            expected = (1 - eps) * model.density_eval(p) + eps * smoothed_delta_eval(delta, p)
            assert view.density_eval(p) == expected
    view0 = perturb(model, delta, 0.0)
    assert all(view0.density_eval(p) == model.density_eval(p) for p in pts)
    view1 = perturb(model, delta, 1.0)
    assert all(view1.density_eval(p) == smoothed_delta_eval(delta, p) for p in pts)


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.5, 1.0])
def test_perturbed_mass_is_one(piecewise_model, eps):
    data, model, _ = piecewise_model
    delta = direction_for(model, data.rows()[1], 0.1)
    view = perturb(model, delta, eps)
    step = 0.0025
    xs = np.arange(-0.2, 1.2, step) + step / 2
    ys = np.arange(data.y.min() - 1.0, data.y.max() + 1.0, step) + step / 2
    xx, yy = np.meshgrid(xs, ys)
    xx, yy = xx.ravel(), yy.ravel()
    total = 0.0
    for arm in (0.0, 1.0):
        pts = np.column_stack([xx, np.full(xx.size, arm), yy])
        dens = (1 - eps) * model.p_yax(yy, arm, xx[:, None]) + eps * delta.evaluate(pts)
        probe = slice(0, None, max(1, xx.size // 200))
        assert np.allclose([view.density_eval(p) for p in pts[probe]], dens[probe])
        total += dens.sum() * step * step
    assert total == pytest.approx(1.0, abs=5e-3)


def test_sample_examples():
    one = DiscreteDistribution(np.array([[1.0, 2.0]]), [1.0])
    assert np.array_equal(sample(one, 5, 0), np.tile([1.0, 2.0], (5, 1)))
    unif = SmoothedDelta([0.0], 1.0, Kernel.UNIFORM)
    draws = sample(unif, 1000, 1)
    assert np.all(np.abs(draws) <= 1.0)
    gauss = SmoothedDelta([2.0], 0.5, Kernel.GAUSSIAN)
    mean = sample(gauss, 100_000, 2).mean()
    assert abs(mean - 2.0) <= 3e-2 * 0.5
    assert np.array_equal(sample(gauss, 10, 3), sample(gauss, 10, 3))


def test_discrete_distribution_validation():
    with pytest.raises(InvalidParameter, match="sum"):
        DiscreteDistribution(np.array([[0.0], [1.0]]), [0.5, 0.6])
    with pytest.raises(InvalidParameter, match="nonnegative"):
        DiscreteDistribution(np.array([[0.0], [1.0]]), [1.5, -0.5])
    with pytest.raises(LayoutError):
        DiscreteDistribution(np.array([[0.0], [1.0]]), [1.0])


def test_csv_roundtrip_and_missing_file(tmp_path, piecewise_model):
    data, _, _ = piecewise_model
    path = tmp_path / "d.csv"
    write_dataset_csv(data, path)
    back = read_dataset_csv(path)
    assert np.array_equal(back.rows(), data.rows())
    with pytest.raises(InvalidInput, match="nope.csv"):
        read_dataset_csv(tmp_path / "nope.csv")
