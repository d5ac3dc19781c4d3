import math
from unittest import mock

import numpy as np
import pytest

from bpinn_ageing import bayes, diffcore, errors, metrics, net, physics, refsolver, train, uq, utils
from .utils import series, small_plan, spec  # noqa: F401

# pylint: disable=redefined-outer-name


@pytest.fixture(scope="module")
def tiny(spec):  # noqa: F811
    """Batches of a few points and a loss context for each noise model."""
    norm = physics.Normalization.from_spec(spec)
    sets = physics.sample_training_sets(spec, (3, 4, 5), 0)
    batches = train.Batches.from_sets(sets, norm)

    def context(hetero):
        config = net.MlpConfig((2, 4, 4, 2 if hetero else 1), hetero, 0.25)
        return train.LossContext(spec, norm, config, (0.1, 0.1, 0.1), hetero)

    return batches, context


def _params(config, seed=0):
    rng = np.random.default_rng(seed)
    return net.init_params(config, rng).values + 0.1 * rng.standard_normal(config.layout.size)


def test_nll_hetero_unit_variance():
    value = train.nll_hetero(np.array([0.0]), np.array([0.0]), np.array([1.0]))
    assert value[0] == pytest.approx(0.918939, abs=1e-6)


def test_nll_hetero_positive_variance():
    with pytest.raises(errors.ValidationError):
        train.nll_hetero(np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))


def test_nll_homo():
    assert train.nll_homo(np.zeros(2), 1.0) == pytest.approx(2 * 0.918939, abs=1e-6)
    assert train.nll_homo(np.array([2.0]), 2.0) == pytest.approx(0.918939 + np.log(2.0) + 0.5)
    with pytest.raises(errors.ValidationError):
        train.nll_homo(np.zeros(2), 0.0)


def test_loss_weights():
    assert train.LossWeights() == train.LossWeights(1.0, 1.0, 1e-4)
    with pytest.raises(errors.ValidationError):
        train.LossWeights(lambda_r=-1.0)


@pytest.mark.parametrize(
    "changes",
    [
        {"lr": 0.0},
        {"batch": 0},
        {"max_epochs": 10, "patience": 10},
        {"sigma_homo": (0.1, 0.0, 0.1)},
        {"validation_fraction": 1.0},
        {"kl_weight": -1.0},
    ],
)
def test_invalid_plan(changes):
    with pytest.raises(errors.ValidationError):
        train.TrainPlan(**changes)


def test_with_epochs():
    plan = train.TrainPlan(max_epochs=1000, patience=200).with_epochs(50)
    assert plan.max_epochs == 50
    assert plan.patience == 49


def test_breakdown_total():
    breakdown = train.LossBreakdown(1.0, 2.0, 3.0, 4.0) + train.LossBreakdown(1.0, 1.0, 1.0, 1.0)
    assert breakdown.total == 14.0
    assert breakdown.as_dict()["total"] == 14.0


@pytest.mark.parametrize("hetero", [True, False])
def test_elbo_gradient(tiny, hetero):
    batches, context = tiny
    context = context(hetero)
    params = _params(context.config)
    vector = np.concatenate([params, np.full(params.size, bayes.INITIAL_RHO)])
    noise = np.random.default_rng(1).standard_normal((2, params.size))
    weights = train.LossWeights(1.0, 1.0, 1e-2)

    def loss(v):
        return train.elbo_objective(v, bayes.PriorSpec(), weights, batches, noise, context)[0]

    report = diffcore.check_gradient(loss, vector, tolerance=1e-3)
    assert not report.flagged
    result = train.elbo_step(vector, bayes.PriorSpec(), weights, batches, noise, context)
    assert result.loss == pytest.approx(result.breakdown.total)
    assert result.gradient.shape == vector.shape


def test_elbo_accepts_posterior(tiny):
    batches, context = tiny
    context = context(True)
    post = bayes.VariationalPosterior.initial(context.config, np.random.default_rng(0))
    noise = np.zeros(post.size)
    prior, weights = bayes.PriorSpec(), train.LossWeights()
    from_post = train.elbo_step(post, prior, weights, batches, noise, context)
    from_vector = train.elbo_step(post.to_vector(), prior, weights, batches, noise, context)
    assert from_post.loss == from_vector.loss


def test_pinn_gradient(tiny):
    batches, context = tiny
    context = context(False)
    weights = train.LossWeights(1.0, 1.0, 1e-2)
    report = diffcore.check_gradient(
        lambda p: train.pinn_objective(p, weights, batches, context)[0],
        _params(context.config),
        tolerance=1e-3,
    )
    assert not report.flagged
    _, breakdown = train.pinn_objective(_params(context.config), weights, batches, context)
    assert breakdown.kl == 0.0


@pytest.mark.parametrize("hetero", [True, False])
def test_dpinn_gradient(tiny, hetero):
    batches, context = tiny
    context = context(hetero)
    mask = net.sample_mask(context.config, np.random.default_rng(4))
    weights = train.LossWeights(1.0, 1.0, 1e-2)
    report = diffcore.check_gradient(
        lambda p: train.dpinn_objective(p, mask, weights, batches, context)[0],
        _params(context.config),
        tolerance=1e-3,
    )
    assert not report.flagged


def test_dpinn_fixed_mask_is_deterministic(tiny):
    batches, context = tiny
    context = context(True)
    mask = net.sample_mask(context.config, np.random.default_rng(4))
    params = _params(context.config)
    first = train.dpinn_loss(params, mask, train.LossWeights(), batches, context)
    second = train.dpinn_loss(params, mask, train.LossWeights(), batches, context)
    assert first.loss == second.loss
    assert np.array_equal(first.gradient, second.gradient)


def test_empty_batches(tiny):
    batches, context = tiny
    context = context(False)
    empty = train.Batch(*(np.zeros(0) for _ in range(4)), np.zeros(0))
    batches = train.Batches(empty, empty, empty)
    with pytest.raises(errors.ValidationError):
        train.pinn_loss(_params(context.config), train.LossWeights(), batches, context)


def test_validation_loss_squared_error(tiny):
    batches, context = tiny
    context = context(False)
    params = _params(context.config)
    value = train.validation_loss(
        params, train.LossWeights(2.0, 0.0), batches.initial, batches.boundary, context, True
    )
    mu, _ = net.forward(params, batches.initial.xu, batches.initial.tu, context.config)
    assert value == pytest.approx(2.0 * np.mean((batches.initial.target - mu) ** 2))


def test_adam_constant_gradient():
    state = train.AdamState.zeros(2)
    params = np.zeros(2)
    for _ in range(100):
        updated = train.adam_update(state, params, np.array([3.0, -0.5]), 0.01)
        step = updated - params
        params = updated
    assert np.allclose(step, [-0.01, 0.01], rtol=1e-6)
    assert state.step == 100


def test_adam_quadratic():
    state = train.AdamState.zeros(2)
    x = np.array([1.0, 1.0])
    for _ in range(3000):
        x = train.adam_update(state, x, np.array([x[0], 3.0 * x[1]]), 0.01)
    assert np.abs(x).max() < 0.1


def test_adam_shape_mismatch():
    with pytest.raises(errors.ValidationError):
        train.adam_update(train.AdamState.zeros(2), np.zeros(3), np.zeros(3), 0.01)


def _quadratic(dimension=10, seed=0):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dimension, dimension)))
    hessian = basis @ np.diag(np.linspace(1.0, 4.0, dimension)) @ basis.T
    b = rng.standard_normal(dimension)

    def loss_fn(x):
        return 0.5 * x @ hessian @ x - b @ x, hessian @ x - b

    return loss_fn, np.linalg.solve(hessian, b)


def test_lbfgs_quadratic():
    loss_fn, optimum = _quadratic()
    calls = []
    result = train.lbfgs_refine(
        np.zeros(10), loss_fn, 50, tolerance=1e-6, callback=lambda i, x, f: calls.append(i)
    )
    assert result.converged
    assert not result.line_search_failed
    assert np.allclose(result.params, optimum, atol=1e-5)
    assert calls == list(range(1, result.iterations + 1))
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))


def test_lbfgs_iteration_cap():
    loss_fn, _ = _quadratic(seed=1)
    result = train.lbfgs_refine(np.zeros(10), loss_fn, 2)
    assert result.iterations == 2
    assert not result.converged
    assert len(result.history) == 3


def test_lbfgs_rosenbrock_descends():
    def loss_fn(p):
        x, y = p
        value = (1 - x) ** 2 + 100 * (y - x * x) ** 2
        gradient = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
        return value, gradient

    result = train.lbfgs_refine(np.array([-1.2, 1.0]), loss_fn, 200, tolerance=1e-8)
    assert np.allclose(result.params, [1.0, 1.0], atol=1e-4)
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))


@pytest.mark.parametrize("variant", [v.name for v in utils.get_variants()])
def test_fit_every_variant(spec, variant):  # noqa: F811
    result = train.fit(small_plan(variant), spec, (5, 10, 20), 0)
    assert result.checkpoint.variant == variant
    assert result.log.stop_reason in train.STOP_REASONS
    assert not result.diverged
    phases = {row[1] for row in result.log.rows}
    assert "adam" in phases
    if variant == "pinn":
        assert "lbfgs" in phases
    epochs = [row[0] for row in result.log.rows]
    assert epochs == sorted(epochs)
    assert all(len(row) == len(train.LOG_FIELDS) for row in result.log.rows)


def test_fit_is_deterministic(spec):  # noqa: F811
    first = train.fit(small_plan("bpinn_hetero"), spec, (5, 10, 20), 7)
    second = train.fit(small_plan("bpinn_hetero"), spec, (5, 10, 20), 7)
    assert np.array_equal(first.checkpoint.mu, second.checkpoint.mu)
    assert np.array_equal(first.checkpoint.rho, second.checkpoint.rho)
    assert first.log.rows == second.log.rows


def test_fit_divergence(spec):  # noqa: F811
    result = train.fit(small_plan("dpinn_homo", divergence_threshold=1e-12), spec, (5, 10, 20), 0)
    assert result.diverged
    assert result.divergence
    assert result.checkpoint.kind == "deterministic"


def test_fit_early_stop(spec):  # noqa: F811
    plan = small_plan("dpinn_hetero", max_epochs=400, patience=2, lr=1.0)
    result = train.fit(plan, spec, (5, 10, 20), 0)
    assert result.log.stop_reason == "early_stop"
    last_epoch = max(row[0] for row in result.log.rows if row[1] == "adam")
    assert last_epoch - result.log.best_epoch == plan.patience


def test_non_finite_loss_names_components(tiny):
    batches, context = tiny
    context = context(False)
    params = _params(context.config)
    params[0] = np.nan
    with pytest.raises(errors.NonFiniteLossError) as e:
        train.pinn_loss(params, train.LossWeights(), batches, context)
    assert e.value.index == 0
    assert set(e.value.components) == {"kl", "nll_0", "nll_bc", "nll_r", "total"}
    assert math.isnan(e.value.components["nll_0"])
    assert "nll_0=nan" in str(e.value)


def test_fit_records_non_finite_breakdown(spec):  # noqa: F811
    components = {"kl": 0.0, "nll_0": 1.0, "nll_bc": 2.0, "nll_r": math.inf, "total": math.inf}
    failure = errors.NonFiniteLossError("loss evaluated to inf", components=components)
    with mock.patch.object(train, "pinn_loss", side_effect=failure):
        result = train.fit(small_plan("pinn"), spec, (5, 10, 20), 0)
    assert result.diverged
    assert result.divergence == components
    assert not result.log.rows


def test_fit_capacity(spec):  # noqa: F811
    with pytest.raises(errors.CapacityError):
        train.fit(small_plan(), spec, (5, 10**6, 20), 0)


def _desk_scale(spec, variant, seed):
    """Trains ``variant`` on the one-day problem and predicts the truth grid."""
    plan = train.TrainPlan(variant=variant, max_epochs=3000, hidden_sizes=(16, 16), log_every=500)
    result = train.fit(plan, spec, (5, 200, 1000), seed)
    assert not result.diverged
    truth = refsolver.solve(spec, refsolver.GridSpec(nx=21, dt=600.0))
    pred = uq.predict_grid(result.checkpoint, truth, samples=100, seed=seed)
    return pred.flat(), truth.values.ravel()


@pytest.mark.slow
def test_hetero_bpinn_learns_the_field(spec):  # noqa: F811
    pred, truth = _desk_scale(spec, "bpinn_hetero", 0)
    assert np.linalg.norm(pred.mean - truth) / np.linalg.norm(truth) < 0.10
    assert metrics.calibration(pred, truth).miscalibration_area < 0.25


@pytest.mark.slow
def test_dropout_is_wider_and_scores_worse(spec):  # noqa: F811
    scores = {"bpinn_hetero": [], "dpinn_hetero": []}
    widths = {"bpinn_hetero": [], "dpinn_hetero": []}
    for variant in scores:
        for seed in range(3):
            pred, truth = _desk_scale(spec, variant, seed)
            scores[variant].append(metrics.crps_avg(pred, truth))
            widths[variant].append(float(np.mean(pred.std)))
    assert np.mean(scores["bpinn_hetero"]) < np.mean(scores["dpinn_hetero"])
    assert np.mean(widths["dpinn_hetero"]) > np.mean(widths["bpinn_hetero"])
