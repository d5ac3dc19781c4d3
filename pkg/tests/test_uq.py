import numpy as np
import pytest

from bpinn_ageing import errors, refsolver, uq
from .utils import make_checkpoint, series, spec  # noqa: F401

# pylint: disable=redefined-outer-name


def test_decompose():
    mu = np.array([1.0, 2.0, 3.0])
    epistemic, aleatoric, total = uq.decompose(mu, np.full(3, 0.1))
    assert epistemic == pytest.approx(2.0 / 3.0)
    assert aleatoric == pytest.approx(0.1)
    assert total == pytest.approx(0.1 + 2.0 / 3.0)


def test_decompose_without_aleatoric():
    mu = np.array([[1.0, 5.0], [3.0, 5.0]])
    epistemic, aleatoric, total = uq.decompose(mu)
    assert np.allclose(epistemic, [1.0, 0.0])
    assert not aleatoric.any()
    assert np.array_equal(total, epistemic)


def test_decompose_scale_equivariance():
    rng = np.random.default_rng(3)
    mu, var = rng.standard_normal((50, 7)), rng.random((50, 7))
    epistemic, aleatoric, total = uq.decompose(mu, var)
    scaled, _, _ = uq.decompose(2.5 * mu, var)
    assert np.allclose(scaled, 2.5**2 * epistemic, rtol=1e-12, atol=0.0)
    assert np.array_equal(total, epistemic + aleatoric)


@pytest.mark.parametrize("samples", [10**2, 10**3, 10**4])
def test_epistemic_converges_at_root_k(samples):
    """The error of the epistemic estimate shrinks like 1/sqrt(K)."""
    variance, replicas = 4.0, 200
    rng = np.random.default_rng(samples)
    mu = rng.normal(0.0, np.sqrt(variance), (samples, replicas))
    epistemic, _, _ = uq.decompose(mu)
    rms_error = np.sqrt(np.mean((epistemic - variance) ** 2))
    # the population variance of K normal draws has standard error v * sqrt(2 / K)
    assert 1.1 < rms_error * np.sqrt(samples) / variance < 1.75


def test_decompose_errors():
    with pytest.raises(errors.ValidationError):
        uq.decompose(np.array([1.0]))
    with pytest.raises(errors.ValidationError):
        uq.decompose(np.zeros((3, 2)), np.zeros((3, 3)))


def test_deterministic_prediction(spec):  # noqa: F811
    checkpoint = make_checkpoint("pinn", spec)
    dist = uq.predict(checkpoint, [0.0, 0.5, 1.0], 600.0, samples=50)
    assert dist.n_samples == 1
    assert len(dist) == 3
    assert np.array_equal(dist.t, [600.0] * 3)
    assert not dist.total_var.any()
    assert np.all(np.isfinite(dist.mean))


def test_homoscedastic_aleatoric(spec):  # noqa: F811
    checkpoint = make_checkpoint("bpinn_homo", spec, sigma_homo=(0.01, 0.02, 0.03))
    dist = uq.predict(checkpoint, np.linspace(0.0, 1.0, 4), 3600.0, samples=8)
    expected = 0.02**2 * checkpoint.normalization.temp_scale**2
    assert np.allclose(dist.aleatoric_var, expected)
    assert np.all(dist.epistemic_var > 0)
    assert np.allclose(dist.total_var, dist.epistemic_var + dist.aleatoric_var)


@pytest.mark.parametrize("variant", ["bpinn_hetero", "dpinn_hetero"])
def test_heteroscedastic_aleatoric(spec, variant):  # noqa: F811
    dist = uq.predict(make_checkpoint(variant, spec), [0.2, 0.8], [0.0, 7200.0], samples=6)
    assert np.all(dist.aleatoric_var > 0)
    assert dist.std == pytest.approx(np.sqrt(dist.total_var))


def test_single_sample_is_rejected(spec):  # noqa: F811
    with pytest.raises(errors.ValidationError):
        uq.predict(make_checkpoint("dpinn_homo", spec), [0.5], [0.0], samples=1)


def test_chunking_does_not_change_prediction(spec):  # noqa: F811
    checkpoint = make_checkpoint("bpinn_hetero", spec)
    x = np.linspace(0.0, 1.0, 11)
    whole = uq.predict(checkpoint, x, 1800.0, samples=5, seed=3, chunk_size=100)
    chunked = uq.predict(checkpoint, x, 1800.0, samples=5, seed=3, chunk_size=4)
    assert np.allclose(whole.mean, chunked.mean)
    assert np.allclose(whole.total_var, chunked.total_var)


def test_same_seed_same_prediction(spec):  # noqa: F811
    checkpoint = make_checkpoint("dpinn_hetero", spec)
    first = uq.predict(checkpoint, [0.1, 0.9], [60.0, 60.0], samples=4, seed=9)
    second = uq.predict(checkpoint, [0.1, 0.9], [60.0, 60.0], samples=4, seed=9)
    assert np.array_equal(first.mean, second.mean)
    assert np.array_equal(first.epistemic_var, second.epistemic_var)


def test_predict_grid(spec):  # noqa: F811
    grid = refsolver.FieldGrid(np.linspace(0.0, 1.0, 3), 600.0 * np.arange(4), np.zeros((4, 3)))
    predictive = uq.predict_grid(make_checkpoint("bpinn_homo", spec), grid, samples=3)
    assert predictive.mean.shape == (4, 3)
    assert predictive.field("total_var").shape == (4, 3)
    flat = predictive.flat()
    assert len(flat) == 12
    assert len(flat.subset(slice(0, 5))) == 5
    outputs = flat.to_outputs()
    assert len(outputs.rows) == 12
    assert outputs.to_csv().splitlines()[0] == "x_m,t_s,mean,eu,au,tu"


def test_invalid_chunk_size(spec):  # noqa: F811
    with pytest.raises(errors.ValidationError):
        uq.predict(make_checkpoint("pinn", spec), [0.5], [0.0], chunk_size=0)
