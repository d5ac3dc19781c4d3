import numpy as np
import pytest

from bpinn_ageing import errors, net, physics


def _params(config, seed=0):
    rng = np.random.default_rng(seed)
    # non-zero biases so that every layer matters
    return net.init_params(config, rng).values + 0.1 * rng.standard_normal(config.layout.size)


def test_layout_size():
    assert net.MlpConfig((2, 50, 50, 2)).layout.size == 2802
    assert net.MlpConfig((2, 50, 50, 1), variance_head=False).layout.size == 2751


@pytest.mark.parametrize(
    "sizes, head, rate",
    [
        [(2, 4, 1), True, 0.0],
        [(2, 4, 2), False, 0.0],
        [(3, 4, 2), True, 0.0],
        [(2,), True, 0.0],
        [(2, 4, 2), True, 1.0],
    ],
)
def test_invalid_config(sizes, head, rate):
    with pytest.raises(errors.ValidationError):
        net.MlpConfig(sizes, head, rate)


@pytest.mark.parametrize(
    "pre_var, expected",
    [[0.0, np.log(2.0) + 1e-6], [-40.0, 1e-6], [5.0, 5.006716]],
)
def test_variance_of(pre_var, expected):
    assert net.variance_of(np.array(pre_var)) == pytest.approx(expected, rel=1e-6)


def test_unpack_wrong_length():
    config = net.MlpConfig((2, 3, 2))
    with pytest.raises(errors.ValidationError):
        config.layout.unpack(np.zeros(config.layout.size + 1))


def test_init_params_zero_biases():
    config = net.MlpConfig((2, 8, 2))
    params = net.init_params(config, np.random.default_rng(0))
    (_, b1), (_, b2) = config.layout.unpack(params.values)
    assert not b1.any() and not b2.any()
    assert np.abs(params.values).max() <= np.sqrt(6.0 / 10.0)


def test_derivatives_agree_with_forward():
    config = net.MlpConfig((2, 6, 6, 2))
    params = _params(config)
    x = np.linspace(0.0, 1.0, 7)
    t = np.linspace(1.0, 0.0, 7)
    mu, pre_var = net.forward(params, x, t, config)
    u, u_x, _, u_t = net.forward_with_derivatives(params, x, t, config)
    assert np.allclose(u, mu)
    h = 1e-6

    def mean_at(x_, t_):
        return net.forward(params, x_, t_, config)[0]

    assert np.allclose(u_x, (mean_at(x + h, t) - mean_at(x - h, t)) / (2 * h), atol=1e-7)
    assert np.allclose(u_t, (mean_at(x, t + h) - mean_at(x, t - h)) / (2 * h), atol=1e-7)
    assert pre_var.shape == (7,)


def test_second_derivative():
    config = net.MlpConfig((2, 6, 1), variance_head=False)
    params = _params(config, 1)
    x = np.array([0.2, 0.6])
    t = np.array([0.5, 0.5])
    _, _, u_xx, _ = net.forward_with_derivatives(params, x, t, config)
    h = 1e-3

    def mean(xs):
        return net.forward(params, xs, t, config)[0]

    numeric = (mean(x + h) - 2 * mean(x) + mean(x - h)) / h**2
    assert np.allclose(u_xx, numeric, atol=1e-5)


def test_forward_many_matches_forward():
    config = net.MlpConfig((2, 5, 5, 2), dropout_rate=0.3)
    rng = np.random.default_rng(2)
    rows = np.stack([_params(config, seed) for seed in range(3)])
    masks = [net.sample_mask(config, rng) for _ in range(3)]
    x = rng.random(4)
    t = rng.random(4)
    mu, var = net.forward_many(rows, x, t, config, masks)
    assert mu.shape == var.shape == (3, 4)
    for k in range(3):
        mu_k, pre_var_k = net.forward(rows[k], x, t, config, masks[k])
        assert np.allclose(mu[k], mu_k)
        assert np.allclose(var[k], net.variance_of(pre_var_k))


def test_identity_mask():
    config = net.MlpConfig((2, 5, 2), dropout_rate=0.5)
    params = _params(config)
    x, t = np.array([0.3]), np.array([0.7])
    plain = net.forward(params, x, t, config)
    masked = net.forward(params, x, t, config, net.DropoutMask.identity(config))
    assert np.allclose(plain[0], masked[0])


def test_mask_scaling():
    config = net.MlpConfig((2, 1000, 2), dropout_rate=0.25)
    mask = net.sample_mask(config, np.random.default_rng(0))
    kept = mask.keeps[0]
    assert 0.7 < kept.mean() < 0.8
    assert np.allclose(mask.scales[0][kept], 1.0 / 0.75)
    assert not mask.scales[0][~kept].any()


def test_mismatched_mask():
    config = net.MlpConfig((2, 5, 2))
    other = net.MlpConfig((2, 4, 2))
    with pytest.raises(errors.ValidationError):
        net.forward(_params(config), [0.1], [0.1], config, net.DropoutMask.identity(other))


def test_checkpoint_file(tmp_path):
    config = net.MlpConfig((2, 3, 1), variance_head=False)
    norm = physics.Normalization(1.0, 86340.0, 14.0, 30.0)
    rng = np.random.default_rng(0)
    size = config.layout.size
    checkpoint = net.Checkpoint(
        "bpinn_homo", config, norm, "variational", mu=rng.random(size), rho=rng.random(size)
    )
    checkpoint.save(tmp_path / "checkpoint.json")
    loaded = net.Checkpoint.load(tmp_path / "checkpoint.json")
    assert loaded.variant == "bpinn_homo"
    assert loaded.config == config
    assert loaded.normalization == norm
    assert loaded.values is None
    assert np.array_equal(loaded.mu, checkpoint.mu)
    assert np.array_equal(loaded.rho, checkpoint.rho)


def test_checkpoint_errors(tmp_path):
    config = net.MlpConfig((2, 3, 2))
    norm = physics.Normalization()
    with pytest.raises(errors.ValidationError):
        net.Checkpoint("pinn", config, norm, values=np.zeros(3))
    with pytest.raises(errors.ValidationError):
        net.Checkpoint("pinn", config, norm, kind="ensemble", values=np.zeros(config.layout.size))
    with pytest.raises(errors.SeriesIOError):
        net.Checkpoint.load(tmp_path / "missing.json")
    (tmp_path / "other.json").write_text('{"format": "something else"}')
    with pytest.raises(errors.ValidationError):
        net.Checkpoint.load(tmp_path / "other.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(errors.SeriesIOError):
        net.Checkpoint.load(tmp_path / "broken.json")
