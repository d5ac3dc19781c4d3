import numpy as np
import pytest

from bpinn_ageing import errors, refsolver, thermal, uq


def _grid(mean, total_var, t):
    mean = np.asarray(mean, dtype=float)
    zeros = np.zeros_like(mean)
    x = np.linspace(0.0, 1.0, mean.shape[1])
    return uq.PredictiveGrid(
        x, np.asarray(t, dtype=float), mean, zeros, total_var, total_var, 8
    )


def test_constant_load_is_steady():
    params = thermal.HstParams()
    rise = thermal.hst_rise(params, np.full(50, 0.8))
    assert np.allclose(rise, 15.1 * 0.8**1.3)


@pytest.mark.parametrize("k21", [1.0, 2.32, 5.0])
def test_hst_initial(k21):
    params = thermal.HstParams(k21=k21)
    assert thermal.hst_initial(params, 60.0, 1.0) == pytest.approx(75.1)
    assert thermal.hst_initial(params, 60.0, 0.0) == 60.0


def test_zero_load():
    assert not thermal.hst_rise(thermal.HstParams(), np.zeros(20)).any()


def test_hot_spot_series():
    params = thermal.HstParams()
    hot_spot = thermal.hot_spot_series(params, np.full(5, 70.0), np.ones(5))
    assert np.allclose(hot_spot, 85.1)


def test_step_response_converges():
    """a coarse step matches a hundredfold sub-stepped one within 1% of the
    rated rise; each coarse load sample holds over the step it ends"""
    coarse_dt = 0.1
    minutes = 300.0
    coarse = thermal.HstParams(dt=coarse_dt)
    fine = thermal.HstParams(dt=coarse_dt / 100.0)
    n = int(round(minutes / coarse_dt))
    coarse_load = (np.arange(n) >= 10).astype(float)
    fine_load = np.concatenate([coarse_load[:1], np.repeat(coarse_load[1:], 100)])
    coarse_rise = thermal.hst_rise(coarse, coarse_load)
    fine_rise = thermal.hst_rise(fine, fine_load)[::100]
    assert np.abs(coarse_rise - fine_rise).max() < 0.01 * coarse.delta_theta_hr


def test_step_overshoot():
    rise = thermal.hst_rise(thermal.HstParams(), np.concatenate([np.zeros(10), np.ones(3000)]))
    # the winding term responds faster than the oil term
    assert rise.max() > 15.1
    assert rise[-1] == pytest.approx(15.1, rel=1e-3)


@pytest.mark.parametrize(
    "changes", [{"dt": 6.0}, {"tau_w": 0.0}, {"y": -1.0}]
)
def test_invalid_params(changes):
    with pytest.raises(errors.ValidationError):
        thermal.HstParams(**changes)


def test_invalid_load():
    with pytest.raises(errors.ValidationError):
        thermal.hst_rise(thermal.HstParams(), np.zeros((2, 2)))


@pytest.mark.parametrize("theta, expected", [[98.0, 1.0], [104.0, 2.0], [92.0, 0.5], [110.0, 4.0]])
def test_ageing_factor(theta, expected):
    assert thermal.ageing_factor(theta) == pytest.approx(expected)


def test_loss_of_life_series():
    field = thermal.loss_of_life(np.ones(4), 2.0)
    assert np.array_equal(field.loss_of_life, [2.0, 4.0, 6.0, 8.0])


def test_loss_of_life_grid():
    ageing = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    field = thermal.loss_of_life(ageing, 1.0)
    assert np.array_equal(field.loss_of_life[:, 1], [2.0, 4.0, 6.0])


def test_winding_field():
    oil = refsolver.FieldGrid([0.0, 1.0], [0.0, 60.0], [[50.0, 60.0], [51.0, 61.0]])
    winding = thermal.winding_field(oil, [0.0, 30.0, 60.0], [5.0, 6.0, 7.0])
    assert np.allclose(winding.values, [[55.0, 65.0], [58.0, 68.0]])
    with pytest.raises(errors.OutOfSpanError):
        thermal.winding_field(oil, [0.0, 30.0], [5.0, 6.0])
    with pytest.raises(errors.ValidationError):
        thermal.winding_field(oil.values, [0.0, 60.0], [5.0, 6.0])


def test_propagate_zero_variance():
    t = 600.0 * np.arange(4)
    mean = np.array([[90.0, 95.0], [92.0, 98.0], [94.0, 99.0], [96.0, 100.0]])
    rise_times = 60.0 * np.arange(31)
    rise = np.full(31, 2.0)
    grid = _grid(mean, np.zeros_like(mean), t)
    summary = thermal.propagate_ageing(grid, rise_times, rise, 5, 0, 2)
    expected = thermal.ageing_factor(mean + 2.0)
    assert summary.n_samples == 5
    assert np.allclose(summary.ageing_mean.values, expected)
    assert np.allclose(summary.ageing_std.values, 0.0, atol=1e-12)
    assert np.allclose(summary.lol_mean.values, np.cumsum(expected * 10.0, axis=0))


def test_propagate_chunks_agree():
    t = 600.0 * np.arange(3)
    mean = np.array([[95.0, 97.0], [98.0, 101.0], [99.0, 100.0]])
    var = np.full_like(mean, 4.0)
    rise_times = 60.0 * np.arange(21)
    rise = np.linspace(0.0, 3.0, 21)
    whole = thermal.propagate_ageing(_grid(mean, var, t), rise_times, rise, 7, 3, chunk_size=7)
    chunked = thermal.propagate_ageing(_grid(mean, var, t), rise_times, rise, 7, 3, chunk_size=3)
    for name in ("ageing_mean", "ageing_std", "lol_mean", "lol_std"):
        assert np.allclose(getattr(whole, name).values, getattr(chunked, name).values)


def test_propagate_moments():
    t = 60.0 * np.arange(2)
    mean = np.array([[98.0], [98.0]])
    var = np.full_like(mean, 1.0)
    summary = thermal.propagate_ageing(_grid(mean, var, t), t, np.zeros(2), 20000, 1, 4096)
    # lognormal mean of 2 ** (Z / 6)
    c = np.log(2.0) / 6.0
    assert summary.ageing_mean.values[0, 0] == pytest.approx(np.exp(c * c / 2.0), rel=5e-3)
    assert summary.ageing_std.values[0, 0] == pytest.approx(
        np.sqrt((np.exp(c * c) - 1.0) * np.exp(c * c)), rel=0.05
    )


def test_propagate_errors():
    t = [0.0, 60.0, 180.0]
    mean = np.full((3, 2), 90.0)
    grid = _grid(mean, np.zeros_like(mean), t)
    with pytest.raises(errors.ValidationError):
        thermal.propagate_ageing(grid, [0.0, 180.0], [0.0, 0.0], 4, 0)
    uniform = _grid(mean, np.zeros_like(mean), [0.0, 60.0, 120.0])
    with pytest.raises(errors.ValidationError):
        thermal.propagate_ageing(uniform, [0.0, 180.0], [0.0, 0.0], 1, 0)
