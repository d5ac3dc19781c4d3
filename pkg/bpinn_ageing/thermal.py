"""
Winding hot-spot dynamics and insulation ageing.

The hot-spot rise over top oil follows the two-term difference equations of
the IEC loading guide. Ageing accelerates by a factor of two for every 6 K
above 98 degC and the loss of life accumulates that factor over time.
"""

import dataclasses
from typing import Optional

import numpy as np
from scipy.signal import lfilter, lfilter_zi

from . import errors, refsolver, utils

REFERENCE_TEMPERATURE = 98.0
DOUBLING_STEP = 6.0


@dataclasses.dataclass(frozen=True)
class HstParams:
    """Hot-spot model constants; times in minutes.

    :param delta_theta_hr: hot-spot rise over top oil at rated load [K]
    :param y: winding exponent
    :param dt: step of the difference equations [min]
    """

    delta_theta_hr: float = 15.1
    k21: float = 2.32
    k22: float = 2.05
    tau_w: float = 9.75
    tau_to: float = 266.8
    y: float = 1.3
    dt: float = 1.0

    def __post_init__(self):
        for field in dataclasses.fields(self):
            if not getattr(self, field.name) > 0:
                raise errors.ValidationError(f"{field.name} must be positive")
        if self.dt > 0.5 * min(self.tau_w, self.tau_to):
            raise errors.ValidationError(
                f"dt={self.dt} min exceeds half of the smaller time constant "
                f"({0.5 * min(self.tau_w, self.tau_to)} min)"
            )

    @property
    def winding_gain(self) -> float:
        return self.dt / (self.k22 * self.tau_w)

    @property
    def oil_gain(self) -> float:
        return self.k22 * self.dt / self.tau_to


@dataclasses.dataclass
class AgeingField:
    """Ageing factor and cumulative loss of life [min], time along axis -2
    for grids and axis -1 for series."""

    ageing: np.ndarray
    loss_of_life: np.ndarray


@dataclasses.dataclass
class AgeingSummary:
    """Per-node Monte Carlo mean and standard deviation of ageing."""

    ageing_mean: refsolver.FieldGrid
    ageing_std: refsolver.FieldGrid
    lol_mean: refsolver.FieldGrid
    lol_std: refsolver.FieldGrid
    n_samples: int


def _relax(gain: float, drive: np.ndarray) -> np.ndarray:
    b, a = [gain], [1.0, gain - 1.0]
    out, _ = lfilter(b, a, drive, zi=lfilter_zi(b, a) * drive[0])
    return out


def hst_rise(params: HstParams, load) -> np.ndarray:
    """Hot-spot rise over top oil for a load series sampled every ``params.dt``.

    Both terms start at their steady state for ``load[0]``.
    """
    load = np.asarray(load, dtype=float)
    if load.ndim != 1 or load.size == 0:
        raise errors.ValidationError("load series must be a non-empty vector")
    drive = np.power(load, params.y)
    first = _relax(params.winding_gain, params.k21 * params.delta_theta_hr * drive)
    second = _relax(params.oil_gain, (params.k21 - 1.0) * params.delta_theta_hr * drive)
    return first - second


def hst_initial(params: HstParams, theta_to0: float, k0: float) -> float:
    """Steady-state hot spot for top oil ``theta_to0`` and load ``k0``."""
    return theta_to0 + params.delta_theta_hr * k0**params.y


def hot_spot_series(params: HstParams, topoil, load) -> np.ndarray:
    """Classical hot-spot trajectory, top oil plus :py:func:`hst_rise`."""
    return np.asarray(topoil, dtype=float) + hst_rise(params, load)


def winding_field(oil, rise_times, rise, times: Optional[np.ndarray] = None):
    """Adds the x-independent hot-spot rise to an oil temperature field.

    :param oil: :py:class:`bpinn_ageing.refsolver.FieldGrid` or an array whose
        last two axes are ``(time, x)``
    :param rise_times: times of the rise samples [s]
    :param times: time of each oil row [s]; taken from ``oil`` for grids
    :return: same kind as ``oil``
    """
    grid = oil if isinstance(oil, refsolver.FieldGrid) else None
    if grid is not None:
        times, values = grid.t, grid.values
    else:
        if times is None:
            raise errors.ValidationError("times are required for array fields")
        values = np.asarray(oil, dtype=float)
    times = np.asarray(times, dtype=float)
    rise_times = np.asarray(rise_times, dtype=float)
    if values.shape[-2] != times.size:
        raise errors.ValidationError(
            f"field has {values.shape[-2]} time rows but {times.size} times"
        )
    slack = 1e-9 * max(abs(rise_times[-1]), 1.0)
    if times.min() < rise_times[0] - slack or times.max() > rise_times[-1] + slack:
        raise errors.OutOfSpanError("field times outside the hot-spot rise series")
    shift = np.interp(times, rise_times, rise)
    out = values + shift[:, None]
    return grid.with_values(out) if grid is not None else out


def ageing_factor(theta_w):
    """Relative ageing rate ``2 ** ((theta - 98) / 6)``."""
    return np.exp2((np.asarray(theta_w, dtype=float) - REFERENCE_TEMPERATURE) / DOUBLING_STEP)


def loss_of_life(ageing, dt: float) -> AgeingField:
    """Cumulative loss of life in minutes of nominal ageing.

    :param ageing: ageing factors; time runs along axis -2 when the input has
        two or more axes, along axis -1 otherwise
    :param dt: uniform step [min]
    """
    ageing = np.asarray(ageing, dtype=float)
    axis = -2 if ageing.ndim >= 2 else -1
    return AgeingField(ageing, np.cumsum(ageing * dt, axis=axis))


def _uniform_step(times: np.ndarray) -> float:
    if times.size < 2:
        raise errors.ValidationError("ageing needs at least two time nodes")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise errors.ValidationError("ageing needs uniformly spaced time nodes")
    return float(steps[0]) / 60.0


def propagate_ageing(
    predictive,
    rise_times,
    rise,
    n_samples: int,
    seed,
    chunk_size: int = 64,
) -> AgeingSummary:
    """Pushes Gaussian temperature samples through the ageing model.

    Every node is sampled independently from ``N(mean, total_var)``; each
    sample field gets the hot-spot rise, the ageing factor and the loss of
    life. Moments are merged chunk by chunk.

    :param predictive: :py:class:`bpinn_ageing.uq.PredictiveGrid`
    :param rise_times: times of the rise samples [s]
    :param rise: hot-spot rise over top oil [K]
    """
    if int(n_samples) < 2:
        raise errors.ValidationError(f"n_samples must be at least 2, got {n_samples}")
    dt = _uniform_step(predictive.t)
    mean = np.asarray(predictive.mean, dtype=float)
    std = np.sqrt(np.asarray(predictive.total_var, dtype=float))
    rng = np.random.default_rng(seed)

    count = 0
    moments = {"ageing": None, "lol": None}
    remaining = int(n_samples)
    while remaining:
        size = min(chunk_size, remaining)
        remaining -= size
        temperature = mean + std * rng.standard_normal((size,) + mean.shape)
        winding = winding_field(temperature, rise_times, rise, times=predictive.t)
        field = loss_of_life(ageing_factor(winding), dt)
        for name, batch in (("ageing", field.ageing), ("lol", field.loss_of_life)):
            batch_mean = batch.mean(axis=0)
            batch_m2 = batch.var(axis=0) * size
            if moments[name] is None:
                moments[name] = (batch_mean, batch_m2)
                continue
            run_mean, run_m2 = moments[name]
            total = count + size
            delta = batch_mean - run_mean
            moments[name] = (
                run_mean + delta * size / total,
                run_m2 + batch_m2 + delta**2 * count * size / total,
            )
        count += size

    utils.logger.debug("propagated %d ageing samples", count)
    grid = refsolver.FieldGrid(predictive.x, predictive.t, mean)
    v_mean, v_m2 = moments["ageing"]
    l_mean, l_m2 = moments["lol"]
    return AgeingSummary(
        ageing_mean=grid.with_values(v_mean),
        ageing_std=grid.with_values(np.sqrt(v_m2 / count)),
        lol_mean=grid.with_values(l_mean),
        lol_std=grid.with_values(np.sqrt(l_m2 / count)),
        n_samples=count,
    )
