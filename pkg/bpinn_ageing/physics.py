"""
The transformer heat-diffusion problem.

Oil temperature ``u(x, t)`` over the winding height obeys::

    u_xx + q / k - u_t / alpha = 0
    q(x, t) = P0 + K(t)**2 * mu - h * (u - theta_a(t))

with Dirichlet data ``u(0, t) = theta_a(t)`` (ambient) and
``u(H, t) = theta_to(t)`` (top oil). The losses ``P0`` and ``mu`` are used as
volumetric densities: the problem is posed per cubic metre of oil.
"""

import dataclasses
from typing import Optional, Tuple

import numpy as np

from . import errors, utils

DEFAULT_COEFFICIENTS = {
    "k": 0.11,
    "rho_cp": 1.53e6,
    "h": 50.0,
    "p0": 842.0,
    "mu_rated": 9800.0,
    "height": 1.0,
}


@dataclasses.dataclass(frozen=True, eq=False)
class ThermalPdeSpec:
    """Coefficients and boundary series of the heat problem.

    :param times: seconds from the start of the series, starting at 0
    :param load: load factor ``K(t)`` [p.u.]
    :param ambient: ambient temperature [degC], bottom boundary
    :param topoil: top-oil temperature [degC], top boundary
    :param k: thermal conductivity [W/(m K)]
    :param rho_cp: volumetric heat capacity [J/(m3 K)]
    :param h: convective coefficient [W/(m3 K)]
    :param p0: no-load losses [W/m3]
    :param mu_rated: rated load losses [W/m3]
    :param height: domain height ``H`` [m]
    """

    times: np.ndarray
    load: np.ndarray
    ambient: np.ndarray
    topoil: np.ndarray
    k: float = DEFAULT_COEFFICIENTS["k"]
    rho_cp: float = DEFAULT_COEFFICIENTS["rho_cp"]
    h: float = DEFAULT_COEFFICIENTS["h"]
    p0: float = DEFAULT_COEFFICIENTS["p0"]
    mu_rated: float = DEFAULT_COEFFICIENTS["mu_rated"]
    height: float = DEFAULT_COEFFICIENTS["height"]

    def __post_init__(self):
        for name in ("times", "load", "ambient", "topoil"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.times.size
        if n < 2:
            raise errors.ValidationError("series must hold at least two samples")
        if any(getattr(self, s).shape != (n,) for s in ("load", "ambient", "topoil")):
            raise errors.ValidationError("load, ambient and top-oil series differ in length")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise errors.ValidationError(
                "series times must start at 0 and increase strictly"
            )
        for name in ("load", "ambient", "topoil"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise errors.ValidationError(
                    f"{name} series holds missing values; impute it first"
                )
        if self.height <= 0 or self.k <= 0 or self.rho_cp <= 0:
            raise errors.ValidationError("height, k and rho_cp must be positive")
        if self.h < 0:
            raise errors.ValidationError("h must not be negative")

    @classmethod
    def from_series(cls, series, **coefficients) -> "ThermalPdeSpec":
        """Builds the problem from an :py:class:`bpinn_ageing.data.OperatingSeries`."""
        return cls(
            times=series.seconds,
            load=series.load_pu,
            ambient=series.ambient_c,
            topoil=series.topoil_c,
            **coefficients,
        )

    @property
    def alpha(self) -> float:
        """Thermal diffusivity ``k / rho_cp`` [m2/s]."""
        return self.k / self.rho_cp

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def coefficients(self) -> dict:
        return {name: getattr(self, name) for name in DEFAULT_COEFFICIENTS}

    def _lookup(self, values, t):
        t = np.asarray(t, dtype=float)
        slack = 1e-9 * self.t_end
        if np.any(t < -slack) or np.any(t > self.t_end + slack):
            raise errors.OutOfSpanError(
                f"time outside the series span [0, {self.t_end}] s"
            )
        return np.interp(t, self.times, values)

    def load_at(self, t):
        return self._lookup(self.load, t)

    def ambient_at(self, t):
        return self._lookup(self.ambient, t)

    def topoil_at(self, t):
        return self._lookup(self.topoil, t)


@dataclasses.dataclass(frozen=True)
class Normalization:
    """Affine maps between physical and unit-scale coordinates."""

    x_scale: float = 1.0
    t_scale: float = 1.0
    temp_shift: float = 0.0
    temp_scale: float = 1.0

    def __post_init__(self):
        for name in ("x_scale", "t_scale", "temp_scale"):
            value = getattr(self, name)
            if not value > 0:
                raise errors.ValidationError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, float(value))
        object.__setattr__(self, "temp_shift", float(self.temp_shift))

    @classmethod
    def from_spec(cls, spec: ThermalPdeSpec) -> "Normalization":
        """Maps ``[0, H] x [0, T_end]`` to the unit square and the boundary
        temperature range to ``[0, 1]``."""
        low = min(spec.ambient.min(), spec.topoil.min())
        high = max(spec.ambient.max(), spec.topoil.max())
        span = high - low
        if span == 0:
            utils.logger.warning("boundary series are constant; using unit temperature scale")
            span = 1.0
        return cls(spec.height, spec.t_end, float(low), float(span))

    def x_to_unit(self, x):
        return np.asarray(x, dtype=float) / self.x_scale

    def x_from_unit(self, x):
        return np.asarray(x, dtype=float) * self.x_scale

    def t_to_unit(self, t):
        return np.asarray(t, dtype=float) / self.t_scale

    def t_from_unit(self, t):
        return np.asarray(t, dtype=float) * self.t_scale

    def temp_to_unit(self, theta):
        return (theta - self.temp_shift) / self.temp_scale

    def temp_from_unit(self, u):
        return u * self.temp_scale + self.temp_shift

    def residual_scale(self, spec: ThermalPdeSpec) -> float:
        """Factor turning the physical residual into normalised time and
        temperature units."""
        return spec.alpha * self.t_scale / self.temp_scale


@dataclasses.dataclass
class PointSet:
    """Physical space-time points ``(x [m], t [s])`` with optional targets [degC]."""

    x: np.ndarray
    t: np.ndarray
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.t = np.atleast_1d(np.asarray(self.t, dtype=float))
        if self.target is not None:
            self.target = np.atleast_1d(np.asarray(self.target, dtype=float))
        if self.t.shape != self.x.shape or (
            self.target is not None and self.target.shape != self.x.shape
        ):
            raise errors.ValidationError("point coordinates and targets differ in length")

    def __len__(self):
        return self.x.size

    def subset(self, index) -> "PointSet":
        target = None if self.target is None else self.target[index]
        return PointSet(self.x[index], self.t[index], target)

    @classmethod
    def empty(cls) -> "PointSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))


@dataclasses.dataclass
class TrainingSets:
    """Initial, boundary and collocation points of one training run."""

    initial: PointSet
    boundary: PointSet
    collocation: PointSet


def heat_source(spec: ThermalPdeSpec, x, t, theta_o):
    """Volumetric heat source ``q`` [W/m3].

    ``x`` does not enter the source; it is accepted so the call mirrors the
    field it is evaluated on. ``theta_o`` may be a Var.
    """
    load = spec.load_at(t)
    return spec.p0 + load * load * spec.mu_rated - spec.h * (theta_o - spec.ambient_at(t))


def residual(spec: ThermalPdeSpec, norm: Normalization, derivatives, x, t):
    """Heat-equation residual in physical units [K/m2].

    :param derivatives: ``(u, u_x, u_xx, u_t)`` of the normalised network
        output with respect to normalised inputs
    :param x: physical positions [m]
    :param t: physical times [s]
    """
    u, _, u_xx, u_t = derivatives
    theta = norm.temp_from_unit(u)
    u_xx_phys = u_xx * (norm.temp_scale / norm.x_scale**2)
    u_t_phys = u_t * (norm.temp_scale / norm.t_scale)
    return u_xx_phys + heat_source(spec, x, t, theta) / spec.k - u_t_phys / spec.alpha


def training_residual(spec: ThermalPdeSpec, norm: Normalization, derivatives, x, t):
    """:py:func:`residual` rescaled by :py:meth:`Normalization.residual_scale`."""
    return residual(spec, norm, derivatives, x, t) * norm.residual_scale(spec)


def initial_temperature(spec: ThermalPdeSpec, x):
    """Initial profile: linear between ambient at ``x=0`` and top oil at ``x=H``."""
    x = np.asarray(x, dtype=float)
    return spec.ambient[0] + (spec.topoil[0] - spec.ambient[0]) * x / spec.height


def _open_unit(rng: np.random.Generator, n: int) -> np.ndarray:
    draws = rng.random(n)
    draws[draws == 0.0] = 0.5
    return draws


def sample_training_sets(
    spec: ThermalPdeSpec, counts: Tuple[int, int, int], seed
) -> TrainingSets:
    """Draws initial, boundary and collocation points.

    Boundary points are drawn without replacement from the pool of
    ``2 * len(times)`` (side, timestamp) pairs, so a request for the whole
    pool uses every timestamp exactly once per side.

    :param counts: ``(N0, Nb, Nr)``
    """
    n0, nb, nr = (int(c) for c in counts)
    if min(n0, nb, nr) < 1:
        raise errors.ValidationError(f"sample counts must be at least 1, got {counts}")
    n_times = spec.times.size
    capacity = 2 * n_times
    if nb > capacity:
        raise errors.CapacityError(nb, capacity, "boundary samples")
    rng = np.random.default_rng(seed)

    x0 = spec.height * rng.random(n0)
    initial = PointSet(x0, np.zeros(n0), initial_temperature(spec, x0))

    picks = np.sort(rng.choice(capacity, size=nb, replace=False))
    side, index = np.divmod(picks, n_times)
    boundary = PointSet(
        side * spec.height,
        spec.times[index],
        np.where(side == 0, spec.ambient[index], spec.topoil[index]),
    )

    collocation = PointSet(
        spec.height * _open_unit(rng, nr), spec.t_end * (1.0 - rng.random(nr))
    )
    return TrainingSets(initial, boundary, collocation)
