"""
Crank-Nicolson reference solution of the transformer heat problem.

The solver marches::

    u_t = alpha u_xx - (h / rho_cp) u + (P0 + K(t)**2 mu + h theta_a(t)) / rho_cp

on a uniform grid of ``nx`` interior nodes with Dirichlet data pinned at both
ends. The reaction term sits in the tridiagonal system matrix and the
time-dependent source is frozen at the half step.
"""

import csv
import dataclasses
import math
from io import StringIO
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded

from . import errors, physics, utils


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Discretisation of ``[0, H] x [0, T_end]``.

    :param nx: number of interior x-nodes; the grid has ``nx + 2`` columns
    :param dt: time step [s]; the last step is shortened to land on ``T_end``
    """

    nx: int = 201
    dt: float = 60.0

    def __post_init__(self):
        if int(self.nx) < 3:
            raise errors.ValidationError(f"nx must be at least 3, got {self.nx}")
        if not self.dt > 0:
            raise errors.ValidationError(f"dt must be positive, got {self.dt}")

    def x_nodes(self, height: float) -> np.ndarray:
        return np.linspace(0.0, height, int(self.nx) + 2)

    def t_nodes(self, t_end: float) -> np.ndarray:
        full = int(math.floor(t_end / self.dt + 1e-9))
        nodes = self.dt * np.arange(full + 1, dtype=float)
        if t_end - nodes[-1] > 1e-9 * max(t_end, 1.0):
            nodes = np.append(nodes, t_end)
        else:
            nodes[-1] = t_end
        return nodes


@dataclasses.dataclass(eq=False)
class FieldGrid:
    """Temperatures on a rectangular grid, one row per time node.

    :param x: x-nodes [m]
    :param t: t-nodes [s]
    :param values: ``(len(t), len(x))`` array [degC]
    """

    x: np.ndarray
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.t.size, self.x.size):
            raise errors.ValidationError(
                f"field values {self.values.shape} do not match "
                f"{self.t.size} times x {self.x.size} positions"
            )
        for name in ("x", "t"):
            nodes = getattr(self, name)
            if nodes.size > 1 and np.any(np.diff(nodes) <= 0):
                raise errors.ValidationError(f"{name}-nodes must increase strictly")

    @property
    def shape(self):
        return self.values.shape

    def points(self):
        """Coordinates of every node, time-major, as two flat arrays ``(x, t)``."""
        t_mesh, x_mesh = np.meshgrid(self.t, self.x, indexing="ij")
        return x_mesh.ravel(), t_mesh.ravel()

    def strided(
        self, t_stride: int = 1, x_stride: int = 1, keep_last: bool = True
    ) -> "FieldGrid":
        """Every ``t_stride``-th row and ``x_stride``-th column.

        :param keep_last: also keep the last row and column so the grid spans
            the same hull; turn it off where uniform spacing matters
        """
        rows = _stride_index(self.t.size, t_stride, keep_last)
        cols = _stride_index(self.x.size, x_stride, True)
        return FieldGrid(self.x[cols], self.t[rows], self.values[np.ix_(rows, cols)])

    def with_values(self, values) -> "FieldGrid":
        return FieldGrid(self.x, self.t, np.reshape(values, self.shape))

    def to_csv(self) -> str:
        """x-nodes in the header row, one row per time node led by ``t_s``."""
        with StringIO() as output:
            writer = csv.writer(output, lineterminator="\n")
            writer.writerow(["t_s"] + [repr(float(v)) for v in self.x])
            for t, row in zip(self.t, self.values):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
            return output.getvalue()

    def save(self, filename) -> None:
        Path(filename).write_text(self.to_csv())
        utils.logger.info("wrote field grid %s", filename)

    @classmethod
    def load(cls, filename) -> "FieldGrid":
        path = Path(filename)
        if not path.exists():
            raise errors.SeriesIOError("field grid not found", path=path)
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
        if not rows or not rows[0] or rows[0][0] != "t_s":
            raise errors.SeriesIOError("missing t_s header", path=path, line=1)
        try:
            x = [float(v) for v in rows[0][1:]]
        except ValueError:
            raise errors.SeriesIOError("malformed x header", path=path, line=1)
        t, values = [], []
        for line, row in enumerate(rows[1:], start=2):
            if len(row) != len(x) + 1:
                raise errors.SeriesIOError(
                    f"expected {len(x) + 1} fields, got {len(row)}", path=path, line=line
                )
            try:
                numbers = [float(v) for v in row]
            except ValueError:
                raise errors.SeriesIOError("malformed number", path=path, line=line)
            t.append(numbers[0])
            values.append(numbers[1:])
        return cls(np.array(x), np.array(t), np.array(values).reshape(len(t), len(x)))


def _stride_index(size: int, stride: int, keep_last: bool) -> np.ndarray:
    if int(stride) < 1:
        raise errors.ValidationError(f"stride must be at least 1, got {stride}")
    index = np.arange(0, size, int(stride))
    if keep_last and index[-1] != size - 1:
        index = np.append(index, size - 1)
    return index


def _system(nx: int, dx: float, dt: float, alpha: float, decay: float):
    """Banded ``I - dt/2 A`` and a callable applying ``I + dt/2 A``."""
    off = alpha / dx**2
    diag = -2.0 * off - decay
    lhs = np.zeros((3, nx))
    lhs[0, 1:] = -0.5 * dt * off
    lhs[1, :] = 1.0 - 0.5 * dt * diag
    lhs[2, :-1] = -0.5 * dt * off
    # strictly diagonally dominant for alpha, dt, dx > 0
    assert np.all(lhs[1] > np.abs(lhs[0]) + np.abs(lhs[2])), "singular Crank-Nicolson system"

    def explicit(u):
        out = (1.0 + 0.5 * dt * diag) * u
        out[1:] += 0.5 * dt * off * u[:-1]
        out[:-1] += 0.5 * dt * off * u[1:]
        return out

    return lhs, explicit, off


def solve(
    spec: physics.ThermalPdeSpec,
    grid: GridSpec = GridSpec(),
    initial: Optional[Callable] = None,
) -> FieldGrid:
    """Marches the heat problem over the whole series span.

    :param initial: callable mapping x-nodes to the initial profile; defaults
        to :py:func:`bpinn_ageing.physics.initial_temperature`
    :rtype: :py:class:`FieldGrid`
    """
    x = grid.x_nodes(spec.height)
    t = grid.t_nodes(spec.t_end)
    nx = int(grid.nx)
    dx = spec.height / (nx + 1)
    decay = spec.h / spec.rho_cp

    ambient = spec.ambient_at(t)
    topoil = spec.topoil_at(t)
    values = np.empty((t.size, x.size))
    profile = physics.initial_temperature(spec, x) if initial is None else initial(x)
    values[0] = profile
    values[:, 0] = ambient
    values[:, -1] = topoil

    systems = {}
    u = values[0, 1:-1].copy()
    for n in range(t.size - 1):
        dt = t[n + 1] - t[n]
        if dt not in systems:
            systems[dt] = _system(nx, dx, dt, spec.alpha, decay)
        lhs, explicit, off = systems[dt]
        middle = t[n] + 0.5 * dt
        load = spec.load_at(middle)
        source = (
            spec.p0 + load * load * spec.mu_rated + spec.h * spec.ambient_at(middle)
        ) / spec.rho_cp
        rhs = explicit(u) + dt * source
        rhs[0] += 0.5 * dt * off * (ambient[n] + ambient[n + 1])
        rhs[-1] += 0.5 * dt * off * (topoil[n] + topoil[n + 1])
        u = solve_banded((1, 1), lhs, rhs)
        values[n + 1, 1:-1] = u
    utils.logger.debug("solved %d steps on %d nodes", t.size - 1, x.size)
    return FieldGrid(x, t, values)


def interpolate(field: FieldGrid, x, t):
    """Bilinear lookup of the field at ``(x, t)``.

    :raises bpinn_ageing.errors.OutOfSpanError: outside the grid hull
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if (
        np.any(x < field.x[0])
        or np.any(x > field.x[-1])
        or np.any(t < field.t[0])
        or np.any(t > field.t[-1])
    ):
        raise errors.OutOfSpanError("point outside the field grid")
    lookup = RegularGridInterpolator((field.t, field.x), field.values, method="linear")
    points = np.stack(np.broadcast_arrays(t, x), axis=-1)
    return lookup(points)


def decaying_mode(x, t, height: float, alpha: float):
    """``sin(pi x / H) exp(-alpha pi^2 t / H^2)``, an exact solution with
    zero source and zero boundary data."""
    return np.sin(np.pi * x / height) * np.exp(-alpha * np.pi**2 * t / height**2)


def manufactured_error(nx: int = 101, steps: int = 2000, decay_periods: float = 1.0) -> float:
    """Max-norm error of :py:func:`solve` against :py:func:`decaying_mode`.

    The run covers ``decay_periods`` e-folding times of the mode on a unit
    height with unit diffusivity.
    """
    t_end = decay_periods / np.pi**2
    spec = physics.ThermalPdeSpec(
        times=[0.0, t_end],
        load=[0.0, 0.0],
        ambient=[0.0, 0.0],
        topoil=[0.0, 0.0],
        k=1.0,
        rho_cp=1.0,
        h=0.0,
        p0=0.0,
        mu_rated=0.0,
        height=1.0,
    )
    field = solve(
        spec,
        GridSpec(nx=nx, dt=t_end / steps),
        initial=lambda x: decaying_mode(x, 0.0, 1.0, 1.0),
    )
    x_mesh, t_mesh = field.points()
    exact = decaying_mode(x_mesh, t_mesh, 1.0, 1.0).reshape(field.shape)
    return float(np.max(np.abs(field.values - exact)))


def lumped_top_oil(
    times, load, ambient, rho_cp: float, h: float, p0: float, mu_rated: float, initial=None
) -> np.ndarray:
    """Integrates ``rho_cp dT/dt = P0 + K**2 mu - h (T - theta_a)``.

    Each step holds the inputs at the mean of its end points and advances
    with the exact exponential solution. The start defaults to the
    equilibrium of the first sample.
    """
    times = np.asarray(times, dtype=float)
    load = np.asarray(load, dtype=float)
    ambient = np.asarray(ambient, dtype=float)
    heat = p0 + load * load * mu_rated
    out = np.empty(times.size)
    if initial is None:
        if h <= 0:
            raise errors.ValidationError("an equilibrium start needs h > 0")
        initial = ambient[0] + heat[0] / h
    out[0] = initial
    for n in range(times.size - 1):
        dt = times[n + 1] - times[n]
        q = 0.5 * (heat[n] + heat[n + 1])
        amb = 0.5 * (ambient[n] + ambient[n + 1])
        if h > 0:
            equilibrium = amb + q / h
            out[n + 1] = equilibrium + (out[n] - equilibrium) * math.exp(-h * dt / rho_cp)
        else:
            out[n + 1] = out[n] + dt * q / rho_cp
    return out
