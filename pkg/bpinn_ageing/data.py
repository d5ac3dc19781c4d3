"""
Operating series of a distribution transformer: ingestion, cleaning and a
synthetic generator with the same CSV schema.

The schema is ``timestamp,load_pu,ambient_c,topoil_c`` with ISO-8601
timestamps one minute apart. Empty or non-finite cells are missing values.
"""

import csv
import dataclasses
import datetime
import math
from pathlib import Path
from typing import List

import numpy as np
from dateutil.parser import isoparse

from . import errors, generic, physics, refsolver, utils

SERIES_FIELDS = generic.Outputs.fields_map["series"]
CHANNELS = SERIES_FIELDS[1:]
STEP = datetime.timedelta(seconds=60)
DEFAULT_START = datetime.datetime(2024, 6, 1)
PROFILES = ("sinusoidal_default",)


@dataclasses.dataclass(eq=False)
class OperatingSeries:
    """Minute-resolution load, ambient and top-oil channels.

    Missing values are NaN until :py:func:`impute` fills them.
    """

    timestamps: List[datetime.datetime]
    load_pu: np.ndarray
    ambient_c: np.ndarray
    topoil_c: np.ndarray

    def __post_init__(self):
        self.timestamps = list(self.timestamps)
        for name in CHANNELS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.timestamps)
        if any(getattr(self, name).shape != (n,) for name in CHANNELS):
            raise errors.ValidationError("series channels differ in length")
        for before, after in zip(self.timestamps, self.timestamps[1:]):
            if after - before != STEP:
                raise errors.ValidationError(
                    f"timestamps {before.isoformat()} and {after.isoformat()} "
                    "are not one minute apart"
                )

    def __len__(self):
        return len(self.timestamps)

    @property
    def seconds(self) -> np.ndarray:
        """Seconds from the first timestamp."""
        return 60.0 * np.arange(len(self))

    @property
    def missing(self) -> dict:
        return {name: int(np.sum(~np.isfinite(getattr(self, name)))) for name in CHANNELS}

    def replace(self, **changes) -> "OperatingSeries":
        return dataclasses.replace(self, **changes)

    def to_outputs(self) -> generic.Outputs:
        outputs = generic.Outputs("series")
        outputs.rows = list(
            zip(
                self.timestamps,
                self.load_pu.tolist(),
                self.ambient_c.tolist(),
                self.topoil_c.tolist(),
            )
        )
        return outputs


def _cell(text: str, path, line: int) -> float:
    text = text.strip()
    if not text:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise errors.SeriesIOError(f"malformed number {text!r}", path=path, line=line)
    return value if math.isfinite(value) else math.nan


def load_series(path) -> OperatingSeries:
    """
    Reads a series file. Duplicate timestamps keep their first row; gaps
    inside the span become missing rows.

    :raises bpinn_ageing.errors.SeriesIOError: missing file, wrong header,
        malformed row, decreasing timestamps or a spacing that is not a
        whole number of minutes
    """
    path = Path(path)
    if not path.exists():
        raise errors.SeriesIOError("series file not found", path=path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SERIES_FIELDS:
            raise errors.SeriesIOError(
                f"header must be {','.join(SERIES_FIELDS)}", path=path, line=1
            )
        timestamps, values, lines = [], [], []
        duplicates = 0
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SERIES_FIELDS):
                raise errors.SeriesIOError(
                    f"expected {len(SERIES_FIELDS)} fields, got {len(row)}", path=path, line=line
                )
            try:
                stamp = isoparse(row[0].strip())
            except ValueError:
                raise errors.SeriesIOError(f"malformed timestamp {row[0]!r}", path=path, line=line)
            if timestamps and stamp == timestamps[-1]:
                duplicates += 1
                continue
            if timestamps and stamp < timestamps[-1]:
                raise errors.SeriesIOError("timestamps are not increasing", path=path, line=line)
            timestamps.append(stamp)
            values.append([_cell(cell, path, line) for cell in row[1:]])
            lines.append(line)
    if not timestamps:
        raise errors.SeriesIOError("series file holds no rows", path=path)
    if duplicates:
        utils.logger.warning("dropped %d duplicate timestamps from %s", duplicates, path)

    filled_stamps, filled_values = [timestamps[0]], [values[0]]
    gaps = 0
    for previous, stamp, row, line in zip(timestamps, timestamps[1:], values[1:], lines[1:]):
        steps, remainder = divmod(stamp - previous, STEP)
        if remainder:
            raise errors.SeriesIOError(
                "timestamp spacing is not a whole number of minutes", path=path, line=line
            )
        for k in range(1, steps):
            filled_stamps.append(previous + k * STEP)
            filled_values.append([math.nan] * len(CHANNELS))
        gaps += steps - 1
        filled_stamps.append(stamp)
        filled_values.append(row)
    if gaps:
        utils.logger.warning("filled %d missing minutes in %s", gaps, path)

    columns = np.array(filled_values, dtype=float).reshape(-1, len(CHANNELS)).T
    series = OperatingSeries(filled_stamps, *columns)
    utils.logger.info("loaded %d rows from %s", len(series), path)
    return series


def impute(series: OperatingSeries) -> OperatingSeries:
    """Replaces missing values with the mean of the present values of their
    channel.

    :raises bpinn_ageing.errors.ValidationError: a channel has no values
    """
    changes = {}
    for name in CHANNELS:
        channel = getattr(series, name)
        present = np.isfinite(channel)
        if not present.any():
            raise errors.ValidationError(f"channel {name} holds no values to impute from")
        if not present.all():
            utils.logger.warning(
                "imputed %d missing values of %s", int(np.sum(~present)), name
            )
            changes[name] = np.where(present, channel, channel[present].mean())
    return series.replace(**changes) if changes else series


def write_series(series: OperatingSeries, filename, output_format: str = "csv") -> None:
    """Writes the series in the schema :py:func:`load_series` reads."""
    series.to_outputs().save(filename, output_format)
    utils.logger.info("wrote series %s", filename)


def _solar_load(hours: np.ndarray) -> np.ndarray:
    phase = (hours - 6.0) / 12.0
    return np.where((phase > 0) & (phase < 1), 0.5 * np.sin(np.pi * phase), 0.0)


def synthesize(
    days: int,
    seed=0,
    profile: str = "sinusoidal_default",
    noise: float = 0.02,
    start: datetime.datetime = DEFAULT_START,
    coefficients=None,
) -> OperatingSeries:
    """
    A synthetic floating-solar transformer series with ``1440 * days`` rows.

    The load is a half-sine between 06:00 and 18:00 peaking at 0.5 p.u., with
    Gaussian noise of standard deviation ``noise`` and clipped at zero. The
    ambient temperature swings 6 K around 20 degC with its peak at 15:00.
    Top oil follows the lumped thermal model
    :py:func:`bpinn_ageing.refsolver.lumped_top_oil`.

    :param coefficients: overrides of
        :py:data:`bpinn_ageing.physics.DEFAULT_COEFFICIENTS`
    """
    if int(days) < 1:
        raise errors.ValidationError(f"days must be at least 1, got {days}")
    if profile not in PROFILES:
        raise errors.ValidationError(
            f"unknown profile {profile!r}. Should be one of {', '.join(PROFILES)}"
        )
    if noise < 0:
        raise errors.ValidationError("noise must not be negative")
    coeffs = dict(physics.DEFAULT_COEFFICIENTS, **(coefficients or {}))
    rng = np.random.default_rng(seed)

    n = 1440 * int(days)
    seconds = 60.0 * np.arange(n)
    hours = (seconds / 3600.0) % 24.0
    load = _solar_load(hours)
    if noise > 0:
        load = np.clip(load + rng.normal(0.0, noise, n), 0.0, None)
    ambient = 20.0 + 6.0 * np.sin(2.0 * np.pi * (hours - 9.0) / 24.0)
    topoil = refsolver.lumped_top_oil(
        seconds,
        load,
        ambient,
        rho_cp=coeffs["rho_cp"],
        h=coeffs["h"],
        p0=coeffs["p0"],
        mu_rated=coeffs["mu_rated"],
    )
    timestamps = [start + k * STEP for k in range(n)]
    return OperatingSeries(timestamps, load, ambient, topoil)


def normalize_series(series: OperatingSeries, norm: physics.Normalization) -> OperatingSeries:
    """Maps the temperature channels to unit scale; load is already per unit."""
    return series.replace(
        ambient_c=norm.temp_to_unit(series.ambient_c),
        topoil_c=norm.temp_to_unit(series.topoil_c),
    )


def denormalize_series(series: OperatingSeries, norm: physics.Normalization) -> OperatingSeries:
    """Inverse of :py:func:`normalize_series`."""
    return series.replace(
        ambient_c=norm.temp_from_unit(series.ambient_c),
        topoil_c=norm.temp_from_unit(series.topoil_c),
    )
