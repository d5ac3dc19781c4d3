"""
Probabilistic scores of a predictive distribution against a truth field.
"""

import dataclasses
import json
import math
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import norm

from . import errors, generic, utils

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_LEVELS = np.round(np.arange(1, 100) / 100.0, 2)
MIN_CALIBRATION_POINTS = 10


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size != truth.size:
        raise errors.ValidationError(
            f"{pred.size} predictions but {truth.size} truth values"
        )
    if not pred.size:
        raise errors.ValidationError("no points to score")
    return pred, truth


def rmse(pred_means, truth) -> float:
    """Root-mean-square error."""
    pred_means, truth = _pair(pred_means, truth)
    return float(np.sqrt(np.mean(np.square(pred_means - truth))))


def nll_metric(pred, truth) -> float:
    """Mean Gaussian negative log-likelihood under ``(mean, total_var)``.

    :raises bpinn_ageing.errors.ZeroVarianceError: a point has no variance;
        score deterministic predictions with :py:func:`rmse`
    """
    mean, truth = _pair(pred.mean, truth)
    var = np.asarray(pred.total_var, dtype=float).ravel()
    if np.any(var <= 0):
        raise errors.ZeroVarianceError(
            "NLL is undefined for zero predictive variance; use rmse instead"
        )
    return float(np.mean(0.5 * (LOG_2PI + np.log(var) + np.square(truth - mean) / var)))


def crps_gaussian(mu, sigma, y):
    """
    Closed-form CRPS of ``N(mu, sigma**2)`` at ``y``; broadcasts over arrays.
    ``sigma = 0`` gives the absolute error.

    :raises bpinn_ageing.errors.ValidationError: negative ``sigma``
    """
    mu, sigma, y = np.broadcast_arrays(
        np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float), np.asarray(y, dtype=float)
    )
    if np.any(sigma < 0):
        raise errors.ValidationError("sigma must not be negative")
    error = y - mu
    positive = sigma > 0
    z = np.divide(error, sigma, out=np.zeros_like(error), where=positive)
    closed = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / math.sqrt(math.pi))
    out = np.where(positive, closed, np.abs(error))
    return float(out) if out.ndim == 0 else out


def crps_avg(pred, truth) -> float:
    """Mean CRPS over points, each scored with ``(mean, sqrt(total_var))``."""
    mean, truth = _pair(pred.mean, truth)
    std = np.sqrt(np.asarray(pred.total_var, dtype=float).ravel())
    return float(np.mean(crps_gaussian(mean, std, truth)))


@dataclasses.dataclass
class CalibrationResult:
    """Reliability curve and its summaries."""

    levels: np.ndarray
    coverage: np.ndarray
    miscalibration_area: float
    sharpness: float

    def to_outputs(self) -> generic.Outputs:
        outputs = generic.Outputs("reliability")
        outputs.rows = list(zip(self.levels.tolist(), self.coverage.tolist()))
        return outputs


def calibration(pred, truth, levels: Sequence[float] = DEFAULT_LEVELS) -> CalibrationResult:
    """
    Coverage of the central Gaussian intervals at every nominal level.

    The miscalibration area is the mean absolute gap between coverage and
    level; sharpness is the mean predictive standard deviation.

    :raises bpinn_ageing.errors.ValidationError: fewer than
        :py:data:`MIN_CALIBRATION_POINTS` points
    """
    mean, truth = _pair(pred.mean, truth)
    if mean.size < MIN_CALIBRATION_POINTS:
        raise errors.ValidationError(
            f"calibration needs at least {MIN_CALIBRATION_POINTS} points, got {mean.size}"
        )
    levels = np.asarray(levels, dtype=float)
    if not levels.size or np.any(levels <= 0) or np.any(levels >= 1):
        raise errors.ValidationError("levels must lie in (0, 1)")
    std = np.sqrt(np.asarray(pred.total_var, dtype=float).ravel())
    gap = np.abs(truth - mean)
    z = np.divide(gap, std, out=np.where(gap > 0, np.inf, 0.0), where=std > 0)
    half_widths = norm.ppf(0.5 + 0.5 * levels)
    coverage = np.array([np.mean(z <= w) for w in half_widths])
    return CalibrationResult(
        levels,
        coverage,
        float(np.mean(np.abs(coverage - levels))),
        float(np.mean(std)),
    )


@dataclasses.dataclass
class InstantRow:
    """Scores of one prediction instant; probabilistic scores may be ``None``."""

    instant_h: float
    rmse: float
    crps: Optional[float]
    nll: Optional[float]
    miscalibration_area: Optional[float]
    sharpness: Optional[float]
    n_points: int


@dataclasses.dataclass
class EvalReport:
    """Overall scores plus one :py:class:`InstantRow` per requested instant."""

    variant: str
    rmse: float
    crps_mean: Optional[float]
    nll_mean: Optional[float]
    miscalibration_area: Optional[float]
    sharpness: Optional[float]
    n_points: int
    instants: List[InstantRow] = dataclasses.field(default_factory=list)
    reliability: Optional[CalibrationResult] = None

    def to_json(self) -> str:
        document = {
            field.name: getattr(self, field.name)
            for field in dataclasses.fields(self)
            if field.name not in ("instants", "reliability")
        }
        document["instants"] = [dataclasses.asdict(row) for row in self.instants]
        return json.dumps(document, indent=4, sort_keys=True)

    def instants_outputs(self) -> generic.Outputs:
        outputs = generic.Outputs("instants")
        outputs.rows = [dataclasses.astuple(row) for row in self.instants]
        return outputs


def _scores(pred, truth, probabilistic: bool, levels) -> tuple:
    """``((rmse, crps, nll, miscalibration_area, sharpness), curve)``"""
    error = rmse(pred.mean, truth)
    if not probabilistic:
        return (error, None, None, None, None), None
    curve = calibration(pred, truth, levels) if len(pred) >= MIN_CALIBRATION_POINTS else None
    return (
        error,
        crps_avg(pred, truth),
        nll_metric(pred, truth),
        None if curve is None else curve.miscalibration_area,
        None if curve is None else curve.sharpness,
    ), curve


def evaluate(
    variant: str,
    pred,
    truth,
    instants_h: Sequence[float] = (),
    probabilistic: bool = True,
    levels: Sequence[float] = DEFAULT_LEVELS,
) -> EvalReport:
    """Scores a :py:class:`bpinn_ageing.uq.PredictiveGrid` against a truth
    :py:class:`bpinn_ageing.refsolver.FieldGrid` on the same nodes.

    Each instant is scored on the time row nearest to it. Instants beyond
    the grid are skipped with a warning.

    :param probabilistic: ``False`` for deterministic predictions; CRPS, NLL
        and calibration are then reported as ``None``
    :raises bpinn_ageing.errors.ValidationError: the grids differ
    """
    if (
        pred.mean.shape != truth.values.shape
        or not np.allclose(pred.x, truth.x, rtol=1e-12, atol=1e-12)
        or not np.allclose(pred.t, truth.t, rtol=1e-12, atol=1e-9)
    ):
        raise errors.ValidationError("prediction and truth grids differ")

    flat = pred.flat()
    overall, curve = _scores(flat, truth.values.ravel(), probabilistic, levels)
    report = EvalReport(variant, *overall, n_points=len(flat), reliability=curve)

    spacing = float(np.median(np.diff(truth.t))) if truth.t.size > 1 else 0.0
    for instant in instants_h:
        seconds = float(instant) * 3600.0
        row = int(np.argmin(np.abs(truth.t - seconds)))
        if abs(truth.t[row] - seconds) > 0.5 * spacing + 1e-9:
            utils.logger.warning("instant %s h lies outside the grid; skipped", instant)
            continue
        index = np.arange(row * truth.x.size, (row + 1) * truth.x.size)
        scores, _ = _scores(flat.subset(index), truth.values[row], probabilistic, levels)
        report.instants.append(InstantRow(float(instant), *scores, n_points=index.size))
    return report
