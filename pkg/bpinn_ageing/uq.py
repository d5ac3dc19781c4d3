"""
Posterior predictive inference and the split of its variance.

Every stochastic variant predicts with an ensemble: posterior draws for the
Bayesian PINNs, dropout masks for the dropout PINNs. The ensemble variance
of the mean head is the epistemic part, the ensemble average of the
variance head the aleatoric part, and their sum the total variance.
"""

import dataclasses
from typing import Optional

import numpy as np

from . import errors, generic, net, refsolver, utils


@dataclasses.dataclass(eq=False)
class PredictiveDistribution:
    """Pointwise predictive moments in physical units.

    Temperatures are in degC and variances in K^2; every array has one entry
    per point.
    """

    x: np.ndarray
    t: np.ndarray
    mean: np.ndarray
    epistemic_var: np.ndarray
    aleatoric_var: np.ndarray
    total_var: np.ndarray
    n_samples: int

    def __len__(self):
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.total_var)

    def subset(self, index) -> "PredictiveDistribution":
        return PredictiveDistribution(
            self.x[index],
            self.t[index],
            self.mean[index],
            self.epistemic_var[index],
            self.aleatoric_var[index],
            self.total_var[index],
            self.n_samples,
        )

    def to_outputs(self) -> generic.Outputs:
        """Rows ``(x_m, t_s, mean, eu, au, tu)``."""
        outputs = generic.Outputs("prediction")
        outputs.rows = list(
            zip(
                self.x.tolist(),
                self.t.tolist(),
                self.mean.tolist(),
                self.epistemic_var.tolist(),
                self.aleatoric_var.tolist(),
                self.total_var.tolist(),
            )
        )
        return outputs


@dataclasses.dataclass(eq=False)
class PredictiveGrid:
    """Predictive moments on a rectangular grid, rows are time nodes."""

    x: np.ndarray
    t: np.ndarray
    mean: np.ndarray
    epistemic_var: np.ndarray
    aleatoric_var: np.ndarray
    total_var: np.ndarray
    n_samples: int

    def field(self, name: str) -> refsolver.FieldGrid:
        """One of the moments as a :py:class:`bpinn_ageing.refsolver.FieldGrid`."""
        return refsolver.FieldGrid(self.x, self.t, getattr(self, name))

    def flat(self) -> PredictiveDistribution:
        x, t = refsolver.FieldGrid(self.x, self.t, self.mean).points()
        return PredictiveDistribution(
            x,
            t,
            self.mean.ravel(),
            self.epistemic_var.ravel(),
            self.aleatoric_var.ravel(),
            self.total_var.ravel(),
            self.n_samples,
        )


def decompose(samples_mu, samples_var=None):
    """Law of total variance over the leading (sample) axis.

    Variances use the population ``1/K`` convention.

    :param samples_mu: ``(K, ...)`` ensemble means
    :param samples_var: ``(K, ...)`` ensemble variances, or ``None`` for no
        aleatoric channel
    :return: ``(epistemic, aleatoric, total)``
    """
    samples_mu = np.asarray(samples_mu, dtype=float)
    if samples_mu.ndim == 0 or samples_mu.shape[0] < 2:
        raise errors.ValidationError("decompose needs at least two samples")
    if samples_var is None:
        aleatoric = np.zeros(samples_mu.shape[1:])
    else:
        samples_var = np.asarray(samples_var, dtype=float)
        if samples_var.shape != samples_mu.shape:
            raise errors.ValidationError(
                f"sample means {samples_mu.shape} and variances {samples_var.shape} differ"
            )
        aleatoric = samples_var.mean(axis=0)
    mean = samples_mu.mean(axis=0)
    epistemic = np.mean(np.square(samples_mu - mean), axis=0)
    return epistemic, aleatoric, epistemic + aleatoric


def predict(
    checkpoint: net.Checkpoint,
    x,
    t,
    samples: Optional[int] = None,
    seed=0,
    chunk_size: int = 256,
) -> PredictiveDistribution:
    """Predictive distribution of a checkpoint at physical points ``(x, t)``.

    :param samples: ensemble size ``K``; ``None`` takes the variant default.
        Ignored by deterministic variants.
    :param chunk_size: points evaluated at once; the ensemble is drawn once
        and shared by all chunks
    :raises bpinn_ageing.errors.ValidationError: ``K < 2`` on a stochastic
        variant
    """
    variant = utils.get_variant(checkpoint.variant)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x, t = np.broadcast_arrays(x, t)
    x, t = x.ravel(), t.ravel()
    if not variant.stochastic:
        samples = 1
    else:
        samples = variant.default_samples if samples is None else int(samples)
        if samples < 2:
            raise errors.ValidationError(
                f"{variant.name} needs at least 2 samples for a variance, got {samples}"
            )
    if int(chunk_size) < 1:
        raise errors.ValidationError("chunk_size must be at least 1")

    norm = checkpoint.normalization
    config = checkpoint.config
    members = variant.draw_members(checkpoint, samples, np.random.default_rng(seed))
    xu, tu = norm.x_to_unit(x), norm.t_to_unit(t)
    mean = np.empty(x.size)
    epistemic = np.zeros(x.size)
    aleatoric = np.zeros(x.size)
    for start in range(0, x.size, int(chunk_size)):
        window = slice(start, start + int(chunk_size))
        mu, var = net.forward_many(members.rows, xu[window], tu[window], config, members.masks)
        mean[window] = mu.mean(axis=0)
        if samples > 1:
            epistemic[window], aleatoric[window], _ = decompose(mu, var)
    if variant.stochastic and not config.variance_head:
        aleatoric[:] = checkpoint.sigma_homo[1] ** 2
    utils.logger.debug("predicted %d points with %d samples", x.size, samples)

    scale = norm.temp_scale**2
    epistemic, aleatoric = epistemic * scale, aleatoric * scale
    return PredictiveDistribution(
        x,
        t,
        norm.temp_from_unit(mean),
        epistemic,
        aleatoric,
        epistemic + aleatoric,
        samples,
    )


def predict_grid(
    checkpoint: net.Checkpoint,
    grid: refsolver.FieldGrid,
    samples: Optional[int] = None,
    seed=0,
    chunk_size: int = 256,
) -> PredictiveGrid:
    """:py:func:`predict` on every node of ``grid``."""
    x, t = grid.points()
    dist = predict(checkpoint, x, t, samples, seed, chunk_size)
    shape = grid.shape
    return PredictiveGrid(
        grid.x,
        grid.t,
        dist.mean.reshape(shape),
        dist.epistemic_var.reshape(shape),
        dist.aleatoric_var.reshape(shape),
        dist.total_var.reshape(shape),
        dist.n_samples,
    )
