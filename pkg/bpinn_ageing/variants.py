"""
The five trainable variants, declared by their class attributes.
"""

import numpy as np

from . import train, utils
from .generic import BayesianPinn, DropoutPinn, Variant


class BPinnHetero(BayesianPinn):
    """Bayesian PINN learning a per-point noise variance.

    Data terms use the learned variance; the residual uses ``sigma_f``.
    """

    name = "bpinn_hetero"
    aliases = ("b_pinn_hetero",)
    heteroscedastic = True


class BPinnHomo(BayesianPinn):
    """Bayesian PINN with the fixed ``(sigma_0, sigma_bc, sigma_f)`` noise."""

    name = "bpinn_homo"
    aliases = ("b_pinn_homo",)
    heteroscedastic = False


class DPinnHetero(DropoutPinn):
    """Dropout PINN with a variance head."""

    name = "dpinn_hetero"
    aliases = ("d_pinn_hetero",)
    heteroscedastic = True


class DPinnHomo(DropoutPinn):
    """Dropout PINN with fixed data noise."""

    name = "dpinn_homo"
    aliases = ("d_pinn_homo",)
    heteroscedastic = False


class Pinn(Variant):
    """Deterministic PINN: Adam steps followed by full-batch L-BFGS."""

    name = "pinn"
    aliases = ("vanilla", "vanilla_pinn")
    heteroscedastic = False
    stochastic = False
    default_weights = train.LossWeights(1.0, 1.0, 1e-6)
    default_samples = 1

    @property
    def max_steps(self) -> float:
        return self.plan.adam_iterations

    def step(self, vector, batches, context, rng, kl_weight):
        return train.pinn_loss(vector, self.weights, batches, context)

    def validation(self, vector, initial, boundary, context) -> float:
        return train.validation_loss(
            vector, self.weights, initial, boundary, context, squared_error=True
        )

    def refine(self, vector, batches, context, log, monitor):
        if self.plan.lbfgs_iterations < 1:
            return None
        first = log.rows[-1][0] if log.rows else 0

        def loss_fn(params):
            result = train.pinn_loss(params, self.weights, batches, context)
            return result.loss, result.gradient

        def record(iteration, params, value):
            epoch = first + iteration
            _, breakdown = train.pinn_objective(params, self.weights, batches, context)
            val, _ = monitor(params, epoch)
            log.append(epoch, "lbfgs", breakdown, val)
            if iteration % self.plan.log_every == 0:
                utils.logger.info("L-BFGS iteration %d: loss %.6g", iteration, value)

        utils.logger.info("refining with L-BFGS for %d iterations", self.plan.lbfgs_iterations)
        return train.lbfgs_refine(
            np.asarray(vector, dtype=float),
            loss_fn,
            self.plan.lbfgs_iterations,
            memory=self.plan.lbfgs_memory,
            callback=record,
        )
