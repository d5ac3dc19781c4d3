"""
Mean-field Gaussian posterior over the network parameters and the priors it
is regularised towards.

All log densities accept numpy arrays or :py:class:`bpinn_ageing.diffcore.Var`
so they can be differentiated through the reparameterisation
``theta = mu + softplus(rho) * noise``.
"""

import dataclasses
import math

import numpy as np

from . import diffcore, errors, net

INITIAL_SIGMA = 0.05
#: ``rho`` whose softplus equals :py:data:`INITIAL_SIGMA`.
INITIAL_RHO = math.log(math.expm1(INITIAL_SIGMA))
PRIOR_KINDS = ("gaussian_isotropic", "laplace")

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclasses.dataclass(frozen=True)
class PriorSpec:
    """Prior over every parameter.

    :param kind: ``gaussian_isotropic`` or ``laplace``
    :param scale: standard deviation of the Gaussian, or ``lambda`` of the
        Laplace density ``(lambda / 2) exp(-lambda |theta|)``
    """

    kind: str = "laplace"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise errors.ValidationError(
                f"unknown prior {self.kind!r}, expected one of {', '.join(PRIOR_KINDS)}"
            )
        if not self.scale > 0:
            raise errors.ValidationError(f"prior scale must be positive, got {self.scale}")


@dataclasses.dataclass
class VariationalPosterior:
    """Independent Gaussians ``N(mu_i, softplus(rho_i)**2)``.

    ``mu`` and ``rho`` are numpy vectors, or Vars while a gradient is taken.
    """

    mu: object
    rho: object

    def __post_init__(self):
        shape_mu = np.shape(diffcore.value_of(self.mu))
        shape_rho = np.shape(diffcore.value_of(self.rho))
        if len(shape_mu) != 1 or shape_mu != shape_rho:
            raise errors.ValidationError(
                f"posterior mean {shape_mu} and scale {shape_rho} must be equal-length vectors"
            )

    @property
    def size(self) -> int:
        return np.shape(diffcore.value_of(self.mu))[0]

    @property
    def sigma(self):
        return diffcore.softplus(self.rho)

    @classmethod
    def initial(
        cls, config: net.MlpConfig, rng: np.random.Generator, sigma: float = INITIAL_SIGMA
    ) -> "VariationalPosterior":
        """Glorot means and a common initial standard deviation."""
        mu = net.init_params(config, rng).values
        return cls(mu, np.full(mu.size, math.log(math.expm1(sigma))))

    @classmethod
    def from_vector(cls, vector) -> "VariationalPosterior":
        """Splits the trainable vector ``[mu, rho]``."""
        size = np.shape(diffcore.value_of(vector))[0]
        if size % 2:
            raise errors.ValidationError("variational vector must have even length")
        half = size // 2
        return cls(vector[:half], vector[half:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.rho])


def _check_noise(post: VariationalPosterior, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (post.size,):
        raise errors.ValidationError(
            f"noise has shape {noise.shape}, posterior has {post.size} parameters"
        )
    return noise


def sample_params(post: VariationalPosterior, noise):
    """Reparameterised draw ``mu + softplus(rho) * noise``."""
    noise = _check_noise(post, noise)
    return post.mu + post.sigma * noise


def draw_params(post: VariationalPosterior, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` independent draws as rows of a ``(count, P)`` array."""
    noise = rng.standard_normal((count, post.size))
    return np.asarray(post.mu) + np.logaddexp(0.0, np.asarray(post.rho)) * noise


def log_q(theta, post: VariationalPosterior):
    """Log density of ``theta`` under the posterior, summed over coordinates."""
    sigma = post.sigma
    z = (theta - post.mu) / sigma
    return diffcore.sum_(-0.5 * z * z - diffcore.log(sigma)) - post.size * _HALF_LOG_2PI


def log_prior(theta, prior: PriorSpec):
    """Log prior density of ``theta``, summed over coordinates."""
    count = np.size(diffcore.value_of(theta))
    if prior.kind == "laplace":
        lam = prior.scale
        return count * math.log(lam / 2.0) - lam * diffcore.sum_(diffcore.abs_(theta))
    z = theta / prior.scale
    return -0.5 * diffcore.sum_(z * z) - count * (_HALF_LOG_2PI + math.log(prior.scale))


def mc_kl_terms(post: VariationalPosterior, prior: PriorSpec, noise):
    """One Monte Carlo sample of the complexity cost.

    :return: ``(log_q, log_prior, theta)``; ``log_q - log_prior`` estimates
        ``KL(q || prior)``
    """
    theta = sample_params(post, noise)
    return log_q(theta, post), log_prior(theta, prior), theta
