"""
Loss assembly and optimisation for every variant.

Losses are built from the same pieces: data terms on initial and boundary
points, a residual term on collocation points and, for the Bayesian
variants, the Monte Carlo complexity cost. Every loss function returns a
:py:class:`StepResult` whose breakdown adds up exactly to the loss.
"""

import collections
import dataclasses
import math
import time
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import bayes, diffcore, errors, net, physics, utils

LOG_2PI = math.log(2.0 * math.pi)
STOP_REASONS = ("max_epochs", "early_stop", "divergence")
LOG_FIELDS = ("epoch", "phase", "kl", "nll_0", "nll_bc", "nll_r", "total", "val", "ms")


@dataclasses.dataclass(frozen=True)
class LossWeights:
    """Weights of the initial, boundary and residual terms."""

    lambda_0: float = 1.0
    lambda_b: float = 1.0
    lambda_r: float = 1e-4

    def __post_init__(self):
        for field in dataclasses.fields(self):
            if not getattr(self, field.name) >= 0:
                raise errors.ValidationError(f"{field.name} must not be negative")


@dataclasses.dataclass(frozen=True)
class TrainPlan:
    """Everything :py:func:`fit` needs besides the problem and the data.

    :param variant: variant name or alias, see
        :py:func:`bpinn_ageing.utils.get_variants`
    :param weights: loss weights; ``None`` takes the variant's defaults
    :param patience: epochs without improvement of the monitored loss after
        which training stops; ``0`` stops at the first such epoch
    :param sigma_homo: ``(sigma_0, sigma_bc, sigma_f)`` of the fixed-noise
        likelihoods, in normalised temperature units
    :param kl_weight: weight of the complexity cost per minibatch; ``None``
        uses ``1 / M`` for ``M`` minibatches per epoch
    :param adam_iterations: cap on Adam steps of the vanilla PINN
    :param lbfgs_iterations: L-BFGS iterations of the vanilla PINN
    """

    variant: str = "bpinn_hetero"
    lr: float = 0.01
    batch: int = 16
    max_epochs: int = 15000
    patience: int = 200
    sigma_homo: Tuple[float, float, float] = (0.01, 0.01, 0.01)
    weights: Optional[LossWeights] = None
    hidden_sizes: Tuple[int, ...] = (50, 50)
    dropout_rate: float = 0.1
    prior: bayes.PriorSpec = bayes.PriorSpec()
    posterior_samples: int = 1
    kl_weight: Optional[float] = None
    adam_iterations: int = 20000
    lbfgs_iterations: int = 10000
    lbfgs_memory: int = 10
    validation_fraction: float = 0.1
    divergence_threshold: float = 1e6
    log_every: int = 100
    record_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigma_homo", tuple(float(s) for s in self.sigma_homo))
        object.__setattr__(self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes))
        if not self.lr > 0:
            raise errors.ValidationError(f"lr must be positive, got {self.lr}")
        if self.batch < 1 or self.max_epochs < 1 or self.posterior_samples < 1:
            raise errors.ValidationError("batch, max_epochs and posterior_samples must be >= 1")
        if not 0 <= self.patience < self.max_epochs:
            raise errors.ValidationError(
                f"patience must lie in [0, max_epochs), got {self.patience} "
                f"with max_epochs={self.max_epochs}"
            )
        if len(self.sigma_homo) != 3 or min(self.sigma_homo) <= 0:
            raise errors.ValidationError("sigma_homo must hold three positive values")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise errors.ValidationError("validation_fraction must lie in [0, 1)")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise errors.ValidationError("kl_weight must not be negative")

    def with_epochs(self, epochs: int) -> "TrainPlan":
        """Same plan with ``max_epochs`` replaced; patience shrinks to fit."""
        return dataclasses.replace(
            self, max_epochs=int(epochs), patience=min(self.patience, int(epochs) - 1)
        )


@dataclasses.dataclass
class LossContext:
    """Problem and network description shared by all loss evaluations."""

    spec: physics.ThermalPdeSpec
    norm: physics.Normalization
    config: net.MlpConfig
    sigma_homo: Tuple[float, float, float] = (0.01, 0.01, 0.01)
    heteroscedastic: bool = True


@dataclasses.dataclass
class Batch:
    """Points in physical and unit coordinates; targets in unit temperature."""

    x: np.ndarray
    t: np.ndarray
    xu: np.ndarray
    tu: np.ndarray
    target: Optional[np.ndarray] = None

    @classmethod
    def from_points(cls, points: physics.PointSet, norm: physics.Normalization) -> "Batch":
        target = None if points.target is None else norm.temp_to_unit(points.target)
        return cls(
            points.x, points.t, norm.x_to_unit(points.x), norm.t_to_unit(points.t), target
        )

    def __len__(self):
        return self.x.size

    def subset(self, index) -> "Batch":
        target = None if self.target is None else self.target[index]
        return Batch(self.x[index], self.t[index], self.xu[index], self.tu[index], target)


@dataclasses.dataclass
class Batches:
    initial: Batch
    boundary: Batch
    collocation: Batch

    @classmethod
    def from_sets(cls, sets: physics.TrainingSets, norm: physics.Normalization) -> "Batches":
        return cls(
            Batch.from_points(sets.initial, norm),
            Batch.from_points(sets.boundary, norm),
            Batch.from_points(sets.collocation, norm),
        )


@dataclasses.dataclass
class LossBreakdown:
    """Weighted loss components; :py:attr:`total` is their left-to-right sum."""

    kl: float = 0.0
    nll_0: float = 0.0
    nll_bc: float = 0.0
    nll_r: float = 0.0

    @property
    def total(self) -> float:
        return ((self.kl + self.nll_0) + self.nll_bc) + self.nll_r

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(
            self.kl + other.kl,
            self.nll_0 + other.nll_0,
            self.nll_bc + other.nll_bc,
            self.nll_r + other.nll_r,
        )

    def as_dict(self) -> dict:
        return dict(dataclasses.asdict(self), total=self.total)


@dataclasses.dataclass
class StepResult:
    loss: float
    gradient: np.ndarray
    breakdown: LossBreakdown


def _assemble(kl, nll_0, nll_bc, nll_r):
    total = ((kl + nll_0) + nll_bc) + nll_r
    breakdown = LossBreakdown(
        *(float(np.asarray(diffcore.value_of(c)).reshape(())) for c in (kl, nll_0, nll_bc, nll_r))
    )
    return total, breakdown


def _run(objective: Callable, vector) -> StepResult:
    value, gradient, breakdown = diffcore.grad(objective, vector, has_aux=True)
    return StepResult(value, gradient, breakdown)


def nll_hetero(u_true, mu, var):
    """Pointwise Gaussian negative log-likelihood with per-point variance."""
    if np.any(np.asarray(diffcore.value_of(var)) <= 0):
        raise errors.ValidationError("variance must be positive")
    diff = u_true - mu
    return 0.5 * (diffcore.log(var) + LOG_2PI) + diffcore.square(diff) / (2.0 * var)


def nll_homo(residuals, sigma: float):
    """Summed Gaussian negative log-likelihood with a common ``sigma``."""
    if not sigma > 0:
        raise errors.ValidationError(f"sigma must be positive, got {sigma}")
    count = np.size(diffcore.value_of(residuals))
    return count * 0.5 * (LOG_2PI + 2.0 * math.log(sigma)) + diffcore.sum_(
        diffcore.square(residuals)
    ) / (2.0 * sigma * sigma)


def _data_nll(params, batch: Batch, context: LossContext, sigma, mask=None, mean=False):
    if not len(batch):
        return 0.0
    mu, pre_var = net.forward(params, batch.xu, batch.tu, context.config, mask)
    if context.heteroscedastic:
        total = diffcore.sum_(nll_hetero(batch.target, mu, net.variance_of(pre_var)))
    else:
        total = nll_homo(batch.target - mu, sigma)
    return total / len(batch) if mean else total


def _squared_error(params, batch: Batch, context: LossContext, mask=None):
    if not len(batch):
        return 0.0
    mu, _ = net.forward(params, batch.xu, batch.tu, context.config, mask)
    return diffcore.mean(diffcore.square(batch.target - mu))


def training_residual(params, batch: Batch, context: LossContext, mask=None):
    """Scaled PDE residual of the mean head at the batch points."""
    derivatives = net.forward_with_derivatives(
        params, batch.xu, batch.tu, context.config, mask
    )
    return physics.training_residual(
        context.spec, context.norm, derivatives, batch.x, batch.t
    )


def _check_batches(batches: Batches):
    if not (len(batches.initial) + len(batches.boundary) + len(batches.collocation)):
        raise errors.ValidationError("all batches are empty")


def elbo_objective(
    vector, prior, weights: LossWeights, batches: Batches, noise, context, kl_weight=1.0
):
    """Negative ELBO of the variational vector ``[mu, rho]``.

    :param noise: one standard-normal vector per posterior sample, shape
        ``(K, P)`` or ``(P,)``
    :return: ``(loss, breakdown)``
    """
    post = bayes.VariationalPosterior.from_vector(vector)
    noise = np.atleast_2d(noise)
    sigma_0, sigma_bc, sigma_f = context.sigma_homo
    kl = nll_0 = nll_bc = nll_r = 0.0
    for eps in noise:
        log_q_val, log_p_val, theta = bayes.mc_kl_terms(post, prior, eps)
        kl = kl + (log_q_val - log_p_val)
        nll_0 = nll_0 + _data_nll(theta, batches.initial, context, sigma_0)
        nll_bc = nll_bc + _data_nll(theta, batches.boundary, context, sigma_bc)
        if len(batches.collocation):
            residual = training_residual(theta, batches.collocation, context)
            nll_r = nll_r + nll_homo(residual, sigma_f)
    share = 1.0 / noise.shape[0]
    return _assemble(
        kl * (kl_weight * share),
        nll_0 * (weights.lambda_0 * share),
        nll_bc * (weights.lambda_b * share),
        nll_r * (weights.lambda_r * share),
    )


def elbo_step(
    post, prior, weights: LossWeights, batches: Batches, noise, context, kl_weight=1.0
) -> StepResult:
    """Negative ELBO and its gradient over ``[mu, rho]``.

    :param post: :py:class:`bpinn_ageing.bayes.VariationalPosterior` or the
        concatenated vector ``[mu, rho]``
    :raises bpinn_ageing.errors.NonFiniteLossError: on a NaN or infinite loss
    """
    _check_batches(batches)
    vector = (
        post.to_vector() if isinstance(post, bayes.VariationalPosterior) else np.asarray(post)
    )
    return _run(
        lambda v: elbo_objective(v, prior, weights, batches, noise, context, kl_weight), vector
    )


def pinn_objective(params, weights: LossWeights, batches: Batches, context):
    """Weighted mean squared errors; ``kl`` is always 0."""
    nll_r = 0.0
    if len(batches.collocation):
        residual = training_residual(params, batches.collocation, context)
        nll_r = diffcore.mean(diffcore.square(residual))
    return _assemble(
        0.0,
        _squared_error(params, batches.initial, context) * weights.lambda_0,
        _squared_error(params, batches.boundary, context) * weights.lambda_b,
        nll_r * weights.lambda_r,
    )


def pinn_loss(params, weights: LossWeights, batches: Batches, context) -> StepResult:
    """Deterministic PINN loss and its gradient."""
    _check_batches(batches)
    return _run(lambda p: pinn_objective(p, weights, batches, context), params)


def dpinn_objective(params, mask, weights: LossWeights, batches: Batches, context):
    """Mean Gaussian NLL on the data terms and residual MSE, one dropout mask
    for every point."""
    sigma_0, sigma_bc, _ = context.sigma_homo
    nll_r = 0.0
    if len(batches.collocation):
        residual = training_residual(params, batches.collocation, context, mask)
        nll_r = diffcore.mean(diffcore.square(residual))
    return _assemble(
        0.0,
        _data_nll(params, batches.initial, context, sigma_0, mask, mean=True) * weights.lambda_0,
        _data_nll(params, batches.boundary, context, sigma_bc, mask, mean=True)
        * weights.lambda_b,
        nll_r * weights.lambda_r,
    )


def dpinn_loss(params, mask_stream, weights: LossWeights, batches: Batches, context) -> StepResult:
    """Dropout PINN loss and its gradient.

    :param mask_stream: a :py:class:`bpinn_ageing.net.DropoutMask`, or a
        generator one fresh mask is drawn from
    """
    _check_batches(batches)
    mask = mask_stream
    if isinstance(mask_stream, np.random.Generator):
        mask = net.sample_mask(context.config, mask_stream)
    return _run(lambda p: dpinn_objective(p, mask, weights, batches, context), params)


def validation_loss(
    params, weights: LossWeights, initial: Batch, boundary: Batch, context, squared_error=False
) -> float:
    """Weighted mean data misfit of deterministic parameters on held-out points."""
    sigma_0, sigma_bc, _ = context.sigma_homo
    if squared_error:
        terms = (
            _squared_error(params, initial, context),
            _squared_error(params, boundary, context),
        )
    else:
        terms = (
            _data_nll(params, initial, context, sigma_0, mean=True),
            _data_nll(params, boundary, context, sigma_bc, mean=True),
        )
    return float(weights.lambda_0 * terms[0] + weights.lambda_b * terms[1])


@dataclasses.dataclass
class AdamState:
    """First and second moment estimates and the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_update(
    state: AdamState,
    params,
    gradient,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam step; ``state`` is updated in place.

    :return: the new parameter vector
    """
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if not (params.shape == gradient.shape == state.m.shape):
        raise errors.ValidationError(
            f"Adam state {state.m.shape}, params {params.shape} and "
            f"gradient {gradient.shape} differ"
        )
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * gradient
    state.v = beta2 * state.v + (1.0 - beta2) * gradient * gradient
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclasses.dataclass
class LbfgsResult:
    params: np.ndarray
    loss: float
    iterations: int
    converged: bool
    line_search_failed: bool
    history: List[float]


def _two_loop(gradient, pairs) -> np.ndarray:
    q = gradient.copy()
    stack = []
    for s, y in reversed(pairs):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        stack.append((rho, a, s, y))
    if pairs:
        s, y = pairs[-1]
        q *= (s @ y) / (y @ y)
    for rho, a, s, y in reversed(stack):
        b = rho * (y @ q)
        q += s * (a - b)
    return q


def _line_search(loss_fn, x, f, direction, slope, alpha, c1=1e-4, max_steps=40):
    """Armijo backtracking with a quadratic model of the directional slope.

    :return: ``(alpha, f, g)`` of the accepted step, or ``None``
    """
    for _ in range(max_steps):
        f_try, g_try = loss_fn(x + alpha * direction)
        if not np.isfinite(f_try):
            alpha *= 0.5
            continue
        slope_try = g_try @ direction
        accepted = (alpha, f_try, g_try) if f_try <= f + c1 * alpha * slope else None
        step = alpha * 0.5
        if slope_try > slope:
            model = -slope * alpha / (slope_try - slope)
            if 1e-3 * alpha <= model <= 10.0 * alpha and abs(model - alpha) > 1e-12 * alpha:
                f_model, g_model = loss_fn(x + model * direction)
                if np.isfinite(f_model) and f_model <= f + c1 * model * slope:
                    if accepted is None or f_model < f_try:
                        return model, f_model, g_model
            step = min(max(model, 0.1 * alpha), 0.5 * alpha)
        if accepted is not None:
            return accepted
        alpha = step
    return None


def lbfgs_refine(
    params,
    loss_fn: Callable,
    max_iters: int,
    memory: int = 10,
    tolerance: float = 1e-8,
    callback: Optional[Callable] = None,
) -> LbfgsResult:
    """Limited-memory BFGS with the two-loop recursion.

    :param loss_fn: maps a parameter vector to ``(value, gradient)``
    :param callback: called as ``callback(iteration, params, value)`` after
        every accepted step
    :return: the best parameters found; the loss never increases
    """
    x = np.array(params, dtype=float)
    f, g = loss_fn(x)
    history = [float(f)]
    pairs = collections.deque(maxlen=int(memory))
    converged = failed = False
    iteration = 0
    while iteration < max_iters:
        if np.linalg.norm(g) < tolerance:
            converged = True
            break
        direction = -_two_loop(g, list(pairs))
        slope = g @ direction
        if slope >= 0:
            pairs.clear()
            direction, slope = -g, -(g @ g)
        alpha = 1.0 if pairs else min(1.0, 1.0 / np.linalg.norm(g))
        found = _line_search(loss_fn, x, f, direction, slope, alpha)
        if found is None:
            failed = True
            utils.logger.warning(
                "L-BFGS line search failed at iteration %d; keeping best point", iteration
            )
            break
        step, f_new, g_new = found
        s = step * direction
        y = g_new - g
        if s @ y > 1e-10:
            pairs.append((s, y))
        x, f, g = x + s, f_new, g_new
        iteration += 1
        history.append(float(f))
        if callback is not None:
            callback(iteration, x, f)
    else:
        converged = bool(np.linalg.norm(g) < tolerance)
    return LbfgsResult(x, float(f), iteration, converged, failed, history)


@dataclasses.dataclass
class TrainLog:
    """Rows in :py:data:`LOG_FIELDS` order, one per epoch or L-BFGS iteration."""

    rows: List[tuple] = dataclasses.field(default_factory=list)
    stop_reason: str = "max_epochs"
    best_epoch: int = 0

    def append(self, epoch, phase, breakdown: LossBreakdown, val, ms=None):
        self.rows.append(
            (
                epoch,
                phase,
                breakdown.kl,
                breakdown.nll_0,
                breakdown.nll_bc,
                breakdown.nll_r,
                breakdown.total,
                val,
                ms,
            )
        )

    @property
    def last_breakdown(self) -> dict:
        if not self.rows:
            return {}
        return dict(zip(LOG_FIELDS[2:7], self.rows[-1][2:7]))


@dataclasses.dataclass
class FitResult:
    checkpoint: net.Checkpoint
    log: TrainLog
    divergence: Optional[dict] = None

    @property
    def diverged(self) -> bool:
        return self.log.stop_reason == "divergence"


@dataclasses.dataclass
class TrainingData:
    """Training minibatch pools and the held-out monitor split."""

    initial: Batch
    boundary: Batch
    collocation: Batch
    val_initial: Batch
    val_boundary: Batch

    def full(self) -> Batches:
        return Batches(self.initial, self.boundary, self.collocation)


def _hold_out(points: physics.PointSet, fraction: float, rng) -> tuple:
    order = rng.permutation(len(points))
    count = int(len(points) * fraction)
    return points.subset(np.sort(order[count:])), points.subset(np.sort(order[:count]))


def prepare_data(sets: physics.TrainingSets, norm, fraction: float, rng) -> TrainingData:
    """Holds out ``fraction`` of the initial and boundary points for early
    stopping. With nothing held out the training points are monitored."""
    initial, val_initial = _hold_out(sets.initial, fraction, rng)
    boundary, val_boundary = _hold_out(sets.boundary, fraction, rng)
    if not len(val_initial) and not len(val_boundary):
        val_initial, val_boundary = initial, boundary
    return TrainingData(
        Batch.from_points(initial, norm),
        Batch.from_points(boundary, norm),
        Batch.from_points(sets.collocation, norm),
        Batch.from_points(val_initial, norm),
        Batch.from_points(val_boundary, norm),
    )


def _minibatches(data: TrainingData, size: int, rng):
    n_initial = len(data.initial)
    order = rng.permutation(n_initial + len(data.boundary))
    n_colloc = len(data.collocation)
    for start in range(0, order.size, size):
        chosen = order[start : start + size]
        colloc = np.sort(rng.choice(n_colloc, size=min(size, n_colloc), replace=False))
        yield Batches(
            data.initial.subset(np.sort(chosen[chosen < n_initial])),
            data.boundary.subset(np.sort(chosen[chosen >= n_initial] - n_initial)),
            data.collocation.subset(colloc),
        )


def fit(plan: TrainPlan, spec: physics.ThermalPdeSpec, counts, seed) -> FitResult:
    """Trains one variant and returns the best checkpoint seen.

    The monitor is the weighted data misfit on the held-out split, evaluated
    with deterministic parameters after every epoch. Divergence (a
    non-finite loss or one above ``plan.divergence_threshold``) stops the
    run; the best checkpoint so far is still returned.
    """
    variant = utils.get_variant(plan.variant)(plan)
    norm = physics.Normalization.from_spec(spec)
    sampling, init, split, stream = np.random.SeedSequence(seed).spawn(4)
    sets = physics.sample_training_sets(spec, counts, sampling)
    data = prepare_data(sets, norm, plan.validation_fraction, np.random.default_rng(split))
    config = variant.mlp_config()
    context = LossContext(spec, norm, config, plan.sigma_homo, variant.heteroscedastic)
    rng = np.random.default_rng(stream)

    vector = variant.init_trainable(config, np.random.default_rng(init))
    n_batches = math.ceil((len(data.initial) + len(data.boundary)) / plan.batch)
    kl_weight = plan.kl_weight if plan.kl_weight is not None else 1.0 / n_batches
    state = AdamState.zeros(vector.size)
    log = TrainLog()
    best = {"val": math.inf, "vector": vector.copy(), "epoch": 0}
    divergence = None

    def monitor(candidate, epoch):
        val = variant.validation(candidate, data.val_initial, data.val_boundary, context)
        if val < best["val"]:
            best.update(val=val, vector=candidate.copy(), epoch=epoch)
            return val, True
        return val, False

    epoch = steps = stale = 0
    utils.logger.info(
        "training %s on %d initial, %d boundary and %d collocation points",
        variant.name,
        len(data.initial),
        len(data.boundary),
        len(data.collocation),
    )
    while epoch < plan.max_epochs and steps < variant.max_steps:
        started = time.perf_counter()
        totals = LossBreakdown()
        try:
            for batches in _minibatches(data, plan.batch, rng):
                result = variant.step(vector, batches, context, rng, kl_weight)
                if result.loss > plan.divergence_threshold:
                    raise errors.DivergenceError(
                        f"loss {result.loss!r} exceeds {plan.divergence_threshold!r}",
                        result.breakdown.as_dict(),
                    )
                vector = adam_update(state, vector, result.gradient, plan.lr)
                totals = totals + result.breakdown
                steps += 1
        except (errors.NonFiniteLossError, errors.DivergenceError) as e:
            divergence = e.components or totals.as_dict()
            log.stop_reason = "divergence"
            utils.logger.warning("training diverged in epoch %d: %s", epoch + 1, e)
            break
        epoch += 1
        val, improved = monitor(vector, epoch)
        ms = (time.perf_counter() - started) * 1e3 if plan.record_timing else None
        log.append(epoch, "adam", totals, val, ms)
        if epoch % plan.log_every == 0 or epoch == 1:
            utils.logger.info("epoch %d: loss %.6g, val %.6g", epoch, totals.total, val)
        if improved:
            stale = 0
        else:
            stale += 1
            if stale >= plan.patience:
                log.stop_reason = "early_stop"
                utils.logger.info("early stop after %d epochs without improvement", stale)
                break

    if log.stop_reason != "divergence":
        refined = variant.refine(best["vector"], data.full(), context, log, monitor)
        if refined is not None and refined.line_search_failed:
            utils.logger.warning("L-BFGS stopped early on a failed line search")

    log.best_epoch = best["epoch"]
    checkpoint = variant.make_checkpoint(best["vector"], config, norm)
    return FitResult(checkpoint, log, divergence)
