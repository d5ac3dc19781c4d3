from . import utils  # noqa: F401 isort: skip
from . import (  # noqa: F401
    bayes,
    config,
    data,
    diffcore,
    errors,
    generic,
    metrics,
    net,
    physics,
    refsolver,
    sweep,
    thermal,
    train,
    uq,
    variants,
)

__version__ = "0.1.0"


def fit_variant(variant, series, counts=(100, 2880, 10000), seed=0, **plan_options):
    """This method trains one variant on an operating series with the
    default configuration.

    :param variant: variant name, e.g. ``bpinn-hetero``
    :param series: :py:class:`bpinn_ageing.data.OperatingSeries`
    :param counts: ``(n0, nb, nr)`` sample counts
    :param plan_options: overrides of ``train.*`` configuration keys

    :return: Object of class :py:class:`bpinn_ageing.train.FitResult`

    :rtype: :py:class:`bpinn_ageing.train.FitResult`
    """
    cfg = config.RunConfig({"train": dict(plan_options, variant=variant)})
    spec = physics.ThermalPdeSpec.from_series(series, **cfg.coefficients())
    return train.fit(cfg.train_plan(), spec, counts, seed)


def predict_checkpoint(checkpoint, x, t, samples=None, seed=0):
    """This method returns the predictive distribution of a trained
    checkpoint (or a path to one) at physical points ``(x, t)``.

    :rtype: :py:class:`bpinn_ageing.uq.PredictiveDistribution`
    """
    if not isinstance(checkpoint, net.Checkpoint):
        checkpoint = net.Checkpoint.load(checkpoint)
    return uq.predict(checkpoint, x, t, samples, seed)
