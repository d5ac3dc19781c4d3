import numpy as np
import pytest

from bpinn_ageing import data, physics, train, utils


def small_plan(variant="bpinn_homo", **changes):
    """A plan that trains in well under a second."""
    options = dict(
        variant=variant,
        batch=32,
        max_epochs=3,
        patience=1,
        hidden_sizes=(4, 4),
        adam_iterations=3,
        lbfgs_iterations=2,
        log_every=1,
    )
    options.update(changes)
    return train.TrainPlan(**options)


def make_checkpoint(variant, spec, seed=0, **changes):
    """An untrained checkpoint of ``variant`` on ``spec``."""
    instance = utils.get_variant(variant)(small_plan(variant, **changes))
    config = instance.mlp_config()
    norm = physics.Normalization.from_spec(spec)
    vector = instance.init_trainable(config, np.random.default_rng(seed))
    return instance.make_checkpoint(vector, config, norm)


@pytest.fixture(scope="module")
def series():
    """One noiseless synthetic day."""
    return data.synthesize(1, seed=0, noise=0.0)


@pytest.fixture(scope="module")
def spec(series):
    return physics.ThermalPdeSpec.from_series(series)


@pytest.fixture()
def in_tmp_path(monkeypatch, tmp_path):
    """Runs the test inside a fresh working directory"""
    monkeypatch.chdir(tmp_path)
    return tmp_path
