import numpy as np

from .context import bpinn_ageing  # noqa: F401
from .utils import series  # noqa: F401

# pylint: disable=redefined-outer-name

TINY = dict(epochs=2, batch=32, hidden_sizes=[4, 4], lbfgs_iterations=2)


def test_nothing():
    pass


def test_version():
    assert bpinn_ageing.__version__.count(".") == 2


def test_fit_and_predict(series, tmp_path):  # noqa: F811
    result = bpinn_ageing.fit_variant("bpinn-homo", series, counts=(5, 10, 20), **TINY)
    assert result.checkpoint.variant == "bpinn_homo"
    assert not result.diverged
    result.checkpoint.save(tmp_path / "checkpoint.json")

    dist = bpinn_ageing.predict_checkpoint(
        tmp_path / "checkpoint.json", x=[0.0, 0.5, 1.0], t=3600.0, samples=4
    )
    assert len(dist) == 3
    assert np.allclose(dist.t, 3600.0)
    assert np.allclose(dist.total_var, dist.epistemic_var + dist.aleatoric_var)


def test_predict_deterministic(series):  # noqa: F811
    result = bpinn_ageing.fit_variant("vanilla", series, counts=(5, 10, 20), **TINY)
    dist = bpinn_ageing.predict_checkpoint(result.checkpoint, x=0.5, t=0.0)
    assert dist.n_samples == 1
    assert dist.total_var[0] == 0.0
