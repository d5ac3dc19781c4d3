"""
Run configuration: every tunable of every command under a dotted key.

Configuration files are YAML mappings nested by namespace::

    seed: 7
    train:
      variant: dpinn-hetero
      epochs: 500
    uq:
      samples: 200

Keys missing from a file keep their defaults; unknown keys and values of the
wrong type raise :py:class:`bpinn_ageing.errors.ConfigError`.
"""

import copy
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from . import bayes, errors, physics, refsolver, thermal, train, utils

SNAPSHOT_NAME = "resolved_config.yaml"

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "output_dir": "output",
    "plots": True,
    "physics": dict(physics.DEFAULT_COEFFICIENTS),
    "data": {
        "input": "",
        "days": 1,
        "noise": 0.02,
        "start": "2024-06-01T00:00:00",
    },
    "refsolver": {"nx": 201, "dt": 60.0},
    "train": {
        "variant": "bpinn_hetero",
        "n0": 100,
        "nb": 2880,
        "nr": 10000,
        "lr": 0.01,
        "batch": 16,
        "epochs": 15000,
        "patience": 200,
        "sigma_homo": [0.01, 0.01, 0.01],
        "lambda_0": None,
        "lambda_b": None,
        "lambda_r": None,
        "hidden_sizes": [50, 50],
        "dropout_rate": 0.1,
        "prior": "laplace",
        "prior_scale": 1.0,
        "posterior_samples": 1,
        "kl_weight": None,
        "adam_iterations": 20000,
        "lbfgs_iterations": 10000,
        "lbfgs_memory": 10,
        "validation_fraction": 0.1,
        "divergence_threshold": 1e6,
        "log_every": 100,
        "record_timing": False,
    },
    "uq": {"samples": None, "chunk_size": 256},
    "metrics": {
        "instants": [0, 3, 6, 18, 25, 50],
        "t_stride": 10,
        "x_stride": 4,
    },
    "thermal": {
        "delta_theta_hr": 15.1,
        "k21": 2.32,
        "k22": 2.05,
        "tau_w": 9.75,
        "tau_to": 266.8,
        "y": 1.3,
        "dt": 1.0,
        "samples": 200,
        "t_stride": 10,
        "x_stride": 4,
        "chunk_size": 64,
    },
    "sweep": {
        "n0": [5, 100, 200],
        "nr": [5000, 10000, 20000],
        "nb": [2880, 5760, 8640, 11520],
        "repetitions": 5,
        "scale": 1,
        "jobs": 1,
    },
}

# keys whose default is None and the type they take otherwise
NULLABLE = {
    "train.lambda_0": float,
    "train.lambda_b": float,
    "train.lambda_r": float,
    "train.kl_weight": float,
    "uq.samples": int,
}


def _flatten(mapping: dict, prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _nest(flat: Dict[str, Any]) -> dict:
    nested: dict = {}
    for key, value in flat.items():
        node = nested
        *parents, leaf = key.split(".")
        for parent in parents:
            node = node.setdefault(parent, {})
        node[leaf] = value
    return nested


def _coerce(key: str, value, expected):
    if isinstance(value, str) and expected in (int, float):
        # YAML 1.1 reads 1e-4 as a string
        try:
            value = expected(value)
        except ValueError:
            pass
    if isinstance(value, bool) != (expected is bool):
        raise errors.ConfigError(f"{key} expects {expected.__name__}, got {value!r}")
    if expected is float and isinstance(value, int):
        return float(value)
    if expected is list:
        if not isinstance(value, (list, tuple)):
            raise errors.ConfigError(f"{key} expects a list, got {value!r}")
        return list(value)
    if not isinstance(value, expected):
        raise errors.ConfigError(f"{key} expects {expected.__name__}, got {value!r}")
    return value


class RunConfig:
    """Resolved configuration of one command.

    :param values: nested or dotted overrides of :py:data:`DEFAULTS`

    Examples:

    >>> from bpinn_ageing import config
    >>> cfg = config.RunConfig({"train": {"epochs": 50}})
    >>> cfg["train.epochs"], cfg["train.batch"]
    (50, 16)
    """

    def __init__(self, values: Optional[dict] = None):
        self._values = _flatten(copy.deepcopy(DEFAULTS))
        for key, value in _flatten(values or {}).items():
            self.set(key, value)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        """Reads a YAML configuration file.

        :raises bpinn_ageing.errors.SeriesIOError: the file is missing
        :raises bpinn_ageing.errors.ConfigError: the file is not a mapping
        """
        path = Path(path)
        if not path.exists():
            raise errors.SeriesIOError("config file not found", path=path)
        try:
            document = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise errors.ConfigError(f"{path}: {e}")
        if document is None:
            document = {}
        if not isinstance(document, dict):
            raise errors.ConfigError(f"{path}: expected a mapping at the top level")
        return cls(document)

    def __getitem__(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise errors.ConfigError(f"unknown config key {key!r}")

    def get(self, key: str, default=None):
        return self._values.get(key, default)

    def set(self, key: str, value) -> None:
        if key not in self._values:
            raise errors.ConfigError(f"unknown config key {key!r}")
        default = _flatten(DEFAULTS)[key]
        if value is None:
            if key not in NULLABLE:
                raise errors.ConfigError(f"{key} must not be null")
            self._values[key] = None
            return
        expected = NULLABLE.get(key, type(default))
        self._values[key] = _coerce(key, value, expected)

    def set_from_string(self, assignment: str) -> None:
        """Applies a ``key=value`` override; the value is read as YAML."""
        key, sep, text = assignment.partition("=")
        if not sep or not key.strip():
            raise errors.ConfigError(f"expected key=value, got {assignment!r}")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise errors.ConfigError(f"cannot parse value of {key.strip()}: {e}")
        self.set(key.strip(), value)

    def as_dict(self) -> dict:
        return _nest(copy.deepcopy(self._values))

    def snapshot(self) -> str:
        return yaml.safe_dump(self.as_dict(), sort_keys=True)

    def save_snapshot(self, directory) -> Path:
        path = Path(directory) / SNAPSHOT_NAME
        path.write_text(self.snapshot())
        utils.logger.info("wrote %s", path)
        return path

    def section(self, name: str) -> Dict[str, Any]:
        prefix = f"{name}."
        return {k[len(prefix) :]: v for k, v in self._values.items() if k.startswith(prefix)}

    @property
    def output_dir(self) -> Path:
        return Path(self["output_dir"])

    def counts(self) -> tuple:
        return self["train.n0"], self["train.nb"], self["train.nr"]

    def coefficients(self) -> dict:
        return self.section("physics")

    def grid_spec(self) -> refsolver.GridSpec:
        return refsolver.GridSpec(**self.section("refsolver"))

    def hst_params(self) -> thermal.HstParams:
        section = self.section("thermal")
        keys = ("delta_theta_hr", "k21", "k22", "tau_w", "tau_to", "y", "dt")
        return thermal.HstParams(**{k: section[k] for k in keys})

    def train_plan(self, variant: Optional[str] = None) -> train.TrainPlan:
        """The :py:class:`bpinn_ageing.train.TrainPlan` of the ``train.*`` keys.

        Loss weights left at null take the variant defaults.
        """
        section = self.section("train")
        variant_cls = utils.get_variant(variant or section["variant"])
        defaults = variant_cls.default_weights
        weights = train.LossWeights(
            *(
                getattr(defaults, name) if section[name] is None else section[name]
                for name in ("lambda_0", "lambda_b", "lambda_r")
            )
        )
        plan = train.TrainPlan(
            variant=variant_cls.name,
            lr=section["lr"],
            batch=section["batch"],
            max_epochs=section["epochs"],
            patience=min(section["patience"], max(section["epochs"] - 1, 0)),
            sigma_homo=tuple(section["sigma_homo"]),
            weights=weights,
            hidden_sizes=tuple(section["hidden_sizes"]),
            dropout_rate=section["dropout_rate"],
            prior=bayes.PriorSpec(section["prior"], section["prior_scale"]),
            posterior_samples=section["posterior_samples"],
            kl_weight=section["kl_weight"],
            adam_iterations=section["adam_iterations"],
            lbfgs_iterations=section["lbfgs_iterations"],
            lbfgs_memory=section["lbfgs_memory"],
            validation_fraction=section["validation_fraction"],
            divergence_threshold=section["divergence_threshold"],
            log_every=section["log_every"],
            record_timing=section["record_timing"],
        )
        return plan
