"""
This module defines the generic variant base classes and the tabular outputs.

All variants from :py:mod:`bpinn_ageing.variants` inherit :py:class:`Variant`.
"""

import abc
import csv
import dataclasses
import datetime
import json
import math
import os
from functools import partial
from io import StringIO
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import bayes, errors, net, train


@dataclasses.dataclass
class Members:
    """Parameter rows and optional dropout masks of a predictive ensemble."""

    rows: np.ndarray
    masks: Optional[List[net.DropoutMask]] = None

    def __len__(self):
        return len(self.masks) if self.masks is not None else self.rows.shape[0]


class Variant(abc.ABC):
    """A generic class for the trainable PINN variants.

    To create a new variant the following class variables must be set.

    * :py:class:`name`
    * :py:class:`heteroscedastic`: whether the network learns a variance head

    These following class variables can optionally be set:

    * :py:class:`aliases`: other names (lower-cased) the variant answers to
    * :py:class:`stochastic`: whether predictions are an ensemble
    * :py:class:`default_weights`
    * :py:class:`default_samples`: ensemble size used for prediction

    :param plan: training plan; its ``weights`` override the defaults

    Examples:

    >>> from bpinn_ageing import utils
    >>> variant = utils.get_variant("bpinn-hetero")()
    >>> variant.mlp_config().layer_sizes
    (2, 50, 50, 2)
    """

    aliases: Tuple[str, ...] = ()
    """Other names used to refer to the variant. Do not include :py:class:`name`."""

    heteroscedastic: bool = False
    stochastic: bool = True
    default_weights: train.LossWeights = train.LossWeights()
    default_samples: int = 500

    @property
    @abc.abstractmethod
    def name(self) -> str:
        """Canonical name, used in checkpoints and on the command line."""

    def __init__(self, plan: Optional[train.TrainPlan] = None):
        self.plan = plan if plan is not None else train.TrainPlan(variant=self.name)
        self.weights = self.plan.weights or self.default_weights

    @classmethod
    def matches(cls, name: str) -> bool:
        key = name.strip().lower().replace("-", "_")
        return key == cls.name or key in cls.aliases

    @property
    def dropout_rate(self) -> float:
        return 0.0

    @property
    def max_steps(self) -> float:
        """Cap on optimiser steps besides the epoch count."""
        return math.inf

    def mlp_config(self) -> net.MlpConfig:
        outputs = 2 if self.heteroscedastic else 1
        return net.MlpConfig(
            (2,) + self.plan.hidden_sizes + (outputs,),
            variance_head=self.heteroscedastic,
            dropout_rate=self.dropout_rate,
        )

    def init_trainable(self, config: net.MlpConfig, rng: np.random.Generator) -> np.ndarray:
        return net.init_params(config, rng).values

    @abc.abstractmethod
    def step(self, vector, batches, context, rng, kl_weight: float) -> train.StepResult:
        """Loss and gradient of one minibatch."""

    def deterministic_params(self, vector) -> np.ndarray:
        """Network parameters used to monitor training."""
        return vector

    def validation(self, vector, initial, boundary, context) -> float:
        return train.validation_loss(
            self.deterministic_params(vector), self.weights, initial, boundary, context
        )

    def refine(self, vector, batches, context, log, monitor) -> Optional[train.LbfgsResult]:
        """Optional second optimisation phase after Adam."""
        return None

    def make_checkpoint(self, vector, config, norm) -> net.Checkpoint:
        return net.Checkpoint(
            self.name,
            config,
            norm,
            "deterministic",
            values=np.array(vector, dtype=float),
            sigma_homo=self.plan.sigma_homo,
        )

    @classmethod
    def draw_members(cls, checkpoint: net.Checkpoint, count: int, rng) -> Members:
        """The ensemble predictions are averaged over."""
        return Members(checkpoint.values[None, :])


class BayesianPinn(Variant, abc.ABC):
    """Variational Bayesian PINN. The trainable vector is ``[mu, rho]``."""

    default_samples = 500

    def init_trainable(self, config, rng) -> np.ndarray:
        return bayes.VariationalPosterior.initial(config, rng).to_vector()

    def step(self, vector, batches, context, rng, kl_weight):
        noise = rng.standard_normal((self.plan.posterior_samples, vector.size // 2))
        return train.elbo_step(
            vector, self.plan.prior, self.weights, batches, noise, context, kl_weight
        )

    def deterministic_params(self, vector):
        return vector[: vector.size // 2]

    def make_checkpoint(self, vector, config, norm) -> net.Checkpoint:
        post = bayes.VariationalPosterior.from_vector(np.array(vector, dtype=float))
        return net.Checkpoint(
            self.name,
            config,
            norm,
            "variational",
            mu=post.mu,
            rho=post.rho,
            sigma_homo=self.plan.sigma_homo,
        )

    @classmethod
    def draw_members(cls, checkpoint, count, rng) -> Members:
        post = bayes.VariationalPosterior(checkpoint.mu, checkpoint.rho)
        return Members(bayes.draw_params(post, rng, count))


class DropoutPinn(Variant, abc.ABC):
    """PINN with dropout kept active at inference."""

    default_samples = 200

    @property
    def dropout_rate(self) -> float:
        return self.plan.dropout_rate

    def step(self, vector, batches, context, rng, kl_weight):
        return train.dpinn_loss(vector, rng, self.weights, batches, context)

    @classmethod
    def draw_members(cls, checkpoint, count, rng) -> Members:
        masks = [net.sample_mask(checkpoint.config, rng) for _ in range(count)]
        return Members(checkpoint.values[None, :], masks)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (datetime.date, datetime.datetime)):
        return value.isoformat()
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else repr(float(value))
    return str(value)


def _json_value(value):
    if isinstance(value, (datetime.date, datetime.datetime)):
        return value.isoformat()
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return None if math.isnan(value) else float(value)
    return value


class Outputs:
    """
    A generic class to collect tabular results and to easily convert them to
    JSON, CSV or other formats.

    :param kind: one of the keys of :py:attr:`fields_map`
    """

    fields_map: Dict[str, Tuple[str, ...]] = {
        "prediction": ("x_m", "t_s", "mean", "eu", "au", "tu"),
        "train_log": train.LOG_FIELDS,
        "instants": (
            "instant_h",
            "rmse",
            "crps",
            "nll",
            "miscalibration_area",
            "sharpness",
            "n_points",
        ),
        "sweep": (
            "n0",
            "nr",
            "nb",
            "runs",
            "failures",
            "crps_mean",
            "crps_std",
            "rmse_mean",
            "rmse_std",
            "nll_mean",
            "nll_std",
        ),
        "series": ("timestamp", "load_pu", "ambient_c", "topoil_c"),
        "reliability": ("level", "coverage"),
    }
    """Field names of every output kind."""

    rows: List[tuple]
    """Rows in the field order of the kind."""

    format_map: Dict[str, Callable]
    """Dictionary which maps output formats to their respective functions."""

    def __init__(self, kind: str):
        if kind not in self.fields_map:
            raise errors.ValidationError(
                f"Invalid output kind {kind}. Should be one of {', '.join(self.fields_map)}"
            )
        self.kind = kind
        self.rows = []
        self.format_map = {
            "csv": self.to_csv,
            "json": self.to_json,
            "jsonl": partial(self.to_json, json_lines=True),
        }

    def _get_fields(self):
        return self.fields_map[self.kind]

    def formatted(self, output_format: str = "csv") -> str:
        """
        Returns the rows as a :py:class:`str` formatted as ``output_format``

        :param output_format: One the formats in `csv`, `json`, `jsonl`
        """
        output_format = output_format.lower()
        if self.format_map.get(output_format):
            return self.format_map[output_format]()
        raise errors.ValidationError(
            f"Invalid format {output_format}. Should be one of {', '.join(self.format_map)}"
        )

    def to_csv(self) -> str:
        """
        Return the rows as a comma separated string with the field names in
        the first row. Floats use their shortest round-trip form and missing
        values are left empty.

        Examples:

        >>> from bpinn_ageing import generic
        >>> obj = generic.Outputs('reliability')
        >>> obj.rows = [(0.5, 0.48), (0.9, 0.93)]
        >>> print(obj.to_csv())
        level,coverage
        0.5,0.48
        0.9,0.93
        <BLANKLINE>
        """
        with StringIO() as output:
            writer = csv.writer(output, lineterminator="\n")
            writer.writerow(self._get_fields())
            for row in self.rows:
                writer.writerow([_cell(value) for value in row])
            return output.getvalue()

    def to_json(self, json_lines: bool = False) -> str:
        """
        Return the rows as JSON, or as JSON Lines if ``json_lines`` is set.
        Missing values become ``null``.

        :param json_lines: flag to specify if the json_string should be JSON Lines.
        """
        lines = [
            {field: _json_value(value) for field, value in zip(self._get_fields(), row)}
            for row in self.rows
        ]
        if json_lines:
            return "\n".join(json.dumps(line) for line in lines)
        return json.dumps({self.kind: lines}, indent=4)

    def save(self, filename, output_format="infer"):
        """
        Saves the rows to a file.

        :param filename: the name of the file.
        :param output_format: (optional) One the formats in `csv`, `json`,
            `jsonl`. If not given, it is inferred from the file's extension.
        """
        if output_format == "infer":
            output_format = os.path.splitext(str(filename))[1][1:]
            if output_format not in self.format_map:
                raise errors.ValidationError(
                    f"Invalid extension .{output_format}. Should be one of "
                    f"{', '.join(self.format_map.keys())}"
                )

        with open(filename, "w") as out_file:
            out_file.write(self.formatted(output_format))
