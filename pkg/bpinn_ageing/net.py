"""
Feed-forward networks with a mean head and an optional variance head.

Parameters are kept as one flat vector; :py:class:`ParamLayout` knows where
each layer's weights and biases live in it. All evaluation functions accept
either a numpy vector or a :py:class:`bpinn_ageing.diffcore.Var` so the same
code serves inference and gradient computation.
"""

import dataclasses
import json
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import diffcore, errors, utils
from .physics import Normalization

VARIANCE_FLOOR = 1e-6
CHECKPOINT_FORMAT = "bpinn-ageing checkpoint"
CHECKPOINT_VERSION = 1


@dataclasses.dataclass(frozen=True)
class MlpConfig:
    """Architecture of the network.

    :param layer_sizes: units per layer, inputs first; hidden layers use tanh
    :param variance_head: whether the last layer carries a pre-variance output
    :param dropout_rate: probability of dropping a hidden unit
    """

    layer_sizes: Tuple[int, ...] = (2, 50, 50, 2)
    variance_head: bool = True
    dropout_rate: float = 0.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise errors.ValidationError(f"invalid layer sizes {sizes}")
        if sizes[0] != 2:
            raise errors.ValidationError("the first layer must have 2 inputs (x, t)")
        expected = 2 if self.variance_head else 1
        if sizes[-1] != expected:
            raise errors.ValidationError(
                f"the last layer must have {expected} outputs "
                f"when variance_head is {self.variance_head}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise errors.ValidationError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        return self.layer_sizes[1:-1]

    @property
    def layout(self) -> "ParamLayout":
        return ParamLayout.from_sizes(self.layer_sizes)


@dataclasses.dataclass(frozen=True)
class ParamLayout:
    """Offsets of each layer's ``(weights, bias)`` in the flat vector."""

    layer_sizes: Tuple[int, ...]
    offsets: Tuple[Tuple[int, int, int], ...]
    size: int

    @classmethod
    def from_sizes(cls, layer_sizes: Sequence[int]) -> "ParamLayout":
        offsets = []
        position = 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bias_start = position + fan_in * fan_out
            offsets.append((position, bias_start, bias_start + fan_out))
            position = bias_start + fan_out
        return cls(tuple(layer_sizes), tuple(offsets), position)

    def unpack(self, vector) -> List[tuple]:
        """Splits a flat vector (array or Var) into per-layer ``(W, b)``.

        ``W`` has shape ``(fan_in, fan_out)``.
        """
        if np.shape(diffcore.value_of(vector)) != (self.size,):
            raise errors.ValidationError(
                f"parameter vector has shape {np.shape(diffcore.value_of(vector))}, "
                f"layout expects ({self.size},)"
            )
        layers = []
        for (w_start, b_start, end), fan_in, fan_out in zip(
            self.offsets, self.layer_sizes[:-1], self.layer_sizes[1:]
        ):
            weights = vector[w_start:b_start].reshape((fan_in, fan_out))
            layers.append((weights, vector[b_start:end]))
        return layers


@dataclasses.dataclass
class NetworkParams:
    """A flat parameter vector together with its layout."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        if np.shape(diffcore.value_of(self.values)) != (self.layout.size,):
            raise errors.ValidationError(
                f"parameter vector length {np.size(diffcore.value_of(self.values))} "
                f"does not match layout size {self.layout.size}"
            )


@dataclasses.dataclass
class DropoutMask:
    """Per-hidden-unit keep indicators with inverted scaling.

    ``scales[i]`` holds ``keep / (1 - rate)`` for hidden layer ``i``.
    """

    keeps: List[np.ndarray]
    rate: float

    @property
    def scales(self) -> List[np.ndarray]:
        return [k.astype(float) / (1.0 - self.rate) for k in self.keeps]

    @classmethod
    def identity(cls, config: MlpConfig) -> "DropoutMask":
        return cls([np.ones(n, dtype=bool) for n in config.hidden_sizes], 0.0)


def sample_mask(config: MlpConfig, rng: np.random.Generator) -> DropoutMask:
    """Draws one Bernoulli keep mask with keep probability ``1 - rate``."""
    keeps = [rng.random(n) >= config.dropout_rate for n in config.hidden_sizes]
    return DropoutMask(keeps, config.dropout_rate)


def init_params(config: MlpConfig, rng: np.random.Generator) -> NetworkParams:
    """Glorot-uniform weights and zero biases."""
    layout = config.layout
    values = np.zeros(layout.size)
    for (w_start, b_start, _), fan_in, fan_out in zip(
        layout.offsets, config.layer_sizes[:-1], config.layer_sizes[1:]
    ):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        values[w_start:b_start] = rng.uniform(-limit, limit, fan_in * fan_out)
    return NetworkParams(values, layout)


def _vector(params):
    return params.values if isinstance(params, NetworkParams) else params


def _layers(params, config: MlpConfig):
    return config.layout.unpack(_vector(params))


def _hidden_scales(mask: Optional[DropoutMask], config: MlpConfig):
    if mask is None:
        return [None] * len(config.hidden_sizes)
    if [k.size for k in mask.keeps] != list(config.hidden_sizes):
        raise errors.ValidationError("dropout mask does not match the hidden layers")
    return mask.scales


def forward(params, x, t, config: MlpConfig, mask: Optional[DropoutMask] = None):
    """Evaluates the network at the points ``(x, t)``.

    :param params: :py:class:`NetworkParams`, flat array or Var
    :param x: normalised positions
    :param t: normalised times
    :return: ``(mu, pre_var)``; ``pre_var`` is ``None`` without a variance head
    """
    layers = _layers(params, config)
    h = np.stack(
        [np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(t, dtype=float))],
        axis=-1,
    )
    scales = _hidden_scales(mask, config)
    for index, (weights, bias) in enumerate(layers[:-1]):
        h = diffcore.tanh(h @ weights + bias)
        if scales[index] is not None:
            h = h * scales[index]
    weights, bias = layers[-1]
    out = h @ weights + bias
    if config.variance_head:
        return out[:, 0], out[:, 1]
    return out[:, 0], None


def forward_jets(params, x, t, config: MlpConfig, mask: Optional[DropoutMask] = None):
    """Jets of the mean head plus the value of the pre-variance head.

    :return: ``(jet, pre_var)`` with jet channels of shape ``(n,)``
    """
    layers = _layers(params, config)
    jets = diffcore.Jet2.inputs(x, t)
    scales = _hidden_scales(mask, config)
    for index, (weights, bias) in enumerate(layers[:-1]):
        jets = diffcore.propagate_jet(weights, bias, jets, "tanh", layer_index=index)
        if scales[index] is not None:
            jets = jets.scaled(scales[index])
    weights, bias = layers[-1]
    out = diffcore.propagate_jet(
        weights, bias, jets, "identity", layer_index=len(layers) - 1
    )
    pre_var = out.value[:, 1] if config.variance_head else None
    return out[:, 0], pre_var


def forward_with_derivatives(params, x, t, config: MlpConfig, mask=None):
    """Mean-head value and input derivatives ``(u, u_x, u_xx, u_t)``."""
    jet, _ = forward_jets(params, x, t, config, mask)
    return jet.value, jet.d_x, jet.d_xx, jet.d_t


def variance_of(pre_var):
    """Maps the unconstrained head output to a strictly positive variance."""
    return diffcore.softplus(pre_var) + VARIANCE_FLOOR


def forward_many(param_rows: np.ndarray, x, t, config: MlpConfig, masks=None):
    """Evaluates ``K`` parameter vectors (rows) at the same points.

    :param masks: optional list of ``K`` dropout masks
    :return: ``(mu, var)`` arrays of shape ``(K, n)``; ``var`` is ``None``
        without a variance head
    """
    param_rows = np.atleast_2d(param_rows)
    layout = config.layout
    h = np.stack([np.asarray(x, dtype=float), np.asarray(t, dtype=float)], axis=-1)
    h = np.broadcast_to(h, (param_rows.shape[0],) + h.shape)
    n_layers = len(layout.offsets)
    for index, ((w_start, b_start, end), fan_in, fan_out) in enumerate(
        zip(layout.offsets, config.layer_sizes[:-1], config.layer_sizes[1:])
    ):
        weights = param_rows[:, w_start:b_start].reshape(-1, fan_in, fan_out)
        bias = param_rows[:, b_start:end][:, None, :]
        h = h @ weights + bias
        if index < n_layers - 1:
            h = np.tanh(h)
            if masks is not None:
                scales = np.stack([m.scales[index] for m in masks])
                h = h * scales[:, None, :]
    mu = h[..., 0]
    var = variance_of(h[..., 1]) if config.variance_head else None
    return mu, var


@dataclasses.dataclass
class Checkpoint:
    """Trained parameters plus everything needed to evaluate them.

    ``kind`` is ``deterministic`` (``values`` set) or ``variational``
    (``mu`` and ``rho`` set).
    """

    variant: str
    config: MlpConfig
    normalization: Normalization
    kind: str = "deterministic"
    values: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    sigma_homo: Tuple[float, float, float] = (0.01, 0.01, 0.01)

    def __post_init__(self):
        size = self.config.layout.size
        if self.kind == "deterministic":
            vectors = {"values": self.values}
        elif self.kind == "variational":
            vectors = {"mu": self.mu, "rho": self.rho}
        else:
            raise errors.ValidationError(f"unknown checkpoint kind {self.kind!r}")
        for name, vector in vectors.items():
            if vector is None or np.shape(vector) != (size,):
                raise errors.ValidationError(
                    f"checkpoint vector {name!r} must have length {size}"
                )

    def to_json(self) -> str:
        document = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "variant": self.variant,
            "kind": self.kind,
            "layout": {
                "layer_sizes": list(self.config.layer_sizes),
                "variance_head": self.config.variance_head,
                "dropout_rate": self.config.dropout_rate,
                "parameter_count": self.config.layout.size,
            },
            "normalization": dataclasses.asdict(self.normalization),
            "sigma_homo": [float(s) for s in self.sigma_homo],
        }
        for name in ("values", "mu", "rho"):
            vector = getattr(self, name)
            if vector is not None:
                document[name] = [float(v) for v in vector]
        return json.dumps(document, indent=4)

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        document = json.loads(text)
        if document.get("format") != CHECKPOINT_FORMAT:
            raise errors.ValidationError("not a bpinn-ageing checkpoint")
        if document.get("version") != CHECKPOINT_VERSION:
            raise errors.ValidationError(
                f"unsupported checkpoint version {document.get('version')!r}"
            )
        layout = document["layout"]
        config = MlpConfig(
            tuple(layout["layer_sizes"]), layout["variance_head"], layout["dropout_rate"]
        )
        vectors = {
            name: np.array(document[name], dtype=float)
            for name in ("values", "mu", "rho")
            if name in document
        }
        return cls(
            variant=document["variant"],
            config=config,
            normalization=Normalization(**document["normalization"]),
            kind=document["kind"],
            sigma_homo=tuple(document["sigma_homo"]),
            **vectors,
        )

    def save(self, filename) -> None:
        Path(filename).write_text(self.to_json())
        utils.logger.info("wrote checkpoint %s", filename)

    @classmethod
    def load(cls, filename) -> "Checkpoint":
        path = Path(filename)
        if not path.exists():
            raise errors.SeriesIOError("checkpoint not found", path=path)
        try:
            return cls.from_json(path.read_text())
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise errors.SeriesIOError(f"malformed checkpoint ({e})", path=path)
