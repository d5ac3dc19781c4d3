"""
Second-order automatic differentiation for small networks.

Derivatives with respect to the network inputs travel forward as 2-jets
``(value, d/dx, d2/dx2, d/dt)``. Gradients with respect to the trainable
parameters come from a reverse-mode :py:class:`Tape` recorded over the same
array arithmetic, so any loss assembled from jets is differentiable in the
parameters.

Every elementary function in this module accepts plain numpy values as well
as :py:class:`Var` objects; numpy inputs are evaluated directly and nothing is
recorded.

Examples:

>>> import numpy as np
>>> from bpinn_ageing import diffcore
>>> value, gradient = diffcore.grad(lambda p: diffcore.sum_(p * p), [1.0, 2.0])
>>> value, gradient
(5.0, array([2., 4.]))
"""

import dataclasses
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from . import errors

ACTIVATIONS = ("tanh", "identity")


class TapeNode:
    """One recorded operation.

    :param op: name of the elementary operation
    :param parents: tape indices of the operands; always smaller than the
        index of this node
    :param partials: one callable per parent mapping the adjoint of this node
        to the adjoint contribution of that parent
    """

    __slots__ = ("op", "parents", "partials")

    def __init__(self, op: str, parents: Tuple[int, ...], partials: Tuple[Callable, ...]):
        self.op = op
        self.parents = parents
        self.partials = partials

    def __repr__(self):
        return f"TapeNode({self.op!r}, parents={self.parents})"


class Tape:
    """A single-writer list of :py:class:`TapeNode` in topological order."""

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> "Var":
        """Registers an independent variable."""
        return self._push("leaf", np.array(value, dtype=float), (), ())

    def _push(self, op, value, parents, partials) -> "Var":
        self.nodes.append(TapeNode(op, parents, partials))
        return Var(self, len(self.nodes) - 1, value)

    def backward(self, output: "Var") -> List[Optional[np.ndarray]]:
        """Accumulates adjoints of ``output`` over the tape.

        :return: list indexed like the tape; ``None`` where a node does not
            influence ``output``
        """
        adjoints: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        adjoints[output.index] = np.ones_like(output.value)
        for index in range(output.index, -1, -1):
            adjoint = adjoints[index]
            if adjoint is None:
                continue
            node = self.nodes[index]
            for parent, partial in zip(node.parents, node.partials):
                contribution = partial(adjoint)
                if adjoints[parent] is None:
                    adjoints[parent] = contribution
                else:
                    adjoints[parent] = adjoints[parent] + contribution
        return adjoints


class Var:
    """An array value recorded on a :py:class:`Tape`."""

    __slots__ = ("tape", "index", "value")
    # make numpy defer mixed operations to the reflected Var methods
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __repr__(self):
        return f"Var(index={self.index}, value={self.value!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, item):
        return getitem(self, item)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)


def value_of(x):
    """Returns the numeric value of a :py:class:`Var` or of a plain value."""
    return x.value if isinstance(x, Var) else x


def _unbroadcast(adjoint, shape):
    adjoint = np.asarray(adjoint)
    while adjoint.ndim > len(shape):
        adjoint = adjoint.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and adjoint.shape[axis] != 1:
            adjoint = adjoint.sum(axis=axis, keepdims=True)
    return adjoint


def _record(op, value, operands):
    tape = None
    parents, partials = [], []
    for operand, partial in operands:
        if isinstance(operand, Var):
            if tape is None:
                tape = operand.tape
            assert operand.tape is tape, "operands recorded on different tapes"
            parents.append(operand.index)
            partials.append(partial)
    if tape is None:
        return value
    return tape._push(op, value, tuple(parents), tuple(partials))


def add(a, b):
    va, vb = value_of(a), value_of(b)
    sa, sb = np.shape(va), np.shape(vb)
    return _record(
        "add",
        np.add(va, vb),
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))],
    )


def subtract(a, b):
    va, vb = value_of(a), value_of(b)
    sa, sb = np.shape(va), np.shape(vb)
    return _record(
        "sub",
        np.subtract(va, vb),
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))],
    )


def multiply(a, b):
    va, vb = value_of(a), value_of(b)
    sa, sb = np.shape(va), np.shape(vb)
    return _record(
        "mul",
        np.multiply(va, vb),
        [
            (a, lambda g: _unbroadcast(g * vb, sa)),
            (b, lambda g: _unbroadcast(g * va, sb)),
        ],
    )


def divide(a, b):
    va, vb = value_of(a), value_of(b)
    sa, sb = np.shape(va), np.shape(vb)
    return _record(
        "div",
        np.divide(va, vb),
        [
            (a, lambda g: _unbroadcast(g / vb, sa)),
            (b, lambda g: _unbroadcast(-g * va / (vb * vb), sb)),
        ],
    )


def negative(a):
    return _record("neg", np.negative(value_of(a)), [(a, lambda g: -g)])


def power(a, exponent: float):
    """``a ** exponent`` for a constant exponent."""
    va = value_of(a)
    return _record(
        "pow",
        np.power(va, exponent),
        [(a, lambda g: g * exponent * np.power(va, exponent - 1))],
    )


def square(a):
    va = value_of(a)
    return _record("square", va * va, [(a, lambda g: 2.0 * g * va)])


def matmul(a, b):
    """Matrix product of two 2-D operands."""
    va, vb = value_of(a), value_of(b)
    return _record(
        "matmul",
        va @ vb,
        [(a, lambda g: g @ np.swapaxes(vb, -1, -2)), (b, lambda g: np.swapaxes(va, -1, -2) @ g)],
    )


def tanh(a):
    out = np.tanh(value_of(a))
    return _record("tanh", out, [(a, lambda g: g * (1.0 - out * out))])


def exp(a):
    out = np.exp(value_of(a))
    return _record("exp", out, [(a, lambda g: g * out)])


def log(a):
    va = value_of(a)
    return _record("log", np.log(va), [(a, lambda g: g / va)])


def softplus(a):
    """``log(1 + exp(a))`` evaluated without overflow."""
    va = value_of(a)
    return _record("softplus", np.logaddexp(0.0, va), [(a, lambda g: g * expit(va))])


def abs_(a):
    va = value_of(a)
    return _record("abs", np.abs(va), [(a, lambda g: g * np.sign(va))])


def sum_(a, axis: Optional[int] = None):
    va = value_of(a)
    shape = np.shape(va)

    def partial(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _record("sum", np.sum(va, axis=axis), [(a, partial)])


def mean(a, axis: Optional[int] = None):
    count = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return divide(sum_(a, axis), float(count))


def getitem(a, item):
    va = value_of(a)
    shape = np.shape(va)

    def partial(g):
        out = np.zeros(shape)
        np.add.at(out, item, g)
        return out

    return _record("getitem", va[item], [(a, partial)])


def reshape(a, shape):
    va = value_of(a)
    original = np.shape(va)
    return _record(
        "reshape", np.reshape(va, shape), [(a, lambda g: np.reshape(g, original))]
    )


@dataclasses.dataclass
class Jet2:
    """Truncated Taylor data of a function of ``(x, t)``.

    Channels may be floats, numpy arrays or :py:class:`Var`. For a layer of a
    network evaluated at ``n`` points the channels have shape ``(n, width)``.
    Only the second derivative in ``x`` is carried: the heat equation needs
    nothing more.
    """

    value: Any
    d_x: Any
    d_xx: Any
    d_t: Any

    @classmethod
    def inputs(cls, x, t) -> "Jet2":
        """Seeds the jets of the two network inputs at the points ``(x, t)``.

        :return: jet with channels of shape ``(n, 2)``
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = x.shape[0]
        return cls(
            value=np.stack([x, t], axis=-1),
            d_x=np.tile([1.0, 0.0], (n, 1)),
            d_xx=np.zeros((n, 2)),
            d_t=np.tile([0.0, 1.0], (n, 1)),
        )

    @classmethod
    def stack(cls, jets: Sequence["Jet2"]) -> "Jet2":
        """Stacks scalar jets (one per layer unit) along a trailing axis."""
        return cls(
            *(
                np.stack([np.asarray(getattr(j, f.name), dtype=float) for j in jets], axis=-1)
                for f in dataclasses.fields(cls)
            )
        )

    def __getitem__(self, item) -> "Jet2":
        return Jet2(self.value[item], self.d_x[item], self.d_xx[item], self.d_t[item])

    def scaled(self, factor) -> "Jet2":
        return Jet2(
            self.value * factor, self.d_x * factor, self.d_xx * factor, self.d_t * factor
        )


def propagate_jet(
    layer_weights,
    layer_bias,
    input_jets: Jet2,
    activation: str = "tanh",
    layer_index: int = 0,
) -> Jet2:
    """Pushes jets through ``activation(input @ layer_weights + layer_bias)``.

    :param layer_weights: ``(fan_in, fan_out)`` matrix
    :param layer_bias: ``(fan_out,)`` vector
    :param input_jets: jets with channels of shape ``(n, fan_in)``
    :param activation: one of ``tanh`` or ``identity``
    :param layer_index: used in error messages only
    :return: jets of the layer output; the value channel is exactly the
        plain forward pass
    """
    w_shape = np.shape(value_of(layer_weights))
    b_shape = np.shape(value_of(layer_bias))
    in_shape = np.shape(value_of(input_jets.value))
    if len(w_shape) != 2:
        raise errors.LayerShapeError(layer_index, f"weights must be 2-D, got {w_shape}")
    if b_shape != (w_shape[1],):
        raise errors.LayerShapeError(
            layer_index, f"bias shape {b_shape} does not match {w_shape[1]} outputs"
        )
    if not in_shape or in_shape[-1] != w_shape[0]:
        raise errors.LayerShapeError(
            layer_index, f"input width {in_shape[-1:]} does not match {w_shape[0]} inputs"
        )
    if activation not in ACTIVATIONS:
        raise errors.ValidationError(f"unknown activation {activation!r}")

    z = Jet2(
        value=input_jets.value @ layer_weights + layer_bias,
        d_x=input_jets.d_x @ layer_weights,
        d_xx=input_jets.d_xx @ layer_weights,
        d_t=input_jets.d_t @ layer_weights,
    )
    if activation == "identity":
        return z
    a = tanh(z.value)
    slope = 1.0 - a * a
    return Jet2(
        value=a,
        d_x=slope * z.d_x,
        d_xx=slope * z.d_xx - 2.0 * a * slope * z.d_x * z.d_x,
        d_t=slope * z.d_t,
    )


def grad(loss: Callable, params, has_aux: bool = False):
    """Evaluates a scalar loss and its gradient in one reverse sweep.

    :param loss: callable taking the parameter vector (as a :py:class:`Var`)
        and returning a scalar, or ``(scalar, aux)`` when ``has_aux`` is set
    :param params: parameter vector
    :param has_aux: whether ``loss`` also returns auxiliary data
    :return: ``(value, gradient)`` or ``(value, gradient, aux)``
    :raises bpinn_ageing.errors.NonFiniteLossError: if the loss is NaN/inf
    """
    theta = np.array(params, dtype=float)
    tape = Tape()
    leaf = tape.leaf(theta)
    out = loss(leaf)
    aux = None
    if has_aux:
        out, aux = out
    value = float(np.asarray(value_of(out)).reshape(()))
    if not np.isfinite(value):
        bad = np.flatnonzero(~np.isfinite(theta))
        raise errors.NonFiniteLossError(
            f"loss evaluated to {value!r}",
            index=int(bad[0]) if bad.size else None,
            components=aux.as_dict() if hasattr(aux, "as_dict") else None,
        )
    gradient = np.zeros_like(theta)
    if isinstance(out, Var) and out.tape is tape:
        adjoint = tape.backward(out)[leaf.index]
        if adjoint is not None:
            gradient = np.array(adjoint, dtype=float).reshape(theta.shape)
    if has_aux:
        return value, gradient, aux
    return value, gradient


@dataclasses.dataclass
class GradientReport:
    """Outcome of :py:func:`check_gradient`."""

    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tolerance: float
    flagged: List[int]
    non_smooth: List[int]

    @property
    def max_rel_error(self) -> float:
        smooth = np.setdiff1d(np.arange(self.rel_error.size), self.non_smooth)
        return float(self.rel_error[smooth].max()) if smooth.size else 0.0

    @property
    def passed(self) -> bool:
        return not self.flagged and not self.non_smooth


def check_gradient(
    loss: Callable,
    params,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    floor: float = 1e-2,
) -> GradientReport:
    """Compares :py:func:`grad` with central finite differences.

    A coordinate is reported as non-smooth when its one-sided difference
    quotients keep disagreeing after the step is cut tenfold, which is the
    signature of a kink such as ``|theta|`` at zero.

    :param step: finite-difference step, must be positive
    :param tolerance: largest acceptable relative error
    :param floor: relative errors use ``max(|analytic|, |numeric|, floor)``
        as denominator
    """
    if step <= 0:
        raise errors.ValidationError(f"step must be positive, got {step}")
    theta = np.array(params, dtype=float)
    _, analytic = grad(loss, theta)

    def f(p):
        return float(np.asarray(value_of(loss(p))).reshape(()))

    f0 = f(theta)
    noise = 1e4 * np.finfo(float).eps * max(1.0, abs(f0)) / step
    numeric = np.empty_like(theta)
    non_smooth = []
    for i in range(theta.size):
        gaps = []
        for h in (step, step / 10.0):
            e = np.zeros_like(theta)
            e.flat[i] = h
            f_plus, f_minus = f(theta + e), f(theta - e)
            if h == step:
                numeric.flat[i] = (f_plus - f_minus) / (2.0 * h)
            gaps.append(abs((f_plus - f0) / h - (f0 - f_minus) / h))
        if gaps[0] > noise and gaps[1] > 0.5 * gaps[0]:
            non_smooth.append(i)
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel_error = np.abs(analytic - numeric) / denominator
    flagged = [
        int(i) for i in np.flatnonzero(rel_error > tolerance) if int(i) not in non_smooth
    ]
    return GradientReport(
        analytic=analytic,
        numeric=numeric,
        rel_error=rel_error,
        tolerance=tolerance,
        flagged=flagged,
        non_smooth=non_smooth,
    )
