import numpy as np
import pytest

from bpinn_ageing import diffcore, errors


def test_grad_of_squares():
    x = np.array([1.0, -2.0, 0.5])
    value, gradient = diffcore.grad(lambda p: diffcore.sum_(diffcore.square(p)), x)
    assert value == pytest.approx(5.25)
    assert np.allclose(gradient, 2.0 * x)


def test_grad_with_aux():
    value, gradient, aux = diffcore.grad(
        lambda p: (diffcore.sum_(3.0 * p), "aux"), np.ones(2), has_aux=True
    )
    assert value == 6.0
    assert np.allclose(gradient, 3.0)
    assert aux == "aux"


def test_grad_of_constant_is_zero():
    _, gradient = diffcore.grad(lambda p: 4.0, np.ones(3))
    assert np.array_equal(gradient, np.zeros(3))


def test_grad_non_finite():
    with pytest.raises(errors.NonFiniteLossError):
        diffcore.grad(lambda p: diffcore.sum_(p) * np.inf, np.ones(2))


def test_check_gradient_smooth():
    rng = np.random.default_rng(3)
    matrix = rng.standard_normal((4, 3))

    def loss(p):
        hidden = diffcore.tanh(matrix @ p)
        return diffcore.sum_(diffcore.exp(hidden) * hidden) + diffcore.mean(
            diffcore.softplus(p)
        )

    report = diffcore.check_gradient(loss, rng.standard_normal(3), step=1e-5, tolerance=1e-6)
    assert report.passed
    assert report.max_rel_error < 1e-6


def test_check_gradient_quadratic():
    report = diffcore.check_gradient(
        lambda p: diffcore.sum_(diffcore.square(p - 1.0)),
        np.array([0.3, 2.0]),
        step=1e-5,
        tolerance=1e-6,
    )
    assert report.passed


def test_check_gradient_kink():
    report = diffcore.check_gradient(
        lambda p: diffcore.sum_(diffcore.abs_(p)), np.array([0.0, 1.0])
    )
    assert report.non_smooth == [0]
    assert not report.flagged
    assert not report.passed


def test_check_gradient_step():
    with pytest.raises(errors.ValidationError):
        diffcore.check_gradient(lambda p: diffcore.sum_(p), np.ones(2), step=0.0)


def test_single_unit_jet():
    w = np.array([[0.7], [-1.3]])
    b = np.array([0.2])
    x = np.array([0.1, 0.5, 0.9])
    t = np.array([0.3, 0.0, 1.0])
    jet = diffcore.propagate_jet(w, b, diffcore.Jet2.inputs(x, t))
    a = np.tanh(0.7 * x - 1.3 * t + 0.2)
    slope = 1.0 - a * a
    assert np.allclose(jet.value[:, 0], a)
    assert np.allclose(jet.d_x[:, 0], slope * 0.7)
    assert np.allclose(jet.d_xx[:, 0], -2.0 * a * slope * 0.49)
    assert np.allclose(jet.d_t[:, 0], slope * -1.3)


def test_identity_jet_is_affine():
    w = np.array([[2.0], [3.0]])
    jet = diffcore.propagate_jet(w, np.zeros(1), diffcore.Jet2.inputs([0.5], [0.25]), "identity")
    assert jet.value[0, 0] == pytest.approx(1.75)
    assert jet.d_x[0, 0] == 2.0
    assert jet.d_xx[0, 0] == 0.0
    assert jet.d_t[0, 0] == 3.0


def test_jet_shape_errors():
    jets = diffcore.Jet2.inputs([0.5], [0.5])
    with pytest.raises(errors.LayerShapeError) as e:
        diffcore.propagate_jet(np.ones((2, 3)), np.ones(2), jets, layer_index=4)
    assert e.value.layer_index == 4
    with pytest.raises(errors.LayerShapeError):
        diffcore.propagate_jet(np.ones((3, 3)), np.ones(3), jets)
    with pytest.raises(errors.ValidationError):
        diffcore.propagate_jet(np.ones((2, 3)), np.ones(3), jets, activation="relu")


def test_jet_gradients_through_tape():
    x = np.array([0.2, 0.8])
    t = np.array([0.4, 0.1])

    def loss(p):
        w = p[:2].reshape((2, 1))
        jet = diffcore.propagate_jet(w, p[2:], diffcore.Jet2.inputs(x, t))
        return diffcore.sum_(diffcore.square(jet.d_xx)) + diffcore.sum_(jet.d_t)

    report = diffcore.check_gradient(loss, np.array([0.9, -0.4, 0.1]), tolerance=1e-5)
    assert report.passed
