import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from visa import tensor as T
from visa.gradcheck import check_gradients
from visa.losses import (
    IGNORE,
    LossWeights,
    class_frequencies,
    loss_ce,
    loss_dice,
    loss_edge,
    median_frequency_weights,
    one_hot,
    sobel_magnitude,
    total_loss,
)
from visa.metrics import ConfusionMatrix, metrics
from visa.tensor import Tensor


@pytest.fixture(autouse=True)
def float64():
    with T.default_dtype(np.float64):
        yield


def random_mask(rng, shape=(2, 8, 8), ignore=0.1):
    mask = rng.integers(0, 3, size=shape)
    mask[rng.random(shape) < ignore] = IGNORE
    return mask


def softmax_np(z):
    e = np.exp(z - z.max(1, keepdims=True))
    return e / e.sum(1, keepdims=True)


def test_uniform_posterior_cross_entropy_is_log3():
    mask = random_mask(np.random.default_rng(0))
    y, omega = one_hot(mask)
    p = Tensor(np.full((2, 3, 8, 8), 1.0 / 3.0))
    assert abs(loss_ce(p, y, omega).item() - math.log(3)) < 1e-6


def test_uniform_vs_one_hot_dice_is_two_thirds():
    mask = random_mask(np.random.default_rng(1))
    y, omega = one_hot(mask)
    p = Tensor(np.full((2, 3, 8, 8), 1.0 / 3.0))
    assert abs(loss_dice(p, y, omega).item() - 2.0 / 3.0) < 1e-6


def test_perfect_prediction_edge_loss_exactly_zero():
    mask = random_mask(np.random.default_rng(2))
    y, omega = one_hot(mask)
    assert loss_edge(Tensor(y), y, omega).item() == 0.0
    assert abs(loss_dice(Tensor(y), y, omega).item()) < 1e-12
    assert loss_ce(Tensor(y), y, omega).item() == 0.0


def test_weighted_ce_hand_example():
    # one crop pixel predicted at 0.5 with weight 2, one soil pixel at 0.25
    mask = np.array([[[1, 0]]])
    y, omega = one_hot(mask)
    p = np.zeros((1, 3, 1, 2))
    p[0, :, 0, 0] = [0.25, 0.5, 0.25]
    p[0, :, 0, 1] = [0.25, 0.5, 0.25]
    got = loss_ce(Tensor(p), y, omega, weights=[1.0, 2.0, 1.0]).item()
    assert abs(got - (2 * math.log(2) + math.log(4)) / 2) < 1e-12


def test_ce_floor_keeps_zero_probability_finite():
    y, omega = one_hot(np.array([[[2]]]))
    p = Tensor(np.array([1.0, 0.0, 0.0]).reshape(1, 3, 1, 1))
    assert abs(loss_ce(p, y, omega).item() + math.log(1e-12)) < 1e-9


def test_all_ignore_batch_gives_zero_terms():
    mask = np.full((1, 4, 4), IGNORE)
    y, omega = one_hot(mask)
    p = Tensor(np.full((1, 3, 4, 4), 1.0 / 3.0))
    assert loss_ce(p, y, omega).item() == 0.0
    assert loss_edge(p, y, omega).item() == 0.0


def test_sobel_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 6, 5))
    got = sobel_magnitude(Tensor(x)).data
    for n in range(2):
        assert oracles.max_rel(got[n], oracles.sobel_magnitude(x[n])) < 1e-12


def test_sobel_of_constant_interior_is_zero():
    e = sobel_magnitude(Tensor(np.ones((1, 1, 5, 5)))).data[0]
    np.testing.assert_array_equal(e[1:-1, 1:-1], 0.0)
    assert e[0, 0] > 0  # zero padding creates a border response


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_ignore_pixel_perturbation_changes_nothing(seed):
    rng = np.random.default_rng(seed)
    mask = random_mask(rng, ignore=0.3)
    mask[0, 0, 0] = IGNORE
    logits = rng.normal(size=(2, 3, 8, 8))
    other = logits.copy()
    ignored = np.broadcast_to((mask == IGNORE)[:, None], logits.shape)
    other[ignored] = rng.normal(size=int(ignored.sum())) * 10
    weights = LossWeights(class_weights=[0.5, 1.0, 2.0])
    outs = [{"posteriors": Tensor(softmax_np(z)), "aux_logits": Tensor(z)} for z in (logits, other)]
    a = total_loss(outs[0], mask, weights)[1]
    b = total_loss(outs[1], mask, weights)[1]
    assert a == b
    cms = [ConfusionMatrix.from_labels(mask, z.argmax(1)) for z in (logits, other)]
    assert np.array_equal(cms[0].counts, cms[1].counts)
    assert metrics(cms[0]).miou == metrics(cms[1]).miou


def test_total_loss_combination():
    rng = np.random.default_rng(4)
    mask = random_mask(rng)
    z = rng.normal(size=(2, 3, 8, 8))
    aux = rng.normal(size=(2, 3, 8, 8))
    w = LossWeights(lambda_dice=0.7, lambda_edge=0.2, alpha_aux=0.4)
    total, parts = total_loss({"posteriors": Tensor(softmax_np(z)), "aux_logits": Tensor(aux)}, mask, w)
    want = parts["ce"] + 0.7 * parts["dice"] + 0.2 * parts["edge"] + 0.4 * parts["aux"]
    assert abs(total.item() - want) < 1e-12
    y, omega = one_hot(mask)
    assert abs(parts["aux"] - loss_ce(Tensor(softmax_np(aux)), y, omega).item()) < 1e-12
    _, no_aux = total_loss({"posteriors": Tensor(softmax_np(z))}, mask, w)
    assert no_aux["aux"] == 0.0 and no_aux["ce"] == parts["ce"]


def test_total_loss_gradients():
    rng = np.random.default_rng(5)
    mask = random_mask(rng, shape=(1, 5, 5))
    z = Tensor(rng.normal(size=(1, 3, 5, 5)), requires_grad=True)
    aux = Tensor(rng.normal(size=(1, 3, 5, 5)), requires_grad=True)
    w = LossWeights(class_weights=[0.5, 1.0, 2.0])

    def f():
        return total_loss({"posteriors": T.softmax(z, axis=1), "aux_logits": aux}, mask, w)[0]

    assert check_gradients(f, [("z", z), ("aux", aux)], 1e-6, None, None, 1e-6).worst < 1e-4


def test_nonfinite_loss_raises():
    y = np.zeros((1, 2, 2), dtype=int)
    p = np.full((1, 3, 2, 2), np.nan)
    with pytest.raises(FloatingPointError, match="not finite"):
        total_loss({"posteriors": Tensor(p)}, y, LossWeights())


def test_median_frequency_weights():
    w = median_frequency_weights([0.6, 0.3, 0.1])
    np.testing.assert_allclose(w, [0.5, 1.0, 3.0])
    with pytest.raises(ValueError, match="zeros"):
        median_frequency_weights([0.7, 0.3, 0.0])
    floored = median_frequency_weights([0.7, 0.3, 0.0], floor=1e-8)
    assert np.all(np.isfinite(floored)) and floored[2] == pytest.approx(0.3 / 1e-8)


def test_class_frequencies_skip_ignore():
    masks = [np.array([[0, 1, IGNORE], [2, 2, IGNORE]])]
    np.testing.assert_allclose(class_frequencies(masks), [0.25, 0.25, 0.5])


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(lambda_edge=-1.0)
