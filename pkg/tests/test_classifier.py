import math

import numpy as np
import pytest

from llpdc.classifier import (
    OptimizerState,
    cosine_lr,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    sgd_step,
    softmax,
)

from oracles import central_diff, max_rel_error, naive_softmax


def test_zero_weights_give_uniform():
    params = init_params("linear", 5, 4, seed=0)
    params.arrays = [np.zeros_like(a) for a in params.arrays]
    assert np.allclose(forward(params, np.arange(5.0)), 0.25)


def test_softmax_stable():
    assert softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    assert np.all(np.isfinite(p)) and p[:2].tolist() == [0.5, 0.5]


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_forward_matches_naive(arch):
    rng = np.random.default_rng(1)
    params = init_params(arch, 4, 3, hidden=7, seed=2)
    for _ in range(10):
        x = rng.normal(size=4)
        p = forward(params, x)
        assert abs(p.sum() - 1) < 1e-6 and np.all(p >= 0)
        if arch == "linear":
            z = x @ params.arrays[0] + params.arrays[1]
            assert np.allclose(p, naive_softmax(z), atol=1e-12)


def test_forward_errors():
    params = init_params("linear", 3, 2)
    with pytest.raises(ValueError, match="dimension"):
        forward(params, np.zeros(4))
    with pytest.raises(ValueError, match="non-finite"):
        forward(params, np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        init_params("conv", 3, 2)


def test_loss_perfect_and_uniform():
    params = init_params("linear", 2, 10)
    params.arrays = [np.zeros_like(a) for a in params.arrays]
    loss, _ = loss_and_grad(params, np.zeros((1, 2)), np.array([3]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    assert loss == pytest.approx(2.302585, abs=1e-6)
    params.arrays[1][3] = 100.0
    loss, _ = loss_and_grad(params, np.zeros((1, 2)), np.array([3]))
    assert 0 <= loss < 1e-6


def test_hard_target_loss_is_neg_log_p():
    params = init_params("mlp", 3, 4, hidden=5, seed=3)
    x = np.array([[0.3, -1.0, 2.0]])
    loss, _ = loss_and_grad(params, x, np.array([2]))
    assert loss == pytest.approx(-math.log(forward(params, x[0])[2]))


@pytest.mark.parametrize("arch", ["linear", "mlp"])
@pytest.mark.parametrize("hard", [True, False])
def test_gradient_finite_differences(arch, hard):
    rng = np.random.default_rng(4)
    params = init_params(arch, 4, 3, hidden=6, seed=5)
    X = rng.normal(size=(5, 4))
    targets = rng.integers(0, 3, size=5) if hard else rng.dirichlet(np.ones(3), size=5)
    _, grads = loss_and_grad(params, X, targets)
    numeric = central_diff(lambda: loss_and_grad(params, X, targets)[0], params.arrays)
    assert max_rel_error(grads, numeric) < 1e-4


def test_plain_gradient_step():
    from llpdc.classifier import ClassifierParams

    params = ClassifierParams("linear", 1, 2, None, [np.zeros((1, 2)), np.zeros(2)])
    state = OptimizerState(base_lr=0.1, total_steps=10, momentum=0.0, weight_decay=0.0)
    sgd_step(params, [np.array([[1.0, 0.0]]), np.zeros(2)], state)
    assert params.arrays[0].tolist() == [[-0.1, 0.0]]
    assert state.step == 1


def test_momentum_and_weight_decay():
    from llpdc.classifier import ClassifierParams

    params = ClassifierParams("linear", 1, 1, None, [np.array([[1.0]]), np.array([0.0])])
    state = OptimizerState(base_lr=0.5, total_steps=1000, momentum=0.9, weight_decay=0.1)
    g = [np.array([[2.0]]), np.array([0.0])]
    sgd_step(params, g, state)
    # buf = 2 + 0.1*1 = 2.1; p = 1 - 0.5*2.1
    assert params.arrays[0][0, 0] == pytest.approx(-0.05)
    lr1 = cosine_lr(0.5, 1, 1000)
    sgd_step(params, g, state)
    buf = 0.9 * 2.1 + 2.0 + 0.1 * -0.05
    assert params.arrays[0][0, 0] == pytest.approx(-0.05 - lr1 * buf)


def test_cosine_schedule():
    assert cosine_lr(0.03, 0, 100) == 0.03
    assert cosine_lr(1.0, 100, 100) == pytest.approx(0.19509032, abs=1e-8)
    assert cosine_lr(1.0, 100, 100) == pytest.approx(math.sin(math.pi / 16))


def test_step_past_end_rejected():
    params = init_params("linear", 2, 2)
    state = OptimizerState(base_lr=0.1, total_steps=1)
    zeros = [np.zeros_like(a) for a in params.arrays]
    sgd_step(params, zeros, state)
    with pytest.raises(ValueError):
        sgd_step(params, zeros, state)
    with pytest.raises(ValueError, match="shape"):
        sgd_step(params, [np.zeros(3), np.zeros(2)], OptimizerState(base_lr=0.1, total_steps=5))


def test_optimizer_state_validation():
    with pytest.raises(ValueError):
        OptimizerState(base_lr=0.1, total_steps=5, momentum=1.0)


def test_non_finite_gradient_names_layer():
    params = init_params("mlp", 2, 2, hidden=3)
    params.arrays[2][:] = np.inf
    with pytest.raises(FloatingPointError, match="layer W2/b2"):
        loss_and_grad(params, np.ones((1, 2)), np.array([0]))


def test_deterministic_trajectory():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(20, 3)), rng.integers(0, 2, 20)

    def run():
        params = init_params("mlp", 3, 2, hidden=4, seed=9)
        state = OptimizerState(base_lr=0.1, total_steps=20)
        for _ in range(20):
            _, g = loss_and_grad(params, X, y)
            sgd_step(params, g, state)
        return params

    a, b = run(), run()
    assert all(np.array_equal(u, v) for u, v in zip(a.arrays, b.arrays))


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_checkpoint_roundtrip(tmp_path, arch):
    params = init_params(arch, 3, 4, hidden=5, seed=1)
    save_checkpoint(params, tmp_path / "ck.json")
    back = load_checkpoint(tmp_path / "ck.json")
    assert back.arch == arch and back.hidden == params.hidden
    assert all(np.array_equal(u, v) for u, v in zip(params.arrays, back.arrays))


def test_checkpoint_format_tag(tmp_path):
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(tmp_path / "bad.json")
