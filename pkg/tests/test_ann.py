import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gasccp.ann import (
    Dataset,
    Mlp,
    TrainConfig,
    backward,
    dummy_mean_predictor,
    evaluate_mae,
    forward,
    load_models,
    loss,
    rmsprop_step,
    save_models,
    train,
)

from .oracles import central_difference, mlp_forward_loops, rmsprop_reference

# hand-evaluated updates with g=1, eta=1e-2, eps=1e-8, decay=0.9:
# first step from v=0 gives v=0.1, step -0.01/sqrt(0.1 + 1e-8)
FROZEN_ONE_STEP = -0.03162277502054508
# second step from v=0.1 gives v=0.19, step -0.01/sqrt(0.19 + 1e-8)
FROZEN_SECOND_V = 0.19
FROZEN_SECOND_STEP = 0.022941572783330588


def _tiny(W1, b1, W2, b2):
    return Mlp([np.atleast_2d(W1).astype(float), np.atleast_2d(W2).astype(float)],
               [np.atleast_1d(b1).astype(float), np.atleast_1d(b2).astype(float)])


# ----------------------------------------------------------------- forward


def test_identity_hidden_layer_clips_negatives():
    m = _tiny(np.eye(2), [0.0, 0.0], [[1.0], [1.0]], [0.0])
    assert forward(m, [2.0, -3.0]).tolist() == [2.0]


def test_zero_weights_return_bias():
    m = _tiny(np.zeros((3, 4)), np.zeros(4), np.zeros((4, 2)), [0.7, 0.7])
    assert forward(m, np.ones(3)).tolist() == [0.7, 0.7]


def test_output_layer_is_affine():
    m = _tiny([[1.0]], [0.0], [[-1.0]], [0.0])
    assert forward(m, [2.0]).tolist() == [-2.0]


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        forward(Mlp.init([3, 4, 2]), np.ones(2))
    with pytest.raises(ValueError):
        Mlp([np.ones((2, 2))], [np.ones(2)])


@given(seed=st.integers(0, 10_000), x=arrays(float, 3, elements=st.floats(-5, 5)))
def test_forward_matches_scalar_loops(seed, x):
    m = Mlp.init([3, 5, 4, 2], seed)
    for b in m.biases:
        b[:] = np.random.default_rng(seed).normal(size=b.size)
    assert np.allclose(forward(m, x), mlp_forward_loops(m.weights, m.biases, x), atol=1e-12, rtol=0)


def test_batch_forward_equals_rowwise():
    m = Mlp.init([3, 6, 2], 4)
    x = np.random.default_rng(1).normal(size=(7, 3))
    assert np.allclose(forward(m, x), np.array([forward(m, r) for r in x]), atol=1e-14)


@given(seed=st.integers(0, 1000), c=st.floats(0.01, 100.0))
def test_hidden_path_is_positively_homogeneous(seed, c):
    m = Mlp.init([3, 4, 2], seed)
    x = np.random.default_rng(seed).normal(size=3)
    assert np.allclose(forward(m, c * x), c * forward(m, x), rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------- backward


def test_closed_form_gradient_single_unit():
    a, b1, c, b2, x, t = 2.0, 0.5, -1.5, 0.25, 1.0, 1.0
    m = _tiny([[a]], [b1], [[c]], [b2])
    h = a * x + b1
    r = c * h + b2 - t
    gW1, gW2, gb1, gb2 = backward(m, [[x]], [[t]])
    assert gW1.item() == pytest.approx(r * c * x)
    assert gW2.item() == pytest.approx(r * h)
    assert gb1.item() == pytest.approx(r * c)
    assert gb2.item() == pytest.approx(r)


def test_dead_unit_gets_no_gradient():
    m = _tiny([[1.0]], [-5.0], [[2.0]], [0.0])
    gW1, _, gb1, _ = backward(m, [[1.0]], [[3.0]])
    assert gW1.item() == 0.0 and gb1.item() == 0.0


def test_zero_error_gives_zero_gradient():
    m = Mlp.init([2, 3, 2], 0)
    x = np.array([[0.3, -0.2], [1.0, 0.5]])
    grads = backward(m, x, forward(m, x))
    assert all(np.all(g == 0.0) for g in grads)


@given(seed=st.integers(0, 10_000))
def test_backward_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    m = Mlp.init([3, 4, 2], seed)
    for b in m.biases:
        b[:] = rng.normal(scale=0.5, size=b.size)
    x = rng.normal(size=(5, 3))
    t = rng.normal(size=(5, 2))
    pre = x @ m.weights[0] + m.biases[0]
    assume(np.min(np.abs(pre)) > 1e-3)  # stay off the ReLU kink
    analytic = backward(m, x, t)
    numeric = central_difference(lambda: loss(m, x, t), m.params(), step=1e-6)
    for g, n in zip(analytic, numeric):
        assert np.max(np.abs(g - n)) < 1e-4


# ----------------------------------------------------------------- rmsprop


def test_rmsprop_matches_hand_values():
    cfg = TrainConfig(eta=1e-2, epsilon=1e-8, decay=0.9)
    (w,), (v,) = rmsprop_step([np.array(1.0)], [np.array(1.0)], [np.array(0.0)], cfg)
    assert float(w) - 1.0 == pytest.approx(FROZEN_ONE_STEP, rel=1e-12)
    ref_w, ref_v = rmsprop_reference(1.0, 1.0, 0.0, 1e-2, 1e-8, 0.9)
    assert float(w) == pytest.approx(ref_w, rel=1e-15) and float(v) == pytest.approx(ref_v, rel=1e-15)


def test_rmsprop_second_step_hand_values():
    cfg = TrainConfig()
    # state carried in at v = 0.1, gradient 1.0: v = 0.09 + 0.1 = 0.19
    (w,), (v,) = rmsprop_step([np.array(0.0)], [np.array(1.0)], [np.array(0.1)], cfg)
    assert float(v) == pytest.approx(FROZEN_SECOND_V, rel=1e-12)
    assert -float(w) == pytest.approx(FROZEN_SECOND_STEP, rel=1e-9)


def test_rmsprop_zero_gradient_only_decays_state():
    cfg = TrainConfig()
    p, s = rmsprop_step([np.ones(3)], [np.zeros(3)], [np.full(3, 0.5)], cfg)
    assert p[0].tolist() == [1.0, 1.0, 1.0]
    assert np.allclose(s[0], 0.45)


def test_rmsprop_steps_shrink_under_constant_gradient():
    cfg = TrainConfig()
    p, s = [np.array(0.0)], [np.array(0.0)]
    steps = []
    for _ in range(5):
        new, s = rmsprop_step(p, [np.array(1.0)], s, cfg)
        steps.append(float(p[0] - new[0]))
        p = new
    assert all(a > b > 0 for a, b in zip(steps, steps[1:]))


def test_rmsprop_leaves_inputs_untouched():
    p, g, s = np.ones(2), np.ones(2), np.zeros(2)
    rmsprop_step([p], [g], [s], TrainConfig())
    assert p.tolist() == [1.0, 1.0] and s.tolist() == [0.0, 0.0]


@pytest.mark.parametrize("kwargs", [{"eta": 0.0}, {"epsilon": 0.0}, {"decay": 1.0}, {"epochs": -1}, {"batch_size": 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# ----------------------------------------------------------------- training


def _linear_data(n=200, seed=0):
    x = np.random.default_rng(seed).uniform(-1, 1, size=(n, 1))
    return Dataset(x, 2.0 * x).split(0.2, seed)


def test_learns_a_linear_map():
    data = _linear_data()
    model, hist = train(Mlp.init([1, 8, 1], 0), data, TrainConfig(epochs=500))
    assert len(hist) == 500
    assert hist[-1] < 1e-3
    x, y = data.test
    assert np.max(np.abs(model.predict(x) - y)) < 0.1


def test_zero_epochs_is_a_no_op():
    m = Mlp.init([1, 4, 1], 2)
    out, hist = train(m, _linear_data(), TrainConfig(epochs=0))
    assert hist == []
    assert all(np.array_equal(a, b) for a, b in zip(out.params(), m.params()))


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=20, seed=5)
    a, ha = train(Mlp.init([1, 4, 1], 1), _linear_data(), cfg)
    b, hb = train(Mlp.init([1, 4, 1], 1), _linear_data(), cfg)
    assert ha == hb and len(ha) == 20
    assert save_models([a]) == save_models([b])
    assert [p.shape for p in a.params()] == [p.shape for p in Mlp.init([1, 4, 1], 1).params()]


def test_train_does_not_mutate_the_input_model():
    m = Mlp.init([1, 4, 1], 3)
    before = save_models([m])
    train(m, _linear_data(), TrainConfig(epochs=3))
    assert save_models([m]) == before


def test_split_is_disjoint_and_complete():
    d = Dataset(np.arange(50.0)[:, None], np.arange(50.0)[:, None]).split(0.2, 1)
    assert len(d.test_idx) == 10
    assert sorted(np.concatenate([d.train_idx, d.test_idx]).tolist()) == list(range(50))
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 1)), np.ones((2, 1))).split(0.2)


# --------------------------------------------------------------- evaluation


def test_mae_of_exact_predictor_is_zero():
    d = Dataset(np.ones((4, 1)), np.arange(8.0).reshape(4, 2)).split(0.5, 0)
    per, mean = evaluate_mae(lambda x: d.targets[d.test_idx], d)
    assert mean == 0.0 and per.tolist() == [0.0, 0.0]


def test_mae_hand_example():
    d = Dataset(np.zeros((2, 1)), [[1.0, 2.0], [1.0, 2.0]], np.array([0]), np.array([1]))
    per, mean = evaluate_mae(lambda x: np.array([[1.0, 4.0]]), d)
    assert per.tolist() == [0.0, 2.0] and mean == 1.0


def test_dummy_predictor_is_the_bound_midpoint(t1):
    pred = dummy_mean_predictor(t1)
    out = pred(np.random.default_rng(0).uniform(0.9, 1.1, size=(6, 2)))
    assert out.shape == (6, 2)
    assert np.all(out == 5.5)


@given(x=arrays(float, (3, 2), elements=st.floats(0.5, 1.5)))
def test_dummy_mae_is_mean_distance_to_midpoint(t1, x):
    rng = np.random.default_rng(0)
    y = rng.uniform(1.0, 10.0, size=(3, 2))
    d = Dataset(x, y, np.array([0]), np.array([1, 2]))
    _, mean = evaluate_mae(dummy_mean_predictor(t1), d)
    assert mean == pytest.approx(np.mean(np.abs(y[1:] - 5.5)), rel=1e-12)


def test_dummy_predictor_tiles_over_slots(t1):
    assert dummy_mean_predictor(t1, horizon=3)(np.ones(6)).shape == (1, 6)


# -------------------------------------------------------------- persistence


def test_model_file_round_trip():
    data = _linear_data()
    a, _ = train(Mlp.init([1, 5, 1], 0), data, TrainConfig(epochs=5))
    b = Mlp.init([3, 4, 4, 2], 9)
    text = save_models([a, b])
    assert text.splitlines()[0] == "gasccp-mlp 1"
    back = load_models(text)
    assert len(back) == 2
    for orig, new in zip([a, b], back):
        assert all(np.array_equal(p, q) for p, q in zip(orig.params(), new.params()))
        assert np.array_equal(orig.y_scale, new.y_scale)
    assert save_models(back) == text


def test_model_file_rejects_other_formats():
    with pytest.raises(ValueError):
        load_models("something else\n")
    with pytest.raises(ValueError):
        load_models("gasccp-mlp 1\nmodels 1\nlayers 1 2 1\n")


@given(seed=st.integers(0, 1000))
def test_normalization_round_trip(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(3.0, 2.0, size=(20, 3)), rng.normal(-1.0, 5.0, size=(20, 2))
    m = Mlp.init([3, 4, 2], seed)
    m.fit_normalization(x, y)
    assert np.allclose(m.denormalize_inputs(m.normalize_inputs(x)), x)
    assert np.allclose(m.denormalize_targets(m.normalize_targets(y)), y)
    assert np.allclose(m.normalize_inputs(x).mean(axis=0), 0.0, atol=1e-12)
