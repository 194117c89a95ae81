import numpy as np
import pytest

from hystl.nn import (
    ParamStore,
    ShapeError,
    Tensor,
    adam_step,
    dense,
    gcn_layer,
    gradcheck,
    gru_cell,
    init_gru,
    load_params,
    mse,
    reduce_sum,
    save_params,
)
from hystl.stgraph import normalize_adjacency


def _tensors(d):
    return {k: Tensor(v, requires_grad=True) for k, v in d.items()}


def test_gcn_layer_matches_dense_formula():
    rng = np.random.default_rng(0)
    A = normalize_adjacency(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float))
    X, W = rng.normal(size=(3, 2)), rng.normal(size=(2, 4))
    np.testing.assert_allclose(gcn_layer(A, X, W).data, A @ X @ W, atol=1e-14)


def test_gcn_layer_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        gcn_layer(np.eye(3), np.zeros((4, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        gcn_layer(np.eye(3), np.zeros((3, 2)), np.zeros((3, 2)))


def test_gcn_and_gru_gradients():
    rng = np.random.default_rng(1)
    A = normalize_adjacency(rng.integers(0, 2, (4, 4)) * 1.0 * (1 - np.eye(4)))
    A = (A + A.T) / 2
    X = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    W = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    assert gradcheck(lambda: reduce_sum(gcn_layer(A, X, W) * 0.3), [X, W]) < 1e-6

    p = _tensors(init_gru(rng, 3, 5))
    for v in p.values():
        v.data += rng.normal(0, 0.1, v.shape)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    h = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    w = rng.normal(size=(4, 5))
    assert gradcheck(lambda: reduce_sum(gru_cell(x, h, p) * w), [x, h, *p.values()]) < 1e-6


def test_gru_interpolates_between_state_and_candidate():
    rng = np.random.default_rng(2)
    p = _tensors(init_gru(rng, 2, 3))
    p["b_z"].data[:] = 50.0  # update gate saturated at 1 -> keep previous state
    h = rng.normal(size=(5, 3))
    np.testing.assert_allclose(gru_cell(rng.normal(size=(5, 2)), h, p).data, h, atol=1e-12)


def test_gru_missing_parameter():
    p = _tensors(init_gru(np.random.default_rng(0), 2, 3))
    del p["U_h"]
    with pytest.raises(KeyError):
        gru_cell(np.zeros((1, 2)), np.zeros((1, 3)), p)


def test_dense_with_and_without_bias():
    x, W = np.ones((2, 3)), np.full((3, 1), 2.0)
    assert dense(x, W).data.tolist() == [[6.0], [6.0]]
    assert dense(x, W, np.array([1.0])).data.tolist() == [[7.0], [7.0]]


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(3)
    store = ParamStore()
    w = store.add("w", rng.normal(size=4))
    theta0 = w.data.copy()
    grads = [rng.normal(size=4) for _ in range(7)]
    for g in grads:
        w.grad = g.copy()
        adam_step(store, 0.05)
    np.testing.assert_allclose(w.data, reference_adam(theta0, grads, 0.05), rtol=1e-12)
    assert store.step_count == 7
    assert np.all(w.grad == 0)


def test_adam_first_step_moves_by_lr():
    store = ParamStore()
    w = store.add("w", np.zeros(3))
    w.grad = np.array([1e-3, -5.0, 200.0])
    adam_step(store, 0.01)
    np.testing.assert_allclose(w.data, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_minimises_a_quadratic():
    store = ParamStore()
    w = store.add("w", np.array([3.0, -2.0]))
    for _ in range(2000):
        loss = mse(w, np.array([1.0, 1.0]), reduction="sum")
        loss.backward()
        adam_step(store, 0.01)
    np.testing.assert_allclose(w.data, [1.0, 1.0], atol=1e-3)


def test_adam_requires_gradients_and_skips_frozen():
    store = ParamStore()
    store.add("a", np.ones(2))
    frozen = store.add("b", np.ones(2))
    frozen.requires_grad = False
    with pytest.raises(ValueError, match="'a'"):
        adam_step(store, 0.1)
    store["a"].grad = np.ones(2)
    adam_step(store, 0.1)
    np.testing.assert_array_equal(frozen.data, [1.0, 1.0])


def test_param_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    store = ParamStore()
    store.add("x", rng.normal(size=(2, 3)))
    store.add("y", rng.normal(size=(4,)))
    store.add("s", np.array(1.5))
    store.step_count = 11
    save_params(store, tmp_path)
    state, manifest = load_params(tmp_path)
    assert manifest["optimizer_step"] == 11
    assert manifest["names"] == ["x", "y", "s"]
    for k, v in store.state_dict().items():
        np.testing.assert_array_equal(state[k], v)


def test_load_state_dict_validates():
    store = ParamStore()
    store.add("x", np.zeros(2))
    with pytest.raises(KeyError):
        store.load_state_dict({"z": np.zeros(2)})
    with pytest.raises(ValueError):
        store.load_state_dict({"x": np.zeros(3)})
    with pytest.raises(KeyError):
        store.add("x", np.zeros(1))
