import numpy as np
import pytest

from trendgcn import autodiff as ad
from trendgcn.adversary import l1_prediction_loss
from trendgcn.autodiff import Tensor, check_gradients
from trendgcn.dagg import DynamicAdjacency, GraphGenConfig
from trendgcn.errors import InputError, ShapeError
from trendgcn.generator import (
    GcnParamPool,
    GruLayerParams,
    ModelConfig,
    TrendGCN,
    gru_step,
    node_adaptive_gcn,
)


def uniform_adj(n, dtype=np.float64):
    zeros = Tensor(np.zeros((n, n), dtype=dtype))
    norm = Tensor(np.full((n, n), 1.0 / n, dtype=dtype))
    return DynamicAdjacency(zeros, norm, Tensor(np.eye(n, dtype=dtype) + norm.data), 1)


def identity_adj(n):
    # propagation = I (as if Norm were zero), for isolating the parameter lookup
    z = Tensor(np.zeros((n, n)))
    return DynamicAdjacency(z, z, Tensor(np.eye(n)), 1)


def zero_pool(width, f_in, f_out):
    return GcnParamPool(Tensor(np.zeros((width, f_in, f_out)), requires_grad=True),
                        Tensor(np.zeros((width, f_out)), requires_grad=True))


def small_model(seed=0, **kw):
    cfg = ModelConfig(n_nodes=4, in_steps=3, horizon=2, hidden=4, d_e=2,
                      graph=GraphGenConfig(dropout_rate=0.0), **kw)
    return TrendGCN(cfg, seed=seed, dtype=np.float64)


def test_one_hot_embeddings_select_pool_slices():
    rng = np.random.default_rng(0)
    n, f_in, f_out = 3, 2, 2
    pool = GcnParamPool(Tensor(rng.normal(size=(n, f_in, f_out))), Tensor(rng.normal(size=(n, f_out))))
    h = rng.normal(size=(n, f_in))
    out = node_adaptive_gcn(Tensor(h), identity_adj(n), Tensor(np.eye(n)), pool).data
    for i in range(n):
        assert np.allclose(out[i], h[i] @ pool.weight.data[i] + pool.bias.data[i], atol=1e-12)


def test_uniform_graph_with_identical_rows_doubles_input():
    n, f = 4, 3
    pool = GcnParamPool(Tensor(np.eye(f)[None].repeat(1, 0)), Tensor(np.zeros((1, f))))
    row = np.array([1.0, -2.0, 0.5])
    h = np.tile(row, (n, 1))
    out = node_adaptive_gcn(Tensor(h), uniform_adj(n), Tensor(np.ones((n, 1))), pool).data
    assert np.allclose(out, 2 * row)


def test_zero_pool_gives_zero_output():
    out = node_adaptive_gcn(Tensor(np.ones((2, 5, 3))), uniform_adj(5), Tensor(np.ones((5, 2))),
                            zero_pool(2, 3, 4)).data
    assert out.shape == (2, 5, 4) and not out.any()


def test_gcn_shape_errors():
    with pytest.raises(ShapeError):
        node_adaptive_gcn(Tensor(np.ones((5, 2))), uniform_adj(5), Tensor(np.ones((5, 2))), zero_pool(2, 3, 4))
    with pytest.raises(ShapeError):
        node_adaptive_gcn(Tensor(np.ones((5, 3))), uniform_adj(5), Tensor(np.ones((4, 2))), zero_pool(2, 3, 4))


def test_zero_parameter_gru_step_halves_state():
    n, hidden, width = 3, 4, 2
    layer = GruLayerParams(*[[zero_pool(width, 1 + hidden, hidden), zero_pool(width, hidden, hidden)]
                             for _ in range(3)])
    h_prev = np.random.default_rng(1).normal(size=(n, hidden))
    out = gru_step(Tensor(np.ones((n, 1))), Tensor(h_prev), layer, uniform_adj(n), Tensor(np.ones((n, width))))
    assert np.allclose(out.data, 0.5 * h_prev)


@pytest.mark.parametrize("z_bias, expect_prev", [(1e3, True), (-1e3, False)])
def test_gate_saturation(z_bias, expect_prev):
    n, hidden, width = 3, 2, 1
    z_pool = zero_pool(width, 1 + hidden, hidden)
    z_pool.bias.data[:] = z_bias
    c_pool = zero_pool(width, 1 + hidden, hidden)
    c_pool.bias.data[:] = 0.3
    layer = GruLayerParams([z_pool], [zero_pool(width, 1 + hidden, hidden)], [c_pool])
    h_prev = np.random.default_rng(2).normal(size=(n, hidden))
    out = gru_step(Tensor(np.ones((n, 1))), Tensor(h_prev), layer, uniform_adj(n), Tensor(np.ones((n, width)))).data
    expected = h_prev if expect_prev else np.full((n, hidden), np.tanh(0.3))
    assert np.allclose(out, expected)


def test_forward_shapes():
    model = small_model()
    x = np.random.default_rng(0).normal(size=(5, 3, 4, 1))
    assert model.forward(x).shape == (5, 2, 4, 1)
    assert model.forward(x[0]).shape == (2, 4, 1)
    with pytest.raises(ShapeError):
        model.forward(np.zeros((5, 4, 4, 1)))


def test_non_finite_input_is_rejected():
    x = np.zeros((1, 3, 4, 1))
    x[0, 1, 2, 0] = np.nan
    with pytest.raises(InputError):
        small_model().forward(x)


def test_bias_only_head_predicts_constant():
    model = small_model()
    for p in model.parameters():
        p.data[:] = 0.0
    model.head.ln_gain.data[:] = 1.0
    model.head.bias.data[:] = 2.5
    out = model.forward(np.random.default_rng(0).normal(size=(3, 3, 4, 1))).data
    assert np.allclose(out, 2.5)


def test_hidden_states_stay_bounded():
    model = small_model()
    x = 100 * np.random.default_rng(0).normal(size=(2, 3, 4, 1))
    h = Tensor(np.zeros((2, 4, 4)))
    graphs = model.graphs()
    for t, (adj, e_nt) in enumerate(graphs):
        h = gru_step(Tensor(x[:, t]), h, model.layers[0], adj, e_nt)
        assert np.all(np.abs(h.data) <= 1.0)


def test_node_permutation_equivariance():
    model = small_model(seed=3)
    x = np.random.default_rng(4).normal(size=(2, 3, 4, 1))
    perm = np.array([2, 0, 3, 1])
    base = model.forward(x).data
    model.bank.e_node.data = model.bank.e_node.data[perm]
    permuted = model.forward(x[:, :, perm]).data
    assert np.allclose(permuted, base[:, :, perm], atol=1e-12)


def test_one_shot_head_predicts_all_horizons_from_one_state():
    model = small_model()
    h_last = Tensor(np.random.default_rng(0).normal(size=(2, 4, 4)))
    out = model.project(h_last).data
    w = model.head.weight.data.copy()
    model.head.weight.data[:, 0] += np.random.default_rng(1).normal(size=4)   # horizon-1 column
    changed = model.project(h_last).data
    assert not np.allclose(changed[:, 0], out[:, 0])
    assert np.array_equal(changed[:, 1], out[:, 1])
    model.head.weight.data = w


def test_loss_gradient_matches_finite_differences():
    model = small_model(seed=1)
    rng = np.random.default_rng(9)
    x, y = rng.normal(size=(2, 3, 4, 1)), rng.normal(size=(2, 2, 4, 1))
    fn = lambda: l1_prediction_loss(y, model.forward(Tensor(x)))  # noqa: E731
    errs = check_gradients(fn, model.parameters(), eps=1e-5)
    assert max(errs) < 1e-4


def test_state_dict_round_trip():
    a, b = small_model(seed=0), small_model(seed=1)
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(0).normal(size=(1, 3, 4, 1))
    assert np.array_equal(a.forward(x).data, b.forward(x).data)


def test_dropout_makes_training_forward_stochastic_but_inference_deterministic():
    cfg = ModelConfig(n_nodes=4, in_steps=3, horizon=2, hidden=4, d_e=2, graph=GraphGenConfig(dropout_rate=0.3))
    model = TrendGCN(cfg, seed=0, dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(1, 3, 4, 1))
    assert not np.array_equal(model.forward(x, training=True).data, model.forward(x, training=True).data)
    assert np.array_equal(model.forward(x).data, model.forward(x).data)
    with ad.no_grad():
        assert not model.forward(x).requires_grad
