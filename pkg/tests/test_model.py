import numpy as np
import pytest

from bounded_clustering.graph import Graph, SbmSpec, sbm_generate
from bounded_clustering.model import (
    GraphInputs,
    ModelConfig,
    ModelState,
    forward,
    init_model,
    mean_aggregator,
)


def small_graph(seed=0):
    return sbm_generate(SbmSpec([4, 3, 3], 0.7, 0.15, seed))


def test_parameter_shapes():
    state = init_model(ModelConfig(c=10), feature_dim=100)
    shapes = {k: v.shape for k, v in state.params.items()}
    assert shapes["sage0.self"] == shapes["sage0.neigh"] == (100, 64)
    for i in (1, 2):
        assert shapes[f"sage{i}.self"] == shapes[f"sage{i}.neigh"] == (64, 64)
    assert shapes["mlp0.weight"] == (64, 64)
    assert shapes["mlp1.weight"] == (64, 10)
    assert shapes["mlp1.bias"] == (1, 10)
    assert "sage3.self" not in shapes


def test_init_scale_and_zero_biases():
    state = init_model(ModelConfig(c=4), feature_dim=25)
    assert np.abs(state.params["sage0.self"]).max() <= 1 / 5
    assert np.abs(state.params["mlp0.weight"]).max() <= 1 / 8
    assert not state.params["sage1.bias"].any()


def test_init_is_deterministic_per_seed():
    a = init_model(ModelConfig(c=3, seed=4), 10)
    b = init_model(ModelConfig(c=3, seed=4), 10)
    c = init_model(ModelConfig(c=3, seed=5), 10)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert any(not np.array_equal(x, y) for x, y in zip(a.arrays(), c.arrays()))


def test_presets_and_config_checks():
    assert ModelConfig.real(c=7).gnn_layers == 4
    assert ModelConfig.synthetic(c=7).gnn_layers == 3
    with pytest.raises(ValueError):
        ModelConfig(c=1)
    with pytest.raises(ValueError):
        ModelConfig(c=3, hidden_dim=0)


def test_output_is_row_stochastic():
    g = small_graph()
    s = forward(g, init_model(ModelConfig(c=4), g.n))
    assert s.shape == (g.n, 4)
    assert np.allclose(s.sum(axis=1), 1.0, rtol=0, atol=1e-9)
    assert (s > 0).all() and (s < 1).all()


def test_zero_weights_give_uniform_rows():
    g = small_graph()
    state = init_model(ModelConfig(c=5), g.n)
    zero = state.with_arrays([np.zeros_like(a) for a in state.arrays()])
    assert np.array_equal(forward(g, zero), np.full((g.n, 5), 0.2))


def test_permutation_equivariance():
    g = small_graph(1)
    rng = np.random.default_rng(0)
    perm = rng.permutation(g.n)  # new id of old node i is perm[i]
    h = Graph(g.n, [(perm[i], perm[j]) for i, j in g.edges])
    feats = g.adjacency()
    feats_h = np.zeros_like(feats)
    feats_h[perm] = feats
    state = init_model(ModelConfig(c=3, hidden_dim=8), g.n)
    s_g = forward(GraphInputs(g, feats), state)
    s_h = forward(GraphInputs(h, feats_h), state)
    assert np.allclose(s_h[perm], s_g, rtol=0, atol=1e-12)


def test_mean_aggregator_isolated_node():
    agg = mean_aggregator(Graph(3, [(0, 1)])).toarray()
    assert agg.tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 0]]


def test_feature_width_mismatch():
    state = init_model(ModelConfig(c=3), 5)
    with pytest.raises(ValueError, match="feature width"):
        forward(small_graph(), state)


def test_checkpoint_round_trip(tmp_path):
    g = small_graph()
    state = init_model(ModelConfig(c=3, hidden_dim=8, seed=2), g.n)
    path = tmp_path / "m.json"
    state.save(path)
    loaded = ModelState.load(path)
    assert loaded.config == state.config and loaded.names() == state.names()
    assert np.array_equal(forward(g, loaded), forward(g, state))
