import numpy as np
import pytest

from conftest import central_diff, rel_err
from oracles import fd_gradient, reference_objective, reference_scores
from marketrec.data import IndexMap
from marketrec.models import (
    GROUPS,
    Model,
    ModelConfig,
    init_shapes,
    load_checkpoint,
    param_group,
    parameter_count,
    params_digest,
    save_checkpoint,
    split_market_tables,
    warm_start_nmf,
)
from marketrec.nn import Tape, Tensor, bce_loss, tsum

KINDS = [(k, ma) for k in ("gmf", "mlp", "nmf") for ma in (False, True)]


def make(kind, aware, seed=0, **kw):
    cfg = ModelConfig(kind=kind, market_aware=aware, n_users=5, n_items=7, n_markets=3, **kw)
    return Model(cfg, seed=seed)


def test_gmf_hand_example():
    cfg = ModelConfig("gmf", n_users=1, n_items=1, embed_dim=2)
    m = Model(cfg, {"gmf.user": [[1.0, 1.0]], "gmf.item": [[2.0, 3.0]], "h": [1.0, 1.0], "h.bias": [0.0]})
    assert m.score(0, 0) == pytest.approx(0.993307, abs=1e-6)


def test_zero_user_scores_half():
    m = make("gmf", False)
    m.params["gmf.user"][2] = 0.0
    np.testing.assert_array_equal(m.predict(np.full(7, 2), np.arange(7)), 0.5)


def test_parameter_counts():
    gmf = Model(ModelConfig("gmf", n_users=3, n_items=4))
    assert parameter_count(gmf) == 65
    bare = Model(ModelConfig("mlp", n_users=3, n_items=4, output_bias=False))
    assert parameter_count(bare) - (3 + 4) * 8 == 1088 + 2080 + 528 + 136 + 8 == 3840
    mlp = Model(ModelConfig("mlp", n_users=3, n_items=4))
    assert parameter_count(mlp) - parameter_count(bare) == 1
    assert mlp.config.n_layers == 4


def test_published_mlp_size_needs_the_output_bias():
    # 19929 parameters for the smallest pair: embeddings come in blocks of 8
    assert (19929 - 3841) % 8 == 0
    assert (19929 - 3840) % 8 != 0


@pytest.mark.parametrize("kind", ["gmf", "mlp", "nmf"])
def test_market_awareness_adds_one_table(kind):
    base = Model(ModelConfig(kind, n_users=9, n_items=11, n_markets=2))
    ma = Model(ModelConfig(kind, market_aware=True, n_users=9, n_items=11, n_markets=2))
    assert parameter_count(ma) - parameter_count(base) == 16


def test_init_shapes_agree_with_params():
    for kind, aware in KINDS:
        m = make(kind, aware)
        assert {k: v.shape for k, v in m.params.items()} == init_shapes(m.config)


def test_layer_plan_validation():
    with pytest.raises(ValueError):
        ModelConfig("mlp", layer_plan=(16, 32, 4))
    with pytest.raises(ValueError):
        ModelConfig("svd")


@pytest.mark.parametrize("kind", ["gmf", "mlp", "nmf"])
def test_unit_market_reduction(kind):
    ma = make(kind, True, seed=4)
    base = Model(ModelConfig(kind, n_users=5, n_items=7, n_markets=3), {k: v for k, v in ma.params.items() if k != "market"})
    ma.params["market"][:] = 1.0
    rng = np.random.default_rng(0)
    u, i, l = rng.integers(0, 5, 500), rng.integers(0, 7, 500), rng.integers(0, 3, 500)
    assert np.array_equal(ma.predict(u, i, l), base.predict(u, i, l))


def test_market_embedding_changes_scores():
    m = make("gmf", True, seed=1)
    m.params["market"][1] *= -3.0
    assert m.score(0, 0, 0) != m.score(0, 0, 1)


def test_market_index_out_of_range():
    with pytest.raises(IndexError):
        make("mlp", True).predict([0], [0], [3])


@pytest.mark.parametrize("kind,aware", KINDS)
def test_reference_forward_agrees(kind, aware):
    m = make(kind, aware, seed=2)
    rng = np.random.default_rng(0)
    u, i, l = rng.integers(0, 5, 40), rng.integers(0, 7, 40), rng.integers(0, 3, 40)
    np.testing.assert_allclose(m.predict(u, i, l), reference_scores(m.config, m.params, u, i, l), rtol=1e-13)


def test_vectorised_fd_matches_scalar_fd():
    m = make("mlp", True, seed=1)
    rng = np.random.default_rng(2)
    batch = (rng.integers(0, 5, 4), rng.integers(0, 7, 4), rng.integers(0, 3, 4), np.array([1.0, 0, 1, 0]))
    p = m.params["mlp.W4"]
    scalar = central_diff(lambda: float(reference_objective(m.config, m.params, *batch, 1e-3)), p)
    np.testing.assert_allclose(fd_gradient(m.config, m.params, "mlp.W4", batch, 1e-3), scalar, rtol=1e-6, atol=1e-10)


@pytest.mark.parametrize("kind,aware", KINDS)
def test_gradients_match_finite_differences(kind, aware):
    m = make(kind, aware, seed=2)
    rng = np.random.default_rng(3)
    for name in m.params:  # move away from the near-zero init
        m.params[name] = m.params[name] + rng.normal(0, 0.3, m.params[name].shape)
    batch = (rng.integers(0, 5, 6), rng.integers(0, 7, 6), rng.integers(0, 3, 6), rng.integers(0, 2, 6).astype(float))
    lam = 1e-3
    tensors = m.tensors()
    with Tape() as tape:
        loss = bce_loss(m.forward(tensors, *batch[:3]), batch[3])
        for t in tensors.values():
            loss = loss + 0.5 * lam * tsum(t * t)
    grads = tape.gradient(loss, tensors)
    for name in m.params:
        assert rel_err(grads[name], fd_gradient(m.config, m.params, name, batch, lam)) < 1e-4, name


def test_warm_start_copies_and_mixes():
    gmf, mlp = make("gmf", True, seed=1), make("mlp", True, seed=2)
    gmf.params["h"][:] = 1.0
    mlp.params["h"][:] = 1.0
    nmf = warm_start_nmf(gmf, mlp, 0.5)
    np.testing.assert_array_equal(nmf.params["h"], np.full(16, 0.5))
    gmf.params["h.bias"][:] = 2.0
    mlp.params["h.bias"][:] = -1.0
    assert warm_start_nmf(gmf, mlp, 0.25).params["h.bias"][0] == 0.25 * 2.0 + 0.75 * -1.0
    for k in ("gmf.user", "gmf.item"):
        assert np.array_equal(nmf.params[k], gmf.params[k])
    for k in ("mlp.user", "mlp.item", "mlp.W1", "mlp.b4"):
        assert np.array_equal(nmf.params[k], mlp.params[k])
    assert np.array_equal(nmf.params["market"], gmf.params["market"])
    nmf.params["gmf.user"][0, 0] += 1.0
    assert nmf.params["gmf.user"][0, 0] != gmf.params["gmf.user"][0, 0]


def test_warm_start_gmf_tower_isolation():
    gmf, mlp = make("gmf", False, seed=1), make("mlp", False, seed=2)
    nmf = warm_start_nmf(gmf, mlp, alpha=1.0)
    u, i = np.repeat(np.arange(5), 7), np.tile(np.arange(7), 5)
    np.testing.assert_allclose(nmf.predict(u, i), gmf.predict(u, i), rtol=0, atol=1e-15)


def test_warm_start_rejects_mismatched_donors():
    with pytest.raises(ValueError):
        warm_start_nmf(make("gmf", True), make("mlp", False))
    with pytest.raises(ValueError):
        warm_start_nmf(make("mlp", False), make("gmf", False))


def test_fork_isolation():
    m = make("nmf", True, seed=5)
    f = m.fork()
    assert params_digest(f) == params_digest(m) == params_digest(f.fork())
    assert f.score(1, 2, 1) == m.score(1, 2, 1)
    f.params["h"] += 1.0
    assert params_digest(f) != params_digest(m)


def test_param_groups_cover_every_name():
    for kind, aware in KINDS:
        for name in make(kind, aware).params:
            assert param_group(name) in GROUPS
    assert param_group("market") == "market" and param_group("mlp.W2") == "mlp_layers"


def test_split_market_tables_starts_identical():
    m = make("nmf", True, seed=7)
    m.params["market"] = np.random.default_rng(0).normal(size=(3, 8))
    s = split_market_tables(m)
    u, i, l = np.arange(5), np.arange(5), np.array([0, 1, 2, 0, 1])
    np.testing.assert_array_equal(s.predict(u, i, l), m.predict(u, i, l))
    assert parameter_count(s) == parameter_count(m) + 3 * 8


def test_checkpoint_round_trip(tmp_path):
    m = make("nmf", True, seed=9)
    index = IndexMap(np.arange(5) * 10, np.arange(7) + 100, np.array([0, 2, 5]))
    path = save_checkpoint(m, tmp_path / "m.npz", index)
    back, idx = load_checkpoint(path)
    assert back.config == m.config and params_digest(back) == params_digest(m)
    assert idx.fingerprint() == index.fingerprint()


def test_batched_prediction_shapes():
    m = make("mlp", False)
    s = m.predict(np.arange(5)[:, None], np.arange(7)[None, :], 0)
    assert s.shape == (5, 7)
    assert s[3, 4] == m.score(3, 4)


def test_forward_is_functional():
    m = make("gmf", False, seed=1)
    alt = {k: Tensor(np.zeros_like(v)) for k, v in m.params.items()}
    assert m.forward(alt, [0], [0], [0]).item() == 0.5
    assert m.score(0, 0) != 0.5
