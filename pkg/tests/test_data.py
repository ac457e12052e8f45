import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marketrec.data import (
    DataFormatError,
    Interaction,
    MarketRegistry,
    NegativeSampler,
    RegistryError,
    SyntheticSpec,
    downsample_source,
    generate_synthetic_markets,
    interactions_fingerprint,
    leave_one_out_split,
    load_interactions,
    load_split,
    make_global,
    make_pairwise,
    make_single,
    sample_eval_negatives,
    sample_train_negatives,
    save_split,
    write_interactions,
)
from marketrec.data.synthetic import check_spec


def write(tmp_path, lines, name="x.tsv"):
    p = tmp_path / name
    p.write_text("".join(line + "\n" for line in lines))
    return p


# -- ingestion ---------------------------------------------------------------


def test_empty_file(tmp_path):
    rows, reg = load_interactions(write(tmp_path, []))
    assert rows == [] and reg.n_users == 0


def test_duplicates_keep_latest_timestamp(tmp_path):
    rows, _ = load_interactions(write(tmp_path, ["de\tu1\ti1\t5\t300", "de\tu1\ti1\t3\t100", "de\tu1\ti1\t4\t-"]))
    assert len(rows) == 1 and rows[0].timestamp == 300 and rows[0].rating == 5.0


def test_equal_timestamps_keep_later_line(tmp_path):
    rows, _ = load_interactions(write(tmp_path, ["de\tu1\ti1\t5\t100", "de\tu1\ti1\t2\t100"]))
    assert rows[0].rating == 2.0


def test_shared_item_token_one_global_id(tmp_path):
    rows, reg = load_interactions(write(tmp_path, ["de\tu1\titem\t1\t1", "jp\tu1\titem\t1\t1"]))
    assert rows[0].item == rows[1].item
    assert rows[0].user != rows[1].user  # same token, different markets
    assert rows[0].item in reg.market_items[reg.market_id("de")]
    assert rows[0].item in reg.market_items[reg.market_id("jp")]


@pytest.mark.parametrize(
    "line", ["de\tu1\ti1\t1", "zz\tu1\ti1\t1\t1", "de\tu1\ti1\tx\t1", "de\tu1\ti1\t1\tnoon", "de\t\ti1\t1\t1"]
)
def test_malformed_lines_name_the_line(tmp_path, line):
    with pytest.raises(DataFormatError) as exc:
        load_interactions(write(tmp_path, ["de\tu0\ti0\t1\t1", line]))
    assert exc.value.lineno == 2


def test_base_market_superset_invariant(tmp_path):
    ok = ["us\tu1\ti1\t1\t1", "us\tu2\ti2\t1\t1", "de\tu3\ti1\t1\t1"]
    load_interactions(write(tmp_path, ok), base_market="us")
    with pytest.raises(RegistryError):
        load_interactions(write(tmp_path, ok + ["de\tu3\ti9\t1\t2"], "y.tsv"), base_market="us")


def test_registry_json_round_trip(tmp_path):
    _, reg = load_interactions(write(tmp_path, ["de\tu1\ti1\t1\t1", "jp\tu2\ti2\t1\t1"]))
    back = MarketRegistry.from_json(reg.to_json())
    assert back.fingerprint() == reg.fingerprint()
    assert back.user_id(reg.market_id("jp"), "u2", create=False) == reg.user_id(1, "u2", create=False)


def test_write_then_load_round_trip(tmp_path):
    rows, reg = generate_synthetic_markets(SyntheticSpec(users_per_market=5, items_per_market=10, interactions_per_user=4))
    path = write_interactions(tmp_path / "s.tsv", rows, reg)
    back, reg2 = load_interactions(path)

    def tokens(xs, r):
        return sorted((r.markets[x.market], r.user_keys[x.user][1], r.item_tokens[x.item], x.timestamp) for x in xs)

    assert tokens(back, reg2) == tokens(rows, reg)
    assert interactions_fingerprint(back) == interactions_fingerprint(load_interactions(path)[0])


# -- leave-one-out -----------------------------------------------------------


def ix(user, item, t, market=0):
    return Interaction(user, item, 1.0, t, market)


def test_leave_one_out_example():
    s = leave_one_out_split([ix(0, 3, 30), ix(0, 1, 10), ix(0, 2, 20)], pool=np.arange(10), n_negatives=5)
    assert [x.item for x in s.train] == [1]
    assert s.validation[0].item == 2 and s.test[0].item == 3


def test_short_histories_stay_in_train():
    s = leave_one_out_split([ix(0, 1, 1), ix(0, 2, 2)], pool=np.arange(10))
    assert len(s.train) == 2 and not s.test and not s.validation


def test_pool_of_100_gives_the_99_others():
    negs = sample_eval_negatives(0, np.arange(100), {7}, k=99)
    assert sorted(negs) == [i for i in range(100) if i != 7]
    assert negs == sample_eval_negatives(0, np.arange(100), {7}, k=99)


def test_shortfall_recorded_for_small_pools():
    rows = [ix(0, i, i) for i in range(5)]
    s = leave_one_out_split(rows, pool=np.arange(8), n_negatives=99)
    assert len(s.test[0].negatives) == 3 and s.shortfall == {0: 96}


histories = st.lists(
    st.lists(st.tuples(st.integers(0, 59), st.one_of(st.none(), st.integers(0, 50))), min_size=1, max_size=12),
    min_size=1,
    max_size=8,
)


@settings(max_examples=60, deadline=None)
@given(histories, st.integers(0, 5))
def test_split_properties(users, seed):
    rows = []
    for u, hist in enumerate(users):
        seen = set()
        for item, t in hist:
            if item not in seen:
                seen.add(item)
                rows.append(ix(u, item, t))
    pool = np.arange(60)
    s = leave_one_out_split(rows, seed=seed, pool=pool, n_negatives=20)
    assert len(s.train) + len(s.test) + len(s.validation) == len(rows)
    train_items = {}
    for x in s.train:
        train_items.setdefault(x.user, set()).add(x.item)
    positives = {}
    for x in rows:
        positives.setdefault(x.user, set()).add(x.item)
    for rec in s.test + s.validation:
        assert rec.item not in train_items.get(rec.user, set())
        assert not set(rec.negatives) & positives[rec.user]
        assert set(rec.negatives) <= set(pool.tolist())
        assert len(set(rec.negatives)) == len(rec.negatives)
    for t, v in zip(s.test, s.validation):
        ts = {x.item: x.timestamp for x in rows if x.user == t.user}
        tt, tv = ts[t.item], ts[v.item]
        assert not (tt is None and tv is not None) and (tt is None or tv is None or tt >= tv)
    assert leave_one_out_split(rows, seed=seed, pool=pool, n_negatives=20) == s


def test_eval_negatives_never_positive_over_many_users():
    rng = np.random.default_rng(0)
    pool = np.arange(300)
    for user in range(10_000):
        pos = set(rng.choice(300, size=rng.integers(1, 30), replace=False).tolist())
        negs = sample_eval_negatives(user, pool, pos, k=99, seed=1)
        assert len(negs) == 99 and not pos.intersection(negs)


def test_split_manifest_round_trip(tmp_path, small_markets):
    _, _, splits = small_markets
    s = splits["de"]
    path = save_split(s, tmp_path / "s.json", "abc")
    back = load_split(path, "abc")
    assert back.test == s.test and back.train == s.train and np.array_equal(back.pool, s.pool)
    with pytest.raises(ValueError):
        load_split(path, "other")


# -- train sets and negatives ------------------------------------------------


def test_downsampling_rule():
    src = [ix(0, i, i) for i in range(1000)]
    kept = downsample_source(src, 200, seed=4)
    assert len(kept) == 200 and kept == downsample_source(src, 200, seed=4)
    assert downsample_source(src[:150], 200, seed=4) == src[:150]


def test_pairwise_and_global_sizes(small_markets):
    _, _, splits = small_markets
    de, jp, in_ = splits["de"], splits["jp"], splits["in"]
    jp_train = jp.train
    pw = make_pairwise(de, jp, seed=0)
    assert len(pw) == len(de.train) + min(len(jp_train), len(de.train))
    short = type(jp)(jp.market, jp.train[:50], jp.validation, jp.test, jp.seed, jp.pool)
    pw2 = make_pairwise(de, short, seed=0)
    assert len(pw2) == len(de.train) + 50
    g = make_global([de, jp, in_])
    assert len(g) == sum(len(s.train) for s in (de, jp, in_))
    assert g.n_markets == 3 and make_single(de).n_markets == 1
    with pytest.raises(ValueError):
        make_pairwise(de, de, seed=0)


def test_train_negatives(small_markets):
    _, _, splits = small_markets
    data = make_global(list(splits.values()))
    sampler = NegativeSampler(data)
    rng = np.random.default_rng(0)
    neg = sample_train_negatives(sampler, data.users[:1], data.markets[:1], rng, k=4)
    assert neg.shape == (1, 4)
    neg = sampler.sample(data.users, data.markets, 4, rng)
    pos = set(zip(data.users.tolist(), data.items.tolist()))
    for u, row in zip(data.users, neg):
        assert not any((u, i) in pos for i in row)
    for m, pool in data.pools.items():
        rows = data.markets == m
        assert np.isin(neg[rows], pool).all()


def test_train_negative_frequencies_are_uniform():
    rows = [ix(0, 0, 1), ix(0, 1, 2)] + [ix(1, 2, 1)]
    from marketrec.data import SplitDataset, build_trainset

    split = SplitDataset(0, rows, [], [], 0, np.arange(12))
    data = build_trainset([split], [rows])
    sampler = NegativeSampler(data)
    rng = np.random.default_rng(0)
    draws = sampler.sample(np.zeros(20_000, dtype=np.int64), np.zeros(20_000, dtype=np.int64), 1, rng).ravel()
    counts = np.bincount(draws, minlength=12)
    assert counts[0] == counts[1] == 0
    n, p = draws.size, 1 / 10
    assert np.all(np.abs(counts[2:] - n * p) < 3 * np.sqrt(n * p * (1 - p)) + 1)


def test_candidates_come_from_own_market(small_markets):
    _, reg, splits = small_markets
    for code, s in splits.items():
        pool = set(reg.pool(reg.market_id(code)).tolist())
        for rec in s.test:
            assert set(rec.candidates) <= pool


# -- synthetic ---------------------------------------------------------------


def test_synthetic_counts_and_determinism():
    spec = SyntheticSpec(markets=("de", "jp", "in"), users_per_market=50, items_per_market=40, interactions_per_user=20)
    rows, reg = generate_synthetic_markets(spec, seed=0)
    assert len(rows) == 3000
    assert reg.counts(rows) == {c: (50, 40, 1000) for c in ("de", "jp", "in")}
    again, _ = generate_synthetic_markets(spec, seed=0)
    assert again == rows
    assert generate_synthetic_markets(spec, seed=1)[0] != rows


def test_zero_divergence_shares_one_factor_model():
    from marketrec.data.synthetic import _rotation

    assert np.array_equal(_rotation(np.random.default_rng(0), 8, 0.0), np.eye(8))
    r = _rotation(np.random.default_rng(0), 8, 0.3)
    np.testing.assert_allclose(r @ r.T, np.eye(8), atol=1e-12)


@pytest.mark.parametrize(
    "bad", [dict(markets=()), dict(interactions_per_user=41), dict(overlap=1.5), dict(divergence=-1), dict(users_per_market=0)]
)
def test_infeasible_specs(bad):
    with pytest.raises(ValueError):
        check_spec(SyntheticSpec(**{"items_per_market": 40, **bad}))
