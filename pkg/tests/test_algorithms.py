import math
import random as pyrandom

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poissonmat import algorithms as alg
from poissonmat.algorithms import (
    RecommenderKind,
    classic_mf_train,
    dotmat_coeff,
    dotmat_loss,
    dotmat_train,
    hybrid_train,
    poissonmat_grad_coeff,
    poissonmat_loss,
    poissonmat_predict,
    poissonmat_train,
    predict,
    random_placement_train,
    sgd_step,
    structure_train,
    train,
    zeromat_train,
    zipf_placement_train,
)
from poissonmat.core import FactorModel, TrainConfig, init_embeddings, l2_normalize
from poissonmat.eval import evaluate_on_split
from poissonmat.ingest import DatasetError, parse_comoda, parse_movielens_1m, synth_zipf_dataset, train_test_split

from conftest import fixture_path


# -- scalar rules ----------------------------------------------------------------

@pytest.mark.parametrize("x, expected", [
    (1.0, -1.0),
    (math.e, 1.0),
    (0.5, -1.5397207708),  # mpmath, 30 digits
])
def test_poissonmat_loss(x, expected):
    assert poissonmat_loss(x) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("x, expected", [
    (1.0, 1.0),
    (math.e, (math.e + 1) / math.e),
    (0.5, 1.3068528194),  # 3 - ln 2 - 1
])
def test_poissonmat_grad_coeff(x, expected):
    assert poissonmat_grad_coeff(x) == pytest.approx(expected, abs=1e-10)


def test_grad_coeff_matches_finite_difference():
    rng = np.random.default_rng(7)
    h = 1e-6
    for x in rng.uniform(0.1, 3.0, size=20):
        fd = (poissonmat_loss(x + h) - poissonmat_loss(x - h)) / (2 * h)
        assert abs(poissonmat_grad_coeff(x) - fd) <= 1e-5 * abs(fd)


@pytest.mark.parametrize("x, r, expected", [
    (1.0, 5.0, 0.0),
    (0.5, 0.0, 0.7071067812),
    (1.0, 0.0, 1.0),
])
def test_dotmat_loss(x, r, expected):
    assert dotmat_loss(x, r, 5.0) == pytest.approx(expected, abs=1e-10)


def test_dotmat_coeff_values():
    assert dotmat_coeff(1.0, 5.0, 5.0) == -1.0
    # (0.5**0.5 - 0.5) * (1 + ln 0.5), mpmath
    assert dotmat_coeff(0.5, 0.0, 5.0) == pytest.approx(0.0635512997, abs=1e-9)


# -- single steps ------------------------------------------------------------------

def test_poissonmat_step_parallel_unit_vectors():
    u, v = sgd_step("poissonmat", [1.0, 0.0], [1.0, 0.0], 1e-6)
    np.testing.assert_array_equal(u, [1.0, 0.0])
    np.testing.assert_array_equal(v, [1.0, 0.0])


def test_poissonmat_step_value():
    # g(0.6) = 1.6/0.6 + ln 0.6 - 1 = 1.1558410429; u <- normalize(u + 0.1 g v)
    u, _ = sgd_step("poissonmat", [1.0, 0.0], [0.6, 0.8], 0.1)
    np.testing.assert_allclose(u, [0.9962822608, 0.0861490385], atol=1e-6)


def test_zeromat_step_value():
    # v/0.6 - 2u = [-1, 4/3]; normalize([0.9, 0.1333...])
    u, _ = sgd_step("zeromat", [1.0, 0.0], [0.6, 0.8], 0.1)
    np.testing.assert_allclose(u, [0.9892034624, 0.1465486611], atol=1e-6)


def test_zeromat_colinear_direction_preserved():
    u, v = sgd_step("zeromat", [1.0, 0.0], [1.0, 0.0], 0.3)
    np.testing.assert_allclose(u, [1.0, 0.0], atol=1e-15)


def test_dotmat_step_at_exact_fit():
    s = 0.6
    u0 = np.array([s, 0.8])
    u, _ = sgd_step("dotmat", u0, u0, 0.05, target=1.0)
    # c = -1: u <- normalize(u + 0.05 u) = u
    np.testing.assert_allclose(u, l2_normalize(u0 + 0.05 * u0), atol=1e-15)


def test_dotmat_step_value():
    v = np.array([0.5, math.sqrt(0.75)])
    u, _ = sgd_step("dotmat", [1.0, 0.0], v, 0.1, target=0.0)
    c = 0.0635512997322466
    np.testing.assert_allclose(u, l2_normalize(np.array([1.0, 0.0]) - 0.1 * c * v), atol=1e-9)


def test_classic_mf_exact_fit_no_update():
    u0, v0 = np.array([0.6, 0.8]), np.array([0.6, 0.8])
    u, v = sgd_step("classic_mf", u0, v0, 0.5, target=1.0)
    np.testing.assert_array_equal(u, u0)
    np.testing.assert_array_equal(v, v0)


def test_classic_mf_zero_user():
    v0 = np.array([0.6, 0.8])
    u, _ = sgd_step("classic_mf", [0.0, 0.0], v0, 0.01, target=1.0)
    np.testing.assert_allclose(u, 2 * 0.01 * v0, atol=1e-15)


def test_classic_mf_step_value():
    u0 = np.array([1.5, 0.0])  # x = 0.9
    u, _ = sgd_step("classic_mf", u0, [0.6, 0.8], 0.01, target=0.5)
    np.testing.assert_allclose(u - u0, [-0.0048, -0.0064], atol=1e-12)


@pytest.mark.parametrize("rule", ["poissonmat", "zeromat", "dotmat", "classic_mf"])
def test_identical_vectors_stay_identical(rule):
    w = l2_normalize([0.3, 0.5, 0.2])
    u, v = sgd_step(rule, w, w, 0.2, target=0.4)
    np.testing.assert_array_equal(u, v)


# -- trainers ----------------------------------------------------------------------

RATED = {0: [0, 2], 1: [1], 2: [0, 1, 2]}


@pytest.mark.parametrize("trainer", [poissonmat_train, zeromat_train])
def test_zero_rate_returns_init(trainer):
    cfg = TrainConfig(learning_rate=0.0, latent_dim=4, seed=17)
    model = trainer(3, 3, RATED, cfg)
    assert model.identical_to(init_embeddings(3, 3, 4, 17))


@pytest.mark.parametrize("trainer", [poissonmat_train, zeromat_train])
def test_no_interactions(trainer):
    with pytest.raises(DatasetError, match="no interactions"):
        trainer(3, 3, {}, TrainConfig())


def test_rating_trainers_zero_rate(small_synth):
    cfg = TrainConfig(learning_rate=0.0, latent_dim=5, seed=2)
    init = init_embeddings(small_synth.n_users, small_synth.n_items, 5, 2)
    assert dotmat_train(small_synth, cfg).identical_to(init)
    assert classic_mf_train(small_synth, cfg).identical_to(init)


def test_rating_trainers_reject_empty():
    empty = parse_comoda(b"userID,itemID,rating\n1,2,-1\n")
    with pytest.raises(DatasetError):
        dotmat_train(empty, TrainConfig())
    with pytest.raises(DatasetError):
        train("poissonmat", empty, TrainConfig())


def test_schedule_sizes():
    rng = np.random.default_rng(0)
    cfg = TrainConfig(items_per_user_sample=2, user_sample_count=2)
    users, pos = alg.sample_schedule({0: 5, 1: 1, 2: 0, 3: 3}, cfg, rng)
    assert len(set(users.tolist())) == 2 and 2 not in users
    for u in set(users.tolist()):
        p = pos[users == u]
        assert len(p) == len(set(p.tolist())) == min(2, {0: 5, 1: 1, 3: 3}[u])


def test_training_is_deterministic(small_synth):
    cfg = TrainConfig(learning_rate=0.01, latent_dim=6, seed=9)
    for kind in ("poissonmat", "zeromat", "dotmat", "classic_mf", "poissonmat_hybrid"):
        a = train(kind, small_synth, cfg).model
        b = train(kind, small_synth, cfg).model
        assert a.identical_to(b), kind


def test_training_backends_agree(small_synth, monkeypatch):
    from poissonmat import _backend, _pykernels
    if _backend.compiled_kernels() is None:
        pytest.skip("compiled kernels not built")
    cfg = TrainConfig(learning_rate=0.02, latent_dim=5, seed=1)
    for kind in ("poissonmat", "zeromat", "dotmat", "classic_mf", "dotmat_hybrid"):
        monkeypatch.setattr(alg, "kernels", _backend.compiled_kernels())
        fast = train(kind, small_synth, cfg).model
        monkeypatch.setattr(alg, "kernels", _pykernels)
        slow = train(kind, small_synth, cfg).model
        assert fast.identical_to(slow), kind


def _shuffle_values(ds, seed):
    values = [t.rating for t in ds.triples]
    pyrandom.Random(seed).shuffle(values)
    return ds.with_triples([t._replace(rating=r) for t, r in zip(ds.triples, values)])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_input_blindness(seed):
    ds = synth_zipf_dataset(30, 20, 5, seed=1)
    shuffled = _shuffle_values(ds, seed)
    cfg = TrainConfig(learning_rate=0.05, latent_dim=4, seed=seed)
    for rule in ("poissonmat", "zeromat"):
        assert structure_train(rule, ds, cfg).identical_to(structure_train(rule, shuffled, cfg))


@pytest.mark.parametrize("rule", ["poissonmat", "zeromat", "dotmat"])
def test_norms_preserved_every_step(small_synth, rule):
    cfg = TrainConfig(learning_rate=0.3, latent_dim=6, seed=4, max_iteration_number=4)
    if rule == "dotmat":
        model, worst = dotmat_train(small_synth, cfg, track_norms=True)
    else:
        model, worst = structure_train(rule, small_synth, cfg, track_norms=True)
    assert worst <= 1e-9
    assert model.max_norm_deviation() <= 1e-9
    assert (model.user_factors >= 0).all() or rule != "poissonmat"


def test_poissonmat_keeps_factors_nonnegative(small_synth):
    # g(x) > 0 for every x > 0, so steps only add nonnegative multiples
    model = structure_train("poissonmat", small_synth, TrainConfig(learning_rate=0.5, seed=3))
    assert (model.user_factors >= 0).all() and (model.item_factors >= 0).all()


@pytest.mark.parametrize("lr", [1e-6, 1e-4, 1e-2])
def test_finite_on_parsed_datasets(lr):
    with open(fixture_path("ml1m_20.dat"), "rb") as fh:
        ml = parse_movielens_1m(fh)
    with open(fixture_path("comoda_20.csv"), "rb") as fh:
        co = parse_comoda(fh)
    cfg = TrainConfig(learning_rate=lr, latent_dim=8, seed=0, max_iteration_number=50)
    for ds in (ml, co):
        for kind in alg.ALL_KINDS:
            rec = train(kind, ds, cfg)
            if rec.model is not None:
                assert rec.model.is_finite(), (kind, lr)


# -- prediction --------------------------------------------------------------------

def _model(u, v):
    return FactorModel(np.array([u], dtype=float), np.array([v], dtype=float))


@pytest.mark.parametrize("u, v, expected", [
    ([0.6, 0.8], [0.6, 0.8], 5.0),
    ([1.0, 0.0], [0.0, 1.0], 0.0),
    ([0.6, 0.8], [0.8, 0.6], 4.8),
    ([1.2, 0.0], [1.0, 0.0], 5.0),
    ([-1.0, 0.0], [1.0, 0.0], 0.0),
])
def test_poissonmat_predict(u, v, expected):
    assert poissonmat_predict(_model(u, v), 0, 0, 5.0) == pytest.approx(expected, abs=1e-12)


def test_predict_index_errors(small_synth):
    rec = train("poissonmat", small_synth, TrainConfig())
    with pytest.raises(IndexError):
        predict(rec, small_synth.n_users, 0)
    with pytest.raises(IndexError):
        poissonmat_predict(rec.model, 0, -1, 5.0)


def test_predict_many_matches_scalar(small_synth):
    cfg = TrainConfig(learning_rate=0.05, seed=1)
    users = np.arange(small_synth.n_users).repeat(3) % small_synth.n_users
    items = np.arange(len(users)) % small_synth.n_items
    for kind in alg.ALL_KINDS:
        rec = train(kind, small_synth, cfg)
        batch = rec.predict_many(users, items)
        scalar = [predict(rec, int(i), int(j)) for i, j in zip(users, items)]
        np.testing.assert_allclose(batch, scalar, rtol=0, atol=1e-12)


def test_cold_user_is_scored(small_split):
    train_set, test = small_split
    cold = test.with_triples(test.triples + [test.triples[0]._replace(user_id="never-seen")])
    for kind in alg.ALL_KINDS:
        rec = train(kind, train_set, TrainConfig())
        result = evaluate_on_split(rec, cold)
        assert np.isfinite(result.mae)
        assert 0.0 <= result.predicted[-1] <= train_set.r_max


# -- placement baselines -------------------------------------------------------------

def test_random_placement_deterministic():
    rec = random_placement_train(10, seed=3)
    rec.n_users = 10
    assert predict(rec, 2, 7) == predict(rec, 2, 7)
    other = random_placement_train(10, seed=4)
    other.n_users = 10
    assert predict(rec, 2, 7) != predict(other, 2, 7)


def test_random_placement_mean():
    rec = random_placement_train(1000, seed=0, n_users=100)
    users, items = np.divmod(np.arange(100_000), 1000)
    scores = rec.predict_many(users, items)
    assert abs(scores.mean() - 2.5) <= 0.02 * 5
    assert scores.min() >= 0 and scores.max() < 5


def test_random_placement_single_item():
    rec = random_placement_train(1, seed=0, n_users=5000)
    scores = rec.predict_many(np.arange(5000), np.zeros(5000, dtype=np.int64))
    assert abs(scores.mean() - 2.5) < 0.2 and len(np.unique(scores)) == 5000


def test_zipf_placement_scores():
    rec = zipf_placement_train({0: 2, 1: 1, 2: 3}, s=1.0, n_users=4)
    assert predict(rec, 0, 1) == 5.0
    assert predict(rec, 3, 0) == 2.5
    assert predict(rec, 2, 2) == pytest.approx(5 / 3)
    assert {predict(rec, i, 1) for i in range(4)} == {5.0}


def test_zipf_placement_rejects_non_permutation():
    with pytest.raises(ValueError):
        zipf_placement_train([1, 1, 3])
    with pytest.raises(ValueError):
        zipf_placement_train([1, 2], s=0.0)


def test_zipf_sampling_frequencies():
    rec = zipf_placement_train([1, 2, 3])
    draws = rec.sample_items(100_000, seed=11)
    freq = np.bincount(draws, minlength=3) / len(draws)
    np.testing.assert_allclose(freq, [6 / 11, 3 / 11, 2 / 11], atol=0.01)


def test_popularity_ranks_ties_first_appearance():
    ds = synth_zipf_dataset(5, 6, 2, seed=0)
    ranks = alg.popularity_ranks(ds)
    counts = ds.item_counts()
    assert sorted(ranks.tolist()) == list(range(1, ds.n_items + 1))
    for a in range(ds.n_items):
        for b in range(ds.n_items):
            if counts[a] > counts[b] or (counts[a] == counts[b] and a < b):
                assert ranks[a] < ranks[b]


# -- hybrids ---------------------------------------------------------------------------

@pytest.mark.parametrize("pre", ["zeromat", "dotmat", "poissonmat"])
def test_hybrid_zero_finetune_equals_pretrainer(small_synth, pre):
    cfg = TrainConfig(learning_rate=0.05, seed=5, finetune_learning_rate=0.0)
    hybrid = hybrid_train(pre, small_synth, cfg)
    if pre == "dotmat":
        expected = dotmat_train(small_synth, cfg)
    else:
        expected = structure_train(pre, small_synth, cfg)
    assert hybrid.identical_to(expected)


@pytest.mark.parametrize("pre", ["zeromat", "dotmat", "poissonmat"])
def test_hybrid_zero_pretrain_equals_classic_mf(small_synth, pre):
    cfg = TrainConfig(learning_rate=0.0, seed=5, finetune_learning_rate=0.03)
    hybrid = hybrid_train(pre, small_synth, cfg)
    mf = classic_mf_train(small_synth, TrainConfig(learning_rate=0.03, seed=5))
    assert hybrid.identical_to(mf)


def test_hybrid_grid_never_worse_than_pretrainer():
    ds = synth_zipf_dataset(200, 100, 20, seed=0)
    train_set, test = train_test_split(ds, 0.2, seed=0)
    cfg = TrainConfig(learning_rate=1e-5, seed=0)
    for pre in ("zeromat", "dotmat", "poissonmat"):
        alone = evaluate_on_split(train(pre, train_set, cfg), test).mae
        best = min(
            evaluate_on_split(train(f"{pre}_hybrid", train_set,
                                    TrainConfig(learning_rate=1e-5, seed=0, finetune_learning_rate=ft)),
                              test).mae
            for ft in (0.0, 1e-6, 1e-5, 1e-4))
        assert best <= alone


def test_recommender_kind_parsing():
    assert RecommenderKind.parse("poissonmat_hybrid") == RecommenderKind("hybrid", "poissonmat")
    assert RecommenderKind.parse("hybrid(dotmat)") == RecommenderKind("hybrid", "dotmat")
    assert str(RecommenderKind("hybrid", "zeromat")) == "zeromat_hybrid"
    with pytest.raises(ValueError):
        RecommenderKind("hybrid", "hybrid")
    with pytest.raises(ValueError):
        RecommenderKind.parse("classic_mf_hybrid")
    with pytest.raises(ValueError):
        RecommenderKind.parse("rankmat")


def test_prediction_range_all_kinds(small_synth):
    users, items = np.meshgrid(np.arange(small_synth.n_users), np.arange(small_synth.n_items))
    for lr in (1e-6, 0.05, 0.5):
        for kind in alg.ALL_KINDS:
            rec = train(kind, small_synth, TrainConfig(learning_rate=lr, seed=2))
            scores = rec.predict_many(users.ravel(), items.ravel())
            assert scores.min() >= 0.0 and scores.max() <= small_synth.r_max
