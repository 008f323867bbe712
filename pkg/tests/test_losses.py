"""Training objectives: frozen values, gradient checks, trainer determinism."""

import json
import math

import numpy as np
import pytest

from genteval.corpus import SentencePair, TokenSequence, Vocab
from genteval.errors import AlignmentError, ConfigError, DataError, EmptyDataset, NoSupervision
from genteval.lm import FeedForwardLM
from genteval.losses import (
    AdamState,
    SeqUlConfig,
    TrainBatch,
    TrainConfig,
    TrainData,
    Trainer,
    align_labels,
    ce_loss,
    classification_loss,
    grad_check,
    hinge_rank,
    label_vocab,
    labels_to_ids,
    load_label_file,
    margin_rank_loss,
    multitask_step,
    previous_token_candidates,
    regression_loss,
    smooth_l1_loss,
    ul_seq_candidates,
    ul_token_loss,
)
from genteval.rng import SplitMix64

VOCAB = Vocab(["a", "b", "c", "d", "e"])


def tiny_model(**kw):
    kw.setdefault("context", 2)
    kw.setdefault("embed_dim", 3)
    kw.setdefault("hidden_dim", 4)
    kw.setdefault("seed", 7)
    return FeedForwardLM.init(VOCAB, **kw)


def seq(*ids):
    return TokenSequence(tuple(ids), VOCAB)


# ---------------------------------------------------------------------------
# Candidate builders
# ---------------------------------------------------------------------------


def test_previous_token_candidates_filter_gold():
    cands = previous_token_candidates([3, 5, 3, 7])
    assert cands == [
        frozenset(),
        frozenset({3}),
        frozenset({5}),  # gold 3 removed
        frozenset({3, 5}),
    ]


def test_ul_seq_candidates_flags_repeated_ngrams():
    cands = ul_seq_candidates([1, 2, 1, 2, 1], n=2)
    assert cands == [
        frozenset(),
        frozenset(),
        frozenset(),
        frozenset({2}),  # (1,2) repeats
        frozenset({1}),  # (2,1) repeats
    ]


def test_ul_seq_candidates_unigram_order():
    cands = ul_seq_candidates([4, 4, 2, 4], n=1)
    assert cands == [frozenset(), frozenset({4}), frozenset(), frozenset({4})]


def test_ul_seq_candidates_rejects_bad_order():
    with pytest.raises(ConfigError):
        ul_seq_candidates([1, 2], n=0)


# ---------------------------------------------------------------------------
# Loss values against an independent probability route
# ---------------------------------------------------------------------------


def test_ce_loss_matches_next_dist_route():
    model = tiny_model()
    ids = [0, 3, 1, 1, 4]
    loss, _ = ce_loss(model, ids)
    per_tok = []
    for t, tok in enumerate(ids):
        per_tok.append(-math.log(model.next_dist(ids[:t])[tok]))
    assert loss == pytest.approx(sum(per_tok) / len(ids), abs=1e-12)


def test_ce_loss_respects_context():
    model = tiny_model()
    ids = [2, 0]
    ctx = [1, 4]
    loss, _ = ce_loss(model, ids, context=ctx)
    want = -(
        math.log(model.next_dist(ctx)[2]) + math.log(model.next_dist(ctx + [2])[0])
    ) / 2.0
    assert loss == pytest.approx(want, abs=1e-12)


def test_ul_token_loss_matches_next_dist_route():
    model = tiny_model()
    ids = [0, 1, 0, 2]
    cands = previous_token_candidates(ids)
    loss, _ = ul_token_loss(model, ids, cands)
    total = 0.0
    for t, cs in enumerate(cands):
        dist = model.next_dist(ids[:t])
        for c in cs:
            total += -math.log1p(-dist[c])
    assert loss == pytest.approx(total / len(ids), abs=1e-12)


def test_ul_token_loss_length_mismatch():
    model = tiny_model()
    with pytest.raises(ConfigError):
        ul_token_loss(model, [0, 1], [frozenset()])


def test_hinge_rank_values():
    assert hinge_rank(5.0, 3.0, 1.0) == 3.0
    assert hinge_rank(3.0, 5.0, 1.0) == 0.0
    assert hinge_rank(3.0, 3.0, 0.0) == 0.0


def test_smooth_l1_values():
    assert smooth_l1_loss(0.5, 0.0) == (0.125, 0.5)
    assert smooth_l1_loss(3.0, 1.0) == (1.5, 1.0)
    assert smooth_l1_loss(-1.5, 0.5) == (1.5, -1.0)
    # branches agree at the joint
    assert smooth_l1_loss(1.0, 0.0) == (0.5, 1.0)


def test_classification_loss_requires_supervision():
    model = tiny_model(n_labels=3)
    with pytest.raises(NoSupervision):
        classification_loss(model, [0, 1], [None, None])


def test_classification_loss_skips_masked_positions():
    model = tiny_model(n_labels=3)
    full, _ = classification_loss(model, [0, 1], [2, None])
    # masked position contributes nothing: same loss as supervising only pos 0
    solo, _ = classification_loss(model, [0], [2])
    assert full == pytest.approx(solo, abs=1e-12)


def test_regression_loss_length_mismatch():
    model = tiny_model(regression=True)
    with pytest.raises(ConfigError):
        regression_loss(model, [0, 1, 2], [0.5])


# ---------------------------------------------------------------------------
# Analytic vs finite-difference gradients
# ---------------------------------------------------------------------------

GRAD_TOL = 1e-4


def test_grad_ce():
    model = tiny_model()
    err = grad_check(model, lambda m: ce_loss(m, [0, 3, 1, 2]))
    assert err < GRAD_TOL


def test_grad_ul_token():
    model = tiny_model()
    ids = [0, 1, 0, 1]
    cands = previous_token_candidates(ids)
    err = grad_check(model, lambda m: ul_token_loss(m, ids, cands))
    assert err < GRAD_TOL


def test_grad_margin_rank_active():
    model = tiny_model()
    pos = SentencePair(seq(0, 1), seq(2, 3), "positive", "nsp")
    neg = SentencePair(seq(0, 1), seq(4, 4), "negative", "nsp")
    # margin large enough that the hinge is active regardless of ppl gap
    err = grad_check(model, lambda m: margin_rank_loss(m, pos, neg, margin=5.0))
    assert err < GRAD_TOL


def test_margin_rank_inactive_hinge_gives_zero_grads():
    model = tiny_model()
    pos = SentencePair(seq(0, 1), seq(2, 3), "positive", "nsp")
    neg = SentencePair(seq(0, 1), seq(4, 4), "negative", "nsp")
    loss, grads = margin_rank_loss(model, pos, neg, margin=-100.0)
    assert loss == 0.0
    assert all(not g.any() for g in grads.values())


def test_grad_regression_both_branches():
    model = tiny_model(regression=True)
    # one target inside the quadratic region, one deep in the linear one
    err = grad_check(model, lambda m: regression_loss(m, [0, 1], [0.25, 5.0]))
    assert err < GRAD_TOL


def test_grad_classification_with_mask():
    model = tiny_model(n_labels=3)
    err = grad_check(model, lambda m: classification_loss(m, [0, 1, 2], [1, None, 0]))
    assert err < GRAD_TOL


def test_grad_check_flags_wrong_gradients():
    model = tiny_model()

    def broken(m):
        loss, grads = ce_loss(m, [0, 1, 2])
        return loss, {n: np.zeros_like(g) for n, g in grads.items()}

    assert grad_check(model, broken) > 0.5


# ---------------------------------------------------------------------------
# Label alignment
# ---------------------------------------------------------------------------


def test_align_labels_direct_match():
    words = [("The", "DET"), ("cat", "NOUN")]
    assert align_labels(words, ["The", "cat"]) == ["DET", "NOUN"]


def test_align_labels_first_subtoken_wins():
    words = [("The", "DET"), ("cats", "NOUN")]
    assert align_labels(words, ["The", "ca", "#ts"]) == ["DET", "NOUN", "X"]


def test_align_labels_boundary_crosser_masked():
    words = [("ab", "A"), ("cd", "B")]
    assert align_labels(words, ["abc", "d"]) == ["X", "X"]


def test_align_labels_whitespace_insensitive():
    words = [("a b", "L"), ("cd", "M")]
    assert align_labels(words, [" ab", "c d "]) == ["L", "M"]


def test_align_labels_mismatch_raises():
    with pytest.raises(AlignmentError):
        align_labels([("abcd", "A")], ["xy"])


def test_align_labels_short_coverage_raises():
    with pytest.raises(AlignmentError):
        align_labels([("abcd", "A")], ["ab"])


def test_load_label_file_shapes(tmp_path):
    path = tmp_path / "labels.tsv"
    path.write_text("The\tDET\ncat\tNOUN\t0\n\nsat\tVERB\n", encoding="utf-8")
    sents = load_label_file(path)
    assert sents == [
        [("The", "DET", None), ("cat", "NOUN", 0)],
        [("sat", "VERB", None)],
    ]


def test_load_label_file_bad_row(tmp_path):
    path = tmp_path / "labels.tsv"
    path.write_text("a\tb\tc\td\n", encoding="utf-8")
    with pytest.raises(DataError):
        load_label_file(path)


def test_load_label_file_empty(tmp_path):
    path = tmp_path / "labels.tsv"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(EmptyDataset):
        load_label_file(path)


def test_label_vocab_excludes_mask():
    sents = [[("a", "N", None), ("b", "X", None), ("c", "D", None)]]
    table = label_vocab(sents)
    assert table == {"D": 0, "N": 1}
    assert labels_to_ids(["N", "X", "D"], table) == [1, None, 0]


# ---------------------------------------------------------------------------
# Optimizer and configs
# ---------------------------------------------------------------------------


def test_adam_constant_gradient_steps_by_lr():
    params = {"p": np.array([1.0])}
    opt = AdamState(params, learning_rate=0.1)
    # bias correction makes mhat=g, vhat=g^2, so each step moves ~lr
    opt.update(params, {"p": np.array([2.0])})
    assert params["p"][0] == pytest.approx(0.9, abs=1e-8)
    opt.update(params, {"p": np.array([2.0])})
    assert params["p"][0] == pytest.approx(0.8, abs=1e-7)


def test_train_config_from_dict_and_override():
    cfg = TrainConfig.from_dict(
        {
            "epochs": 2,
            "objectives": [["mle", 1.0], ["ul", 0.5]],
            "seq_ul": {"mix_prob": 0.25, "ngram": 2},
        }
    )
    assert cfg.objectives == (("mle", 1.0), ("ul", 0.5))
    assert cfg.seq_ul.mix_prob == 0.25
    assert cfg.seq_ul.prefix_len == 50  # default survives partial dict
    out = cfg.override(epochs=None, batch_size=4)
    assert out.epochs == 2 and out.batch_size == 4


def test_train_config_from_json(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"learning_rate": 0.01}), encoding="utf-8")
    assert TrainConfig.from_json(path).learning_rate == 0.01


@pytest.mark.parametrize(
    "bad",
    [
        {"epochs": 0},
        {"objectives": ()},
        {"objectives": (("bogus", 1.0),)},
        {"objectives": (("mle", -1.0),)},
        {"objectives": (("mle", 0.0), ("ul", 0.0))},
        {"learning_rate": 0.0},
    ],
)
def test_train_config_rejects(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_seq_ul_config_rejects():
    with pytest.raises(ConfigError):
        SeqUlConfig(mix_prob=1.5)
    with pytest.raises(ConfigError):
        SeqUlConfig(ngram=0)


# ---------------------------------------------------------------------------
# Multitask step and trainer
# ---------------------------------------------------------------------------


def test_multitask_step_scalars_and_total():
    model = tiny_model()
    cfg = TrainConfig(objectives=(("mle", 2.0),))
    batch = TrainBatch(sequences=(seq(0, 1, 2), seq(3, 4)))
    out = multitask_step(model, batch, cfg, AdamState(model.params, 1e-3), SplitMix64(0))
    assert set(out) == {"mle", "total"}
    assert out["total"] == pytest.approx(2.0 * out["mle"], abs=1e-12)


def test_multitask_step_ul_branch_follows_mix_prob():
    for mix, want in ((0.0, 0.0), (1.0, 1.0)):
        model = tiny_model()
        cfg = TrainConfig(
            objectives=(("ul", 1.0),),
            seq_ul=SeqUlConfig(mix_prob=mix, prefix_len=2, gen_len=3, ngram=2),
        )
        batch = TrainBatch(sequences=(seq(0, 1, 0, 1),))
        out = multitask_step(
            model, batch, cfg, AdamState(model.params, 1e-3), SplitMix64(1)
        )
        assert out["ul_branch"] == want


def test_multitask_step_missing_data_raises():
    model = tiny_model()
    cfg = TrainConfig(objectives=(("mle", 1.0), ("nsp", 0.5)))
    batch = TrainBatch(sequences=(seq(0, 1),))
    with pytest.raises(ConfigError):
        multitask_step(model, batch, cfg, AdamState(model.params, 1e-3), SplitMix64(0))


def test_trainer_empty_pool_raises():
    model = tiny_model()
    cfg = TrainConfig(objectives=(("nsp", 1.0),))
    with pytest.raises(ConfigError):
        Trainer(model, cfg).fit(TrainData())


def test_trainer_is_deterministic():
    data = TrainData(
        sequences=(seq(0, 1, 2, 3, 0, 1), seq(4, 4, 2, 2, 1, 0), seq(2, 3, 2, 3, 2, 3)),
    )
    cfg = TrainConfig(
        epochs=2,
        batch_size=2,
        objectives=(("mle", 1.0), ("ul", 0.5)),
        seq_ul=SeqUlConfig(mix_prob=0.5, prefix_len=3, gen_len=4, ngram=2),
    )

    def run():
        model = tiny_model(seed=11)
        trainer = Trainer(model, cfg, seed=5)
        history = trainer.fit(data)
        return history, {n: p.copy() for n, p in model.params.items()}

    hist_a, params_a = run()
    hist_b, params_b = run()
    assert hist_a == hist_b
    assert all(np.array_equal(params_a[n], params_b[n]) for n in params_a)


def test_trainer_history_length_is_epochs_times_steps():
    data = TrainData(sequences=tuple(seq(i % 5, (i + 1) % 5) for i in range(5)))
    cfg = TrainConfig(epochs=3, batch_size=2)
    history = Trainer(tiny_model(), cfg).fit(data)
    assert len(history) == 3 * math.ceil(5 / 2)
