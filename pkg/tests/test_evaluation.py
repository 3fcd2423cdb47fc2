import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbnmt.evaluation import (
    CHAR5,
    VARIANTS,
    WORD4,
    AblationRow,
    BleuConfig,
    ablation_jsonl,
    ablation_table,
    bleu,
    bleu_ids,
    bleu_stats,
    pooled_shared_states,
    run_ablation,
    separation_report,
    summarize_ablation,
    variant_config,
)
from dbnmt.model import ModelConfig, param_shapes
from dbnmt.training import TrainConfig

from helpers import random_params, tiny_config, tiny_model_config, tiny_task

# Two-sentence word case; counts worked out by hand:
#   "the cat sat on the mat" vs "the cat is on the mat": 1-4gram matches 5/6, 3/5, 1/4, 0/3
#   "there is a big dog" vs "there is a big dog here": 5/5, 4/4, 3/3, 2/2
#   corpus precisions 10/11, 7/9, 4/7, 2/5 (product 16/99); c = 11, r = 12
WORD_HYP = ["the cat sat on the mat", "there is a big dog"]
WORD_REF = ["the cat is on the mat", "there is a big dog here"]
WORD_EXPECTED = 100 * math.exp(1 - 12 / 11) * (16 / 99) ** (1 / 4)

# Two-sentence character case (whitespace dropped):
#   "abcde" vs "abcdf": 1-5gram matches 4/5, 3/4, 2/3, 1/2, 0/1
#   "xy zzz w" vs "xyzzzw q": 6/6, 5/5, 4/4, 3/3, 2/2
#   corpus precisions 10/11, 8/9, 6/7, 4/5, 2/3 (product 256/693); c = 11, r = 12
CHAR_HYP = ["abcde", "xy zzz w"]
CHAR_REF = ["abcdf", "xyzzzw q"]
CHAR_EXPECTED = 100 * math.exp(1 - 12 / 11) * (256 / 693) ** (1 / 5)


def test_word_hand_case():
    stats = bleu_stats(WORD_HYP, WORD_REF, WORD4)
    assert stats.matches == [10, 7, 4, 2] and stats.totals == [11, 9, 7, 5]
    assert (stats.hyp_len, stats.ref_len) == (11, 12)
    assert round(bleu(WORD_HYP, WORD_REF, WORD4), 4) == round(WORD_EXPECTED, 4)


def test_char_hand_case():
    stats = bleu_stats(CHAR_HYP, CHAR_REF, CHAR5)
    assert stats.matches == [10, 8, 6, 4, 2] and stats.totals == [11, 9, 7, 5, 3]
    assert round(bleu(CHAR_HYP, CHAR_REF, CHAR5), 4) == round(CHAR_EXPECTED, 4)


def test_identity_and_disjoint():
    refs = ["a b c d e", "f g h i"]
    assert bleu(refs, refs) == 100.0
    assert bleu(refs, refs, CHAR5) == 100.0
    assert bleu(["x y z w v", "q r s t"], refs) == 0.0
    assert bleu(["x y z w v", "q r s t"], refs, CHAR5) == 0.0


def test_unigram_clipping():
    stats = bleu_stats(["the the the the"], ["the cat"], BleuConfig("word", 1))
    assert stats.matches == [1] and stats.totals == [4]


def test_brevity_penalty_only_for_short_output():
    assert bleu(["a b c d"], ["a b c d e f"]) == pytest.approx(100 * math.exp(1 - 6 / 4))
    long_ = bleu_stats(["a b c d e f g"], ["a b c d e f"])
    assert long_.brevity_penalty == 1.0


def test_token_id_sequences():
    assert bleu([[4, 5, 6, 7]], [[4, 5, 6, 7]]) == 100.0
    assert bleu_ids([[4, 5, 6, 7]], [[4, 5, 6, 7]]) == 100.0
    assert bleu_ids([], []) == 0.0


def test_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        BleuConfig("byte", 4)
    with pytest.raises(ValueError):
        BleuConfig("word", 0)


SENTS = st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=8).map(" ".join), min_size=1, max_size=6)
# corpora whose every sentence has n-grams of all orders up to 5 (words and characters)
LONG = st.lists(st.lists(st.sampled_from("abcdefg"), min_size=5, max_size=8).map(" ".join), min_size=1, max_size=6)


@settings(max_examples=50, deadline=None)
@given(SENTS, SENTS, st.randoms(use_true_random=False))
def test_permutation_invariant(hyps, refs, rnd):
    n = min(len(hyps), len(refs))
    hyps, refs = hyps[:n], refs[:n]
    order = list(range(n))
    rnd.shuffle(order)
    for cfg in (WORD4, CHAR5):
        assert bleu([hyps[i] for i in order], [refs[i] for i in order], cfg) == bleu(hyps, refs, cfg)


@settings(max_examples=30, deadline=None)
@given(LONG, SENTS)
def test_adding_exact_pair_to_perfect_corpus_keeps_100(refs, extra):
    for cfg in (WORD4, CHAR5):
        assert bleu(refs, refs, cfg) == 100.0
        assert bleu(refs + extra, refs + extra, cfg) == 100.0


def test_identity_without_long_ngrams_scores_zero():
    # no 4-gram exists anywhere, so that precision is 0/0 and the score is 0 as in multi-bleu
    assert bleu(["a b c", "d e"], ["a b c", "d e"]) == 0.0


@settings(max_examples=50, deadline=None)
@given(SENTS, SENTS)
def test_score_in_range(hyps, refs):
    n = min(len(hyps), len(refs))
    assert 0.0 <= bleu(hyps[:n], refs[:n]) <= 100.0 + 1e-9


# -- separation


def test_identical_samples_have_zero_distance():
    p = random_params(tiny_config(), seed=0, dtype=np.float32)
    sample = [[4, 5, 6], [7, 8], [4]]
    r = separation_report(p, sample, list(reversed(sample)))
    assert r.distance == 0.0
    assert r.disc_accuracy is not None


def test_random_model_separates_different_samples():
    p = random_params(tiny_config(use_discriminator=False), seed=1)
    r = separation_report(p, [[4, 5, 6], [4, 4]], [[7, 8], [8, 8, 8]])
    assert r.distance > 0
    assert r.disc_accuracy is None
    assert set(r.to_dict()) == {"distance", "disc_accuracy", "centroid_in", "centroid_out"}


@settings(max_examples=10, deadline=None)
@given(st.randoms(use_true_random=False))
def test_distance_ignores_sample_order(rnd):
    p = random_params(tiny_config(), seed=2)
    a = [[4, 5], [6, 7, 8], [5], [8, 8, 4, 4]]
    b = [[7], [6, 6, 6], [5, 4, 7]]
    base = separation_report(p, a, b).distance
    a2, b2 = list(a), list(b)
    rnd.shuffle(a2)
    rnd.shuffle(b2)
    assert separation_report(p, a2, b2).distance == base


def test_pooling_is_time_mean_of_states():
    p = random_params(tiny_config(), seed=3)
    from dbnmt.model import forward_translate

    pooled = pooled_shared_states(p, [[4, 5, 6]])
    H = forward_translate(p, [4, 5, 6], [3], "in").H_shared
    np.testing.assert_allclose(pooled[0], H.mean(axis=0), atol=1e-12)


def test_empty_sample_is_an_error():
    p = random_params(tiny_config())
    with pytest.raises(ValueError):
        separation_report(p, [], [[4]])


# -- ablation


def test_neither_variant_is_the_plain_baseline():
    base = ModelConfig(src_vocab=20, tgt_vocab=20)
    neither = param_shapes(variant_config(base, False, False))
    plain = param_shapes(ModelConfig(src_vocab=20, tgt_vocab=20, use_private=False, use_discriminator=False))
    assert neither == plain
    assert not any(n.startswith(("private", "gate", "disc")) for n in neither)
    assert [(d, p) for _, d, p in VARIANTS] == [(True, True), (True, False), (False, True), (False, False)]


def test_ablation_rows_table_and_jsonl():
    _, sv, tv, corpora, test_in = tiny_task()
    tcfg = TrainConfig(batch_size=8, phase1_epochs=1, max_epochs=1, disc_eval_every=10, dtype="float64")
    seen = []
    rows = run_ablation(tiny_model_config(sv, tv), tcfg, corpora, test_in, seeds=(0,), beam_size=1, on_row=seen.append)
    assert [r.variant for r in rows] == ["full", "no_private", "no_discriminator", "neither", "in_only"]
    assert seen == rows
    for r in rows:
        assert 0 <= r.dev <= 100 and 0 <= r.test <= 100
        assert r.average == (r.dev + r.test) / 2
        assert (r.phase2_peak is not None) == r.discriminator
        assert (r.distance is None) == (r.variant == "in_only")
    table = ablation_table(rows).splitlines()
    assert table[0].split() == ["variant", "disc", "priv", "dev", "test", "avg"]
    assert [line.split()[:3] for line in table[1:5]] == [
        ["full", "yes", "yes"], ["no_private", "yes", "no"], ["no_discriminator", "no", "yes"], ["neither", "no", "no"],
    ]
    lines = [json.loads(x) for x in ablation_jsonl(rows).splitlines()]
    assert [x["variant"] for x in lines] == [r.variant for r in rows]


def test_summary_averages_over_seeds():
    rows = [AblationRow("full", True, True, s, dev=10.0 * s, test=20.0) for s in (1, 2, 3)]
    s = summarize_ablation(rows)["full"]
    assert (s["dev"], s["test"], s["average"], s["seeds"]) == (20.0, 20.0, 20.0, 3)
