import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minispeechlm.evaluation import (
    EvaluationError,
    edit_distance,
    edit_distance_wer,
    frame_mse,
    frame_mse_report,
    perplexity,
)
from minispeechlm.model import ModelConfig, init_params, weighted_cross_entropy, forward, collate
from minispeechlm.template import assemble_sequence

from helpers import toy_lm_parts, toy_manifest


def test_identity_wer_zero():
    r = edit_distance_wer({"a": "x y z"}, {"a": "x y z"})
    assert r.metrics["wer"] == 0.0


def test_worked_example():
    c = edit_distance("a x c d".split(), "a b c".split())
    assert (c.substitutions, c.deletions, c.insertions) == (1, 0, 1)
    r = edit_distance_wer({"u": "a x c d"}, {"u": "a b c"})
    assert r.metrics["wer"] == pytest.approx(2 / 3)
    assert r.records[0].value == pytest.approx(2 / 3)


def test_corpus_aggregation_and_empty_reference():
    r = edit_distance_wer({"a": "x", "b": "p q r", "c": "z"}, {"a": "x y", "b": "p q r s", "c": ""})
    # errors 1 + 1 over 2 + 4 reference words; c is excluded
    assert r.metrics["wer"] == pytest.approx(2 / 6)
    empty = [rec for rec in r.records if rec.example_id == "c"][0]
    assert empty.value is None
    total = sum(rec.detail["S"] + rec.detail["D"] + rec.detail["I"] for rec in r.records if rec.value is not None)
    assert r.metrics["wer"] == total / sum(rec.detail["N"] for rec in r.records if rec.value is not None)


def test_id_mismatch_and_char_unit():
    with pytest.raises(EvaluationError, match="mismatch"):
        edit_distance_wer({"a": "x"}, {"b": "x"})
    r = edit_distance_wer({"a": "abd"}, {"a": "abc"}, unit="char")
    assert r.metrics["cer"] == pytest.approx(1 / 3)


def test_word_split_is_whitespace_runs():
    r = edit_distance_wer({"a": "  x \t y  "}, {"a": "x y"})
    assert r.metrics["wer"] == 0.0


words = st.lists(st.sampled_from("abc"), max_size=6)


@given(words, words)
def test_symmetry(h, r):
    a, b = edit_distance(h, r), edit_distance(r, h)
    assert a.errors == b.errors
    assert a.insertions + a.deletions == b.insertions + b.deletions


@given(words, words, words)
def test_triangle(x, y, z):
    assert edit_distance(x, z).errors <= edit_distance(x, y).errors + edit_distance(y, z).errors


def test_frame_mse_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10, 3))
    assert frame_mse(x, x) == (0.0, 1.0)
    assert frame_mse(x + 1, x)[0] == pytest.approx(1.0)
    mse, ratio = frame_mse(x, x[:8] + 2)
    assert ratio == 1.25 and mse == pytest.approx(4.0)
    with pytest.raises(EvaluationError):
        frame_mse(x, np.zeros((3, 4)))


def test_frame_mse_report():
    rng = np.random.default_rng(1)
    refs = {"a": rng.standard_normal((4, 2)), "b": rng.standard_normal((6, 2))}
    hyps = {"a": refs["a"] + 1, "b": refs["b"]}
    rep = frame_mse_report(hyps, refs)
    assert rep.metrics["frame_mse"] == pytest.approx(0.5)
    allref = np.concatenate([refs["a"], refs["b"]])
    assert rep.metrics["ref_variance"] == pytest.approx(allref.var(axis=0).mean())


def test_uniform_model_perplexity(templates):
    _, cfg, vocab = toy_lm_parts()
    params = init_params(cfg)
    for k in ("head.w", "head.b"):
        params[k][:] = 0
    m = toy_manifest("a", "textlm", vocab, 6, np.random.default_rng(2))
    # every next-token distribution is uniform over the whole vocabulary
    assert perplexity(params, cfg, m, templates["textlm"], vocab) == pytest.approx(vocab.total_size, rel=1e-9)


def test_uniform_106(templates):
    from minispeechlm.vocabulary import Modality, build_joint_vocabulary

    vocab = build_joint_vocabulary([("bpe", 100, Modality.TEXT)], ["textlm"])
    assert vocab.total_size == 106
    cfg = ModelConfig(vocab_size=106, n_q=1, d_model=8, n_heads=2, n_layers=1, max_T=32)
    params = init_params(cfg)
    params["head.w"][:] = 0
    m = toy_manifest("a", "textlm", vocab, 3, np.random.default_rng(3))
    assert perplexity(params, cfg, m, templates["textlm"], vocab) == pytest.approx(106, rel=1e-6)


def test_perplexity_matches_exp_loss_and_duplication(templates):
    params, cfg, vocab = toy_lm_parts()
    m = toy_manifest("a", "textlm", vocab, 5, np.random.default_rng(4))
    ppl = perplexity(params, cfg, m, templates["textlm"], vocab)
    seqs = [assemble_sequence(templates["textlm"], e.items, vocab, 3) for e in m.examples]
    grid, mask, _ = collate(seqs)
    loss, _ = weighted_cross_entropy(forward(params, cfg, grid), grid, mask, mask.astype(float))
    assert ppl == pytest.approx(math.exp(loss), rel=1e-9)
    m.examples = m.examples + m.examples
    assert perplexity(params, cfg, m, templates["textlm"], vocab) == pytest.approx(ppl, rel=1e-9)


def test_perfect_model_perplexity_one(templates):
    from minispeechlm.vocabulary import Modality, build_joint_vocabulary

    vocab = build_joint_vocabulary([("bpe", 6, Modality.TEXT)], ["textlm"])
    # deterministic data: always the same sequence; overfit a tiny model
    from minispeechlm.model import OptimConfig, TrainState, train_step

    m = toy_manifest("a", "textlm", vocab, 1, np.random.default_rng(5))
    seq = assemble_sequence(templates["textlm"], m.examples[0].items, vocab, 1)
    cfg = ModelConfig(vocab_size=vocab.total_size, n_q=1, d_model=16, n_heads=2, n_layers=1, max_T=16, dtype="float64")
    state = TrainState.create(cfg, OptimConfig(peak_lr=1e-2, warmup_steps=0))
    grid, mask, w = collate([seq])
    for _ in range(300):
        state, _ = train_step(state, grid, mask, w)
    assert perplexity(state.params, cfg, m, templates["textlm"], vocab) == pytest.approx(1.0, abs=1e-3)
