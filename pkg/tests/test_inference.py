import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from minispeechlm.inference import (
    DecodeParams,
    ModalityState,
    SpeechLM,
    Strategy,
    advance,
    beam_search,
    build_prefix,
    candidate_distribution,
    generate,
    sample_token,
    split_targets,
    step_mask,
)
from minispeechlm.template import TemplateError, assemble_sequence, parse_template
from minispeechlm.tokenizers import TokenizedItem
from minispeechlm.vocabulary import EOS

from conftest import audio_item, text_item
from helpers import TOY_RANGES, toy_lm_parts, violations


def conditions_for(template, rng, L=3):
    out = {}
    for c in template.conditions:
        if c.tokenizer_name == "bpe":
            out[c.item_name] = text_item(rng.integers(0, 6, L))
        else:
            rows = np.stack([rng.integers(0, 2, L), rng.integers(2, 5, L), rng.integers(5, 8, L)], axis=1)
            out[c.item_name] = audio_item(rows)
    return out


@pytest.fixture(params=["parallel", "delay"])
def lm(request):
    params, cfg, vocab = toy_lm_parts(interleave=request.param)
    return SpeechLM(params, cfg, vocab, TOY_RANGES)


def test_step_mask_examples(asr_template):
    _, _, vocab = toy_lm_parts()
    # an audio region open, one text target still to come
    two = parse_template("task: asr\ncondition: a bpe\ntarget: w codec_ssl\ntarget: text bpe\n")
    state = ModalityState("codec_ssl", two.targets[1:], 2)
    allowed = set(np.flatnonzero(step_mask(state, vocab)))
    reg = vocab.region("codec_ssl")
    assert allowed == set(range(reg.offset, reg.end)) | {vocab.indicator_id("bpe")}
    done = ModalityState(None, (), 5)
    assert set(np.flatnonzero(step_mask(done, vocab))) == {EOS}
    state = ModalityState("bpe", (), 1)
    m = step_mask(state, vocab, min_len=3)
    assert not m[EOS]
    assert m[EOS] == False and step_mask(ModalityState("bpe", (), 3), vocab, 3)[EOS]
    first = ModalityState.initial(asr_template)
    assert set(np.flatnonzero(step_mask(first, vocab))) == {vocab.indicator_id("bpe")}
    s2 = advance(first, vocab.indicator_id("bpe"), vocab)
    assert s2.current == "bpe" and s2.done


def test_build_prefix_length(asr_template):
    _, _, vocab = toy_lm_parts()
    cond = conditions_for(asr_template, np.random.default_rng(0), L=4)
    assert len(build_prefix(asr_template, cond, vocab, 3)) == 1 + 1 + 1 + 4
    with pytest.raises(TemplateError):
        parse_template("task: asr\ntarget: text bpe\n")


def test_decode_params_validation():
    for bad in (dict(p=0.0), dict(p=1.5), dict(k=0), dict(width=0), dict(min_len=5, max_len=2), dict(temperature=0)):
        with pytest.raises(ValueError):
            DecodeParams(**bad)
    assert DecodeParams(max_len_ratio=1.5).resolve_max_len(10) == 19


def test_greedy_deterministic_and_sound(lm, templates):
    rng = np.random.default_rng(1)
    for name, template in templates.items():
        cond = conditions_for(template, rng)
        dp = DecodeParams(max_len=12)
        a, b = generate(lm, template, cond, dp), generate(lm, template, cond, dp)
        np.testing.assert_array_equal(a.grid, b.grid)
        bad, seen = violations(a.grid, a.prefix_length, template, lm.vocab, TOY_RANGES)
        assert not bad, (name, bad)
        assert seen == [t.tokenizer_name for t in template.targets]
        assert len(a.grid) - a.prefix_length <= 12


def test_beam_width_one_is_greedy(lm, templates):
    rng = np.random.default_rng(2)
    for template in templates.values():
        cond = conditions_for(template, rng)
        g = generate(lm, template, cond, DecodeParams(max_len=10))
        b = generate(lm, template, cond, DecodeParams(strategy="beam", width=1, max_len=10))
        np.testing.assert_array_equal(g.grid, b.grid)
        assert g.complete == b.complete


def test_sampling_is_sound(lm, templates):
    rng = np.random.default_rng(3)
    for i in range(40):
        name = list(templates)[i % 4]
        template = templates[name]
        cond = conditions_for(template, rng)
        for strategy, extra in (("topk", dict(k=3)), ("topp", dict(p=0.8))):
            dp = DecodeParams(strategy=strategy, temperature=0.8, seed=i, max_len=10, min_len=2, **extra)
            res = generate(lm, template, cond, dp)
            bad, seen = violations(res.grid, res.prefix_length, template, lm.vocab, TOY_RANGES, min_len=2)
            assert not bad
            assert seen == [t.tokenizer_name for t in template.targets][: len(seen)]
            if res.complete:
                assert res.grid[-1, 0] == EOS and seen == [t.tokenizer_name for t in template.targets]


def test_max_len_flags_incomplete():
    params, cfg, vocab = toy_lm_parts()
    # push Eos far down so the model never stops on its own
    params["head.b"][0, EOS] = -1e4
    lm = SpeechLM(params, cfg, vocab, TOY_RANGES)
    t = parse_template("task: textlm\ncondition: prefix bpe\ntarget: continuation bpe\n")
    cond = {"prefix": text_item([1, 2])}
    for strategy in ("greedy", "beam"):
        res = generate(lm, t, cond, DecodeParams(strategy=strategy, width=2, max_len=5))
        assert not res.complete
        assert len(res.grid) - res.prefix_length == 5
        assert res.items["continuation"].length == 4


def test_split_targets_roundtrip(templates):
    _, _, vocab = toy_lm_parts()
    rng = np.random.default_rng(4)
    t = templates["tts"]
    items = {"text": text_item([1, 2]), "wav": audio_item([[0, 2, 5], [1, 4, 7], [1, 3, 6]])}
    seq = assemble_sequence(t, items, vocab, 3)
    P = len(build_prefix(t, {"text": items["text"]}, vocab, 3))
    out = split_targets(seq.grid[P:], t, vocab, {"bpe": 1, "codec_ssl": 3})
    assert out["wav"] == items["wav"]
    out = split_targets(seq.grid[P:], t, vocab)
    assert out["wav"] == items["wav"]


def test_topk_and_topp_candidates():
    logits = np.log(np.array([0.1, 0.4, 0.2, 0.2, 0.1]))
    allowed = np.ones(5, bool)
    ids, probs = candidate_distribution(logits, allowed, DecodeParams(strategy="topk", k=2))
    assert list(ids) == [1, 2] and probs == pytest.approx([2 / 3, 1 / 3])
    # cumulative 0.4, 0.6: p=0.5 stops at the 0.2 entry and keeps its tie
    ids, probs = candidate_distribution(logits, allowed, DecodeParams(strategy="topp", p=0.5))
    assert sorted(ids) == [1, 2, 3]
    ids, _ = candidate_distribution(logits, allowed, DecodeParams(strategy="topp", p=0.4))
    assert list(ids) == [1]
    allowed[1] = False
    ids, _ = candidate_distribution(logits, allowed, DecodeParams(strategy="topk", k=1))
    assert list(ids) == [2]


def test_topk_sampling_calibration():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal(12)
    allowed = np.ones(12, bool)
    dp = DecodeParams(strategy="topk", k=5, temperature=1.0)
    top = np.argsort(-logits)[:5]
    expected = np.exp(logits[top]) / np.exp(logits[top]).sum()
    draws = np.array([sample_token(logits, allowed, dp, rng) for _ in range(100_000)])
    assert set(np.unique(draws)) <= set(top)
    counts = np.array([(draws == t).sum() for t in top])
    _, pval = stats.chisquare(counts, expected * len(draws))
    assert pval > 0.01


def test_beam_search_finds_higher_or_equal_score(lm, templates):
    rng = np.random.default_rng(6)
    t = templates["textlm"]
    for _ in range(5):
        cond = conditions_for(t, rng)
        scores = [beam_search(lm, t, cond, DecodeParams(strategy="beam", width=w, max_len=4)).score for w in (1, 4, 64)]
        assert scores[2] >= scores[0] - 1e-12
