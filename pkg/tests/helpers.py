"""Test-side oracles, written independently of the library's decoding code."""
import numpy as np

from minispeechlm.model import ModelConfig, init_params
from minispeechlm.vocabulary import EOS, PAD, Modality, build_joint_vocabulary

# bpe: 6 symbols. codec_ssl: 2 ssl labels + 2 codebooks of 3 codes.
TOY_RANGES = {"bpe": [(0, 6)], "codec_ssl": [(0, 2), (2, 5), (5, 8)]}


def toy_lm_parts(seed=0, interleave="parallel", d_model=16, max_T=64, scale=1.0):
    vocab = build_joint_vocabulary(
        [("bpe", 6, Modality.TEXT), ("codec_ssl", 8, Modality.AUDIO)], ["asr", "tts", "textlm", "audiolm"]
    )
    cfg = ModelConfig(
        vocab_size=vocab.total_size, n_q=3, d_model=d_model, n_layers=1, n_heads=2, max_T=max_T,
        interleave=interleave, seed=seed, dtype="float64",
    )
    params = init_params(cfg)
    rng = np.random.default_rng(seed + 1000)
    # larger weights than init so the distributions are far from uniform
    for k in ("head.w", "embed"):
        params[k] = params[k] + rng.standard_normal(params[k].shape) * scale
    return params, cfg, vocab


def violations(grid, prefix_len, template, vocab, ranges, min_len=0):
    """List of (row, stream, token, reason) for every cell outside the legal set."""
    out = []
    pending = [t.tokenizer_name for t in template.targets]
    current = None
    n_generated = 0
    indicators_seen = []
    for r in range(prefix_len, len(grid)):
        row = grid[r]
        t0 = int(row[0])
        legal = set()
        if current is not None:
            reg = vocab.region(current)
            lo, hi = ranges[current][0]
            legal |= set(range(reg.offset + lo, reg.offset + hi))
        if pending:
            legal.add(vocab.indicator_id(pending[0]))
        elif n_generated >= min_len:
            legal.add(EOS)
        if t0 not in legal:
            out.append((r, 0, t0, "stream 0"))
        special = t0 == EOS or (pending and t0 == vocab.indicator_id(pending[0]))
        for q in range(1, len(row)):
            tok = int(row[q])
            if special or current is None or q >= len(ranges[current]):
                ok = tok == PAD
            else:
                reg = vocab.region(current)
                lo, hi = ranges[current][q]
                ok = reg.offset + lo <= tok < reg.offset + hi
            if not ok:
                out.append((r, q, tok, f"stream {q}"))
        if pending and t0 == vocab.indicator_id(pending[0]):
            indicators_seen.append(pending[0])
            current = pending.pop(0)
        if t0 == EOS:
            if r != len(grid) - 1:
                out.append((r, 0, t0, "rows after eos"))
            break
        n_generated += 1
    return out, indicators_seen


def toy_manifest(name, task, vocab, n, rng, text_len=(1, 4)):
    """A textlm-style manifest of ``n`` examples over the toy vocabulary."""
    from minispeechlm.preprocessing import DatasetManifest, ManifestExample
    from minispeechlm.tokenizers import TokenizedItem

    examples = []
    for i in range(n):
        a, b = (int(rng.integers(*text_len)) for _ in range(2))
        items = {
            "prefix": TokenizedItem("bpe", rng.integers(0, 6, (a, 1))),
            "continuation": TokenizedItem("bpe", rng.integers(0, 6, (b, 1))),
        }
        examples.append(ManifestExample(f"{name}-{i}", items, 3 + 2 + a + b))
    return DatasetManifest(name, task, {"path": "vocab.txt", "sha256": vocab.sha256()}, {}, examples)
