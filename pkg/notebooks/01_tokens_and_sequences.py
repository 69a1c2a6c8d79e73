
# coding: utf-8

# # From utterances to multi-stream sequences
#
# This walk-through builds a tiny synthetic corpus, trains the three kinds of
# tokenizer on it, lays them out in one joint vocabulary and assembles an ASR
# training sequence. Run it with `python notebooks/01_tokens_and_sequences.py`.

# In[1]:

import tempfile
from pathlib import Path

import numpy as np

from minispeechlm.model import delay_apply, delay_invert
from minispeechlm.synthetic import SyntheticLanguage, SyntheticSpec, spell, synthesize
from minispeechlm.template import assemble_sequence, builtin_template_path, compute_token_weights, parse_template, parse_template_file
from minispeechlm.tokenizers import CodecSSLModel, codec_train, read_frames, ssl_train, subword_train
from minispeechlm.vocabulary import Modality, build_joint_vocabulary

np.set_printoptions(linewidth=120)


# The synthetic language: strings of 16 symbols from a Markov chain. Each
# symbol is spelled as a two-letter word and rendered as one 8-dim frame.

# In[2]:

spec = SyntheticSpec(n_train=300, n_valid=20, n_test=20, seed=0)
lang = SyntheticLanguage(spec)
s = lang.sample(np.random.default_rng(1))
print(s)
print(spell(s))
print(lang.frames(s).round(2)[:3])


# Write the corpus to disk. Each task folder holds one index file per item,
# `<id> <content>` per line.

# In[3]:

root = Path(tempfile.mkdtemp()) / "corpus"
print(synthesize(root, spec))
print((root / "data/asr/train/text").read_text().splitlines()[:2])
print((root / "data/asr/train/wav").read_text().splitlines()[:2])


# ## Tokenizers
#
# Text gets byte-pair merges over characters. Audio frames get residual
# vector quantization (the "codec") and plain k-means labels (the "SSL"
# units). The Codec_SSL tokenizer stacks them: stream 0 is the SSL label,
# streams 1.. are the codebooks.

# In[4]:

texts = [ln.split(None, 1)[1] for ln in (root / "data/asr/train/text").read_text().splitlines()]
bpe = subword_train(texts, 60, seed=0, name="bpe")
print(bpe.vocab_size, bpe.encode(texts[0]).tokens.ravel())
print(bpe.decode(bpe.encode(texts[0]).tokens))


# In[5]:

wav_dir = root / "data/asr/train"
frames = np.concatenate([
    read_frames(wav_dir / ln.split()[1]) for ln in (wav_dir / "wav").read_text().splitlines()
])
codec = codec_train(frames, n_codebooks=2, codebook_size=16, seed=0, name="audio.codec")
ssl = ssl_train(frames, 16, seed=0, name="audio.ssl")
audio = CodecSSLModel("audio", codec, ssl)
x = lang.frames(s)
item = audio.encode(x)
print(item.tokens)
print("stream ranges", audio.stream_ranges, "classes", audio.stream_classes)
print("reconstruction mse", float(((audio.decode(item.tokens) - x) ** 2).mean()), "frame variance", float(frames.var(axis=0).mean()))


# ## One vocabulary, one sequence
#
# Specials come first: padding, delay padding, begin and end, one id per task
# and one modality indicator per tokenizer. Each tokenizer then owns a
# contiguous region.

# In[6]:

vocab = build_joint_vocabulary([("bpe", bpe.vocab_size, Modality.TEXT), ("audio", audio.vocab_size, Modality.AUDIO)],
                               ["asr", "tts"])
print(vocab.to_text().splitlines()[:9])
print("total", vocab.total_size)


# The built-in ASR template conditions on `wav` and predicts `text`. Here its
# tokenizer names are swapped for the ones trained above.

# In[7]:

print(parse_template_file(builtin_template_path("asr")).to_text())
asr = parse_template("task: asr\ncondition: wav audio\ntarget: text bpe\n")
seq = assemble_sequence(asr, {"wav": item, "text": bpe.encode(spell(s))}, vocab, n_q=audio.n_streams)
print(seq.grid)
print(seq.loss_mask.astype(int))


# Loss weights are looked up by stream class. With one SSL stream at 0.5 and
# two codebooks at 0.25 an audio frame weighs as much as one text token.

# In[8]:

tts = parse_template("task: tts\ncondition: text bpe\ntarget: wav audio\n")
seq = assemble_sequence(tts, {"wav": item, "text": bpe.encode(spell(s))}, vocab, n_q=3)
table = {"text": 1.0, "ssl": 0.5, "codec": 0.25}
w = compute_token_weights(seq, table, {"audio": audio.stream_classes}).weights
print(w)
print("per-row sums", w.sum(axis=1))


# ## Delay interleaving
#
# Stream q is shifted down by q rows so that codebook q of a frame is predicted
# after the coarser streams of the same frame are known.

# In[9]:

d = delay_apply(seq.grid)
print(d)
assert np.array_equal(delay_invert(d), seq.grid)
