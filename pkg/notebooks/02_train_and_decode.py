
# coding: utf-8

# # Training a tiny joint ASR/TTS model and decoding it
#
# The four workflow stages run in-process on a small synthetic corpus: prepare,
# train, infer, eval. The same steps are available as
# `python -m minispeechlm <stage> --config exp.yaml`. A few minutes on one core.

# In[1]:

import tempfile
import textwrap
from pathlib import Path

import numpy as np

from minispeechlm.config import load_config
from minispeechlm.inference import DecodeParams, SpeechLM, detokenize, generate
from minispeechlm.model import count_params
from minispeechlm.pipeline import cmd_eval, cmd_infer, cmd_prepare, cmd_train, load_artifacts, load_model, load_task_manifest


# The experiment config. Paths are relative to the config file.

# In[2]:

root = Path(tempfile.mkdtemp())
(root / "exp.yaml").write_text(textwrap.dedent("""\
    seed: 0
    synthesize: {root: corpus, n_train: 1500, n_valid: 50, n_test: 50}
    tokenizers:
      bpe: {kind: subword, corpus: corpus/data/asr/train/text, seed: 0, vocab_size: 60}
      codec_ssl: {kind: codec_ssl, corpus: corpus/data/asr/train/wav, seed: 0,
                  n_codebooks: 2, codebook_size: 16, n_clusters: 16}
    tasks:
      asr: {data: {train: corpus/data/asr/train, valid: corpus/data/asr/valid, test: corpus/data/asr/test}}
      tts: {data: {train: corpus/data/tts/train, valid: corpus/data/tts/valid, test: corpus/data/tts/test}}
    model: {d_model: 64, n_layers: 2, n_heads: 4, max_T: 64}
    train: {steps: 400, token_budget: 1000, peak_lr: 0.003, warmup_steps: 50, valid_every: 100}
"""))
cfg = load_config(root / "exp.yaml")


# `prepare` writes the corpus, trains the tokenizers and tokenizes every split.
# Running it twice rewrites nothing.

# In[3]:

print(len(cmd_prepare(cfg, synthesize_corpus=True)["written"]), "files written")
print(len(cmd_prepare(cfg, synthesize_corpus=True)["written"]), "files written the second time")


# In[4]:

state = cmd_train(cfg)
print("parameters", count_params(state.params))
print((cfg.out / "exp/valid.log").read_text())


# ## Decoding by hand
#
# Generation is driven by the template: the prefix holds the conditions, the
# target indicator is forced, and every later step is masked to the open
# target's region, the next indicator or Eos.

# In[5]:

art = load_artifacts(cfg, "demo")
state = load_model(cfg, "demo")
lm = SpeechLM.from_tokenizers(state.params, state.config, art.vocab, art.tokenizers)
asr = cfg.task("asr").template
example = load_task_manifest(cfg, "asr", "test", "demo").examples[0]
cond = {"wav": example.items["wav"]}
ref = art.tokenizers["bpe"].decode(example.items["text"].tokens)
print("reference", ref)
for dp in (
    DecodeParams(),
    DecodeParams(strategy="beam", width=4),
    DecodeParams(strategy="topk", k=5, temperature=0.8, seed=1),
    DecodeParams(strategy="topp", p=0.9, seed=1),
):
    res = generate(lm, asr, cond, dp)
    print(f"{dp.strategy.value:6s}", detokenize(res.items, art.tokenizers)["text"], "complete" if res.complete else "cut")


# TTS goes the other way: text in, Codec_SSL tokens out, decoded back to frames.

# In[6]:

tts = cfg.task("tts").template
ex = load_task_manifest(cfg, "tts", "test", "demo").examples[0]
res = generate(lm, tts, {"text": ex.items["text"]}, DecodeParams())
hyp = detokenize(res.items, art.tokenizers)["wav"]
ref = art.tokenizers["codec_ssl"].decode(ex.items["wav"].tokens)
print(hyp.shape, ref.shape, "frame mse", float(((hyp[: len(ref)] - ref[: len(hyp)]) ** 2).mean()))


# ## Scoring whole splits

# In[7]:

for task in ("asr", "tts"):
    cmd_infer(cfg, task)
    print(cmd_eval(cfg, task).summary())
