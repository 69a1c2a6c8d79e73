"""A toy speech corpus: latent symbol strings, their text and their frames.

Strings come from a seeded Markov chain over 16 symbols. Text spells each
symbol as a short word. Audio has one frame per symbol, a fixed prototype
for the symbol plus a smaller offset that depends on the previous symbol, so
frames are a deterministic function of the string.

The four task folders share one set of utterances per split:

    <root>/audio/<split>/<id>.frames            whole-utterance frames
    <root>/audio/<split>/<id>.prefix.frames     audio continuation split
    <root>/audio/<split>/<id>.cont.frames
    <root>/data/asr/<split>/{wav,text}
    <root>/data/tts/<split>/{text,wav}
    <root>/data/textlm/<split>/{prefix,continuation}
    <root>/data/audiolm/<split>/{prefix,continuation}
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tokenizers.frames import format_frames

SYMBOL_WORDS = (
    "ba", "de", "gi", "ko", "lu", "ma", "ne", "pi",
    "ro", "su", "ta", "ve", "wo", "xi", "yu", "zo",
)
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class SyntheticSpec:
    n_train: int = 5000
    n_valid: int = 200
    n_test: int = 500
    min_len: int = 4
    max_len: int = 12
    feature_dim: int = 8
    coarticulation: float = 0.3
    # Dirichlet concentration of each transition row; small means peaked
    concentration: float = 0.3
    seed: int = 0

    def size(self, split: str) -> int:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}[split]


class SyntheticLanguage:
    """The chain and the frame renderer, both fixed by ``SyntheticSpec.seed``."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        n = len(SYMBOL_WORDS)
        rng = np.random.default_rng(spec.seed)
        self.start = rng.dirichlet(np.ones(n))
        self.transitions = rng.dirichlet(np.full(n, spec.concentration), size=n)
        self.protos = rng.standard_normal((n, spec.feature_dim))
        # row n is the context before the first symbol
        self.coart = rng.standard_normal((n + 1, spec.feature_dim))

    def sample(self, rng: np.random.Generator) -> list[int]:
        length = int(rng.integers(self.spec.min_len, self.spec.max_len + 1))
        s = [int(rng.choice(len(self.start), p=self.start))]
        while len(s) < length:
            s.append(int(rng.choice(len(self.start), p=self.transitions[s[-1]])))
        return s

    def frames(self, symbols) -> np.ndarray:
        symbols = np.asarray(symbols, dtype=np.int64)
        prev = np.concatenate([[len(SYMBOL_WORDS)], symbols[:-1]])
        return self.protos[symbols] + self.spec.coarticulation * self.coart[prev]


def spell(symbols) -> str:
    return " ".join(SYMBOL_WORDS[s] for s in symbols)


def _write_if_changed(path: Path, text: str) -> bool:
    if path.is_file() and path.read_text() == text:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return True


def synthesize(root, spec: SyntheticSpec | None = None) -> dict[str, int]:
    """Write the corpus under ``root``; files already holding the same bytes are left alone.

    Returns the number of files written per split.
    """
    spec = spec or SyntheticSpec()
    root = Path(root)
    lang = SyntheticLanguage(spec)
    written = {}
    for k, split in enumerate(SPLITS):
        rng = np.random.default_rng([spec.seed, k + 1])
        index: dict[str, list[str]] = {}
        n_written = 0
        for i in range(spec.size(split)):
            uid = f"{split}{i:05d}"
            s = lang.sample(rng)
            cut = int(rng.integers(1, len(s)))
            frames = lang.frames(s)
            for suffix, block in (("", frames), (".prefix", frames[:cut]), (".cont", frames[cut:])):
                n_written += _write_if_changed(root / "audio" / split / f"{uid}{suffix}.frames", format_frames(block))
            audio = f"../../../audio/{split}/{uid}"
            for key, content in (
                ("asr/wav", f"{audio}.frames"),
                ("asr/text", spell(s)),
                ("tts/text", spell(s)),
                ("tts/wav", f"{audio}.frames"),
                ("textlm/prefix", spell(s[:cut])),
                ("textlm/continuation", spell(s[cut:])),
                ("audiolm/prefix", f"{audio}.prefix.frames"),
                ("audiolm/continuation", f"{audio}.cont.frames"),
            ):
                index.setdefault(key, []).append(f"{uid} {content}\n")
        for key, lines in index.items():
            task, item = key.split("/")
            n_written += _write_if_changed(root / "data" / task / split / item, "".join(lines))
        written[split] = n_written
    return written
