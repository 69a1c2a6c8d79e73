"""Pair-merge subword tokenizer.

Text is pre-split into chunks (an optional leading space plus a run of
non-space characters, or a run of whitespace); merges never cross chunks.
Decoding concatenates symbols, so ``decode(encode(t)) == t`` exactly.
"""
from __future__ import annotations

import re
from collections import Counter

import numpy as np

from ..vocabulary import Modality
from .base import TokenizedItem, Tokenizer, TokenizerError, format_header, parse_header

_CHUNK = re.compile(r" ?\S+|\s+")


def _chunks(text: str) -> list[str]:
    return _CHUNK.findall(text)


class SubwordModel(Tokenizer):
    kind = "text"
    modality = Modality.TEXT

    def __init__(self, name, base_symbols, merges, seed=0, incomplete=False):
        super().__init__(name)
        self.base_symbols = list(base_symbols)
        self.merges = [tuple(m) for m in merges]
        self.seed = seed
        # True when training ran out of pairs before reaching the target size.
        self.incomplete = incomplete
        symbols = self.base_symbols + [a + b for a, b in self.merges]
        self.vocab = {s: i for i, s in enumerate(symbols)}
        self.symbols = symbols
        self._rank = {m: r for r, m in enumerate(self.merges)}
        self._cache: dict[str, list[int]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.symbols)

    def _encode_chunk(self, chunk: str) -> list[int]:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        parts = list(chunk)
        while len(parts) > 1:
            ranked = [
                (self._rank.get((parts[i], parts[i + 1]), len(self._rank)), i)
                for i in range(len(parts) - 1)
            ]
            rank, _ = min(ranked)
            if rank == len(self._rank):
                break
            pair = self.merges[rank]
            merged, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == pair:
                    merged.append(parts[i] + parts[i + 1])
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        ids = [self.vocab[p] for p in parts]
        self._cache[chunk] = ids
        return ids

    def encode(self, text: str) -> TokenizedItem:
        for pos, ch in enumerate(text):
            if ch not in self.vocab:
                raise TokenizerError(f"character {ch!r} at position {pos} is not in the inventory")
        ids: list[int] = []
        for chunk in _chunks(text):
            ids.extend(self._encode_chunk(chunk))
        return TokenizedItem(self.name, np.array(ids, dtype=np.int64).reshape(-1, 1))

    def decode(self, tokens) -> str:
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
        self._check_ids(tokens, self.vocab_size)
        return "".join(self.symbols[i] for i in tokens)

    def to_text(self) -> str:
        lines = [
            format_header(
                "subword",
                name=self.name,
                base=len(self.base_symbols),
                merges=len(self.merges),
                seed=self.seed,
                incomplete=int(self.incomplete),
            )
        ]
        # Symbols as code points keeps whitespace symbols unambiguous.
        lines += [str(ord(s)) for s in self.base_symbols]
        lines += [f"{self.vocab[a]} {self.vocab[b]}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SubwordModel":
        lines = text.splitlines()
        kind, h = parse_header(lines[0])
        if kind != "subword":
            raise TokenizerError(f"not a subword model file (kind {kind!r})")
        n_base, n_merges = int(h["base"]), int(h["merges"])
        symbols = [chr(int(x)) for x in lines[1 : 1 + n_base]]
        merges = []
        for ln in lines[1 + n_base : 1 + n_base + n_merges]:
            a, b = (int(x) for x in ln.split())
            merges.append((symbols[a], symbols[b]))
            symbols.append(symbols[a] + symbols[b])
        return cls(h["name"], symbols[:n_base], merges, int(h["seed"]), bool(int(h["incomplete"])))


def subword_train(corpus, target_vocab_size: int, seed: int = 0, name: str = "bpe") -> SubwordModel:
    """Learn merges until ``target_vocab_size`` symbols exist.

    The most frequent adjacent pair is merged first; equal counts go to the
    lexicographically smallest pair. Training is deterministic, ``seed`` is
    recorded for provenance only.
    """
    corpus = list(corpus)
    if not corpus:
        raise TokenizerError("subword training needs a non-empty corpus")
    base = sorted({ch for line in corpus for ch in line})
    if target_vocab_size <= len(base):
        raise TokenizerError(
            f"target vocab size {target_vocab_size} must exceed the {len(base)} distinct characters"
        )

    words = Counter(chunk for line in corpus for chunk in _chunks(line))
    seqs = {w: list(w) for w in words}
    merges: list[tuple[str, str]] = []
    while len(base) + len(merges) < target_vocab_size:
        pairs: Counter = Counter()
        for w, parts in seqs.items():
            for a, b in zip(parts, parts[1:]):
                pairs[(a, b)] += words[w]
        if not pairs:
            break
        top = max(pairs.values())
        pair = min(p for p, c in pairs.items() if c == top)
        merges.append(pair)
        for w, parts in seqs.items():
            merged, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == pair:
                    merged.append(parts[i] + parts[i + 1])
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            seqs[w] = merged
    incomplete = len(base) + len(merges) < target_vocab_size
    return SubwordModel(name, base, merges, seed=seed, incomplete=incomplete)
