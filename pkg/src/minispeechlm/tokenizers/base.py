from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..vocabulary import Modality


class TokenizerError(ValueError):
    pass


@dataclass(eq=False)
class TokenizedItem:
    """``tokens`` is an ``(L, k)`` grid of local ids; ``k`` is the stream count."""

    tokenizer_name: str
    tokens: np.ndarray

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[:, None]
        if tokens.ndim != 2:
            raise TokenizerError(f"token grid must be 2-d, got shape {tokens.shape}")
        self.tokens = tokens

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def n_streams(self) -> int:
        return self.tokens.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, TokenizedItem)
            and self.tokenizer_name == other.tokenizer_name
            and self.tokens.shape == other.tokens.shape
            and bool(np.array_equal(self.tokens, other.tokens))
        )

    def __repr__(self):
        return f"TokenizedItem({self.tokenizer_name!r}, shape={self.tokens.shape})"

    def to_json(self) -> dict:
        return {"tokenizer": self.tokenizer_name, "tokens": self.tokens.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "TokenizedItem":
        tokens = np.asarray(obj["tokens"], dtype=np.int64).reshape(len(obj["tokens"]), -1)
        return cls(obj["tokenizer"], tokens)


class Tokenizer:
    """Common surface of the trained tokenizers.

    Subclasses set ``kind`` and ``modality`` and implement ``vocab_size``,
    ``n_streams``, ``stream_ranges``, ``encode``, ``decode`` and ``to_text``.
    """

    kind: str = ""
    modality: Modality = Modality.OTHER

    def __init__(self, name: str):
        self.name = name

    @property
    def vocab_size(self) -> int:
        raise NotImplementedError

    @property
    def n_streams(self) -> int:
        return 1

    @property
    def stream_ranges(self) -> list[tuple[int, int]]:
        """Half-open local-id range legal on each stream."""
        return [(0, self.vocab_size)]

    @property
    def stream_classes(self) -> tuple[str, ...]:
        """Loss-weight table key of each stream."""
        return (self.kind,) * self.n_streams

    def encode(self, content) -> TokenizedItem:
        raise NotImplementedError

    def decode(self, tokens):
        raise NotImplementedError

    def to_text(self) -> str:
        raise NotImplementedError

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @staticmethod
    def _check_ids(tokens: np.ndarray, size: int):
        if tokens.size and (tokens.min() < 0 or tokens.max() >= size):
            bad = tokens[(tokens < 0) | (tokens >= size)][0]
            raise TokenizerError(f"token id {int(bad)} out of range [0, {size})")


def format_header(kind: str, **fields) -> str:
    return " ".join([kind] + [f"{k}={v}" for k, v in fields.items()])


def parse_header(line: str) -> tuple[str, dict[str, str]]:
    kind, *rest = line.split()
    fields = {}
    for item in rest:
        key, _, value = item.partition("=")
        fields[key] = value
    return kind, fields
