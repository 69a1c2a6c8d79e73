from pathlib import Path

from .base import TokenizedItem, Tokenizer, TokenizerError
from .codec import (
    CodecModel,
    CodecSSLModel,
    SSLModel,
    codec_decode,
    codec_encode,
    codec_ssl_encode,
    codec_train,
    ssl_encode,
    ssl_train,
)
from .frames import read_frames, write_frames
from .subword import SubwordModel, subword_train

_KINDS = {
    "subword": SubwordModel,
    "codec": CodecModel,
    "ssl": SSLModel,
    "codec_ssl": CodecSSLModel,
}


def tokenizer_from_text(text: str) -> Tokenizer:
    kind = text.split(None, 1)[0] if text.strip() else ""
    if kind not in _KINDS:
        raise TokenizerError(f"unknown tokenizer file kind {kind!r}")
    return _KINDS[kind].from_text(text)


def load_tokenizer(path) -> Tokenizer:
    return tokenizer_from_text(Path(path).read_text())


__all__ = [
    "CodecModel",
    "CodecSSLModel",
    "SSLModel",
    "SubwordModel",
    "TokenizedItem",
    "Tokenizer",
    "TokenizerError",
    "codec_decode",
    "codec_encode",
    "codec_ssl_encode",
    "codec_train",
    "load_tokenizer",
    "read_frames",
    "ssl_encode",
    "ssl_train",
    "subword_train",
    "tokenizer_from_text",
    "write_frames",
]
