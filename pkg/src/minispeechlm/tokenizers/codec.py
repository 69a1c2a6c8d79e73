"""Pseudo audio tokenizers over frame matrices.

``CodecModel`` is residual vector quantization with one k-means codebook per
stage; ``SSLModel`` assigns one k-means label per frame; ``CodecSSLModel``
stacks the SSL label in stream 0 ahead of the codec streams.

Multi-stream tokenizers use a flat local id space: stream ``q`` of a codec
holds ``q * codebook_size + code``.
"""
from __future__ import annotations

import numpy as np

from ..vocabulary import Modality
from .base import TokenizedItem, Tokenizer, TokenizerError, format_header, parse_header
from .frames import as_frames
from .kmeans import kmeans, nearest


def _format_rows(matrix: np.ndarray) -> list[str]:
    return [" ".join(repr(float(x)) for x in row) for row in matrix]


def _parse_rows(lines: list[str]) -> np.ndarray:
    return np.array([[float(x) for x in ln.split()] for ln in lines], dtype=np.float64)


class CodecModel(Tokenizer):
    kind = "codec"
    modality = Modality.AUDIO

    def __init__(self, name, centroids, seed=0):
        super().__init__(name)
        centroids = np.asarray(centroids, dtype=np.float64)
        if centroids.ndim != 3 or centroids.shape[0] < 1:
            raise TokenizerError("codec centroids must have shape (n_codebooks, size, dim)")
        if not np.all(np.isfinite(centroids)):
            raise TokenizerError("codec centroids must be finite")
        self.centroids = centroids
        self.seed = seed

    @property
    def n_codebooks(self) -> int:
        return self.centroids.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.centroids.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def vocab_size(self) -> int:
        return self.n_codebooks * self.codebook_size

    @property
    def n_streams(self) -> int:
        return self.n_codebooks

    @property
    def stream_ranges(self):
        k = self.codebook_size
        return [(q * k, (q + 1) * k) for q in range(self.n_codebooks)]

    def codes(self, frames) -> np.ndarray:
        """Per-stage code indices, shape ``(n_frames, n_codebooks)``."""
        frames = as_frames(frames)
        if frames.shape[1] != self.feature_dim:
            raise TokenizerError(
                f"frame dim {frames.shape[1]} does not match codec dim {self.feature_dim}"
            )
        residual = frames.copy()
        codes = np.empty((len(frames), self.n_codebooks), dtype=np.int64)
        for q, book in enumerate(self.centroids):
            codes[:, q] = nearest(residual, book)
            residual -= book[codes[:, q]]
        return codes

    def encode(self, frames) -> TokenizedItem:
        codes = self.codes(frames)
        return TokenizedItem(self.name, codes + np.arange(self.n_codebooks) * self.codebook_size)

    def decode_codes(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64).reshape(-1, self.n_codebooks)
        self._check_ids(codes, self.codebook_size)
        out = np.zeros((len(codes), self.feature_dim))
        for q, book in enumerate(self.centroids):
            out += book[codes[:, q]]
        return out

    def decode(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1, self.n_codebooks)
        self._check_ids(tokens, self.vocab_size)
        return self.decode_codes(tokens - np.arange(self.n_codebooks) * self.codebook_size)

    def to_text(self) -> str:
        n, k, d = self.centroids.shape
        head = format_header(
            "codec", name=self.name, n_codebooks=n, codebook_size=k, feature_dim=d, seed=self.seed
        )
        return "\n".join([head] + _format_rows(self.centroids.reshape(n * k, d))) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CodecModel":
        lines = text.splitlines()
        kind, h = parse_header(lines[0])
        if kind != "codec":
            raise TokenizerError(f"not a codec model file (kind {kind!r})")
        n, k, d = int(h["n_codebooks"]), int(h["codebook_size"]), int(h["feature_dim"])
        rows = _parse_rows(lines[1 : 1 + n * k])
        return cls(h["name"], rows.reshape(n, k, d), int(h["seed"]))


def codec_train(frames, n_codebooks: int, codebook_size: int, seed: int = 0, name: str = "codec"):
    """Fit codebook ``q`` by k-means on the residual left by codebooks ``< q``."""
    frames = as_frames(frames)
    if n_codebooks < 1 or codebook_size < 1:
        raise TokenizerError("n_codebooks and codebook_size must be >= 1")
    if len(frames) < codebook_size:
        raise TokenizerError(
            f"codec training needs at least {codebook_size} frames, got {len(frames)}"
        )
    residual = frames.copy()
    books = []
    for q in range(n_codebooks):
        # Stage seeds derive from the base seed so stage 0 is shared across depths.
        book = kmeans(residual, codebook_size, seed=seed + q)
        books.append(book)
        residual = residual - book[nearest(residual, book)]
    return CodecModel(name, np.stack(books), seed=seed)


class SSLModel(Tokenizer):
    kind = "ssl"
    modality = Modality.AUDIO

    def __init__(self, name, centroids, seed=0):
        super().__init__(name)
        self.centroids = np.asarray(centroids, dtype=np.float64)
        if self.centroids.ndim != 2:
            raise TokenizerError("ssl centroids must have shape (n_clusters, dim)")
        self.seed = seed

    @property
    def vocab_size(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]

    def labels(self, frames) -> np.ndarray:
        frames = as_frames(frames)
        if frames.shape[1] != self.feature_dim:
            raise TokenizerError(
                f"frame dim {frames.shape[1]} does not match ssl dim {self.feature_dim}"
            )
        return nearest(frames, self.centroids)

    def encode(self, frames) -> TokenizedItem:
        return TokenizedItem(self.name, self.labels(frames)[:, None])

    def decode(self, tokens) -> np.ndarray:
        # Labels are not invertible; the cluster mean stands in for the frame.
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
        self._check_ids(tokens, self.vocab_size)
        return self.centroids[tokens].copy()

    def to_text(self) -> str:
        k, d = self.centroids.shape
        head = format_header("ssl", name=self.name, n_clusters=k, feature_dim=d, seed=self.seed)
        return "\n".join([head] + _format_rows(self.centroids)) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SSLModel":
        lines = text.splitlines()
        kind, h = parse_header(lines[0])
        if kind != "ssl":
            raise TokenizerError(f"not an ssl model file (kind {kind!r})")
        k = int(h["n_clusters"])
        return cls(h["name"], _parse_rows(lines[1 : 1 + k]), int(h["seed"]))


def ssl_train(frames, n_clusters: int, seed: int = 0, name: str = "ssl") -> SSLModel:
    frames = as_frames(frames)
    if len(frames) < n_clusters:
        raise TokenizerError(f"ssl training needs at least {n_clusters} frames, got {len(frames)}")
    return SSLModel(name, kmeans(frames, n_clusters, seed=seed), seed=seed)


def ssl_encode(model: SSLModel, frames) -> TokenizedItem:
    return model.encode(frames)


def codec_encode(model: CodecModel, frames) -> TokenizedItem:
    return model.encode(frames)


def codec_decode(model: CodecModel, item) -> np.ndarray:
    tokens = item.tokens if isinstance(item, TokenizedItem) else item
    return model.decode(tokens)


class CodecSSLModel(Tokenizer):
    """Frame-wise fusion: stream 0 is the SSL label, streams 1.. the codec codes.

    Local ids: SSL labels occupy ``[0, n_clusters)``; codec stream ``q`` is
    shifted by ``n_clusters``.
    """

    kind = "codec_ssl"
    modality = Modality.AUDIO

    def __init__(self, name, codec: CodecModel, ssl: SSLModel):
        super().__init__(name)
        if codec.feature_dim != ssl.feature_dim:
            raise TokenizerError(
                f"codec dim {codec.feature_dim} and ssl dim {ssl.feature_dim} differ"
            )
        self.codec = codec
        self.ssl = ssl

    @property
    def feature_dim(self) -> int:
        return self.codec.feature_dim

    @property
    def vocab_size(self) -> int:
        return self.ssl.vocab_size + self.codec.vocab_size

    @property
    def n_streams(self) -> int:
        return 1 + self.codec.n_codebooks

    @property
    def stream_ranges(self):
        k0 = self.ssl.vocab_size
        return [(0, k0)] + [(lo + k0, hi + k0) for lo, hi in self.codec.stream_ranges]

    @property
    def stream_classes(self):
        return ("ssl",) + ("codec",) * self.codec.n_codebooks

    def encode(self, frames) -> TokenizedItem:
        frames = as_frames(frames)
        ssl = self.ssl.encode(frames).tokens
        codec = self.codec.encode(frames).tokens + self.ssl.vocab_size
        return TokenizedItem(self.name, np.concatenate([ssl, codec], axis=1))

    def decode(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1, self.n_streams)
        self._check_ids(tokens, self.vocab_size)
        return self.codec.decode(tokens[:, 1:] - self.ssl.vocab_size)

    def to_text(self) -> str:
        head = format_header("codec_ssl", name=self.name)
        return "\n".join([head, self.ssl.to_text().rstrip("\n"), self.codec.to_text().rstrip("\n")]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CodecSSLModel":
        lines = text.splitlines()
        kind, h = parse_header(lines[0])
        if kind != "codec_ssl":
            raise TokenizerError(f"not a codec_ssl model file (kind {kind!r})")
        _, sh = parse_header(lines[1])
        n_ssl = 1 + int(sh["n_clusters"])
        ssl = SSLModel.from_text("\n".join(lines[1 : 1 + n_ssl]))
        codec = CodecModel.from_text("\n".join(lines[1 + n_ssl :]))
        return cls(h["name"], codec, ssl)


def codec_ssl_encode(codec: CodecModel, ssl: SSLModel, frames) -> TokenizedItem:
    return CodecSSLModel("codec_ssl", codec, ssl).encode(frames)
