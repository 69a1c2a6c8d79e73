"""Autoregressive generation under a modality mask.

Stream 0 carries tokenizer indicators and ``Eos``. The most recent indicator
names the current modality; only that tokenizer's region, the next target's
indicator and (once every target has opened) ``Eos`` are legal. Other streams
are restricted to the current tokenizer's per-stream range, or forced to
``Pad`` when the row is a special token or the tokenizer has fewer streams.

Under delay interleaving generation runs in delayed space (stream ``q`` of
delayed row ``r`` belongs to original row ``r - q``) and the result is
delay-inverted.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .model import ModelConfig, delay_invert
from .model.loss import log_softmax
from .model.transformer import DecodeCache, forward_rows
from .template import DataItemSpec, TaskTemplate, TemplateError, assemble_prefix
from .tokenizers import TokenizedItem, Tokenizer
from .vocabulary import DELAY_PAD, EOS, PAD, SpecialToken, Vocabulary


class Strategy(str, enum.Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    TOPK = "topk"
    TOPP = "topp"


@dataclass(frozen=True)
class DecodeParams:
    strategy: Strategy = Strategy.GREEDY
    width: int = 1
    k: int = 1
    p: float = 1.0
    temperature: float = 1.0
    min_len: int = 0
    # None: ``ceil(max_len_ratio * condition rows) + 4``.
    max_len: int | None = None
    max_len_ratio: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.width < 1:
            raise ValueError("beam width must be >= 1")
        if self.k < 1:
            raise ValueError("top-k needs k >= 1")
        if not 0 < self.p <= 1:
            raise ValueError("top-p needs 0 < p <= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.max_len is not None and self.min_len > self.max_len:
            raise ValueError("min_len must not exceed max_len")

    def resolve_max_len(self, condition_rows: int) -> int:
        if self.max_len is not None:
            return self.max_len
        return max(self.min_len, math.ceil(self.max_len_ratio * condition_rows) + 4)


# -- modality state machine ------------------------------------------------------


@dataclass(frozen=True)
class ModalityState:
    """``current`` is the tokenizer of the open target (None before the first)."""

    current: str | None
    expected_targets: tuple[DataItemSpec, ...]
    # generated rows after the prefix, Eos excluded
    length: int = 0

    @classmethod
    def initial(cls, template: TaskTemplate) -> "ModalityState":
        return cls(None, tuple(template.targets), 0)

    @property
    def done(self) -> bool:
        return not self.expected_targets


def step_mask(state: ModalityState, vocab: Vocabulary, min_len: int = 0) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens legal on stream 0."""
    mask = np.zeros(vocab.total_size, dtype=bool)
    if state.current is not None:
        region = vocab.region(state.current)
        mask[region.offset : region.end] = True
    if state.expected_targets:
        mask[vocab.indicator_id(state.expected_targets[0].tokenizer_name)] = True
    elif state.length >= min_len:
        mask[EOS] = True
    return mask


def advance(state: ModalityState, token: int, vocab: Vocabulary) -> ModalityState:
    """State after ``token`` is emitted on stream 0."""
    if token == EOS:
        return state
    if state.expected_targets and token == vocab.indicator_id(state.expected_targets[0].tokenizer_name):
        nxt = state.expected_targets[0].tokenizer_name
        return ModalityState(nxt, state.expected_targets[1:], state.length + 1)
    return replace(state, length=state.length + 1)


def build_prefix(template: TaskTemplate, conditions, vocab: Vocabulary, n_q: int) -> np.ndarray:
    """``[Bos][TaskId]`` plus each condition's indicator and tokens."""
    return assemble_prefix(template, conditions, vocab, n_q)


# -- token selection --------------------------------------------------------------


def _masked(logits, allowed):
    return np.where(allowed, np.asarray(logits, dtype=np.float64), -np.inf)


def candidate_distribution(logits, allowed, dp: DecodeParams) -> tuple[np.ndarray, np.ndarray]:
    """``(ids, probs)`` a sampling strategy draws from."""
    ids = np.flatnonzero(allowed)
    if ids.size == 0:
        raise RuntimeError("no legal token at this step")
    z = np.asarray(logits, dtype=np.float64)[ids] / dp.temperature
    order = np.lexsort((ids, -z))
    ids, z = ids[order], z[order]
    probs = np.exp(z - z.max())
    probs /= probs.sum()
    if dp.strategy is Strategy.TOPK:
        ids, probs = ids[: dp.k], probs[: dp.k]
    elif dp.strategy is Strategy.TOPP:
        cum = np.cumsum(probs)
        cut = int(np.searchsorted(cum, dp.p - 1e-12)) + 1
        cut = min(cut, len(ids))
        # keep every token tied with the boundary token
        while cut < len(ids) and probs[cut] == probs[cut - 1]:
            cut += 1
        ids, probs = ids[:cut], probs[:cut]
    return ids, probs / probs.sum()


def sample_token(logits, allowed, dp: DecodeParams, rng: np.random.Generator) -> int:
    if dp.strategy in (Strategy.GREEDY, Strategy.BEAM):
        return int(np.argmax(_masked(logits, allowed)))
    ids, probs = candidate_distribution(logits, allowed, dp)
    if len(ids) == 1:
        return int(ids[0])
    i = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return int(ids[min(i, len(ids) - 1)])


# -- generation ---------------------------------------------------------------------


@dataclass
class SpeechLM:
    """Parameters plus what generation needs to know about the token space.

    ``stream_ranges`` maps a tokenizer name to the half-open *local* id range
    legal on each of its streams.
    """

    params: dict
    config: ModelConfig
    vocab: Vocabulary
    stream_ranges: dict[str, list[tuple[int, int]]] = field(default_factory=dict)

    @classmethod
    def from_tokenizers(cls, params, config, vocab, tokenizers: Mapping[str, Tokenizer]):
        ranges = {name: list(tok.stream_ranges) for name, tok in tokenizers.items()}
        return cls(params, config, vocab, ranges)

    def __post_init__(self):
        self._masks: dict[str, list[np.ndarray]] = {}

    def stream_masks(self, tokenizer_name: str) -> list[np.ndarray]:
        if tokenizer_name not in self._masks:
            region = self.vocab.region(tokenizer_name)
            ranges = self.stream_ranges.get(tokenizer_name, [(0, region.size)])
            masks = []
            for lo, hi in ranges:
                m = np.zeros(self.vocab.total_size, dtype=bool)
                m[region.offset + lo : region.offset + hi] = True
                masks.append(m)
            self._masks[tokenizer_name] = masks
        return self._masks[tokenizer_name]

    def stream_mask(self, kind: str | None, q: int) -> np.ndarray | None:
        """Mask for non-primary stream ``q`` of a row of ``kind``; None means forced Pad."""
        if kind is None:
            return None
        masks = self.stream_masks(kind)
        return masks[q] if q < len(masks) else None


@dataclass
class GenerationResult:
    items: dict[str, TokenizedItem]
    complete: bool
    grid: np.ndarray
    prefix_length: int
    score: float = 0.0


@dataclass
class _Hyp:
    state: ModalityState
    rows: list  # delayed rows emitted after the prefix
    tokens: list  # stream-0 ids of generated original rows
    kinds: list  # per generated original row: tokenizer name, or None for a special
    score: float = 0.0
    stop_row: int | None = None  # last original row that has a stream-0 decision
    finished: bool = False


class _Decoder:
    def __init__(self, lm: SpeechLM, template: TaskTemplate, conditions, dp: DecodeParams):
        self.lm, self.template, self.dp = lm, template, dp
        cfg = lm.config
        self.Q = cfg.n_q
        self.delays = list(range(self.Q)) if cfg.delay else [0] * self.Q
        self.D = max(self.delays)
        self.prefix = build_prefix(template, conditions, lm.vocab, self.Q)
        self.P = len(self.prefix)
        max_len = dp.resolve_max_len(self.P - 2)
        self.max_len = min(max_len, cfg.max_T - self.P - self.D)
        if self.max_len < 1:
            raise TemplateError(f"prefix of {self.P} rows leaves no room within max_T {cfg.max_T}")

    def delayed_prefix(self) -> np.ndarray:
        rows = np.full((self.P, self.Q), DELAY_PAD, dtype=np.int64)
        for r in range(self.P):
            for q, d in enumerate(self.delays):
                if r - d >= 0:
                    rows[r, q] = self.prefix[r - d, q]
        return rows

    def stream0_mask(self, hyp: _Hyp) -> np.ndarray:
        mask = step_mask(hyp.state, self.lm.vocab, self.dp.min_len)
        if hyp.state.current is not None:
            region = self.lm.vocab.region(hyp.state.current)
            legal0 = self.lm.stream_masks(hyp.state.current)[0]
            mask[region.offset : region.end] &= legal0[region.offset : region.end]
        return mask

    def choose_stream0(self, hyp: _Hyp, r: int, token: int):
        """Record the stream-0 decision for original row ``r``."""
        vocab = self.lm.vocab
        desc, _ = vocab.global_to_region(token)
        hyp.kinds.append(None if isinstance(desc, SpecialToken) else desc.tokenizer_name)
        hyp.tokens.append(token)
        hyp.state = advance(hyp.state, token, vocab)
        if token == EOS:
            hyp.stop_row, hyp.finished = r, True
        elif r - self.P + 1 >= self.max_len:
            hyp.stop_row = r

    def other_cell(self, hyp: _Hyp, r: int, q: int):
        """``(forced_token, None)`` or ``(None, mask)`` for stream ``q`` of delayed row ``r``."""
        o = r - self.delays[q]
        if o < 0:
            return DELAY_PAD, None
        if o < self.P:
            return int(self.prefix[o, q]), None
        if hyp.stop_row is not None and o > hyp.stop_row:
            return DELAY_PAD, None
        mask = self.lm.stream_mask(hyp.kinds[o - self.P], q)
        if mask is None:
            return PAD, None
        return None, mask

    def stream0_pending(self, hyp: _Hyp, r: int) -> bool:
        return hyp.stop_row is None or r <= hyp.stop_row

    def fill_other_streams(self, hyp: _Hyp, r: int, row: np.ndarray, logits, pick):
        for q in range(1, self.Q):
            forced, mask = self.other_cell(hyp, r, q)
            row[q] = forced if mask is None else pick(logits[q], mask)

    def is_done(self, hyp: _Hyp, r: int) -> bool:
        return hyp.stop_row is not None and r >= hyp.stop_row + self.D

    def result(self, hyp: _Hyp) -> GenerationResult:
        delayed = np.concatenate([self.delayed_prefix(), np.array(hyp.rows, dtype=np.int64)])
        grid = delay_invert(delayed) if self.D else delayed
        grid = grid[: hyp.stop_row + 1]
        return GenerationResult(
            split_targets(
                grid[self.P :],
                self.template,
                self.lm.vocab,
                {n: len(r) for n, r in self.lm.stream_ranges.items()},
            ),
            hyp.finished,
            grid,
            self.P,
            hyp.score,
        )


def split_targets(
    rows: np.ndarray, template: TaskTemplate, vocab: Vocabulary, stream_counts=None
) -> dict[str, TokenizedItem]:
    """Cut generated original-space rows back into per-target local-id items.

    ``stream_counts`` gives each tokenizer's stream count; without an entry it
    is inferred from which streams hold in-region ids.
    """
    stream_counts = stream_counts or {}
    items: dict[str, list] = {}
    targets = list(template.targets)
    spec = None
    indicators = {vocab.indicator_id(s.tokenizer_name) for s in targets}
    for row in rows:
        t0 = int(row[0])
        if t0 == EOS:
            break
        if t0 in indicators and targets and t0 == vocab.indicator_id(targets[0].tokenizer_name):
            spec = targets.pop(0)
            items[spec.item_name] = []
            continue
        if spec is None:
            continue
        region = vocab.region(spec.tokenizer_name)
        items[spec.item_name].append(row - region.offset)
    out = {}
    for spec in template.targets:
        if spec.item_name not in items:
            continue
        rows_ = items[spec.item_name]
        k = stream_counts.get(spec.tokenizer_name) or _stream_count(rows_, spec, vocab)
        arr = np.array([r[:k] for r in rows_], dtype=np.int64).reshape(len(rows_), k)
        out[spec.item_name] = TokenizedItem(spec.tokenizer_name, arr)
    return out


def _stream_count(rows, spec, vocab) -> int:
    # Streams beyond the tokenizer's own hold Pad, which is below its region offset.
    region = vocab.region(spec.tokenizer_name)
    k = 1
    for r in rows:
        valid = (r >= 0) & (r < region.size)
        while k < len(r) and valid[k]:
            k += 1
    return k


def generate(lm: SpeechLM, template: TaskTemplate, conditions, dp: DecodeParams) -> GenerationResult:
    """Generate the template's targets given its condition items."""
    if dp.strategy is Strategy.BEAM:
        return beam_search(lm, template, conditions, dp)
    dec = _Decoder(lm, template, conditions, dp)
    rng = np.random.default_rng(dp.seed)
    cache = DecodeCache(lm.config, 1)
    logits = forward_rows(lm.params, lm.config, cache, dec.delayed_prefix()[None])[0, -1]
    hyp = _Hyp(ModalityState.initial(template), [], [], [])

    def pick(z, mask):
        return sample_token(z, mask, dp, rng)

    r = dec.P
    while True:
        row = np.empty(dec.Q, dtype=np.int64)
        if dec.stream0_pending(hyp, r):
            row[0] = pick(logits[0], dec.stream0_mask(hyp))
            dec.choose_stream0(hyp, r, int(row[0]))
        else:
            row[0] = DELAY_PAD
        dec.fill_other_streams(hyp, r, row, logits, pick)
        hyp.rows.append(row)
        if dec.is_done(hyp, r):
            break
        logits = forward_rows(lm.params, lm.config, cache, row[None, None])[0, 0]
        r += 1
    return dec.result(hyp)


def _greedy(z, mask):
    return int(np.argmax(_masked(z, mask)))


def beam_search(lm: SpeechLM, template: TaskTemplate, conditions, dp: DecodeParams) -> GenerationResult:
    """Length-normalised beam over stream 0; other streams greedy per hypothesis.

    The top ``width`` expansions survive each step; those ending in ``Eos``
    leave the beam as finished. Scores are summed masked log-probabilities
    divided by the number of stream-0 decisions. Ties prefer the earlier
    finish, then the lexicographically smaller token sequence. If nothing
    finishes within ``max_len`` the best unfinished hypothesis is returned
    with ``complete=False``.
    """
    dec = _Decoder(lm, template, conditions, dp)
    cache = DecodeCache(lm.config, 1)
    logits = forward_rows(lm.params, lm.config, cache, dec.delayed_prefix()[None])[:, -1]
    beams = [_Hyp(ModalityState.initial(template), [], [], [])]
    finished: list[_Hyp] = []
    exhausted: list[_Hyp] = []
    r = dec.P
    while beams:
        cands = []
        for b, hyp in enumerate(beams):
            mask = dec.stream0_mask(hyp)
            lp = log_softmax(_masked(logits[b, 0], mask))
            for tok in np.flatnonzero(mask):
                cands.append((hyp.score + float(lp[tok]), b, int(tok)))
        cands.sort(key=lambda c: (-c[0], tuple(beams[c[1]].tokens) + (c[2],)))
        live, parents = [], []
        for score, b, tok in cands[: dp.width]:
            parent = beams[b]
            hyp = _Hyp(parent.state, list(parent.rows), list(parent.tokens), list(parent.kinds), score)
            row = np.empty(dec.Q, dtype=np.int64)
            row[0] = tok
            dec.choose_stream0(hyp, r, tok)
            dec.fill_other_streams(hyp, r, row, logits[b], _greedy)
            hyp.rows.append(row)
            if hyp.finished:
                finished.append(hyp)
            elif hyp.stop_row is not None:
                exhausted.append(hyp)
            else:
                live.append(hyp)
                parents.append(b)
        if not live:
            break
        cache = cache.select(parents)
        rows = np.array([h.rows[-1] for h in live])[:, None, :]
        logits = forward_rows(lm.params, lm.config, cache, rows)[:, 0]
        beams = live
        r += 1

    def norm(h):
        return h.score / len(h.tokens)

    best = min(finished or exhausted, key=lambda h: (-norm(h), len(h.tokens), tuple(h.tokens)))
    best.score = norm(best)
    _complete_tail(lm, dec, best)
    return dec.result(best)


def _complete_tail(lm: SpeechLM, dec: _Decoder, hyp: _Hyp):
    """Fill the delayed rows that trail the last stream-0 decision, greedily."""
    r = dec.P + len(hyp.rows) - 1
    if dec.is_done(hyp, r):
        return
    cache = DecodeCache(lm.config, 1)
    fed = np.concatenate([dec.delayed_prefix(), np.array(hyp.rows, dtype=np.int64)])
    logits = forward_rows(lm.params, lm.config, cache, fed[None])[0, -1]
    while not dec.is_done(hyp, r):
        r += 1
        row = np.full(dec.Q, DELAY_PAD, dtype=np.int64)
        dec.fill_other_streams(hyp, r, row, logits, _greedy)
        hyp.rows.append(row)
        if not dec.is_done(hyp, r):
            logits = forward_rows(lm.params, lm.config, cache, row[None, None])[0, 0]


def detokenize(items: Mapping[str, TokenizedItem], tokenizers: Mapping[str, Tokenizer]) -> dict:
    return {name: tokenizers[it.tokenizer_name].decode(it.tokens) for name, it in items.items()}
