"""Task templates and multi-stream training-sequence assembly.

A sequence is laid out row by row as::

    [Bos] [TaskId] ([Indicator] item tokens...) per condition, then per target [Eos]

Special tokens and single-stream items occupy stream 0, with ``Pad`` in the
remaining streams. Loss is carried by target item tokens, by the indicators
that open the second and later targets (they mark where the previous target
ends) and by ``Eos``. The first target's indicator is forced at inference
time and carries none.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .tokenizers import TokenizedItem
from .vocabulary import BOS, EOS, PAD, Vocabulary


class TemplateError(ValueError):
    pass


class Role(str, enum.Enum):
    CONDITION = "condition"
    TARGET = "target"


@dataclass(frozen=True)
class DataItemSpec:
    item_name: str
    tokenizer_name: str
    role: Role


@dataclass(frozen=True)
class TaskTemplate:
    task_name: str
    conditions: tuple[DataItemSpec, ...]
    targets: tuple[DataItemSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.task_name:
            raise TemplateError("template has no task name")
        if not self.conditions:
            raise TemplateError(f"template {self.task_name!r} has no conditions")
        if not self.targets:
            raise TemplateError(f"template {self.task_name!r} has no targets")
        seen = set()
        for spec in self.items:
            if spec.item_name in seen:
                raise TemplateError(f"duplicate item name {spec.item_name!r}")
            seen.add(spec.item_name)

    @property
    def items(self) -> tuple[DataItemSpec, ...]:
        return self.conditions + self.targets

    @property
    def tokenizer_names(self) -> list[str]:
        return list(dict.fromkeys(s.tokenizer_name for s in self.items))

    def to_text(self) -> str:
        lines = [f"task: {self.task_name}"]
        lines += [f"{s.role.value}: {s.item_name} {s.tokenizer_name}" for s in self.items]
        return "\n".join(lines) + "\n"


def parse_template(text: str, source: str = "<string>") -> TaskTemplate:
    """Parse ``task:``, ``condition: <item> <tokenizer>`` and ``target:`` lines."""
    task = None
    specs = {Role.CONDITION: [], Role.TARGET: []}
    names: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        key, fields = key.strip(), value.split()
        if not sep:
            raise TemplateError(f"{source}:{lineno}: expected 'key: value'")
        if key == "task":
            if len(fields) != 1:
                raise TemplateError(f"{source}:{lineno}: 'task:' takes one name")
            if task is not None:
                raise TemplateError(f"{source}:{lineno}: task declared twice")
            task = fields[0]
        elif key in ("condition", "target"):
            if len(fields) != 2:
                raise TemplateError(f"{source}:{lineno}: '{key}:' takes '<item> <tokenizer>'")
            item, tok = fields
            if item in names:
                raise TemplateError(
                    f"{source}:{lineno}: duplicate item name {item!r} (first on line {names[item]})"
                )
            names[item] = lineno
            role = Role(key)
            specs[role].append(DataItemSpec(item, tok, role))
        else:
            raise TemplateError(f"{source}:{lineno}: unknown declaration {key!r}")
    if task is None:
        raise TemplateError(f"{source}: no 'task:' declaration")
    return TaskTemplate(task, tuple(specs[Role.CONDITION]), tuple(specs[Role.TARGET]))


def parse_template_file(path) -> TaskTemplate:
    path = Path(path)
    return parse_template(path.read_text(), source=str(path))


def builtin_template_path(task_name: str) -> Path:
    return Path(__file__).parent / "templates" / f"{task_name}.tmpl"


# -- sequences --------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    """Rows ``[start, end)``; ``name`` is a tokenizer name or a special token name."""

    start: int
    end: int
    name: str
    item_name: str | None = None
    role: Role | None = None


@dataclass(eq=False)
class MultiStreamSequence:
    grid: np.ndarray
    loss_mask: np.ndarray
    weights: np.ndarray
    spans: list[Span] = field(default_factory=list)
    task_name: str = ""

    @property
    def length(self) -> int:
        return self.grid.shape[0]

    @property
    def n_q(self) -> int:
        return self.grid.shape[1]

    def item_spans(self, role: Role | None = None) -> list[Span]:
        return [s for s in self.spans if s.item_name is not None and (role is None or s.role is role)]

    def __eq__(self, other):
        return (
            isinstance(other, MultiStreamSequence)
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.loss_mask, other.loss_mask)
            and np.array_equal(self.weights, other.weights)
            and self.spans == other.spans
            and self.task_name == other.task_name
        )


def sequence_length(template: TaskTemplate, item_lengths: Mapping[str, int]) -> int:
    """Row count of the assembled sequence: ``3 + M + N + sum of item lengths``."""
    return 3 + len(template.items) + sum(item_lengths[s.item_name] for s in template.items)


def _lay_out(template, specs, items, vocab, n_q, close: bool):
    lengths = []
    for spec in specs:
        if spec.item_name not in items:
            raise TemplateError(f"item {spec.item_name!r} missing for task {template.task_name!r}")
        item = items[spec.item_name]
        region = vocab.region(spec.tokenizer_name)
        if item.n_streams > n_q:
            raise TemplateError(
                f"item {spec.item_name!r} has {item.n_streams} streams but n_q is {n_q}"
            )
        if item.tokens.size and (item.tokens.min() < 0 or item.tokens.max() >= region.size):
            raise TemplateError(f"item {spec.item_name!r} has ids outside {spec.tokenizer_name!r}")
        lengths.append(item.length)

    T = 2 + len(specs) + sum(lengths) + int(close)
    grid = np.full((T, n_q), PAD, dtype=np.int64)
    mask = np.zeros((T, n_q), dtype=bool)
    spans = [Span(0, 1, "<bos>"), Span(1, 2, f"<task:{template.task_name}>")]
    grid[0, 0] = BOS
    grid[1, 0] = vocab.task_id(template.task_name)
    t = 2
    n_targets = 0
    for spec, length in zip(specs, lengths):
        item = items[spec.item_name]
        grid[t, 0] = vocab.indicator_id(spec.tokenizer_name)
        is_target = spec.role is Role.TARGET
        if is_target:
            mask[t, 0] = n_targets > 0
            n_targets += 1
        spans.append(Span(t, t + 1, f"<indicator:{spec.tokenizer_name}>"))
        t += 1
        k = item.n_streams
        grid[t : t + length, :k] = item.tokens + vocab.region(spec.tokenizer_name).offset
        if is_target:
            mask[t : t + length, :k] = True
        spans.append(Span(t, t + length, spec.tokenizer_name, spec.item_name, spec.role))
        t += length
    if close:
        grid[t, 0] = EOS
        mask[t, 0] = True
        spans.append(Span(t, t + 1, "<eos>"))
    return grid, mask, spans


def assemble_sequence(
    template: TaskTemplate,
    items: Mapping[str, TokenizedItem],
    vocab: Vocabulary,
    n_q: int,
) -> MultiStreamSequence:
    """Splice conditions then targets into a ``T x n_q`` grid of global ids.

    Weights start as the loss mask cast to float; see :func:`compute_token_weights`.
    """
    grid, mask, spans = _lay_out(template, template.items, items, vocab, n_q, close=True)
    return MultiStreamSequence(grid, mask, mask.astype(np.float64), spans, template.task_name)


def assemble_prefix(template, conditions, vocab, n_q) -> np.ndarray:
    grid, _, _ = _lay_out(template, template.conditions, conditions, vocab, n_q, close=False)
    return grid


def compute_token_weights(
    seq: MultiStreamSequence,
    weight_table: Mapping[str, float],
    stream_classes: Mapping[str, Sequence[str]] | None = None,
) -> MultiStreamSequence:
    """Fill per-cell loss weights from a table keyed by stream class.

    ``stream_classes`` maps a tokenizer name to the table key of each of its
    streams (a Codec_SSL tokenizer maps to ``("ssl", "codec", ...)``). A
    tokenizer without an entry uses its own name for every stream. Masked
    special tokens get weight 1.
    """
    stream_classes = stream_classes or {}
    weights = seq.loss_mask.astype(np.float64)
    for span in seq.item_spans(Role.TARGET):
        classes = list(stream_classes.get(span.name, (span.name,)))
        for q in range(seq.n_q):
            col = seq.loss_mask[span.start : span.end, q]
            if not col.any():
                continue
            key = classes[min(q, len(classes) - 1)]
            if key not in weight_table:
                raise TemplateError(
                    f"no loss weight for {key!r} (target {span.item_name!r}, stream {q})"
                )
            weights[span.start : span.end, q] = np.where(col, float(weight_table[key]), 0.0)
    return replace(seq, weights=weights)
