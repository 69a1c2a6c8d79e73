"""Joint vocabulary over special tokens and every registered tokenizer.

Layout is fixed: ``Pad=0, DelayPad=1, Bos=2, Eos=3``, then one task id per
task, then one tokenizer indicator per tokenizer, then one contiguous region
per tokenizer in registration order.
"""
from __future__ import annotations

import bisect
import enum
import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence


class Modality(str, enum.Enum):
    TEXT = "text"
    AUDIO = "audio"
    OTHER = "other"


class SpecialKind(str, enum.Enum):
    PAD = "pad"
    DELAY_PAD = "delay_pad"
    BOS = "bos"
    EOS = "eos"
    TASK = "task"
    INDICATOR = "indicator"


_FIXED = (
    (SpecialKind.PAD, "<pad>"),
    (SpecialKind.DELAY_PAD, "<delay_pad>"),
    (SpecialKind.BOS, "<bos>"),
    (SpecialKind.EOS, "<eos>"),
)

PAD, DELAY_PAD, BOS, EOS = 0, 1, 2, 3


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class SpecialToken:
    kind: SpecialKind
    name: str
    global_id: int


@dataclass(frozen=True)
class VocabRegion:
    tokenizer_name: str
    offset: int
    size: int
    modality: Modality

    @property
    def end(self) -> int:
        return self.offset + self.size

    def __contains__(self, global_id: int) -> bool:
        return self.offset <= global_id < self.end


class Vocabulary:
    """Immutable global id space. Build with :func:`build_joint_vocabulary`."""

    def __init__(self, specials: Sequence[SpecialToken], regions: Sequence[VocabRegion]):
        self.specials = tuple(specials)
        self.regions = tuple(regions)
        self.total_size = len(self.specials) + sum(r.size for r in self.regions)
        self._region_by_name = {r.tokenizer_name: r for r in self.regions}
        self._offsets = [r.offset for r in self.regions]
        self._task_ids = {s.name: s.global_id for s in self.specials if s.kind is SpecialKind.TASK}
        self._indicator_ids = {
            s.name: s.global_id for s in self.specials if s.kind is SpecialKind.INDICATOR
        }
        self._check_layout()

    def _check_layout(self):
        for i, s in enumerate(self.specials):
            if s.global_id != i:
                raise VocabularyError(f"special {s.name!r} has id {s.global_id}, expected {i}")
        expected = len(self.specials)
        for r in self.regions:
            if r.offset != expected or r.size < 1:
                raise VocabularyError(f"region {r.tokenizer_name!r} is not contiguous")
            expected = r.end

    # -- lookups -----------------------------------------------------------

    @property
    def n_specials(self) -> int:
        return len(self.specials)

    @property
    def tokenizer_names(self) -> list[str]:
        return [r.tokenizer_name for r in self.regions]

    @property
    def task_names(self) -> list[str]:
        return list(self._task_ids)

    def region(self, tokenizer_name: str) -> VocabRegion:
        try:
            return self._region_by_name[tokenizer_name]
        except KeyError:
            raise VocabularyError(f"unknown tokenizer {tokenizer_name!r}") from None

    def task_id(self, task_name: str) -> int:
        try:
            return self._task_ids[task_name]
        except KeyError:
            raise VocabularyError(f"unknown task {task_name!r}") from None

    def indicator_id(self, tokenizer_name: str) -> int:
        try:
            return self._indicator_ids[tokenizer_name]
        except KeyError:
            raise VocabularyError(f"unknown tokenizer {tokenizer_name!r}") from None

    def indicator_ids(self) -> dict[str, int]:
        return dict(self._indicator_ids)

    def token_to_global(self, tokenizer_name: str, local_id: int) -> int:
        region = self.region(tokenizer_name)
        if not 0 <= local_id < region.size:
            raise VocabularyError(
                f"local id {local_id} out of range for {tokenizer_name!r} (size {region.size})"
            )
        return region.offset + int(local_id)

    def global_to_region(self, global_id: int) -> tuple[SpecialToken | VocabRegion, int | None]:
        """Classify ``global_id``.

        Returns ``(special, None)`` for special tokens and ``(region, local_id)``
        for tokenizer ids.
        """
        if not 0 <= global_id < self.total_size:
            raise VocabularyError(f"global id {global_id} out of range (size {self.total_size})")
        if global_id < self.n_specials:
            return self.specials[global_id], None
        i = bisect.bisect_right(self._offsets, global_id) - 1
        region = self.regions[i]
        return region, global_id - region.offset

    def to_global(self, descriptor: SpecialToken | VocabRegion, local_id: int | None) -> int:
        """Inverse of :meth:`global_to_region`."""
        if isinstance(descriptor, SpecialToken):
            return descriptor.global_id
        return self.token_to_global(descriptor.tokenizer_name, local_id)

    # -- serialization -----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for s in self.specials:
            lines.append(f"{s.global_id}\t{s.kind.value}\t{s.name}\t-")
        for r in self.regions:
            for local in range(r.size):
                lines.append(f"{r.offset + local}\t{r.modality.value}\t{r.tokenizer_name}\t{local}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        specials: list[SpecialToken] = []
        regions: dict[str, list] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise VocabularyError(f"line {lineno}: expected 4 tab-separated fields")
            gid, kind, name, local = int(parts[0]), parts[1], parts[2], parts[3]
            if kind in SpecialKind._value2member_map_:
                specials.append(SpecialToken(SpecialKind(kind), name, gid))
            else:
                entry = regions.setdefault(name, [gid, 0, Modality(kind)])
                if int(local) != entry[1] or gid != entry[0] + entry[1]:
                    raise VocabularyError(f"line {lineno}: region {name!r} is not contiguous")
                entry[1] += 1
        return cls(specials, [VocabRegion(n, o, s, m) for n, (o, s, m) in regions.items()])

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.to_text() == other.to_text()

    def __repr__(self):
        names = ", ".join(f"{r.tokenizer_name}:{r.size}" for r in self.regions)
        return f"Vocabulary(total_size={self.total_size}, regions=[{names}])"


def build_joint_vocabulary(
    tokenizer_specs: Iterable[tuple[str, int, Modality | str]],
    task_names: Iterable[str],
) -> Vocabulary:
    """Lay out specials then one region per ``(name, local_size, modality)``."""
    tokenizer_specs = [(n, int(s), Modality(m)) for n, s, m in tokenizer_specs]
    task_names = list(task_names)
    _reject_duplicates([n for n, _, _ in tokenizer_specs], "tokenizer")
    _reject_duplicates(task_names, "task")
    for name, size, _ in tokenizer_specs:
        if size < 1:
            raise VocabularyError(f"tokenizer {name!r} has size {size}; must be >= 1")

    specials = [SpecialToken(kind, name, i) for i, (kind, name) in enumerate(_FIXED)]
    for task in task_names:
        specials.append(SpecialToken(SpecialKind.TASK, task, len(specials)))
    for name, _, _ in tokenizer_specs:
        specials.append(SpecialToken(SpecialKind.INDICATOR, name, len(specials)))

    regions = []
    offset = len(specials)
    for name, size, modality in tokenizer_specs:
        regions.append(VocabRegion(name, offset, size, modality))
        offset += size
    return Vocabulary(specials, regions)


def _reject_duplicates(names: list[str], what: str):
    seen = set()
    for n in names:
        if n in seen:
            raise VocabularyError(f"duplicate {what} name {n!r}")
        seen.add(n)
