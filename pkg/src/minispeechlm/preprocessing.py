"""Index-file scanning, offline tokenization and the ``data.json`` manifest."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .template import TaskTemplate, sequence_length
from .tokenizers import TokenizedItem, Tokenizer, TokenizerError, read_frames
from .vocabulary import Modality, Vocabulary, build_joint_vocabulary

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class PreprocessError(ValueError):
    pass


@dataclass
class IndexFile:
    item_name: str
    entries: list[tuple[str, str]]
    path: Path | None = None

    @property
    def ids(self) -> list[str]:
        return [e for e, _ in self.entries]

    def as_dict(self) -> dict[str, str]:
        return dict(self.entries)


def parse_index_text(text: str, item_name: str, source: str = "<string>") -> IndexFile:
    """Each non-blank line is ``example-id content``; the first whitespace run separates them."""
    entries = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise PreprocessError(f"{source}:{lineno}: malformed line, expected 'example-id content'")
        example_id, content = parts
        if example_id in seen:
            raise PreprocessError(
                f"{source}:{lineno}: duplicate example id {example_id!r} (first on line {seen[example_id]})"
            )
        seen[example_id] = lineno
        entries.append((example_id, content))
    return IndexFile(item_name, entries)


def read_index_file(path, item_name: str | None = None) -> IndexFile:
    path = Path(path)
    index = parse_index_text(path.read_text(), item_name or path.name, source=str(path))
    index.path = path
    return index


def write_index_file(path, entries: Iterable[tuple[str, str]]) -> None:
    Path(path).write_text("".join(f"{i} {c}\n" for i, c in entries))


@dataclass
class ScanResult:
    indexes: dict[str, IndexFile]
    # example id -> item names whose index file lacks it
    mismatches: dict[str, list[str]]
    folder: Path

    def shared_ids(self, template: TaskTemplate) -> list[str]:
        first = self.indexes[template.conditions[0].item_name]
        return [i for i in first.ids if i not in self.mismatches]


def scan_dataset_folder(path, template: TaskTemplate) -> ScanResult:
    folder = Path(path)
    if not folder.is_dir():
        raise PreprocessError(f"dataset folder {folder} does not exist")
    indexes = {}
    for spec in template.items:
        file = folder / spec.item_name
        if not file.is_file():
            raise PreprocessError(f"{folder}: missing index file for item {spec.item_name!r}")
        indexes[spec.item_name] = read_index_file(file, spec.item_name)

    id_sets = {name: set(ix.ids) for name, ix in indexes.items()}
    mismatches: dict[str, list[str]] = {}
    for ix in indexes.values():
        for example_id in ix.ids:
            if example_id in mismatches:
                continue
            missing = [n for n in indexes if example_id not in id_sets[n]]
            if missing:
                mismatches[example_id] = missing
    for example_id, missing in mismatches.items():
        log.warning("%s: example %s is missing from %s", folder, example_id, ", ".join(missing))
    return ScanResult(indexes, mismatches, folder)


# -- manifest -----------------------------------------------------------------


@dataclass
class ManifestExample:
    example_id: str
    items: dict[str, TokenizedItem]
    length: int

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "items": {k: v.to_json() for k, v in self.items.items()},
            "length": self.length,
        }


@dataclass
class DatasetManifest:
    dataset_name: str
    task_name: str
    vocabulary_ref: dict
    tokenizer_refs: dict[str, dict]
    examples: list[ManifestExample]
    rejects: list[dict] = field(default_factory=list)
    unaligned: dict[str, list[str]] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def vocabulary_hash(self) -> str:
        return self.vocabulary_ref["sha256"]

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dataset_name": self.dataset_name,
            "task_name": self.task_name,
            "vocabulary": self.vocabulary_ref,
            "tokenizers": self.tokenizer_refs,
            "examples": [e.to_json() for e in self.examples],
            "rejects": self.rejects,
            "unaligned": self.unaligned,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise PreprocessError(f"unsupported manifest schema version {obj.get('schema_version')}")
        examples = [
            ManifestExample(
                e["example_id"],
                {k: TokenizedItem.from_json(v) for k, v in e["items"].items()},
                e["length"],
            )
            for e in obj["examples"]
        ]
        return cls(
            obj["dataset_name"],
            obj["task_name"],
            obj["vocabulary"],
            obj["tokenizers"],
            examples,
            obj.get("rejects", []),
            obj.get("unaligned", {}),
        )


def load_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_json(json.loads(Path(path).read_text()))


def file_ref(path, root=None) -> dict:
    """``{"path", "sha256"}``; ``path`` is relative to ``root`` when given."""
    path = Path(path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    shown = path.relative_to(root) if root is not None else path
    return {"path": shown.as_posix(), "sha256": digest}


def tokenize_content(tokenizer: Tokenizer, content: str, base_dir: Path | None) -> TokenizedItem:
    if tokenizer.modality is Modality.AUDIO:
        path = Path(content)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            frames = read_frames(path)
        except OSError as exc:
            raise TokenizerError(f"cannot read frames from {path}: {exc.strerror}") from None
        return tokenizer.encode(frames)
    return tokenizer.encode(content)


def tokenize_dataset(
    scan: ScanResult,
    template: TaskTemplate,
    tokenizers: Mapping[str, Tokenizer],
    vocab: Vocabulary,
    dataset_name: str = "",
    vocabulary_ref: dict | None = None,
    tokenizer_refs: dict | None = None,
) -> DatasetManifest:
    """Tokenize every aligned example; failures are listed in ``rejects``."""
    for spec in template.items:
        if spec.tokenizer_name not in tokenizers:
            raise PreprocessError(f"no trained tokenizer {spec.tokenizer_name!r}")
        vocab.region(spec.tokenizer_name)
    contents = {name: ix.as_dict() for name, ix in scan.indexes.items()}

    examples, rejects = [], []
    for example_id in scan.shared_ids(template):
        items = {}
        try:
            for spec in template.items:
                tok = tokenizers[spec.tokenizer_name]
                base = scan.indexes[spec.item_name].path
                items[spec.item_name] = tokenize_content(
                    tok, contents[spec.item_name][example_id], base.parent if base else scan.folder
                )
        except TokenizerError as exc:
            rejects.append({"example_id": example_id, "item": spec.item_name, "reason": str(exc)})
            log.warning("rejected %s/%s: %s", dataset_name, example_id, exc)
            continue
        length = sequence_length(template, {k: v.length for k, v in items.items()})
        examples.append(ManifestExample(example_id, items, length))

    return DatasetManifest(
        dataset_name=dataset_name,
        task_name=template.task_name,
        vocabulary_ref=vocabulary_ref or {"path": "", "sha256": vocab.sha256()},
        tokenizer_refs=tokenizer_refs or {},
        examples=examples,
        rejects=rejects,
        unaligned=dict(sorted(scan.mismatches.items())),
    )


def detect_and_build_vocab(
    templates: Iterable[TaskTemplate], tokenizers: Mapping[str, Tokenizer]
) -> Vocabulary:
    """Joint vocabulary over every tokenizer the templates name, in first-use order."""
    templates = list(templates)
    names: list[str] = []
    for template in templates:
        for name in template.tokenizer_names:
            if name not in tokenizers:
                raise PreprocessError(
                    f"template {template.task_name!r} names unregistered tokenizer {name!r}"
                )
            if name not in names:
                names.append(name)
    specs = [(n, tokenizers[n].vocab_size, tokenizers[n].modality) for n in names]
    tasks = list(dict.fromkeys(t.task_name for t in templates))
    return build_joint_vocabulary(specs, tasks)
