"""Edit-distance error rates, teacher-forced perplexity and frame-space MSE."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model.config import ModelConfig
from .model.loss import NoSupervisionError, weighted_cross_entropy
from .model.train import collate
from .model.transformer import forward
from .preprocessing import DatasetManifest, IndexFile
from .template import TaskTemplate, assemble_sequence
from .tokenizers.frames import as_frames
from .vocabulary import Vocabulary

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


@dataclass
class EvalRecord:
    example_id: str
    hypothesis: str
    reference: str
    value: float | None
    detail: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    task_name: str
    metrics: dict[str, float]
    records: list[EvalRecord]

    def to_json(self) -> dict:
        return {
            "task_name": self.task_name,
            "metrics": self.metrics,
            "records": [
                {
                    "example_id": r.example_id,
                    "hypothesis": r.hypothesis,
                    "reference": r.reference,
                    "value": r.value,
                    **({"detail": r.detail} if r.detail else {}),
                }
                for r in self.records
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    def summary(self) -> str:
        lines = [f"task {self.task_name}"]
        for k in sorted(self.metrics):
            lines.append(f"{k} {self.metrics[k]:.6g}")
        lines.append(f"examples {len(self.records)}")
        return "\n".join(lines) + "\n"

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.dumps())
        (out / "report.txt").write_text(self.summary())


def edit_distance(hyp: Sequence, ref: Sequence) -> EditCounts:
    """Levenshtein alignment of ``hyp`` against ``ref`` with unit costs.

    Among minimal alignments the backtrace prefers substitution, then
    deletion, then insertion, so the split into S/D/I is deterministic.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    counts = EditCounts()
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            counts.substitutions += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            counts.deletions += 1
            i -= 1
        else:
            counts.insertions += 1
            j -= 1
    return counts


def split_units(text: str, unit: str) -> list[str]:
    # words: whitespace runs, no normalisation beyond trimming
    if unit == "word":
        return text.split()
    if unit == "char":
        return list(text.strip())
    raise EvaluationError(f"unknown unit {unit!r}, expected 'word' or 'char'")


def _as_mapping(index) -> dict[str, str]:
    if isinstance(index, IndexFile):
        return index.as_dict()
    return dict(index)


def edit_distance_wer(hyps, refs, unit: str = "word", task_name: str = "asr") -> EvalReport:
    """Corpus error rate ``sum(S+D+I) / sum(len(ref))`` over examples.

    ``hyps`` and ``refs`` are index files or ``id -> text`` mappings with equal
    id sets. Examples with an empty reference get a record with value ``None``
    and are left out of both sums.
    """
    hyps, refs = _as_mapping(hyps), _as_mapping(refs)
    if set(hyps) != set(refs):
        only_h = sorted(set(hyps) - set(refs))[:5]
        only_r = sorted(set(refs) - set(hyps))[:5]
        raise EvaluationError(f"id mismatch: hypothesis-only {only_h}, reference-only {only_r}")
    name = "wer" if unit == "word" else "cer"
    records, errors, total = [], 0, 0
    tally = EditCounts()
    for example_id in sorted(refs):
        h, r = split_units(hyps[example_id], unit), split_units(refs[example_id], unit)
        if not r:
            log.warning("example %s has an empty reference, excluded from %s", example_id, name)
            records.append(EvalRecord(example_id, hyps[example_id], refs[example_id], None, {"error": "empty reference"}))
            continue
        c = edit_distance(h, r)
        tally.substitutions += c.substitutions
        tally.deletions += c.deletions
        tally.insertions += c.insertions
        errors += c.errors
        total += len(r)
        records.append(
            EvalRecord(
                example_id,
                hyps[example_id],
                refs[example_id],
                c.errors / len(r),
                {"S": c.substitutions, "D": c.deletions, "I": c.insertions, "N": len(r)},
            )
        )
    metrics = {
        name: errors / total if total else float("nan"),
        "substitutions": float(tally.substitutions),
        "deletions": float(tally.deletions),
        "insertions": float(tally.insertions),
        "ref_units": float(total),
    }
    return EvalReport(task_name, metrics, records)


def nll_sums(params, config: ModelConfig, sequences, batch_size: int = 32) -> tuple[float, float]:
    """Summed masked negative log-likelihood and supervised cell count, all weights 1."""
    total_nll, count = 0.0, 0.0
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        grid, mask, _ = collate(chunk, delay=config.delay)
        logits = forward(params, config, grid)
        try:
            _, per_cell = weighted_cross_entropy(logits, grid, mask, mask.astype(np.float64))
        except NoSupervisionError:
            continue
        total_nll += float(per_cell.sum())
        count += float(mask[:, 1:].sum())
    return total_nll, count


def perplexity(
    params,
    config: ModelConfig,
    manifest: DatasetManifest,
    template: TaskTemplate,
    vocab: Vocabulary,
) -> float:
    """``exp`` of the mean masked NLL under teacher forcing. The loss-weight table is ignored."""
    if manifest.vocabulary_hash != vocab.sha256():
        raise EvaluationError("manifest and model vocabularies differ")
    seqs = [assemble_sequence(template, e.items, vocab, config.n_q) for e in manifest.examples]
    nll, count = nll_sums(params, config, seqs)
    if count == 0:
        raise NoSupervisionError("no supervised cells to score")
    return math.exp(nll / count)


def frame_mse(hyp, ref, align: str = "truncate") -> tuple[float, float]:
    """MSE over the overlapping prefix, and ``len(hyp) / len(ref)``."""
    if align != "truncate":
        raise EvaluationError(f"unknown alignment {align!r}")
    h, r = as_frames(hyp), as_frames(ref)
    if h.shape[1] != r.shape[1]:
        raise EvaluationError(f"feature dims differ: {h.shape[1]} vs {r.shape[1]}")
    n = min(len(h), len(r))
    ratio = len(h) / len(r) if len(r) else float("inf")
    if n == 0:
        return float("nan"), ratio
    diff = h[:n].astype(np.float64) - r[:n].astype(np.float64)
    return float(np.mean(diff * diff)), ratio


def frame_mse_report(
    hyps: Mapping[str, np.ndarray], refs: Mapping[str, np.ndarray], task_name: str = "tts"
) -> EvalReport:
    """Per-example frame MSE; the corpus value is the mean over examples.

    Also reports the variance of all reference frames (about their global
    mean) and the ratio ``frame_mse / ref_variance``.
    """
    if set(hyps) != set(refs):
        raise EvaluationError("id mismatch between hypothesis and reference frames")
    records, values, ratios = [], [], []
    for example_id in sorted(refs):
        mse, ratio = frame_mse(hyps[example_id], refs[example_id])
        records.append(EvalRecord(example_id, f"{len(hyps[example_id])} frames", f"{len(refs[example_id])} frames", mse, {"length_ratio": ratio}))
        if not math.isnan(mse):
            values.append(mse)
            ratios.append(ratio)
    allref = np.concatenate([as_frames(refs[k]) for k in sorted(refs)]).astype(np.float64)
    var = float(np.mean((allref - allref.mean(axis=0)) ** 2))
    mse = float(np.mean(values)) if values else float("nan")
    metrics = {
        "frame_mse": mse,
        "ref_variance": var,
        "relative_mse": mse / var if var > 0 else float("nan"),
        "mean_length_ratio": float(np.mean(ratios)) if ratios else float("nan"),
    }
    return EvalReport(task_name, metrics, records)
