"""The four workflow stages. Each reads and writes artifacts under the output root::

    <out>/tokenizers/<name>.txt   trained tokenizer
    <out>/tokenizers/<name>.json  what it was trained from (spec + corpus hash)
    <out>/vocab.txt
    <out>/data/<task>/<split>/data.json
    <out>/exp/last.npz, best.npz, train.log, valid.log
    <out>/infer/<task>/<split>/<target item>   (+ frames/ for audio targets)
    <out>/eval/<task>/<split>/report.json, report.txt
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, TokenizerSpec
from .evaluation import EvalReport, edit_distance_wer, frame_mse_report, nll_sums
from .fusion import FusionSource, FusionSpec, SamplerState, fuse, sample_batch
from .inference import DecodeParams, SpeechLM, detokenize, generate
from .model import ModelConfig, OptimConfig, TrainState, collate, load_checkpoint, save_checkpoint, train_step
from .model.loss import weighted_cross_entropy
from .model.transformer import forward
from .preprocessing import (
    DatasetManifest,
    detect_and_build_vocab,
    file_ref,
    load_manifest,
    read_index_file,
    scan_dataset_folder,
    tokenize_dataset,
)
from .synthetic import synthesize
from .template import Role, assemble_sequence, compute_token_weights
from .tokenizers import (
    CodecSSLModel,
    Tokenizer,
    codec_train,
    load_tokenizer,
    read_frames,
    ssl_train,
    subword_train,
    write_frames,
)
from .vocabulary import Modality, Vocabulary

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _write_if_changed(path: Path, text: str) -> bool:
    if path.is_file() and path.read_text() == text:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return True


# -- prepare --------------------------------------------------------------------


def _corpus_contents(path: Path) -> list[str]:
    return [content for _, content in read_index_file(path).entries]


def _corpus_frames(path: Path) -> np.ndarray:
    return np.concatenate([read_frames(path.parent / c) for c in _corpus_contents(path)])


def train_tokenizer(spec: TokenizerSpec) -> Tokenizer:
    if spec.kind == "subword":
        return subword_train(_corpus_contents(spec.corpus), spec.vocab_size, spec.seed, spec.name)
    frames = _corpus_frames(spec.corpus)
    if spec.kind == "codec":
        return codec_train(frames, spec.n_codebooks, spec.codebook_size, spec.seed, spec.name)
    if spec.kind == "ssl":
        return ssl_train(frames, spec.n_clusters, spec.seed, spec.name)
    codec = codec_train(frames, spec.n_codebooks, spec.codebook_size, spec.seed, spec.name + ".codec")
    ssl = ssl_train(frames, spec.n_clusters, spec.seed, spec.name + ".ssl")
    return CodecSSLModel(spec.name, codec, ssl)


def _corpus_digest(spec: TokenizerSpec) -> str:
    h = hashlib.sha256(spec.corpus.read_bytes())
    if spec.kind != "subword":
        for c in _corpus_contents(spec.corpus):
            h.update((spec.corpus.parent / c).read_bytes())
    return h.hexdigest()


def cmd_prepare(cfg: ExperimentConfig, synthesize_corpus: bool = False) -> dict:
    """Train missing or stale tokenizers, build the vocabulary, write manifests.

    Returns ``{"written": [...], "kept": [...]}`` listing output paths.
    """
    out = cfg.out
    written, kept = [], []

    def emit(path: Path, text: str):
        (written if _write_if_changed(path, text) else kept).append(str(path.relative_to(out)))

    if synthesize_corpus:
        if cfg.synthesize is None:
            raise StageError("prepare", "--synthesize needs a 'synthesize' section in the config")
        synthesize(cfg.synth_root, cfg.synthesize)

    tokenizers: dict[str, Tokenizer] = {}
    for name, spec in cfg.tokenizers.items():
        stage = f"prepare/tokenizer {name}"
        if not spec.corpus.is_file():
            raise StageError(stage, f"training corpus {spec.corpus} does not exist")
        stamp = json.dumps({**spec.describe(), "corpus_sha256": _corpus_digest(spec)}, sort_keys=True) + "\n"
        model_path = out / "tokenizers" / f"{name}.txt"
        stamp_path = out / "tokenizers" / f"{name}.json"
        try:
            if model_path.is_file() and stamp_path.is_file() and stamp_path.read_text() == stamp:
                tokenizers[name] = load_tokenizer(model_path)
            else:
                tokenizers[name] = train_tokenizer(spec)
        except (OSError, ValueError) as exc:
            raise StageError(stage, str(exc)) from None
        emit(model_path, tokenizers[name].to_text())
        emit(stamp_path, stamp)

    try:
        vocab = detect_and_build_vocab([t.template for t in cfg.tasks.values()], tokenizers)
    except ValueError as exc:
        raise StageError("prepare/vocabulary", str(exc)) from None
    vocab_path = out / "vocab.txt"
    emit(vocab_path, vocab.to_text())
    vocab_ref = file_ref(vocab_path, out)
    tok_refs = {n: file_ref(out / "tokenizers" / f"{n}.txt", out) for n in tokenizers}

    for task in cfg.tasks.values():
        for split, folder in task.data.items():
            stage = f"prepare/{task.name}/{split}"
            try:
                scan = scan_dataset_folder(folder, task.template)
                manifest = tokenize_dataset(
                    scan,
                    task.template,
                    tokenizers,
                    vocab,
                    dataset_name=f"{task.name}/{split}",
                    vocabulary_ref=vocab_ref,
                    tokenizer_refs={n: tok_refs[n] for n in task.template.tokenizer_names},
                )
            except (OSError, ValueError) as exc:
                raise StageError(stage, str(exc)) from None
            emit(out / "data" / task.name / split / "data.json", manifest.dumps())
    return {"written": written, "kept": kept}


# -- shared loading ------------------------------------------------------------------


@dataclass
class Artifacts:
    vocab: Vocabulary
    tokenizers: dict[str, Tokenizer]

    @property
    def n_q(self) -> int:
        return max(t.n_streams for t in self.tokenizers.values())

    @property
    def stream_classes(self) -> dict[str, tuple[str, ...]]:
        return {n: t.stream_classes for n, t in self.tokenizers.items()}


def load_artifacts(cfg: ExperimentConfig, stage: str) -> Artifacts:
    vocab_path = cfg.out / "vocab.txt"
    if not vocab_path.is_file():
        raise StageError(stage, f"{vocab_path} not found; run prepare first")
    vocab = Vocabulary.from_text(vocab_path.read_text())
    toks = {}
    for name in cfg.tokenizers:
        path = cfg.out / "tokenizers" / f"{name}.txt"
        if not path.is_file():
            raise StageError(stage, f"{path} not found; run prepare first")
        toks[name] = load_tokenizer(path)
    return Artifacts(vocab, toks)


def manifest_path(cfg: ExperimentConfig, task: str, split: str) -> Path:
    return cfg.out / "data" / task / split / "data.json"


def load_task_manifest(cfg: ExperimentConfig, task: str, split: str, stage: str) -> DatasetManifest:
    path = manifest_path(cfg, task, split)
    if not path.is_file():
        raise StageError(stage, f"{path} not found; run prepare first")
    return load_manifest(path)


def model_config(cfg: ExperimentConfig, art: Artifacts) -> ModelConfig:
    return ModelConfig(vocab_size=art.vocab.total_size, n_q=art.n_q, seed=cfg.seed, **cfg.model)


# -- train -----------------------------------------------------------------------------


def validation_losses(state: TrainState, cfg: ExperimentConfig, art: Artifacts, manifests) -> dict[str, float]:
    """Weighted loss per task over its validation manifest, pooled over the whole set."""
    out = {}
    table = cfg.train.weight_table
    for task, manifest in manifests.items():
        template = cfg.tasks[task].template
        seqs = [
            compute_token_weights(assemble_sequence(template, e.items, art.vocab, state.config.n_q), table, art.stream_classes)
            for e in manifest.examples
        ]
        num = den = 0.0
        for i in range(0, len(seqs), 32):
            grid, mask, w = collate(seqs[i : i + 32], delay=state.config.delay)
            logits = forward(state.params, state.config, grid)
            _, per_cell = weighted_cross_entropy(logits, grid, mask, w)
            wm = np.where(mask[:, 1:], w[:, 1:], 0.0)
            num += float((wm * per_cell).sum())
            den += float(wm.sum())
        out[task] = num / den
    return out


def cmd_train(cfg: ExperimentConfig, resume: bool = False, steps: int | None = None) -> TrainState:
    stage = "train"
    art = load_artifacts(cfg, stage)
    total = cfg.train.steps if steps is None else steps
    exp = cfg.out / "exp"
    exp.mkdir(parents=True, exist_ok=True)
    sources, valid = [], {}
    for name, task in cfg.tasks.items():
        if "train" in task.data:
            sources.append(FusionSource(load_task_manifest(cfg, name, "train", stage), task.weight))
        if "valid" in task.data:
            valid[name] = load_task_manifest(cfg, name, "valid", stage)
    if not sources:
        raise StageError(stage, "no task has a train split")
    templates = {n: t.template for n, t in cfg.tasks.items()}
    try:
        fused = fuse(
            FusionSpec(tuple(sources), cfg.seed), templates, art.vocab, art.n_q,
            cfg.train.weight_table, art.stream_classes,
        )
    except ValueError as exc:
        raise StageError(stage, str(exc)) from None

    last = exp / "last.npz"
    if resume and last.is_file():
        state = load_checkpoint(last)
        sampler = SamplerState.from_json(state.extra["sampler"])
        _truncate_log(exp / "train.log", state.step)
        _truncate_log(exp / "valid.log", state.step)
    else:
        optim = OptimConfig(
            peak_lr=cfg.train.peak_lr,
            warmup_steps=cfg.train.warmup_steps,
            clip=cfg.train.clip,
            weight_decay=cfg.train.weight_decay,
        )
        state = TrainState.create(model_config(cfg, art), optim)
        state.extra = {"best_valid": None, "best_step": None}
        sampler = fused.new_state(cfg.seed)
        for f in ("train.log", "valid.log"):
            (exp / f).write_text("")

    def checkpoint(path):
        state.extra["sampler"] = sampler.to_json()
        save_checkpoint(path, state)

    def run_validation():
        losses = validation_losses(state, cfg, art, valid)
        mean = float(np.mean(list(losses.values())))
        with open(exp / "valid.log", "a") as fh:
            fh.write(f"{state.step} {mean:.6f} " + " ".join(f"{k}={v:.6f}" for k, v in losses.items()) + "\n")
        best = state.extra.get("best_valid")
        if best is None or mean < best:
            state.extra["best_valid"], state.extra["best_step"] = mean, state.step
            checkpoint(exp / "best.npz")

    with open(exp / "train.log", "a", buffering=1) as logf:
        while state.step < total:
            batch = sample_batch(fused, cfg.train.token_budget, sampler)
            grid, mask, w = collate(batch.sequences, delay=state.config.delay)
            try:
                state, info = train_step(state, grid, mask, w, batch.source_tags)
            except ValueError as exc:
                raise StageError(stage, str(exc)) from None
            except RuntimeError as exc:
                raise StageError(stage, str(exc)) from None
            logf.write(f"{state.step} {info['loss']:.6f} {info['lr']:.6g} {info['tokens']}\n")
            ve, ce = cfg.train.valid_every, cfg.train.checkpoint_every
            if valid and ve and state.step % ve == 0 and state.step < total:
                logf.flush()
                run_validation()
            if ce and state.step % ce == 0 and state.step < total:
                checkpoint(last)
    if valid and (not (exp / "best.npz").is_file() or state.extra.get("best_step") != state.step):
        run_validation()
    checkpoint(last)
    return state


def _truncate_log(path: Path, step: int):
    if not path.is_file():
        return
    keep = [ln for ln in path.read_text().splitlines(True) if ln.strip() and int(ln.split()[0]) <= step]
    path.write_text("".join(keep))


# -- infer -----------------------------------------------------------------------------


def load_model(cfg: ExperimentConfig, stage: str, which: str = "best") -> TrainState:
    exp = cfg.out / "exp"
    for name in (which, "last"):
        path = exp / f"{name}.npz"
        if path.is_file():
            return load_checkpoint(path)
    raise StageError(stage, f"no checkpoint in {exp}; run train first")


def cmd_infer(cfg: ExperimentConfig, task: str, split: str = "test", checkpoint: str = "best") -> Path:
    stage = f"infer/{task}/{split}"
    try:
        spec = cfg.task(task)
    except ValueError as exc:
        raise StageError(stage, str(exc)) from None
    art = load_artifacts(cfg, stage)
    manifest = load_task_manifest(cfg, task, split, stage)
    state = load_model(cfg, stage, checkpoint)
    if manifest.vocabulary_hash != art.vocab.sha256():
        raise StageError(stage, "manifest vocabulary differs from the prepared vocabulary")
    lm = SpeechLM.from_tokenizers(state.params, state.config, art.vocab, art.tokenizers)
    out_dir = cfg.out / "infer" / task / split
    out_dir.mkdir(parents=True, exist_ok=True)
    lines: dict[str, list[str]] = {t.item_name: [] for t in spec.template.targets}
    for i, example in enumerate(manifest.examples):
        conditions = {c.item_name: example.items[c.item_name] for c in spec.template.conditions}
        dp = DecodeParams(**{**spec.decode.__dict__, "seed": cfg.seed * 1_000_003 + i})
        result = generate(lm, spec.template, conditions, dp)
        decoded = detokenize(result.items, art.tokenizers)
        for target in spec.template.targets:
            tok = art.tokenizers[target.tokenizer_name]
            value = decoded.get(target.item_name)
            if tok.modality is Modality.AUDIO:
                rel = f"frames/{example.example_id}.{target.item_name}.frames"
                frames = value if value is not None else np.zeros((0, tok.feature_dim))
                (out_dir / "frames").mkdir(exist_ok=True)
                write_frames(out_dir / rel, frames)
                lines[target.item_name].append(f"{example.example_id} {rel}\n")
            else:
                text = " ".join((value or "").split())
                lines[target.item_name].append(f"{example.example_id} {text}\n" if text else f"{example.example_id}\n")
    for item, ls in lines.items():
        (out_dir / item).write_text("".join(ls))
    return out_dir


# -- eval -------------------------------------------------------------------------------


def _read_hyp_index(path: Path) -> dict[str, str]:
    # an empty hypothesis is a bare id on its line
    out = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        parts = line.split(None, 1)
        out[parts[0]] = parts[1] if len(parts) > 1 else ""
    return out


def cmd_eval(cfg: ExperimentConfig, task: str, split: str = "test", checkpoint: str = "best") -> EvalReport:
    stage = f"eval/{task}/{split}"
    try:
        spec = cfg.task(task)
    except ValueError as exc:
        raise StageError(stage, str(exc)) from None
    if split not in spec.data:
        raise StageError(stage, f"task {task!r} has no {split!r} split")
    art = load_artifacts(cfg, stage)
    manifest = load_task_manifest(cfg, task, split, stage)
    infer_dir = cfg.out / "infer" / task / split
    ref_dir = spec.data[split]
    state = load_model(cfg, stage, checkpoint)

    metrics: dict[str, float] = {}
    records = []
    for target in spec.template.targets:
        hyp_path = infer_dir / target.item_name
        if not hyp_path.is_file():
            raise StageError(stage, f"{hyp_path} not found; run infer first")
        hyps = _read_hyp_index(hyp_path)
        refs = read_index_file(ref_dir / target.item_name).as_dict()
        refs = {k: refs[k] for k in (e.example_id for e in manifest.examples) if k in refs}
        try:
            if art.tokenizers[target.tokenizer_name].modality is Modality.AUDIO:
                rep = frame_mse_report(
                    {k: read_frames(infer_dir / v) for k, v in hyps.items()},
                    {k: read_frames(ref_dir / v) for k, v in refs.items()},
                    task,
                )
            else:
                rep = edit_distance_wer(hyps, refs, "word", task)
        except ValueError as exc:
            raise StageError(stage, str(exc)) from None
        prefix = f"{target.item_name}." if len(spec.template.targets) > 1 else ""
        metrics.update({prefix + k: v for k, v in rep.metrics.items()})
        records.extend(rep.records)

    seqs = [assemble_sequence(spec.template, e.items, art.vocab, state.config.n_q) for e in manifest.examples]
    nll, count = nll_sums(state.params, state.config, seqs)
    metrics["perplexity"] = math.exp(nll / count)
    report = EvalReport(task, metrics, records)
    report.save(cfg.out / "eval" / task / split)
    return report
