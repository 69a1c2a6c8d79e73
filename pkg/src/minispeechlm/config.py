"""The experiment configuration: one YAML document drives every stage.

Relative paths are resolved against the directory holding the config file.
Every section rejects keys it does not know. Schema::

    seed: 0                      # model init, batch sampling and decoding
    out: out                     # output root
    synthesize:                  # optional; used by ``prepare --synthesize``
      root: corpus
      n_train: 5000  n_valid: 200  n_test: 500  seed: 0  ...
    tokenizers:
      <name>:
        kind: subword | codec | ssl | codec_ssl
        corpus: PATH             # index file whose contents train the tokenizer
        seed: 0
        vocab_size: 80           # subword
        n_codebooks: 2           # codec, codec_ssl
        codebook_size: 32        # codec, codec_ssl
        n_clusters: 16           # ssl, codec_ssl
    tasks:
      <name>:
        template: builtin:asr | PATH
        data: {train: DIR, valid: DIR, test: DIR}
        weight: 1.0              # fusion sampling weight
        decode: {strategy: greedy, width: 1, k: 1, p: 1.0, temperature: 1.0,
                 min_len: 0, max_len: null, max_len_ratio: 2.0}
    model: {d_model: 64, n_layers: 2, n_heads: 4, ff_mult: 4, max_T: 128,
            interleave: parallel, dtype: float32}
    train:
      steps: 1000  token_budget: 2000  peak_lr: 0.003  warmup_steps: 100
      clip: 1.0  weight_decay: 0.0  valid_every: 0  checkpoint_every: 0
      weight_table: {text: 1.0, ssl: 0.5, codec: 0.25}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .inference import DecodeParams
from .synthetic import SyntheticSpec
from .template import TaskTemplate, builtin_template_path, parse_template_file

TOKENIZER_KINDS = ("subword", "codec", "ssl", "codec_ssl")


class ConfigError(ValueError):
    pass


def _take(section: str, obj: Any, allowed: dict[str, Any], required=()) -> dict:
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}; allowed {sorted(allowed)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(f"{section}: missing required keys {missing}")
    out = dict(allowed)
    out.update(obj)
    return out


@dataclass(frozen=True)
class TokenizerSpec:
    name: str
    kind: str
    corpus: Path
    seed: int = 0
    vocab_size: int = 80
    n_codebooks: int = 2
    codebook_size: int = 32
    n_clusters: int = 16

    def describe(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == "subword":
            d["vocab_size"] = self.vocab_size
        if self.kind in ("codec", "codec_ssl"):
            d.update(n_codebooks=self.n_codebooks, codebook_size=self.codebook_size)
        if self.kind in ("ssl", "codec_ssl"):
            d["n_clusters"] = self.n_clusters
        return d


@dataclass(frozen=True)
class TaskSpec:
    name: str
    template: TaskTemplate
    template_source: str
    data: dict[str, Path]
    weight: float = 1.0
    decode: DecodeParams = DecodeParams()


@dataclass(frozen=True)
class TrainSpec:
    steps: int = 1000
    token_budget: int = 2000
    peak_lr: float = 3e-3
    warmup_steps: int = 100
    clip: float = 1.0
    weight_decay: float = 0.0
    valid_every: int = 0
    checkpoint_every: int = 0
    weight_table: dict[str, float] = field(default_factory=lambda: {"text": 1.0, "ssl": 0.5, "codec": 0.25})


@dataclass(frozen=True)
class ExperimentConfig:
    path: Path | None
    base_dir: Path
    seed: int
    out: Path
    tokenizers: dict[str, TokenizerSpec]
    tasks: dict[str, TaskSpec]
    model: dict[str, Any]
    train: TrainSpec
    synthesize: SyntheticSpec | None = None
    synth_root: Path | None = None

    def with_overrides(self, seed: int | None = None, out: str | Path | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if out is not None:
            cfg = dataclasses.replace(cfg, out=Path(out).resolve())
        return cfg

    def task(self, name: str) -> TaskSpec:
        if name not in self.tasks:
            raise ConfigError(f"unknown task {name!r}; configured tasks: {', '.join(self.tasks)}")
        return self.tasks[name]


_MODEL_KEYS = {"d_model": 64, "n_layers": 2, "n_heads": 4, "ff_mult": 4, "max_T": 128, "interleave": "parallel", "dtype": "float32"}
_DECODE_KEYS = {f.name: f.default for f in dataclasses.fields(DecodeParams) if f.name != "seed"}


def _load_template(source: str, base: Path) -> TaskTemplate:
    if source.startswith("builtin:"):
        return parse_template_file(builtin_template_path(source.split(":", 1)[1]))
    return parse_template_file(base / source)


def parse_config(obj: dict, base_dir: Path, path: Path | None = None) -> ExperimentConfig:
    base_dir = Path(base_dir).resolve()
    top = _take(
        "config",
        obj,
        {"seed": None, "out": "out", "synthesize": None, "tokenizers": None, "tasks": None, "model": None, "train": None},
        required=("seed", "tokenizers", "tasks"),
    )
    if not isinstance(top["seed"], int):
        raise ConfigError("config: seed must be an integer")

    synth, synth_root = None, None
    if top["synthesize"] is not None:
        allowed = {f.name: f.default for f in dataclasses.fields(SyntheticSpec)}
        allowed["root"] = "corpus"
        s = _take("synthesize", top["synthesize"], allowed)
        synth_root = base_dir / s.pop("root")
        synth = SyntheticSpec(**s)

    toks = {}
    if not isinstance(top["tokenizers"], dict) or not top["tokenizers"]:
        raise ConfigError("tokenizers: at least one tokenizer is required")
    for name, t in top["tokenizers"].items():
        t = _take(
            f"tokenizers.{name}",
            t,
            {"kind": None, "corpus": None, "seed": None, "vocab_size": 80, "n_codebooks": 2, "codebook_size": 32, "n_clusters": 16},
            required=("kind", "corpus", "seed"),
        )
        if t["kind"] not in TOKENIZER_KINDS:
            raise ConfigError(f"tokenizers.{name}: kind must be one of {TOKENIZER_KINDS}, got {t['kind']!r}")
        t["corpus"] = base_dir / t["corpus"]
        toks[name] = TokenizerSpec(name=name, **t)

    tasks = {}
    if not isinstance(top["tasks"], dict) or not top["tasks"]:
        raise ConfigError("tasks: at least one task is required")
    for name, t in top["tasks"].items():
        t = _take(f"tasks.{name}", t, {"template": f"builtin:{name}", "data": None, "weight": 1.0, "decode": None}, required=("data",))
        data = _take(f"tasks.{name}.data", t["data"], {"train": None, "valid": None, "test": None})
        decode = _take(f"tasks.{name}.decode", t["decode"], _DECODE_KEYS)
        try:
            template = _load_template(t["template"], base_dir)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"tasks.{name}: cannot load template {t['template']!r}: {exc}") from None
        if template.task_name != name:
            raise ConfigError(f"tasks.{name}: template declares task {template.task_name!r}")
        for spec in template.items:
            if spec.tokenizer_name not in toks:
                raise ConfigError(f"tasks.{name}: template uses unconfigured tokenizer {spec.tokenizer_name!r}")
        weight = float(t["weight"])
        if not weight > 0:
            raise ConfigError(f"tasks.{name}: weight must be > 0")
        tasks[name] = TaskSpec(
            name,
            template,
            t["template"],
            {k: base_dir / v for k, v in data.items() if v is not None},
            weight,
            DecodeParams(**decode),
        )

    model = _take("model", top["model"], _MODEL_KEYS)
    train = _take("train", top["train"], {f.name: f.default for f in dataclasses.fields(TrainSpec) if f.name != "weight_table"} | {"weight_table": None})
    if train["weight_table"] is None:
        train.pop("weight_table")
    else:
        train["weight_table"] = {str(k): float(v) for k, v in train["weight_table"].items()}
    return ExperimentConfig(
        path=path,
        base_dir=base_dir,
        seed=top["seed"],
        out=base_dir / top["out"],
        tokenizers=toks,
        tasks=tasks,
        model=model,
        train=TrainSpec(**train),
        synthesize=synth,
        synth_root=synth_root,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(obj, path.parent, path.resolve())
