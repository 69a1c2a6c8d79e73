import shutil
import textwrap

import numpy as np
import pytest
import yaml

from minispeechlm.cli import main
from minispeechlm.config import ConfigError, load_config, parse_config
from minispeechlm.model import load_checkpoint
from minispeechlm.pipeline import StageError, cmd_eval, cmd_infer, cmd_prepare, cmd_train

TINY = textwrap.dedent(
    """\
    seed: 3
    out: out
    synthesize: {root: corpus, n_train: 40, n_valid: 6, n_test: 5, seed: 1}
    tokenizers:
      bpe: {kind: subword, corpus: corpus/data/asr/train/text, seed: 0, vocab_size: 40}
      codec_ssl: {kind: codec_ssl, corpus: corpus/data/asr/train/wav, seed: 0, n_codebooks: 2, codebook_size: 8, n_clusters: 6}
    tasks:
      asr: {data: {train: corpus/data/asr/train, valid: corpus/data/asr/valid, test: corpus/data/asr/test}, decode: {max_len: 20}}
      tts: {data: {train: corpus/data/tts/train, test: corpus/data/tts/test}, decode: {max_len: 20}}
    model: {d_model: 16, n_layers: 1, n_heads: 2, max_T: 64}
    train: {steps: 6, token_budget: 150, warmup_steps: 2, valid_every: 3}
    """
)


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    (root / "exp.yaml").write_text(TINY)
    cfg = load_config(root / "exp.yaml")
    cmd_prepare(cfg, synthesize_corpus=True)
    return root


def fresh(prepared, tmp_path):
    shutil.copytree(prepared, tmp_path / "e")
    return load_config(tmp_path / "e" / "exp.yaml")


def test_unknown_keys_rejected(tmp_path):
    obj = yaml.safe_load(TINY)
    obj["model"]["d_modle"] = 3
    with pytest.raises(ConfigError, match="d_modle"):
        parse_config(obj, tmp_path)
    obj = yaml.safe_load(TINY)
    obj["colour"] = 1
    with pytest.raises(ConfigError, match="colour"):
        parse_config(obj, tmp_path)


def test_template_tokenizer_must_be_configured(tmp_path):
    obj = yaml.safe_load(TINY)
    del obj["tokenizers"]["bpe"]
    with pytest.raises(ConfigError, match="bpe"):
        parse_config(obj, tmp_path)


def test_unknown_task_lists_configured(prepared, capsys):
    rc = main(["infer", "--config", str(prepared / "exp.yaml"), "--task", "mt"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "mt" in err and "asr" in err and "tts" in err


def test_missing_config_exit_code(tmp_path, capsys):
    assert main(["prepare", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_prepare_is_idempotent(prepared):
    cfg = load_config(prepared / "exp.yaml")
    res = cmd_prepare(cfg, synthesize_corpus=True)
    assert res["written"] == []


def test_missing_index_file_names_the_stage(prepared, tmp_path):
    cfg = fresh(prepared, tmp_path)
    (cfg.base_dir / "corpus/data/asr/train/text").unlink()
    with pytest.raises(StageError) as info:
        cmd_prepare(cfg)
    assert info.value.stage.startswith("prepare") and "text" in str(info.value)
    (cfg.base_dir / "corpus/data/tts/test/wav").unlink()
    shutil.copy(prepared / "corpus/data/asr/train/text", cfg.base_dir / "corpus/data/asr/train/text")
    with pytest.raises(StageError) as info:
        cmd_prepare(cfg)
    assert "tts" in info.value.stage and "wav" in str(info.value)


def test_train_log_lines_and_resume_exact(prepared, tmp_path):
    cfg = fresh(prepared, tmp_path)
    straight = cmd_train(cfg)
    log = (cfg.out / "exp/train.log").read_text()
    assert len(log.splitlines()) == 6

    other = cfg.with_overrides(out=tmp_path / "resumed")
    shutil.copytree(cfg.out, other.out, ignore=shutil.ignore_patterns("exp"))
    cmd_train(other, steps=3)
    assert len((other.out / "exp/train.log").read_text().splitlines()) == 3
    resumed = cmd_train(other, resume=True)
    assert (other.out / "exp/train.log").read_text() == log
    assert resumed.step == straight.step == 6
    for k in straight.params:
        np.testing.assert_array_equal(resumed.params[k], straight.params[k])
    assert load_checkpoint(other.out / "exp/last.npz").step == 6


def test_infer_eval_cli(prepared, tmp_path, capsys):
    cfg = fresh(prepared, tmp_path)
    y = str(cfg.path)
    assert main(["train", "--config", y, "--steps", "2"]) == 0
    for task in ("asr", "tts"):
        assert main(["infer", "--config", y, "--task", task]) == 0
        assert main(["eval", "--config", y, "--task", task]) == 0
    out = capsys.readouterr().out
    assert "wer" in out and "frame_mse" in out
    assert (cfg.out / "eval/asr/test/report.json").is_file()
    assert (cfg.out / "eval/tts/test/report.txt").is_file()
    ids = [ln.split()[0] for ln in (cfg.out / "infer/asr/test/text").read_text().splitlines()]
    assert ids == [f"test{i:05d}" for i in range(5)]


def test_eval_of_references_is_zero(prepared, tmp_path):
    cfg = fresh(prepared, tmp_path)
    cmd_train(cfg, steps=1)
    hyp = cfg.out / "infer/asr/test"
    hyp.mkdir(parents=True)
    shutil.copy(cfg.base_dir / "corpus/data/asr/test/text", hyp / "text")
    rep = cmd_eval(cfg, "asr")
    assert rep.metrics["wer"] == 0.0
    assert rep.metrics["perplexity"] > 1


def test_eval_before_infer_fails(prepared, tmp_path):
    cfg = fresh(prepared, tmp_path)
    cmd_train(cfg, steps=1)
    with pytest.raises(StageError, match="run infer first"):
        cmd_eval(cfg, "tts")


def test_infer_before_train_fails(prepared, tmp_path):
    cfg = fresh(prepared, tmp_path)
    with pytest.raises(StageError, match="run train first"):
        cmd_infer(cfg, "asr")
