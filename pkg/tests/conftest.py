import numpy as np
import pytest

from minispeechlm.template import parse_template_file, builtin_template_path
from minispeechlm.tokenizers import TokenizedItem
from minispeechlm.vocabulary import Modality, build_joint_vocabulary


@pytest.fixture
def asr_template():
    return parse_template_file(builtin_template_path("asr"))


@pytest.fixture
def templates():
    return {t: parse_template_file(builtin_template_path(t)) for t in ("asr", "tts", "textlm", "audiolm")}


def toy_vocab(text_size=10, audio_size=3 * 4, tasks=("asr", "tts", "textlm", "audiolm")):
    return build_joint_vocabulary(
        [("bpe", text_size, Modality.TEXT), ("codec_ssl", audio_size, Modality.AUDIO)], list(tasks)
    )


def text_item(ids):
    return TokenizedItem("bpe", np.asarray(ids, dtype=np.int64).reshape(-1, 1))


def audio_item(rows):
    return TokenizedItem("codec_ssl", np.asarray(rows, dtype=np.int64))


# -- acceptance summary: one line per criterion -------------------------------

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        _ACCEPTANCE.append((marker.args[0], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}" + (f"  ({detail})" if detail else ""))
