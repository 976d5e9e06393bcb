import pytest

from lawprompt import corpus
from lawprompt.knowledge import Lexicon


@pytest.fixture(scope="session")
def toy3():
    spec = corpus.separable_spec(3, 30)
    return corpus.generate_toy_corpus(spec, seed=0), Lexicon(corpus.toy_lexicon(spec))


@pytest.fixture(scope="session")
def tiny_vocab():
    return corpus.build_vocab_from_texts(["盗窃诈骗抢劫某人于家中窃得财物", "abc ,"])


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


# filled by tests/test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
