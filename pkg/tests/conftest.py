import pytest

from pulsegate.corpus import load_corpus
from pulsegate.synth import generate_corpus

SEED = 42


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """The default 18-game corpus, generated once per test session."""
    out = tmp_path_factory.mktemp("corpus")
    generate_corpus(18, SEED, out)
    return out


@pytest.fixture(scope="session")
def games(corpus_dir):
    gs = load_corpus(corpus_dir)
    for g in gs:
        g.series  # bin once, shared by every test
    return gs


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    generate_corpus(3, 7, out)
    return out


ACCEPTANCE = []  # (criterion, passed, detail) lines recorded by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n, ok, detail in sorted(ACCEPTANCE):
            terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
