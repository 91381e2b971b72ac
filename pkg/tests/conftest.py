import random
from pathlib import Path

import pytest

from ctxnorm.dataset import Dataset, Document, QaSample

GOLDEN = Path(__file__).parent / "golden"

WORDS = (
    "river mountain city harbor castle forest valley bridge market tower "
    "garden island desert village temple canal meadow palace station library"
).split()


def make_qa_corpus(n_samples=50, n_docs=10, words_per_doc=30, seed=0, answer="Paris"):
    """QA samples whose documents all have exactly ``words_per_doc`` words.

    Each document is two sentences; the gold one mentions the answer.
    """
    rng = random.Random(seed)
    samples = []
    for i in range(n_samples):
        gold_idx = rng.randrange(n_docs)
        docs = []
        for j in range(n_docs):
            ws = [rng.choice(WORDS) for _ in range(words_per_doc)]
            if j == gold_idx:
                ws[3] = answer
            half = words_per_doc // 2
            text = " ".join(ws[:half]) + ". " + " ".join(ws[half:]) + "."
            docs.append(Document(f"q{i:03d}-d{j}", text, j == gold_idx))
        samples.append(QaSample(f"q{i:03d}", f"which capital is mentioned in case {i}?", (answer,), tuple(docs)))
    return Dataset(samples, {"source": "synthetic-test"})


@pytest.fixture(scope="session")
def qa_corpus():
    return make_qa_corpus()


@pytest.fixture
def golden():
    def read(name):
        return (GOLDEN / name).read_text(encoding="utf-8")

    return read


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            name = dict(rep.user_properties).get("criterion")
            if name:
                lines.append((rep.location[:2], f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
