import numpy as np
import pytest
import torch

from textmania.delta_table import build_table
from textmania.encoders import ToyHashBackend
from textmania.prompts import AttributeVocabulary, enumerate_variants, get_template


@pytest.fixture(scope="session")
def toy():
    return ToyHashBackend(dim=64, seed=0)


@pytest.fixture(scope="session")
def vocab():
    return AttributeVocabulary(("red", "blue", "green"), ("small", "big"), "single_and_color_size_pairs")


@pytest.fixture(scope="session")
def toy_table(toy, vocab):
    variants = enumerate_variants(["dog", "cat", "bus"], vocab, get_template("photo"))
    return build_table(toy, variants, store_bases=True)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion; printed in the terminal summary."""

    def record(name: str, ok: bool | None, detail: str) -> None:
        status = {True: "PASS", False: "FAIL", None: "BLOCKED"}[ok]
        line = f"[{status}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
