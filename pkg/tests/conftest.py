import random

import numpy as np
import pytest

from privrec import paillier
from privrec.dataset import synthetic


@pytest.fixture(scope="session")
def toy_keys():
    return paillier.keypair_from_primes(5, 7)


@pytest.fixture(scope="session")
def small_keys():
    rng = random.Random("test-keys")
    inner = paillier.keygen(128, rng)
    outer = paillier.keygen(258, rng)
    return inner, outer


@pytest.fixture(scope="session")
def keys512():
    return paillier.keygen(512, random.Random(1))


@pytest.fixture
def rng():
    return random.Random(12345)


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_ratings():
    return synthetic(40, 30, seed=7)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
