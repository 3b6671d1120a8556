import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kzsurface import HyperellipticCurve, TorusSurface, compute_A, prepare_state  # noqa: E402


def roots_of_unity(n: int) -> HyperellipticCurve:
    """y^2 = x^n - 1."""
    return HyperellipticCurve(tuple(np.exp(2j * np.pi * k / n) for k in range(n)))


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path_factory, monkeypatch):
    monkeypatch.setenv("KZSURFACE_CACHE_DIR", str(tmp_path_factory.mktemp("cache")))


@pytest.fixture(scope="session")
def state_g1():
    return prepare_state(roots_of_unity(4), {"refinement_level": 0})


@lru_cache(maxsize=None)
def cached_state(n: int, level: int = 0):
    return prepare_state(roots_of_unity(n), {"refinement_level": level})


@pytest.fixture(scope="session")
def state_g2():
    return cached_state(6)


@pytest.fixture(scope="session")
def state_g3():
    return prepare_state(roots_of_unity(8), {"refinement_level": 0})


@pytest.fixture(scope="session")
def tensor_g2(state_g2):
    return compute_A(state_g2)


@pytest.fixture(scope="session")
def tensor_g3(state_g3):
    return compute_A(state_g3)


@pytest.fixture(scope="session")
def torus_state():
    return prepare_state(TorusSurface(1j, 12), {"refinement_level": 0})


ACCEPTANCE_LINES = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
