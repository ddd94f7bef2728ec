import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chunkshield.bench import SyntheticSpec, generate_case  # noqa: E402
from chunkshield.image_io import ImageTensor  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gradient_image():
    img, _ = generate_case(SyntheticSpec(base="gradient", patch="none", seed=7))
    return img


@pytest.fixture
def patched_image():
    return generate_case(SyntheticSpec(base="gradient", patch="noise", position=(75, 100), seed=7))


@pytest.fixture
def constant_image():
    return ImageTensor(np.full((224, 224, 3), 128, dtype=np.uint8))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
