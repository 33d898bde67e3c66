import pytest

from flashdiff.chip import DEFAULT_GEOMETRY, FlashChip


@pytest.fixture
def small_chip():
    return FlashChip(DEFAULT_GEOMETRY.with_blocks(8))


def page_of(byte: int, size: int = 2048) -> bytes:
    return bytes([byte]) * size


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
