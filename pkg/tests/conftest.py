import numpy as np
import pytest

from mmgcn import RunConfig, SynthSpec, synthesize_corpus

_VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; fails the test when ``ok`` is false."""

    def record(label: str, ok: bool, detail: str = "") -> None:
        _VERDICTS.append((label, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    return synthesize_corpus(
        SynthSpec(num_dialogues=4, len_range=(3, 5), num_classes=3, dims={"a": 3, "v": 2, "t": 4}, seed=5)
    )


@pytest.fixture
def tiny_config():
    return RunConfig(d_h=4, d_s=2, num_layers=2, dropout=0.0, epochs=2, val_fraction=0.0)
