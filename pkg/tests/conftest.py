import numpy as np
import pytest

from dftsotfs.lattice import FrameParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small():
    return FrameParams(8, 4, 1.92e6, cp_len=2)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)



_VERDICTS_KEY = pytest.StashKey[dict]()


class Verdicts:
    """Per-criterion results of the acceptance suite; a criterion passes only
    when every recorded part passes."""

    def __init__(self):
        self.parts: dict[int, list[tuple[str, bool, str]]] = {}

    def check(self, criterion: int, part: str, ok: bool, detail: str) -> None:
        self.parts.setdefault(criterion, []).append((part, bool(ok), detail))
        assert ok, f"criterion {criterion} ({part}): {detail}"

    def lines(self) -> list[str]:
        out = []
        for c in sorted(self.parts):
            parts = self.parts[c]
            status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
            body = "; ".join(f"{name} {'ok' if ok else 'FAIL'} ({detail})" for name, ok, detail in parts)
            out.append(f"criterion {c:2d}: {status}  {body}")
        return out


@pytest.fixture(scope="session")
def verdicts(request):
    return request.config.stash.setdefault(_VERDICTS_KEY, Verdicts())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    v = config.stash.get(_VERDICTS_KEY, None)
    if v is not None and v.parts:
        terminalreporter.section("acceptance criteria")
        for line in v.lines():
            terminalreporter.write_line(line)
