"""Shared fixtures; collects acceptance-criterion outcomes for the terminal summary."""
import time
from contextlib import contextmanager

import pytest

# criterion number -> (title, [(part, passed, detail)])
_ACCEPTANCE: dict[int, tuple[str, list]] = {}


class AcceptanceRecorder:
    @contextmanager
    def check(self, number: int, title: str, part: str, budget_s: float):
        """Record one part of a criterion; the part fails on assertion error or over-budget runtime."""
        info = {}
        t0 = time.perf_counter()
        entry = _ACCEPTANCE.setdefault(number, (title, []))
        try:
            yield info
        except BaseException as e:
            msg = str(e).splitlines()[0] if str(e) else type(e).__name__
            entry[1].append((part, False, f"{_fmt(info)} {msg}".strip()))
            _line(number)
            raise
        elapsed = time.perf_counter() - t0
        ok = elapsed < budget_s
        info["time"] = f"{elapsed:.2f}s/{budget_s:g}s"
        entry[1].append((part, ok, _fmt(info)))
        _line(number)
        assert ok, f"criterion {number} ({part}) took {elapsed:.2f}s, budget {budget_s:g}s"


def _fmt(info: dict) -> str:
    return ", ".join(f"{k}={v}" for k, v in info.items())


def _status(parts) -> str:
    return "PASS" if parts and all(ok for _, ok, _ in parts) else "FAIL"


def _line(number: int) -> str:
    title, parts = _ACCEPTANCE[number]
    line = f"[criterion {number:2d}] {_status(parts)} {title}: " + "; ".join(
        f"{p} {'ok' if ok else 'FAILED'} ({d})" for p, ok, d in parts)
    print(line)
    return line


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, parts = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {_status(parts)}  {title}")
        for p, ok, d in parts:
            terminalreporter.write_line(f"    {'ok    ' if ok else 'FAILED'} {p}: {d}")
