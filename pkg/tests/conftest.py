"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""
import contextlib
import time

VERDICTS: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number: int, title: str, detail: dict | None = None):
    """Record PASS/FAIL for ``number``; ``detail`` is filled in by the body and echoed."""
    detail = {} if detail is None else detail
    start = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        _record(number, title, "FAIL", detail, time.perf_counter() - start, f"{type(exc).__name__}: {exc}")
        raise
    _record(number, title, "PASS", detail, time.perf_counter() - start)


def _record(number, title, verdict, detail, elapsed, reason=None):
    parts = [f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in detail.items()]
    parts.append(f"time={elapsed:.1f}s")
    if reason:
        parts.append(reason.splitlines()[0][:160])
    line = f"criterion {number:2d} {verdict}  {title}  [{', '.join(parts)}]"
    VERDICTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
