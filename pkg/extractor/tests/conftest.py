import contextlib
import subprocess
import sys

ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        ACCEPTANCE_RESULTS.append((name, "FAIL"))
        raise
    ACCEPTANCE_RESULTS.append((name, "PASS"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria (secondary)")
    for name, status in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status}  {name}")


def curator_validate(bundle_dir):
    """Validate through the engine's CLI, the external interface boundary."""
    return subprocess.run(
        [sys.executable, "-m", "curator.cli", "validate", str(bundle_dir)],
        capture_output=True,
        text=True,
    )
