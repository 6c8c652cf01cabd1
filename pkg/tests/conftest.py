import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion.

    Usage: ``with criterion(6, "learnability") as note: ...; note("auc=0.71")``.
    The block passes unless it raises.
    """

    class _Recorder:
        def __init__(self, number, title):
            self.number, self.title, self.details = number, title, []

        def __call__(self, text):
            self.details.append(text)

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            status = "PASS" if exc_type is None else "FAIL"
            detail = "; ".join(self.details)
            if exc_type is not None and exc_type is not AssertionError:
                detail = f"{detail}; {exc_type.__name__}: {exc}".lstrip("; ")
            _ACCEPTANCE[self.number] = f"criterion {self.number} [{status}] {self.title}" + (f": {detail}" if detail else "")
            return False

    return _Recorder


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
