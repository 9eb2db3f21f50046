import pytest

_verdicts = {}
_details = {}


@pytest.fixture
def measured(request):
    """Attach a short summary of measured values to the current criterion."""
    name = request.function.criterion

    def note(text):
        _details[name] = text
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    name = getattr(item.function, "criterion", None)
    if name is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _verdicts[name] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _verdicts.items():
        extra = f"  [{_details[name]}]" if name in _details else ""
        terminalreporter.write_line(f"{verdict}  {name}{extra}")
