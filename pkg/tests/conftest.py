import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    detail = getattr(item, "acceptance_detail", "")
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _results[number] = (title, status, detail)


@pytest.fixture()
def detail(request):
    """Attach a one-line measurement summary to the acceptance report line."""

    def record(text):
        request.node.acceptance_detail = text
        print(text)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance")
    for number in sorted(_results):
        title, status, detail = _results[number]
        line = f"[{number:2d}] {status}  {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
