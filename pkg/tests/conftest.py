import pytest

# criterion number -> (title, outcome, detail)
_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    verdict = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, report.outcome.upper())
    detail = dict(item.user_properties).get("detail", "")
    if number in _CRITERIA:  # parametrised criteria: any failure wins, details join
        _, prev, prev_detail = _CRITERIA[number]
        verdict = prev if prev != "PASS" else verdict
        detail = "; ".join(d for d in (prev_detail, detail) if d)
    _CRITERIA[number] = (title, verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[number]
        line = f"[{number}] {verdict} {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
