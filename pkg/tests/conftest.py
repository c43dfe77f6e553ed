import pytest

_RESULTS_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    results = item.config.stash[_RESULTS_KEY]
    failed = report.failed
    if report.when == "call" or failed or report.skipped:
        prev = results.get(number)
        if prev is None or prev[1] == "PASS":
            status = "FAIL" if failed else ("SKIP" if report.skipped else "PASS")
            detail = dict(item.user_properties).get("detail", "")
            results[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, detail = results[number]
        line = f"criterion {number}: {status}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
