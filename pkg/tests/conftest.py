import pytest

_verdicts = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    passed, details = _verdicts.get(number, (True, []))
    passed = passed and rep.passed
    details = details + [v for k, v in item.user_properties if k == "detail" and rep.when == "call"]
    _verdicts[number] = (passed, details)
    _verdicts.setdefault("titles", {})[number] = title


def pytest_terminal_summary(terminalreporter):
    titles = _verdicts.get("titles")
    if not titles:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(titles):
        passed, details = _verdicts[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {titles[number]}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
