import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> [title, outcomes, details]
_CRITERIA = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _CRITERIA.setdefault(number, [title, [], []])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            entry = _CRITERIA[value]
            entry[1].append(report.passed)
    for key, value in report.user_properties:
        if key == "detail":
            crit = dict(report.user_properties).get("criterion")
            if crit is not None:
                _CRITERIA[crit][2].append(value)


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes, details = _CRITERIA[number]
        if not outcomes:
            status = "NOT RUN"
        else:
            status = "PASS" if all(outcomes) else "FAIL"
        line = f"criterion {number:>2} {status:<7} {title}"
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)
