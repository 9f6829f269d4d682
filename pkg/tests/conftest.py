import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            number, title = marker.args
            _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "details": []})


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    number = props.get("criterion")
    if number is None or number not in _CRITERIA:
        return
    _CRITERIA[number]["outcomes"].append(report.outcome)
    if "detail" in props:
        _CRITERIA[number]["details"].append(props["detail"])


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        detail = "; ".join(entry["details"])
        line = f"criterion {number}: {status:<7} {entry['title']}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
