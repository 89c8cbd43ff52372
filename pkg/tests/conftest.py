"""Acceptance reporting: one PASS/FAIL line per criterion at the end of the run."""
import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.fixture
def detail(request):
    """Call with a short string to attach measured values to the criterion line."""
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        return [].append
    return _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "ok": None, "notes": []})["notes"].append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "ok": None, "notes": []})
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["ok"] = rep.passed and entry["ok"] is not False
        line = f"ACCEPTANCE {marker.args[0]:>2d} {'PASS' if entry['ok'] else 'FAIL'}  {marker.args[1]}"
        if entry["notes"]:
            line += ": " + "; ".join(entry["notes"])
        entry["line"] = line


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[k].get("line", f"ACCEPTANCE {k:>2d} NOT RUN  {_RESULTS[k]['title']}"))
