import numpy as np
import pytest

_criteria: dict = {}


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    entry = _criteria.setdefault(crit, {"outcomes": [], "names": [], "detail": "", "measured": []})
    if report.when == "call":
        entry["measured"] += [v for k, v in report.user_properties if k == "measured"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if report.skipped:
            outcome = "SKIP"
            if isinstance(report.longrepr, tuple):
                entry["detail"] = report.longrepr[2]
        elif report.failed:
            outcome = "FAIL"
        else:
            outcome = "PASS"
        entry["outcomes"].append(outcome)
        entry["names"].append(report.nodeid.split("::")[-1])


def _verdict(outcomes):
    # any failure fails the criterion; skipped parts are shown but do not mask a pass
    if "FAIL" in outcomes:
        return "FAIL"
    return "PASS" if "PASS" in outcomes else "SKIP"


def pytest_collection_modifyitems(items):
    # tagged at collection so tests skipped during setup are still reported
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", int(marker.args[0])))


@pytest.fixture
def measured(request):
    """Attach a measured value to the criterion summary line."""
    return lambda text: request.node.user_properties.append(("measured", text))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_criteria):
        e = _criteria[crit]
        line = f"criterion {crit:2d}: {_verdict(e['outcomes'])}  ({', '.join(e['names'])})"
        if e["measured"]:
            line += "  " + "; ".join(e["measured"])
        if e["detail"]:
            line += f"  [{e['detail']}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
