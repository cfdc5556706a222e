"""Acceptance-criteria summary printed at the end of a test run."""

CRITERIA = {
    1: "gradient correctness",
    2: "assignment matches reference",
    3: "causality invariants",
    4: "mode extrapolation",
    5: "EMTA vs WTA trend",
    6: "rearrangement trend",
    7: "ranking loss reduces inversions",
    8: "metrics match brute force",
    9: "parallel decoding latency trend",
    10: "overfit smoke test",
    11: "joint forbidden pair sanity",
}

_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test checks numbered acceptance criterion n")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes.setdefault(crit, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        seen = _outcomes.get(n)
        if not seen:
            status = "NOT RUN"
        elif any(o == "failed" for o in seen):
            status = "FAIL"
        elif all(o == "passed" for o in seen):
            status = "PASS"
        else:
            status = "SKIPPED"
        tr.write_line(f"criterion {n:>2} {name:<34} {status}")
