"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_OUTCOMES = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    info = _CRITERIA.get(report.nodeid)
    if info is None:
        return
    number, text = info
    entry = _OUTCOMES.setdefault(number, {"text": text, "ok": True, "cases": []})
    ok = report.outcome == "passed"
    entry["ok"] &= ok
    entry["cases"].append((report.nodeid.split("::")[-1], ok))


_CRITERIA = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA[item.nodeid] = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        entry = _OUTCOMES[number]
        verdict = "PASS" if entry["ok"] else "FAIL"
        tr.write_line(f"criterion {number:2d} {verdict}: {entry['text']}")
        if len(entry["cases"]) > 1:
            for name, ok in entry["cases"]:
                tr.write_line(f"               {'pass' if ok else 'FAIL'}  {name}")
