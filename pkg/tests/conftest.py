import re

from _report import DETAILS

_CRITERION = re.compile(r"test_criterion_(\d+)([a-z]?)_")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" and outcome != "error":
                continue
            m = _CRITERION.search(rep.nodeid)
            if not m or "test_acceptance" not in rep.nodeid:
                continue
            key = f"{int(m.group(1))}{m.group(2)}"
            status = "PASS" if outcome == "passed" else "FAIL"
            detail = "; ".join(DETAILS.get(key, []))
            lines.append(((int(m.group(1)), m.group(2)),
                          f"{status} criterion {key}: {rep.nodeid.split('::')[-1]}"
                          + (f" ({detail})" if detail else "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)
