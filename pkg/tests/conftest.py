import re


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, whatever the outcome."""
    lines = {}
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in getattr(rep, "nodeid", ""):
                continue
            match = re.search(r"test_criterion_(\d+)", rep.nodeid)
            if not match or (rep.when != "call" and outcome != "skipped" and rep.passed):
                continue
            props = dict(getattr(rep, "user_properties", []))
            status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
            lines[int(match.group(1))] = f"criterion {int(match.group(1)):2d}: {status}  {props.get('measured', '')}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
