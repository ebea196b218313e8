import re

import torch

torch.set_num_threads(1)

_CRITERION_RE = re.compile(r"test_criterion_(\d+[a-z]?)")
_results: dict[str, tuple[bool, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION_RE.search(report.nodeid)
    if m and report.when == "call":
        label = m.group(1)
        _results[label] = (report.passed, report.nodeid.split("::")[-1])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    def sort_key(item):
        num = re.match(r"(\d+)", item[0]).group(1)
        return (int(num), item[0])
    for label, (passed, name) in sorted(_results.items(), key=sort_key):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {label:>3}: {status}  ({name})")
