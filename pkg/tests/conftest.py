import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> [title, status, details]
_CRITERIA: dict[int, list] = {}
_RANK = {"PASS": 0, "UNVERIFIED": 1, "FAIL": 2}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when != "call" and rep.passed:
        return
    number, title = marker.args
    if rep.skipped:
        status = "UNVERIFIED"
        detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
    else:
        status = "PASS" if rep.passed else "FAIL"
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    entry = _CRITERIA.setdefault(number, [title, "PASS", []])
    if _RANK[status] > _RANK[entry[1]]:
        entry[1] = status
    if detail:
        entry[2].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, details = _CRITERIA[number]
        line = f"criterion {number:>2}: {status:<10} {title}"
        if details:
            line += f" [{'; '.join(details)}]"
        terminalreporter.write_line(line)
