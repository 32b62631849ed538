import os
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from surrogate import surrogate_heart_failure  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_DATA = ROOT / "data" / "heart_failure_clinical_records_dataset.csv"

SEEDS = (0, 1, 2, 3, 4)

_acceptance: dict[int, dict] = {}


def canonical_csv() -> Path | None:
    p = Path(os.environ.get("HEART_FAILURE_CSV", DEFAULT_DATA))
    return p if p.is_file() else None


def require_canonical() -> Path:
    p = canonical_csv()
    if p is None:
        pytest.fail(
            "canonical heart-failure CSV not found: set HEART_FAILURE_CSV or place it at "
            f"{DEFAULT_DATA.relative_to(ROOT)} (299 rows, UCI column names)",
            pytrace=False,
        )
    return p


@pytest.fixture(scope="session")
def surrogate():
    return surrogate_heart_failure()


@pytest.fixture(scope="session")
def canonical_runs():
    """Default-grid runs on the real records over five seeds, with and without feature selection."""
    from hfxai import report
    from hfxai.report import RunConfig

    path = require_canonical()
    start = time.perf_counter()
    runs, plain = {}, {}
    for s in SEEDS:
        runs[s] = report.run(RunConfig(str(path), seed=s, explainers=report.EXPLAINERS if s == 0 else ()))
        plain[s] = report.run(RunConfig(str(path), seed=s, feature_selection=False, explainers=()))
    elapsed = time.perf_counter() - start
    for rep in (*runs.values(), *plain.values()):
        assert rep.failure is None, rep.failure
    return runs, plain, elapsed


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    num, title = marker
    entry = _acceptance.setdefault(num, {"title": title, "passed": True, "ran": False, "why": ""})
    if report.when == "call" or report.failed:
        entry["ran"] = True
    if report.failed:
        entry["passed"] = False
        if not entry["why"]:
            entry["why"] = str(report.longrepr).strip().splitlines()[-1][:160]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        rep.acceptance = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_acceptance):
        e = _acceptance[num]
        status = "PASS" if e["passed"] and e["ran"] else "FAIL"
        line = f"criterion {num}: {status}  {e['title']}"
        if status == "FAIL" and e["why"]:
            line += f"  [{e['why']}]"
        tr.write_line(line)
