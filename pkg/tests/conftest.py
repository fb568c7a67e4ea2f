"""Shared fixtures and the acceptance-criteria summary.

Acceptance tests register one line per criterion; the summary block prints
them after the run so pass/fail status is visible even with output capture
enabled. Criteria whose test was collected but never registered a result
(errored out, interrupted) are reported as failed.
"""

import pytest

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []

TEST_TO_CRITERION = {
    "test_mmd_oracle_equivalence": "mmd-oracle-equivalence",
    "test_gradient_suite": "gradient-suite",
    "test_detachment": "detachment",
    "test_flow_sanity": "flow-sanity",
    "test_alignment_analog": "alignment-analog",
    "test_structural_consistency": "structural-consistency",
    "test_morphology_suite": "morphology-suite",
    "test_skl_properties": "skl-properties",
    "test_determinism": "determinism",
}

_collected_criteria: list[str] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_collection_modifyitems(config, items):
    for item in items:
        crit = TEST_TO_CRITERION.get(item.name.split("[")[0])
        if crit and crit not in _collected_criteria:
            _collected_criteria.append(crit)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _collected_criteria:
        return
    terminalreporter.section("acceptance criteria")
    seen = set()
    for name, passed, detail in ACCEPTANCE_RESULTS:
        seen.add(name)
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
    for name in _collected_criteria:
        if name not in seen:
            terminalreporter.write_line(f"[FAIL] {name}: no result registered")
