"""Shared fixtures and the acceptance summary printed after the run."""

import pytest

from carleman_lab.weights import derive_params

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}

# (E_min, E_max, V_inf, R0, s) for the weight certification sweep
PARAM_SETS = [
    (1.0, 2.0, 0.0, 4.0, 0.75),
    (0.5, 1.0, 4.0, 3.01, 0.6),
    (2.0, 3.0, 12.0, 4.0, 0.9),
    (1.0, 1.0, 0.0, 5.0, 1.5),
]
H_SWEEP = [2.0**-k for k in range(1, 9)]


def make_params(E_min, E_max, V_inf, R0, s, h, n=1):
    return derive_params(E_min, E_max, V_inf, R0, s, n, h)


@pytest.fixture
def p_half():
    return make_params(1.0, 2.0, 0.0, 4.0, 0.75, 0.5)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
