import itertools

import pytest

from pfrlab import SchemeParams

GRID_NK = [(2, 1), (3, 1), (3, 2), (4, 2), (4, 3)]
GRID_M = [1, 2, 3]
GRID = [SchemeParams(N, K, M, 2) for (N, K), M in itertools.product(GRID_NK, GRID_M)]
SMALL = [p for p in GRID if p.V <= 3]


def pid(p):
    return f"N{p.N}K{p.K}M{p.M}q{p.q}"


@pytest.fixture
def example():
    return SchemeParams(3, 2, 2, 2)


_ACCEPTANCE = {}


def record_acceptance(number, case, ok, detail=""):
    _ACCEPTANCE.setdefault(number, []).append((case, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        cases = _ACCEPTANCE[number]
        bad = [c for c in cases if not c[1]]
        status = "PASS" if not bad else "FAIL"
        tr.write_line(f"criterion {number}: {status} ({len(cases) - len(bad)}/{len(cases)} cases)")
        for case, _, detail in bad:
            tr.write_line(f"    failed {case}: {detail}")
