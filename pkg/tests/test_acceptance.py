"""Acceptance gate: each criterion runs its bundled verify fixtures at the
required tolerances and prints one PASS/FAIL line."""
import pytest

from fwlab.verify import load_fixture, run_check

CRITERIA = [
    ("gradient-quasipotential", ["double-well-1d", "double-well-2d"]),
    ("exit-time-slope", ["exit-slope"]),
    ("hierarchy-vs-oracle", ["hierarchy-oracle"]),
    ("tree-theorem-equivalence", ["tree-theorem"]),
    ("averaged-coefficients", ["averaged-coefficients"]),
    ("averaging-principle", ["two-well-averaging"]),
    ("dirichlet-limit", ["two-well-dirichlet"]),
    ("cauchy-predictors", ["cauchy-predictors"]),
    ("huygens-front", ["huygens-front"]),
    ("phantom-dynamics", ["phantom"]),
    ("property-suites", ["properties"]),
]


@pytest.mark.parametrize("label,fixtures", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(label, fixtures, capsys):
    failures, parts = [], []
    for name in fixtures:
        cfg = load_fixture(name)
        checks, timing = run_check(cfg)
        for c in checks:
            if not c.passed:
                failures.append(f"{name}:{c.name} measured={c.measured} expected={c.expected} tol={c.tolerance}")
        if not timing["passed"]:
            failures.append(f"{name}: {timing['elapsed_s']:.1f}s over budget {timing['budget_s']}s")
        parts.append(f"{name} {len(checks)} checks {timing['elapsed_s']:.1f}s")
    with capsys.disabled():
        print(f"\n{'PASS' if not failures else 'FAIL'} {label}: {'; '.join(parts)}")
        for f in failures:
            print(f"    {f}")
    assert not failures, failures
