import pytest

from rtrrl.verify import injectable_names, run_checks


def test_quick_suite_passes():
    results = run_checks(quick=True)
    assert results and all(r.passed for r in results), [r.line() for r in results if not r.passed]


@pytest.mark.parametrize("name", injectable_names())
def test_injection_fails_exactly_that_property(name):
    results = run_checks(quick=True, inject=name)
    failing = {r.name for r in results if not r.passed}
    if name == "td_convergence":
        assert failing == {"td_convergence_lambda0", "td_convergence_lambda0.9"}
    else:
        assert failing == {name}
