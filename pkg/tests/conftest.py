import pytest

from claimsnet.simulator import DelaySpec, SimulationConfig, simulate_portfolio


def desk_config(seed=0, **changes):
    base = SimulationConfig(
        n_accident_quarters=20,
        expected_claims_per_quarter=150.0,
        settlement_delay=DelaySpec(mean=5.5, cv=0.6, size_elasticity=0.25),
        seed=seed,
    )
    return base.replace(**changes) if changes else base


@pytest.fixture(scope="session")
def small_config():
    return desk_config(seed=11, n_accident_quarters=8, expected_claims_per_quarter=25.0)


@pytest.fixture(scope="session")
def small_portfolio(small_config):
    return simulate_portfolio(small_config)


@pytest.fixture(scope="session")
def desk_portfolio():
    return simulate_portfolio(desk_config(seed=5))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        name, ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
