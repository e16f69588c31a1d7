import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fairprice.dataset import ColumnSpec, Portfolio
from fairprice.synthgen import SynthConfig, generate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_portfolio(cols: dict, kinds: dict | None = None, roles: dict | None = None) -> Portfolio:
    """Portfolio from plain columns; ``s`` is the sensitive column, ``y`` the target."""
    kinds = dict(kinds or {})
    roles = dict(roles or {})
    schema = []
    for name in cols:
        role = roles.get(name, "sensitive" if name == "s" else "target" if name == "y" else "feature")
        kind = kinds.get(name, "binary" if name == "s" else "quantitative")
        schema.append(ColumnSpec(name, kind, role))
    return Portfolio(tuple(schema), cols)


@pytest.fixture(scope="session")
def biased():
    """20k rows with an indirect S channel through veh_power."""
    return generate(SynthConfig(n=20_000, seed=5, rho_indirect=0.5, gamma_direct=0.3))


@pytest.fixture(scope="session")
def small():
    return generate(SynthConfig(n=2_000, seed=11, rho_indirect=0.4, gamma_direct=0.2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
