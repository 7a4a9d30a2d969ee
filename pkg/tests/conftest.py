import os
from pathlib import Path

import numpy as np
import pytest

from ricci_holonomy.catalog import get_model
from ricci_holonomy.cli import load_config, run_scenarios
from ricci_holonomy.flow import integrate_flow, integrate_uhlenbeck

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def catalog_records():
    """Every applicable check on every catalog model, run once per session."""
    records, status = run_scenarios(load_config(ROOT / "configs" / "catalog.yaml"), jobs=1)
    return {"records": records, "status": status}


def records_for(records, model, check_id):
    out = [r for r in records if r["model"] == model and r["check_id"] == check_id]
    assert out, f"no {check_id} record for {model}"
    return out[0]


@pytest.fixture(scope="session")
def sphere_flow():
    """Unit sphere at t = 0 (r^2(0.1) = 0.8), anchored at t0 = 0.1 on [0, 0.4]."""
    return integrate_flow(get_model("round_sphere"), [0.8], 0.4, t0=0.1)


@pytest.fixture(scope="session")
def su2_flow():
    m = get_model("su2_x_s1")
    return integrate_flow(m, m.default_theta, 0.2, t0=0.1)


@pytest.fixture(scope="session")
def su2_frame(su2_flow):
    return integrate_uhlenbeck(su2_flow, su2_flow.model.basepoint, 0.1)


def record_acceptance(number: int, passed: bool, text: str) -> None:
    line = f"[criterion {number}] {'PASS' if passed else 'FAIL'}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(int(os.environ.get("TEST_SEED", "7")))
