import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from meshchaos.mesh_sim import build_app, build_scenario
from meshchaos.orchestrator import bundled_app_path, bundled_scenarios_path

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def endpoint(api, calls=(), latency=10, timeout=1000, fallback="GracefulError", **extra):
    ep = {"api": api, "latency_ms": latency, "timeout_ms": timeout, "fallback": fallback}
    ep["calls"] = [c if isinstance(c, dict) else {"target": c} for c in calls]
    ep.update(extra)
    return ep


def make_app(endpoints, **extra):
    """One service per endpoint, all on one site unless ``extra`` says otherwise."""
    data = {"name": "t", "services": [{"name": f"svc_{ep['api']}", "endpoints": [ep]} for ep in endpoints]}
    data.update(extra)
    return build_app(data)


def make_scenario(app, test_id, steps, **extra):
    data = {"test_id": test_id, "steps": [s if isinstance(s, dict) else {"api": s} for s in steps]}
    data.update(extra)
    return build_scenario(data, app)


@pytest.fixture
def chain_app():
    """f0 -> f1, f0 has a 100 ms timeout and degrades gracefully."""
    return make_app([endpoint("f0", ["f1"], latency=5, timeout=100), endpoint("f1", latency=20)])


@pytest.fixture(scope="session")
def demo_paths():
    return bundled_app_path(), bundled_scenarios_path()


def three_path_response(x):
    """Ground truth of the synthetic endpoint: three response regions in x."""
    return 1 if x < 10 else (2 if x < 20 else 3)


@pytest.fixture(scope="session")
def three_path_records():
    rng = np.random.default_rng(7)
    xs = np.round(rng.uniform(0, 30, size=90), 3)
    return [{"request": {"x": float(x)}, "response": {"y": three_path_response(x)}} for x in xs]


ACCEPTANCE = []  # (criterion, passed, detail) lines collected by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in ACCEPTANCE:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
