from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from spectral_mim import expectation, model_core, optimal_design, simulator

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def product():
    return model_core.product_link(), model_core.make_signals(2, "orthonormal")


@pytest.fixture(scope="session")
def product_law(product):
    model, signals = product
    return expectation.build_zlaw(model, signals, model_core.product_optimal())


@pytest.fixture(scope="session")
def product_design(product):
    return optimal_design.design(*product)


@pytest.fixture(scope="session")
def mixed_pr():
    return model_core.mixed_phase_retrieval(0.6), model_core.make_signals(2, "correlated", rho=0.3)


_SIM_CACHE: dict = {}


def cached_experiment(model, signals, preproc, d: int, delta: float, trials: int, seed: int):
    """Share expensive simulations between test modules within one session."""
    key = (model.name, signals.key(), preproc.name, d, delta, trials, seed)
    if key not in _SIM_CACHE:
        cfg = simulator.ExperimentConfig(n=int(round(delta * d)), d=d, model=model, signals=signals,
                                         preproc=preproc, trials=trials, seed=seed)
        _SIM_CACHE[key] = simulator.run_experiment(cfg)
    return _SIM_CACHE[key]


@pytest.fixture(scope="session")
def sim():
    return cached_experiment


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
