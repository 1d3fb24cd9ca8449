import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

NU3 = "+1:0.3,-1:0.3,0:0.4"
NU_EQ = "+1:0.25,-1:0.25,0:0.5"


def within(est, se, target, k=3.0):
    return abs(est - target) <= k * se


def chi2_pvalue(observed: dict, expected: dict, n: int) -> float:
    """Pearson chi-square p-value, pooling cells with expected count < 5."""
    from scipy import stats

    keys = list(expected)
    exp = np.array([expected[k] * n for k in keys])
    obs = np.array([observed.get(k, 0) for k in keys], dtype=float)
    extra = n - obs.sum()  # observations outside the expected support
    small = exp < 5
    if small.any():
        exp = np.append(exp[~small], exp[small].sum())
        obs = np.append(obs[~small], obs[small].sum())
    obs[-1] += extra
    mask = exp > 0
    if extra > 0 and not mask[-1]:
        return 0.0
    stat = ((obs[mask] - exp[mask]) ** 2 / exp[mask]).sum()
    dof = max(mask.sum() - 1, 1)
    return float(stats.chi2.sf(stat, dof))


@pytest.fixture
def tmp_out(tmp_path, monkeypatch):
    monkeypatch.delenv("ANNIHILATE_OUT", raising=False)
    return tmp_path


ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> bool:
    """Store one acceptance verdict for the end-of-session summary."""
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
