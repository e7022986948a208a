import numpy as np
import pytest

from eivbias.model import Theta
from eivbias.montecarlo import REFERENCE_THETA, Scenario, generate_taus, simulate_dataset
from eivbias.oracle import random_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ref_theta() -> Theta:
    return REFERENCE_THETA


@pytest.fixture
def uniform40():
    scn = Scenario("uniform", n=40, seed=11)
    return scn, generate_taus(scn)


@pytest.fixture
def sim_dataset(uniform40):
    scn, taus = uniform40
    return simulate_dataset(scn, taus, 0)


@pytest.fixture(params=[(1, 1), (1, 2), (2, 1), (2, 2)], ids=lambda d: f"v{d[0]}m{d[1]}")
def instance(request):
    v, m = request.param
    return random_instance(np.random.default_rng(100 * v + m), v, m, 12)


class _StudyCache:
    """10,000-replication studies, run once per session and shared across modules."""

    REPS = 10_000
    SEED = 1

    def __init__(self):
        self._done = {}

    def get(self, kind: str, n: int):
        from eivbias.montecarlo import run_study

        key = (kind, n)
        if key not in self._done:
            self._done[key] = run_study(Scenario(kind, n=n, seed=self.SEED), self.REPS)
        return self._done[key]


@pytest.fixture(scope="session")
def studies():
    return _StudyCache()



def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
