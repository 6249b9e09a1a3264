import numpy as np
import pytest

from merlin.dataset import generate_random
from merlin.env import make_spec


@pytest.fixture(scope="session")
def reach():
    return make_spec("PointReach")


@pytest.fixture(scope="session")
def rooms():
    return make_spec("PointRooms")


@pytest.fixture(scope="session")
def small_random(reach):
    return generate_random(reach, 40, seed=3)


def brute_knn(points, q, k, skip=()):
    """Reference k-NN by full scan; ties go to the lower index."""
    d = np.sqrt(np.sum((np.asarray(points, dtype=np.float64) - q) ** 2, axis=1))
    order = np.lexsort((np.arange(len(d)), d))
    order = [i for i in order if i not in skip][:k]
    return np.array(order, dtype=np.int64), d[order]


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(number, passed, detail)."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
