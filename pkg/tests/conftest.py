import numpy as np
import pytest

from gammachaos.space import make_factor, make_grid_space, separable_kernel, uniform_grid

CRITERIA: dict[int, tuple[bool, str]] = {}


def record(k: int, ok: bool, detail: str):
    CRITERIA[k] = (bool(ok), detail)
    print(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_kernel(rng, atoms=6, rank=4, n=3.0, q=2, terms=None):
    sp = make_grid_space(np.linspace(0.0, 1.0, atoms), rng.uniform(0.1, 1.0, atoms), intensity=n)
    fs = [make_factor(sp, values=rng.normal(size=atoms)) for _ in range(rank)]
    terms = terms or 6
    return separable_kernel(sp, [(rng.normal(), [fs[i] for i in rng.integers(0, rank, q)]) for _ in range(terms)])


def mean_zero_factor(space, rng):
    v = rng.normal(size=space.n_nodes)
    v -= (v @ space.weights) / space.weights.sum()
    v /= np.sqrt((v * v) @ space.weights)
    return make_factor(space, values=v)


@pytest.fixture
def grid10():
    return uniform_grid(0.0, 1.0, 10, 1.0, 1.0)
