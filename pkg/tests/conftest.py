import numpy as np
import pytest

from wingbeat.synth import three_species_replica, gen_dataset, sexing_replica


def direct_dft_magnitude(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """|X[k]| for k = 0..n//2 by the O(n^2) definition (zero-pad or truncate to n)."""
    n = x.size if n is None else n
    buf = np.zeros(n)
    m = min(n, x.size)
    buf[:m] = x[:m]
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return np.abs((buf[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_three_species():
    """120 labelled snippets of the three-species replica (40 per class)."""
    return gen_dataset(three_species_replica(), 40, seed=5)


@pytest.fixture(scope="session")
def small_sexing():
    return gen_dataset(sexing_replica(), 60, seed=5)


# (criterion number, title, passed, detail) recorded by the acceptance suite
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {number:2d}. {title}: {detail}")
