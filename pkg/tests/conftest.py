import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return A @ A.conj().T


def random_profiles(rng, num_antennas, num_groups, max_users=3, spread_deg=5.0):
    """Groups of users with random azimuths in a 120-degree sector."""
    from jsdm.channel_model import UserGeometry, covariances_for, ula
    from jsdm.precoding import group_centroid

    arr = ula(num_antennas)
    profiles, k = [], 0
    for _ in range(num_groups):
        centre = rng.uniform(-np.pi / 3, np.pi / 3)
        n = int(rng.integers(1, max_users + 1))
        geoms = [UserGeometry(centre + rng.uniform(-0.03, 0.03), np.deg2rad(spread_deg)) for _ in range(n)]
        profiles.append(group_centroid(covariances_for(geoms, arr), members=range(k, k + n)))
        k += n
    return profiles


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def emit(criterion: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
