import math

import pytest
from hypothesis import HealthCheck, settings

from rotorlock.params import DriveConfig, scaled_coefficients

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# N/V of the default rod (geometry and susceptibilities only)
DEFAULT_NV = 0.1860775201937946

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one acceptance line: acceptance(criterion, passed, detail)."""

    def record(criterion: str, passed: bool, detail: str):
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(key):
        num = "".join(c for c in key if c.isdigit())
        return (int(num), key)

    for key in sorted(_ACCEPTANCE, key=order):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}")


def unit_drive(duty: float = 0.5) -> DriveConfig:
    return DriveConfig(1.0, duty)


def point(gamma: float, torque: float, nv: float = DEFAULT_NV):
    """Scaled coefficients (f_d = 1, I = 1) at (gamma, torque) for ratio N/V = nv."""
    return scaled_coefficients(gamma, torque, torque / nv)


def torque_for_argument(gamma: float, x: float, nv: float = DEFAULT_NV) -> float:
    """Dimensionless torque giving lock argument x at duty 1/2."""
    return 2.0 * math.pi * gamma / (1.0 - x / (math.pi * nv / 2.0))
