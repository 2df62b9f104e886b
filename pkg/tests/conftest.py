import numpy as np
import pytest
from hypothesis import settings

from gclab.dolbeault import harmonic_beltrami_basis, holomorphic_basis
from gclab.fuchsian import bolza_group, build_mesh
from gclab.hyperelliptic import curve_new

settings.register_profile("gclab", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("gclab")

BOLZA = (0, -1, 0, 0, 0, 1)


@pytest.fixture(scope="session")
def bolza_curve():
    return curve_new(np.array(BOLZA, dtype=complex))


@pytest.fixture(scope="session")
def genus3_curve():
    return curve_new(np.array([-1, 0, 0, 0, 0, 0, 0, 1], dtype=complex))


@pytest.fixture(scope="session")
def group():
    return bolza_group()


@pytest.fixture(scope="session")
def mesh3(group):
    return build_mesh(group, 3)


@pytest.fixture(scope="session")
def c2_3(mesh3):
    return holomorphic_basis(mesh3, (-2, 0), min_gap=1.0)


@pytest.fixture(scope="session")
def bb3(c2_3):
    return harmonic_beltrami_basis(c2_3)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    RESULTS = getattr(mod, "RESULTS", None)
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            ok, detail = RESULTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
