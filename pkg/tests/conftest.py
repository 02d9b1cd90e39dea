import warnings

import numpy as np
import pytest

from scwind.code import CodeSpec, CoupledCode, GirthWarning


def small_code(Z=8, L=6, dv=5, dc=25, spread=(3, 2), seed=1):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GirthWarning)
        return CoupledCode.build(CodeSpec(dv=dv, dc=dc, spread=spread, Z=Z, L=L, seed=seed))


@pytest.fixture(scope="session")
def code8():
    """(5,25) chain with Z=8, L=6: n=40 bits per block."""
    return small_code()


@pytest.fixture(scope="session")
def code36():
    """(3,6) chain with Z=12, L=10: cheap enough for dense references."""
    return small_code(Z=12, L=10, dv=3, dc=6, spread=(2, 1), seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
