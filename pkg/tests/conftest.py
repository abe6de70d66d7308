import math

import numpy as np
import pytest

from vixinverse.factors import CIR, DoubleNelson, MultiOU, ScalarOU
from vixinverse.marketmodels import BergomiMulti, BergomiScalar, DoubleNelsonMarket, ThreeHalves

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def scalar_ou():
    return ScalarOU(kappa=1.0, sigma=0.6)


@pytest.fixture
def scalar_model(scalar_ou):
    return BergomiScalar(gamma=0.5, factor=scalar_ou, h0=0.2)


@pytest.fixture
def fig2_factor():
    return MultiOU.from_correlated([1.0, 10.0], [0.6, 0.8], 0.4)


@pytest.fixture
def fig2_model(fig2_factor):
    return BergomiMulti(gamma=np.array([0.5, 0.5]), factor=fig2_factor, h0=0.2)


@pytest.fixture
def fig4_cir():
    # sigma = sqrt(48) gives alpha = 4 exactly; 6.9282 is its rounding
    return CIR(kappa=4.0, xbar=30.0, sigma=math.sqrt(48.0))


@pytest.fixture
def fig4_model(fig4_cir):
    return ThreeHalves(fig4_cir)


@pytest.fixture
def dn_factor():
    return DoubleNelson(kappa1=1.0, kappa2=2.0, xbar=0.2, sigma1=1.0, sigma2=1.0, rho=0.0)


@pytest.fixture
def dn_model(dn_factor):
    return DoubleNelsonMarket(dn_factor)
