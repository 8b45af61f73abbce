"""Shared models. Grid builds are the expensive part, so splits are session-scoped."""

from __future__ import annotations

import pytest
from lsvx.expansions import ExpansionKind, default_epsilon
from lsvx.generators import SVModel
from lsvx.levy_kernel import LevyDensity, split_levy


@pytest.fixture(scope="session")
def kou():
    return LevyDensity.kou(1.0, 0.6, 5.0, 10.0)


@pytest.fixture(scope="session")
def merton():
    return LevyDensity.merton(1.0, -0.1, 0.15)


@pytest.fixture(scope="session")
def cgmy():
    return LevyDensity.cgmy(0.5, 3.0, 4.0, 0.8)


@pytest.fixture(scope="session")
def heston():
    return SVModel.heston(chi=2.0, theta=0.09, v=0.3, y0=0.04)


@pytest.fixture(scope="session")
def kou_tail_model(kou):
    """Kou split for tails at z = 0.5 up to order 2."""
    return split_levy(kou, default_epsilon(ExpansionKind.TAIL, 0.5, 2))


@pytest.fixture(scope="session")
def kou_call_model(kou):
    """Kou split for calls at z = -0.5 up to order 3."""
    return split_levy(kou, default_epsilon(ExpansionKind.CALL_OTM, -0.5, 3))


@pytest.fixture(scope="session")
def merton_call_model(merton):
    """Merton split for calls at z = +-0.5 up to order 2."""
    return split_levy(merton, default_epsilon(ExpansionKind.CALL_OTM, -0.5, 2))


@pytest.fixture(scope="session")
def cgmy_density_model(cgmy):
    """CGMY split for the density at x = 0.5 up to order 2."""
    return split_levy(cgmy, default_epsilon(ExpansionKind.DENSITY, 0.5, 2))
