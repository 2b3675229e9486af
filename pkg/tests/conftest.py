import pytest

from cavsim.core import CavityParams, EnsembleParams, PumpConfig
from cavsim.particles import DynamicsParams


@pytest.fixture(scope="session")
def cav():
    return CavityParams()


@pytest.fixture(scope="session")
def pump49():
    return PumpConfig(chi0_plus=0.51, chi0_minus=0.49)


@pytest.fixture(scope="session")
def pump_sym():
    return PumpConfig(chi0_plus=0.5, chi0_minus=0.5)


@pytest.fixture(scope="session")
def ens238(cav):
    """Default ensemble: UN0 = 2.38 with the default loss-rate knobs."""
    return EnsembleParams.from_rates(N0=2.38 / cav.U, gamma_lin=5.0,
                                     beta_n0=50.0)


@pytest.fixture(scope="session")
def dyn():
    return DynamicsParams()


@pytest.fixture(scope="session")
def calibrated_rates(cav, pump49, ens238):
    """(gamma_lin, beta*N0) placing the 49% jump at 35 ms; shared session-wide."""
    from cavsim.scenarios import calibrate_losses, resolve_a_init
    a0 = resolve_a_init(pump49, ens238.eta_ax, ens238.eta_rad, 2.38)
    return calibrate_losses(0.035, cav, pump49, ens238, a0)
