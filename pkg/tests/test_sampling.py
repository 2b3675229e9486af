import math

import numpy as np
import pytest

from cavsim.core import DomainError
from cavsim.particles import (
    DynamicsParams,
    mode_profile,
    potential,
    sample_thermal,
)


def chi2_cdf_3(x):
    """P(chi^2_3 <= x) in closed form (three kinetic degrees of freedom)."""
    if x <= 0:
        return 0.0
    return math.erf(math.sqrt(x / 2.0)) - math.sqrt(2.0 * x / math.pi) \
        * math.exp(-x / 2.0)


def boltzmann_theta_variance(a_init, pump, dyn, cav, eta_ax):
    """Quadrature oracle for <theta^2> of the truncated bound ensemble.

    Integrates the position marginal exp(-V/kT) * P(K < E_cut - V) over
    (theta, rho_x, rho_y); the kinetic bound probability for the three
    momentum degrees of freedom has the closed chi-squared form.
    """
    r0 = abs(a_init)
    cp = pump.chi0_plus
    sq = math.sqrt(cp)
    eps = dyn.eps
    kT = eta_ax * 4.0 * eps * sq * r0
    e_cut = -eps * (sq - r0) ** 2
    th = np.linspace(-np.pi, np.pi, 241)
    rr = np.linspace(-1.6, 1.6, 161)
    TH, RX, RY = np.meshgrid(th, rr, rr, indexing="ij")
    V = potential(TH.ravel(), np.stack([RX.ravel(), RY.ravel()], axis=1),
                  a_init, cp, eps).reshape(TH.shape)
    E = (e_cut - V) / kT
    pk = np.vectorize(chi2_cdf_3)(2.0 * np.clip(E, 0.0, None))
    W = np.exp(-(V - V.min()) / kT) * np.where(E > 0.0, pk, 0.0)
    return float(np.sum(TH ** 2 * W) / np.sum(W))


class TestSampleThermal:
    def test_cold_limit_collapses_to_minimum(self, cav, pump49, dyn):
        a = complex(0.3)
        cold = sample_thermal(500, 1e-6, 6e-7, a, pump49, dyn, cav, seed=2)
        assert np.max(np.abs(cold.theta)) < 1e-2
        assert np.max(np.abs(cold.rho)) < 1e-2
        warm = sample_thermal(500, 1e-2, 6e-3, a, pump49, dyn, cav, seed=2)
        # momentum spreads vanish with temperature
        assert np.std(cold.p_theta) < 0.15 * np.std(warm.p_theta)
        assert np.std(cold.p_rho) < 0.15 * np.std(warm.p_rho)

    def test_variance_against_quadrature_oracle(self, cav, pump_sym, dyn):
        a = complex(math.sqrt(0.5))
        sys = sample_thermal(100_000, 0.5, 0.3, a, pump_sym, dyn, cav, seed=9)
        var = float(np.mean(sys.theta ** 2))
        oracle = boltzmann_theta_variance(a, pump_sym, dyn, cav, 0.5)
        assert var == pytest.approx(oracle, rel=0.05)

    def test_same_seed_bit_identical(self, cav, pump49, dyn):
        a = 0.2 * np.exp(0.3j)
        s1 = sample_thermal(64, 0.5, 0.3, a, pump49, dyn, cav, seed=1234)
        s2 = sample_thermal(64, 0.5, 0.3, a, pump49, dyn, cav, seed=1234)
        assert np.array_equal(s1.theta, s2.theta)
        assert np.array_equal(s1.p_theta, s2.p_theta)
        assert np.array_equal(s1.rho, s2.rho)
        assert np.array_equal(s1.p_rho, s2.p_rho)

    def test_different_seed_differs(self, cav, pump49, dyn):
        a = complex(0.2)
        s1 = sample_thermal(64, 0.5, 0.3, a, pump49, dyn, cav, seed=1)
        s2 = sample_thermal(64, 0.5, 0.3, a, pump49, dyn, cav, seed=2)
        assert not np.array_equal(s1.theta, s2.theta)

    def test_bound_below_energy_cut(self, cav, pump49, dyn):
        a = complex(0.25)
        sys = sample_thermal(2000, 0.5, 0.3, a, pump49, dyn, cav, seed=4)
        eps = dyn.eps
        sq = math.sqrt(pump49.chi0_plus)
        k_ax, k_rad = dyn.stiffness(cav, pump49, abs(a))
        V = potential(sys.theta, sys.rho, a, pump49.chi0_plus, eps)
        K = 0.5 * k_ax * sys.p_theta ** 2 \
            + 0.5 * k_rad * np.sum(sys.p_rho ** 2, axis=1)
        assert np.all(V + K < -eps * (sq - abs(a)) ** 2)

    def test_weight_from_atom_count(self, cav, pump49, dyn):
        sys = sample_thermal(50, 0.5, 0.3, complex(0.2), pump49, dyn, cav,
                             seed=3, ens_n0=1e6)
        assert sys.weight == pytest.approx(2e4)
        assert sys.n_sim == 50

    def test_invalid_count(self, cav, pump49, dyn):
        with pytest.raises(DomainError):
            sample_thermal(0, 0.5, 0.3, complex(0.2), pump49, dyn, cav, seed=1)

    def test_radial_dims_shape(self, cav, pump49):
        dyn1 = DynamicsParams(radial_dims=1)
        s = sample_thermal(16, 0.5, 0.3, complex(0.2), pump49, dyn1, cav, seed=5)
        assert s.rho.shape == (16, 1)
        dyn2 = DynamicsParams(radial_dims=2)
        s2 = sample_thermal(16, 0.5, 0.3, complex(0.2), pump49, dyn2, cav, seed=5)
        assert s2.rho.shape == (16, 2)

    def test_stationarity_of_large_sample(self, cav, pump_sym, ens238, dyn):
        # the truncation cuts on a level set of the energy, so the sampled
        # density is a function of H alone and must not drift under the
        # frozen-field flow
        from cavsim.particles import evolve
        a = complex(math.sqrt(0.5))
        sys = sample_thermal(4000, 0.5, 0.3, a, pump_sym, dyn, cav, seed=3,
                             ens_n0=ens238.N0)
        tr = evolve(sys, cav, pump_sym, ens238, dyn, (0.0, 0.008), dt=2.5e-6,
                    out_dt=2e-4, freeze_field=True, freeze_losses=True)
        assert np.ptp(tr.sigma_theta) / tr.sigma_theta[0] < 0.05
        assert np.ptp(tr.loc) / tr.loc[0] < 0.05
