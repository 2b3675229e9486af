import math

import numpy as np
import pytest

from cavsim.core import (
    CavityParams,
    DomainError,
    EnsembleParams,
    FieldState,
    PumpConfig,
    atom_number,
    coupling_strength,
    localization_factor,
)


def rk4_atom_number(t_end, N0, gamma_lin, beta, h=1e-6):
    """Independent loss-ODE oracle: classic RK4 with a fixed small step."""
    def f(n):
        return -gamma_lin * n - beta * n * n

    def step(n, dt):
        k1 = f(n)
        k2 = f(n + 0.5 * dt * k1)
        k3 = f(n + 0.5 * dt * k2)
        k4 = f(n + dt * k3)
        return n + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    n = N0
    whole = int(t_end / h)
    for _ in range(whole):
        n = step(n, h)
    rest = t_end - whole * h
    if rest > 0.0:
        n = step(n, rest)
    return n


class TestLocalizationFactor:
    def test_no_truncation_is_unity(self):
        assert localization_factor(0.3, 0.3, 0.51, 0.0, 0.0) == 1.0

    def test_reference_point_value(self):
        # at |a| = |a0| the factor reduces to exp(-eta_ax)/(1 + eta_rad)
        val = localization_factor(0.2, 0.2, 0.51, 0.5, 0.3)
        assert val == pytest.approx(math.exp(-0.5) / 1.3, rel=1e-12)
        assert val == pytest.approx(0.46656, abs=1e-5)

    def test_monotone_in_amplitude(self):
        a0 = 0.1
        assert (localization_factor(10 * a0, a0, 0.5, 0.5, 0.3)
                > localization_factor(a0, a0, 0.5, 0.5, 0.3))

    def test_bounds_and_monotonicity_properties(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.uniform(0.01, 1.5)
            a0 = rng.uniform(0.01, 1.5)
            cp = rng.uniform(0.05, 1.0)
            eax = rng.uniform(0.01, 0.99)
            erad = rng.uniform(0.01, 0.99)
            L = localization_factor(a, a0, cp, eax, erad)
            assert 0.0 < L < 1.0
            assert localization_factor(a * 1.1, a0, cp, eax, erad) > L
            assert localization_factor(a, a0, cp, eax * 1.1, erad) < L
            assert localization_factor(a, a0, cp, eax, erad * 1.1) < L

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            localization_factor(0.0, 0.1, 0.5, 0.5, 0.3)
        with pytest.raises(DomainError):
            localization_factor(-0.2, 0.1, 0.5, 0.5, 0.3)
        with pytest.raises(DomainError):
            localization_factor(0.1, 0.1, 0.0, 0.5, 0.3)


class TestAtomNumber:
    def test_pure_exponential_limit(self):
        ens = EnsembleParams(N0=1e6, gamma_lin=12.0, beta=0.0)
        for t in (0.0, 0.01, 0.3):
            assert atom_number(t, ens) == pytest.approx(1e6 * math.exp(-12.0 * t),
                                                        rel=1e-14)

    def test_pure_two_body_limit(self):
        N0 = 2e6
        beta = 40.0 / N0
        ens = EnsembleParams(N0=N0, gamma_lin=0.0, beta=beta)
        for t in (0.0, 0.005, 0.2):
            assert atom_number(t, ens) == pytest.approx(N0 / (1 + beta * N0 * t),
                                                        rel=1e-14)

    def test_against_ode_oracle(self):
        N0 = 1e6
        ens = EnsembleParams.from_rates(N0=N0, gamma_lin=5.0, beta_n0=50.0)
        expect = rk4_atom_number(0.010, N0, 5.0, 50.0 / N0)
        assert atom_number(0.010, ens) == pytest.approx(expect, rel=1e-8)

    def test_oracle_random_parameters(self):
        # criterion 9 support: 20 random parameter sets across [0, 100 ms]
        rng = np.random.default_rng(11)
        for _ in range(20):
            N0 = rng.uniform(1e5, 5e6)
            g = rng.uniform(0.0, 30.0)
            bn = rng.uniform(0.0, 200.0)
            t = rng.uniform(1e-4, 0.1)
            ens = EnsembleParams.from_rates(N0=N0, gamma_lin=g, beta_n0=bn)
            expect = rk4_atom_number(t, N0, g, bn / N0, h=2e-6)
            assert atom_number(t, ens) == pytest.approx(expect, rel=1e-8)

    def test_monotone_nonincreasing(self):
        ens = EnsembleParams.from_rates(N0=1e6, gamma_lin=3.0, beta_n0=20.0)
        ts = np.linspace(0.0, 0.1, 300)
        ns = [atom_number(t, ens) for t in ts]
        assert ns[0] == ens.N0
        assert all(b <= a for a, b in zip(ns, ns[1:]))

    def test_negative_time_rejected(self):
        ens = EnsembleParams(N0=10.0)
        with pytest.raises(DomainError):
            atom_number(-1e-6, ens)


class TestCouplingStrength:
    def test_published_preset(self, cav):
        ens = EnsembleParams(N0=2.38 / cav.U, gamma_lin=0.0, beta=0.0)
        assert coupling_strength(0.0, cav, ens) == pytest.approx(2.38, rel=1e-12)

    def test_empty_lattice(self, cav):
        ens = EnsembleParams(N0=0.0)
        assert coupling_strength(0.0, cav, ens) == 0.0

    def test_decay_limit(self, cav):
        ens = EnsembleParams(N0=1e6, gamma_lin=50.0, beta=0.0)
        assert coupling_strength(5.0, cav, ens) < 1e-90


class TestParameterTypes:
    def test_default_constants(self, cav):
        assert cav.gamma_c == pytest.approx(math.pi * 17.3e3)
        assert cav.delta0 == 0.091
        assert cav.U == pytest.approx(1.674e-6, rel=1e-3)

    def test_pump_fraction_sum_enforced(self):
        with pytest.raises(DomainError):
            PumpConfig(chi0_plus=0.5, chi0_minus=0.7)

    def test_pump_xi_window_validation(self):
        with pytest.raises(DomainError):
            PumpConfig(0.5, 0.5, xi_windows=((0.0, 1e-3, -0.5),))
        with pytest.raises(DomainError):
            PumpConfig(0.5, 0.5, xi_windows=((2e-3, 1e-3, 0.5),))
        p = PumpConfig(0.5, 0.5, xi_windows=((1e-3, 2e-3, 0.25),))
        assert p.xi_at(1.5e-3) == 0.25
        assert p.xi_at(0.5e-3) == 1.0
        assert p.xi_at(2.5e-3) == 1.0

    def test_eta_bounds(self):
        with pytest.raises(DomainError):
            EnsembleParams(N0=10, eta_ax=1.0)
        with pytest.raises(DomainError):
            EnsembleParams(N0=10, eta_rad=0.0)

    def test_field_state(self):
        fs = FieldState(a=0.3 + 0.4j)
        assert fs.chi_minus == pytest.approx(0.25)
        assert fs.a0_abs == pytest.approx(0.5)
        with pytest.raises(DomainError):
            FieldState(a=0.0j)
