"""Physical parameters and shared model pieces.

Everything downstream (adiabatic field solver, particle integrator,
scenario runners) pulls its constants from the frozen dataclasses here.
Conventions: internal dynamics run in dimensionless units (tau = gamma_c*t,
field amplitudes scaled so |a|^2 is an intensity fraction of the bare
intracavity total); SI units appear only at construction and in file I/O.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class CavsimError(Exception):
    """Base class for all domain errors raised by this package."""


class DomainError(CavsimError):
    """An operation was called outside its mathematical domain."""


# gamma_c / pi = 17.3 kHz resonance linewidth of the ring cavity
DEFAULT_GAMMA_C = math.pi * 17.3e3
# light shift per photon, 1/s
DEFAULT_DELTA0 = 0.091
DEFAULT_WAVELENGTH = 781e-9
DEFAULT_WAIST = 120e-6
DEFAULT_FINESSE = 1.8e5
DEFAULT_MODE_VOLUME = 2.6e-9   # m^3

DEFAULT_ETA_AX = 0.5
DEFAULT_ETA_RAD = 0.3
DEFAULT_GAMMA_LIN = 5.0        # 1/s, calibration knob (not a measured value)
DEFAULT_BETA_N0 = 50.0         # 1/s, two-body rate times initial atom number
DEFAULT_UN0 = 2.38
DEFAULT_T0 = 90e-6             # K, radial temperature before the jump


@dataclass(frozen=True)
class CavityParams:
    """Resonator and coupling constants.

    ``U = delta0 / gamma_c`` is the dimensionless light shift per photon;
    ``finesse`` and ``mode_volume`` are carried as metadata only.
    """

    gamma_c: float = DEFAULT_GAMMA_C
    delta0: float = DEFAULT_DELTA0
    wavelength: float = DEFAULT_WAVELENGTH
    waist: float = DEFAULT_WAIST
    finesse: float = DEFAULT_FINESSE
    mode_volume: float = DEFAULT_MODE_VOLUME

    def __post_init__(self):
        if self.gamma_c <= 0:
            raise DomainError("cavity.gamma_c_per_s must be > 0")
        if self.delta0 <= 0:
            raise DomainError("cavity.delta0_per_s must be > 0")
        if self.wavelength <= 0 or self.waist <= 0:
            raise DomainError("cavity geometry lengths must be > 0")

    @property
    def U(self) -> float:
        return self.delta0 / self.gamma_c


@dataclass(frozen=True)
class PumpConfig:
    """Pump split between the two travelling modes plus the power schedule.

    ``chi0_plus`` and ``chi0_minus`` are fractions of the total incoupled
    power and must sum to one.  ``xi_windows`` is a piecewise-constant
    power schedule, a tuple of ``(t_start_s, t_end_s, factor)``; outside
    every window the scale factor is 1.
    """

    chi0_plus: float = 0.5
    chi0_minus: float = 0.5
    xi_windows: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.chi0_minus <= 1.0 and 0.0 <= self.chi0_plus <= 1.0):
            raise DomainError("pump fractions must lie in [0, 1]")
        if abs(self.chi0_plus + self.chi0_minus - 1.0) > 1e-12:
            raise DomainError("pump.chi0_plus + pump.chi0_minus must equal 1")
        for (t0, t1, xi) in self.xi_windows:
            if xi <= 0.0:
                raise DomainError("power scale factor xi_P must be > 0")
            if t1 <= t0:
                raise DomainError("power window must have t_end > t_start")

    def xi_at(self, t: float) -> float:
        for (t0, t1, xi) in self.xi_windows:
            if t0 < t <= t1:
                return xi
        return 1.0


@dataclass(frozen=True)
class EnsembleParams:
    """Atom number model and thermal truncation parameters.

    The loss law is dN/dt = -gamma_lin*N - beta*N^2.  ``eta_ax`` and
    ``eta_rad`` are the ratios of thermal energy to the axial/radial well
    depth at t = 0 and must stay inside (0, 1).
    """

    N0: float
    gamma_lin: float = DEFAULT_GAMMA_LIN
    beta: float = 0.0
    eta_ax: float = DEFAULT_ETA_AX
    eta_rad: float = DEFAULT_ETA_RAD
    T0: float = DEFAULT_T0

    def __post_init__(self):
        if self.N0 < 0:
            raise DomainError("ensemble.N0 must be >= 0")
        if self.gamma_lin < 0 or self.beta < 0:
            raise DomainError("loss rates must be >= 0")
        for name in ("eta_ax", "eta_rad"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise DomainError(f"ensemble.{name} must lie in (0, 1)")

    @classmethod
    def from_rates(cls, N0: float, gamma_lin: float, beta_n0: float, **kw) -> "EnsembleParams":
        """Build from the (gamma_lin, beta*N0) pair used throughout the config."""
        beta = beta_n0 / N0 if N0 > 0 else 0.0
        return cls(N0=N0, gamma_lin=gamma_lin, beta=beta, **kw)


@dataclass(frozen=True)
class FieldState:
    """Scaled complex amplitude of the unlocked mode.

    ``a0_abs`` freezes |a(t=0)|, the reference the localization factor
    divides by.  chi_minus = |a|^2 and phi = arg(a) are derived.
    """

    a: complex
    a0_abs: float = field(default=0.0)

    def __post_init__(self):
        a0 = self.a0_abs if self.a0_abs > 0.0 else abs(self.a)
        object.__setattr__(self, "a0_abs", a0)
        if self.a0_abs <= 0.0:
            raise DomainError("|a(t=0)| must be > 0")

    @property
    def chi_minus(self) -> float:
        return abs(self.a) ** 2

    @property
    def phi(self) -> float:
        import cmath
        return cmath.phase(self.a)


def localization_factor(a_abs: float, a0_abs: float, chi0_plus: float,
                        eta_ax: float, eta_rad: float) -> float:
    """Ensemble localization factor L(a) reducing coherent backscattering.

    L multiplies an axial Debye-Waller-like term exp(-eta_ax*sqrt(a0/|a|))
    with a radial envelope term 1/(1 + eta_rad*(sqrt(chi0+)+a0)/(sqrt(chi0+)+|a|)).
    Both referenced truncation ratios are the t = 0 values; only |a| is
    current.  Monotone increasing in |a|, strictly inside (0, 1) for
    positive eta's.
    """
    if a_abs <= 0.0:
        raise DomainError("localization factor needs |a| > 0 (axial term diverges)")
    if a0_abs <= 0.0:
        raise DomainError("localization factor needs |a0| > 0")
    if not (0.0 < chi0_plus <= 1.0):
        raise DomainError("chi0_plus must lie in (0, 1]")
    sq = math.sqrt(chi0_plus)
    axial = math.exp(-eta_ax * math.sqrt(a0_abs / a_abs))
    radial = 1.0 / (1.0 + eta_rad * (sq + a0_abs) / (sq + a_abs))
    return axial * radial


def atom_number(t: float, ens: EnsembleParams) -> float:
    """Closed-form trapped atom number N(t) under linear plus two-body losses.

    Solves dN/dt = -gamma_lin*N - beta*N^2 with N(0) = N0:

        N(t) = gamma_lin*N0*exp(-gamma_lin*t)
               / (gamma_lin + beta*N0*(1 - exp(-gamma_lin*t)))

    with the pure-exponential (beta = 0) and pure-two-body (gamma_lin = 0)
    limits handled exactly.
    """
    if t < 0:
        raise DomainError("atom_number needs t >= 0")
    g, b, N0 = ens.gamma_lin, ens.beta, ens.N0
    if N0 == 0.0:
        return 0.0
    if b == 0.0:
        return N0 * math.exp(-g * t)
    if g == 0.0:
        return N0 / (1.0 + b * N0 * t)
    e = math.exp(-g * t)
    return g * N0 * e / (g + b * N0 * (1.0 - e))


def coupling_strength(t: float, cav: CavityParams, ens: EnsembleParams) -> float:
    """Collective coupling U*N(t)."""
    return cav.U * atom_number(t, ens)
