"""Coupled field-particle dynamics for ~100 simulated atoms.

The servo constraint eliminates the locked-mode equation, leaving the
unlocked amplitude a and, per particle, an axial phase theta = 2k*x with its
conjugate momentum plus one (optionally two) radial offsets in waist units.
The dipole potential seen by particle j is

    V = -eps * f(rho_j) * [xi*chi0+ + |a|^2 + 2*sqrt(xi*chi0+)*Re(a e^{-i theta_j})]

with the Gaussian intensity envelope f(rho) = exp(-2 rho^2), and the field
evolves under the servo-tracked detuning plus coherent backscattering of the
bunching sum S = weight * sum_j f(rho_j) e^{i theta_j}:

    da/dtau = i*U*(Re(conj(S) a)/sqrt(xi*chi0+)) * a - a
              - i*U*S*sqrt(xi*chi0+) + sqrt(xi*chi0-)

which reduces exactly to the adiabatic equation with L = 1 when every
particle sits at theta = arg(a), rho = 0.  Stiffness constants never involve
absolute masses; they are fixed so the small-oscillation frequencies at t = 0
match the configured axial/radial vibrational frequencies.

Integration is fixed-step RK4 (uniform sampling keeps the spectral analysis
simple); the hot loop is compiled with numba.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

try:
    from numba import njit
except ImportError:      # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

from .core import (
    CavityParams,
    CavsimError,
    DomainError,
    EnsembleParams,
    PumpConfig,
    atom_number,
)

ESCAPE_RADIUS = 5.0  # waists; beyond this a particle is dropped from the run


class SamplingError(CavsimError):
    """Rejection sampling could not reach a workable acceptance rate."""


@dataclass(frozen=True)
class DynamicsParams:
    """Vibrational frequencies and derived stiffness/depth constants.

    ``depth_factor`` scales the potential depth relative to the calibration
    point: stiffnesses are fixed once at depth_factor = 1 so that a depth
    sweep changes the oscillation frequencies as sqrt(depth).
    """

    nu_ax: float = 5e3
    nu_rad: float = 500.0
    depth_factor: float = 1.0
    radial_dims: int = 2
    radial_freq_scale: float = 1.0

    def __post_init__(self):
        if not (self.nu_ax > self.nu_rad > 0):
            raise DomainError("need nu_ax > nu_rad > 0")
        if self.depth_factor <= 0:
            raise DomainError("depth_factor must be > 0")
        if self.radial_dims not in (1, 2):
            raise DomainError("radial_dims must be 1 or 2")
        if self.radial_freq_scale <= 0:
            raise DomainError("radial_freq_scale must be > 0")

    @property
    def eps(self) -> float:
        """Potential depth parameter; the dynamics depends on k*eps only."""
        return self.depth_factor

    def stiffness(self, cav: CavityParams, pump: PumpConfig, a0_abs: float):
        """(k_ax, k_rad) making the t = 0 small oscillations hit nu_ax, nu_rad.

        Axial curvature at the well bottom is 2*eps*sqrt(chi0+)*|a0|, radial
        curvature 4*eps*(sqrt(chi0+)+|a0|)^2; both evaluated at the
        calibration depth eps = 1, so frequencies scale with
        sqrt(depth_factor).  ``radial_freq_scale`` divides the radial
        stiffness by its square; scenarios set it to the measured thermal
        softening so the collective breathing of a hot ensemble lands at
        2*nu_rad.
        """
        sq = math.sqrt(pump.chi0_plus)
        w_ax = 2.0 * math.pi * self.nu_ax / cav.gamma_c
        w_rad = 2.0 * math.pi * self.nu_rad / cav.gamma_c
        k_ax = w_ax ** 2 / (2.0 * sq * a0_abs)
        k_rad = w_rad ** 2 / (4.0 * (sq + a0_abs) ** 2)
        return k_ax, k_rad / self.radial_freq_scale ** 2


@dataclass
class ParticleSystem:
    """Joint state: per-particle coordinates plus the shared field amplitude."""

    theta: np.ndarray        # (N,) axial phases, rad
    p_theta: np.ndarray      # (N,) conjugate momenta, scaled
    rho: np.ndarray          # (N, d) radial offsets, waist units
    p_rho: np.ndarray        # (N, d)
    a: complex
    weight: float            # atoms represented per simulated particle

    def __post_init__(self):
        n = len(self.theta)
        if self.rho.ndim == 1:
            self.rho = self.rho.reshape(n, 1)
        if self.p_rho.ndim == 1:
            self.p_rho = self.p_rho.reshape(n, 1)
        if not (len(self.p_theta) == n == len(self.rho) == len(self.p_rho)) or n < 1:
            raise DomainError("particle arrays must share length >= 1")
        if self.weight <= 0:
            raise DomainError("weight must be > 0")

    @property
    def n_sim(self) -> int:
        return len(self.theta)


def mode_profile(rho: np.ndarray) -> np.ndarray:
    """Gaussian intensity envelope exp(-2 rho^2), rho in waist units."""
    rho = np.asarray(rho, dtype=float)
    r2 = np.sum(rho ** 2, axis=-1) if rho.ndim > 1 else rho ** 2
    return np.exp(-2.0 * r2)


def potential(theta, rho, a: complex, chi_plus_eff: float, eps: float):
    """Dipole potential (units of hbar*gamma_c) per particle.

    ``chi_plus_eff`` is the locked-mode intensity fraction actually present,
    i.e. xi_P * chi0+ during a power window.  Red-detuned: minima at the
    interference maxima theta = arg(a).
    """
    if eps <= 0:
        raise DomainError("eps must be > 0")
    f = mode_profile(np.asarray(rho, dtype=float))
    z = a * np.exp(-1j * np.asarray(theta, dtype=float))
    intensity = chi_plus_eff + abs(a) ** 2 + 2.0 * math.sqrt(chi_plus_eff) * z.real
    return -eps * f * intensity


def forces(sys: ParticleSystem, params: DynamicsParams, pump: PumpConfig,
           xi_p: float = 1.0):
    """Generalized forces (-dV/dtheta, -dV/drho) for the current state."""
    eps = params.eps
    cpe = xi_p * pump.chi0_plus
    sq = math.sqrt(cpe)
    f = mode_profile(sys.rho)
    z = sys.a * np.exp(-1j * sys.theta)
    intensity = cpe + abs(sys.a) ** 2 + 2.0 * sq * z.real
    f_theta = 2.0 * eps * sq * f * z.imag
    f_rho = -4.0 * eps * sys.rho * (f * intensity)[:, None]
    return f_theta, f_rho


def field_rhs(sys: ParticleSystem, cav: CavityParams, pump: PumpConfig,
              xi_p: float = 1.0) -> complex:
    """da/dtau from the servo-tracked detuning and coherent backscattering."""
    f = mode_profile(sys.rho)
    S = sys.weight * np.sum(f * np.exp(1j * sys.theta))
    sp = math.sqrt(xi_p) * math.sqrt(pump.chi0_plus)
    sm = math.sqrt(xi_p) * math.sqrt(pump.chi0_minus)
    U = cav.U
    return (1j * U * (np.conj(S) * sys.a).real / sp * sys.a
            - sys.a - 1j * U * S * sp + sm)


def axial_well_depth(a0_abs: float, chi_plus: float, eps: float) -> float:
    """Peak-to-trough axial modulation depth at rho = 0."""
    return 4.0 * eps * math.sqrt(chi_plus) * a0_abs


def sample_thermal(n_sim: int, eta_ax: float, eta_rad: float, a_init: complex,
                   pump: PumpConfig, params: DynamicsParams,
                   cav: CavityParams, seed: int,
                   ens_n0: float | None = None,
                   kT_ref_abs: float | None = None) -> ParticleSystem:
    """Thermal sample in the potential at ``a_init``, bound particles only.

    Draws (theta, rho, p) from exp(-H/kT) by rejection.  kT is eta_ax times
    the axial well depth at the reference amplitude (``kT_ref_abs``,
    defaulting to |a_init| itself).  The bound-state truncation cuts at the
    on-axis axial barrier, a level set of the conserved energy, so the
    accepted ensemble is stationary under the frozen-field dynamics.
    Deterministic for a fixed seed.
    """
    if n_sim < 1:
        raise DomainError("n_sim must be >= 1")
    rng = np.random.default_rng(seed)
    a0 = abs(a_init)
    phi = math.atan2(a_init.imag, a_init.real)
    eps = params.eps
    cp = pump.chi0_plus
    sq = math.sqrt(cp)
    d = params.radial_dims
    k_ax, k_rad = params.stiffness(cav, pump, a0)

    ref = kT_ref_abs if kT_ref_abs is not None else a0
    kT = eta_ax * axial_well_depth(ref, cp, eps)
    v_min = -eps * (sq + a0) ** 2
    e_cut = -eps * (sq - a0) ** 2
    sig_pth = math.sqrt(kT / k_ax)
    sig_prh = math.sqrt(kT / k_rad)
    # proposal boxes shrink with temperature so cold samples stay efficient
    w_th = min(math.pi, 6.0 * math.sqrt(kT / (2.0 * eps * sq * a0)))
    w_rh = min(2.0, 6.0 * math.sqrt(kT / (4.0 * eps * (sq + a0) ** 2)))

    out_th = np.empty(n_sim)
    out_pth = np.empty(n_sim)
    out_rh = np.empty((n_sim, d))
    out_prh = np.empty((n_sim, d))
    got, tried = 0, 0
    batch = max(4 * n_sim, 1024)
    while got < n_sim:
        th = rng.uniform(phi - w_th, phi + w_th, batch)
        rh = rng.uniform(-w_rh, w_rh, (batch, d))
        pth = rng.normal(0.0, sig_pth, batch)
        prh = rng.normal(0.0, sig_prh, (batch, d))
        V = potential(th, rh, a_init, cp, eps)
        K = 0.5 * k_ax * pth ** 2 + 0.5 * k_rad * np.sum(prh ** 2, axis=1)
        u = rng.uniform(0.0, 1.0, batch)
        ok = (u < np.exp(-(V - v_min) / kT)) & (V + K < e_cut)
        tried += batch
        idx = np.flatnonzero(ok)
        take = idx[: n_sim - got]
        k = len(take)
        out_th[got:got + k] = th[take]
        out_pth[got:got + k] = pth[take]
        out_rh[got:got + k] = rh[take]
        out_prh[got:got + k] = prh[take]
        got += k
        if tried >= 10 * batch and got / tried < 1e-3:
            raise SamplingError(
                f"acceptance rate {got / tried:.2e} < 1e-3; eta too close to 1")
    n_atoms = ens_n0 if ens_n0 is not None else float(n_sim)
    return ParticleSystem(theta=out_th, p_theta=out_pth, rho=out_rh,
                          p_rho=out_prh, a=complex(a_init),
                          weight=n_atoms / n_sim)


@dataclass(frozen=True)
class ParticleTrace:
    """Uniformly sampled observables of a coupled field-particle run."""

    t: np.ndarray
    tau: np.ndarray
    a: np.ndarray
    chi_minus: np.ndarray
    phi: np.ndarray
    n_atoms: np.ndarray
    loc: np.ndarray            # |sum f e^{i theta}| / N_active, measured localization
    sigma_theta: np.ndarray
    sigma_rho: np.ndarray
    sigma_prho: np.ndarray
    mean_energy: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)


@njit(cache=True)
def _nfrac(t, g_lin, beta_n0):
    """N(t)/N0 for the linear + two-body loss law."""
    if g_lin == 0.0 and beta_n0 == 0.0:
        return 1.0
    if beta_n0 == 0.0:
        return math.exp(-g_lin * t)
    if g_lin == 0.0:
        return 1.0 / (1.0 + beta_n0 * t)
    e = math.exp(-g_lin * t)
    return g_lin * e / (g_lin + beta_n0 * (1.0 - e))


@njit(cache=True)
def _xi_at(t, xi_t0, xi_t1, xi_v):
    for i in range(xi_t0.shape[0]):
        if xi_t0[i] < t <= xi_t1[i]:
            return xi_v[i]
    return 1.0


@njit(cache=True)
def _deriv(th, pth, rh, prh, are, aim, act, t_s,
           kax, krad, eps, cp, cm, U, n0_over_nsim,
           g_lin, beta_n0, xi_t0, xi_t1, xi_v,
           freeze_field, freeze_losses,
           dth, dpth, drh, dprh):
    """One RHS evaluation; returns (da_re, da_im)."""
    n = th.shape[0]
    d = rh.shape[1]
    xi = _xi_at(t_s, xi_t0, xi_t1, xi_v)
    sp = math.sqrt(xi * cp)
    sm = math.sqrt(xi * cm)
    a2 = are * are + aim * aim
    Sre = 0.0
    Sim = 0.0
    n_act = 0
    for j in range(n):
        if not act[j]:
            dth[j] = 0.0
            dpth[j] = 0.0
            for q in range(d):
                drh[j, q] = 0.0
                dprh[j, q] = 0.0
            continue
        n_act += 1
        r2 = 0.0
        for q in range(d):
            r2 += rh[j, q] * rh[j, q]
        f = math.exp(-2.0 * r2)
        c = math.cos(th[j])
        s = math.sin(th[j])
        zre = are * c + aim * s      # Re(a e^{-i th})
        zim = aim * c - are * s      # Im(a e^{-i th})
        intensity = xi * cp + a2 + 2.0 * sp * zre
        dth[j] = kax * pth[j]
        dpth[j] = 2.0 * eps * sp * f * zim
        for q in range(d):
            drh[j, q] = krad * prh[j, q]
            dprh[j, q] = -4.0 * eps * rh[j, q] * f * intensity
        Sre += f * c
        Sim += f * s
    if freeze_field or n_act == 0:
        return 0.0, 0.0
    nfrac = 1.0 if freeze_losses else _nfrac(t_s, g_lin, beta_n0)
    wgt = nfrac * n0_over_nsim  # atoms per *initial* particle; N(t)/n_act applied next
    scale = wgt * th.shape[0] / n_act
    Swre = scale * Sre
    Swim = scale * Sim
    # conj(S) a
    csa_re = Swre * are + Swim * aim
    da_re = -U * csa_re / sp * aim - are + U * (Swim * sp) + sm
    da_im = U * csa_re / sp * are - aim - U * (Swre * sp)
    return da_re, da_im


@njit(cache=True)
def _evolve_kernel(th, pth, rh, prh, are0, aim0, act,
                   n_samples, n_sub, h, t0_s, gamma_c,
                   kax, krad, eps, cp, cm, U, n0_over_nsim,
                   g_lin, beta_n0, xi_t0, xi_t1, xi_v,
                   freeze_field, freeze_losses,
                   out_are, out_aim, out_sth, out_srh, out_sprh,
                   out_en, out_loc, out_nact):
    n = th.shape[0]
    d = rh.shape[1]
    are = are0
    aim = aim0
    k1t = np.empty(n); k1p = np.empty(n); k1r = np.empty((n, d)); k1q = np.empty((n, d))
    k2t = np.empty(n); k2p = np.empty(n); k2r = np.empty((n, d)); k2q = np.empty((n, d))
    k3t = np.empty(n); k3p = np.empty(n); k3r = np.empty((n, d)); k3q = np.empty((n, d))
    k4t = np.empty(n); k4p = np.empty(n); k4r = np.empty((n, d)); k4q = np.empty((n, d))
    tt = np.empty(n); tp = np.empty(n); tr = np.empty((n, d)); tq = np.empty((n, d))
    tau = 0.0

    for s_i in range(n_samples):
        # observables at the current state
        n_act = 0
        Sre = 0.0; Sim = 0.0
        for j in range(n):
            if act[j]:
                n_act += 1
        phi_a = math.atan2(aim, are)
        sum_dth = 0.0; sum_dth2 = 0.0
        sum_rh = np.zeros(d); sum_rh2 = 0.0
        sum_pr = np.zeros(d); sum_pr2 = 0.0
        sum_e = 0.0
        a2 = are * are + aim * aim
        t_s = t0_s + tau / gamma_c
        xi = _xi_at(t_s, xi_t0, xi_t1, xi_v)
        spn = math.sqrt(xi * cp)
        for j in range(n):
            if not act[j]:
                continue
            r2 = 0.0
            for q in range(d):
                r2 += rh[j, q] * rh[j, q]
            f = math.exp(-2.0 * r2)
            c = math.cos(th[j]); si = math.sin(th[j])
            Sre += f * c; Sim += f * si
            dthj = th[j] - phi_a
            dthj -= 2.0 * math.pi * math.floor(dthj / (2.0 * math.pi) + 0.5)
            sum_dth += dthj; sum_dth2 += dthj * dthj
            for q in range(d):
                sum_rh[q] += rh[j, q]
                sum_pr[q] += prh[j, q]
            sum_rh2 += r2
            pr2 = 0.0
            for q in range(d):
                pr2 += prh[j, q] * prh[j, q]
            sum_pr2 += pr2
            zre = are * c + aim * si
            V = -eps * f * (xi * cp + a2 + 2.0 * spn * zre)
            sum_e += 0.5 * kax * pth[j] * pth[j] + 0.5 * krad * pr2 + V
        out_are[s_i] = are
        out_aim[s_i] = aim
        out_nact[s_i] = n_act
        if n_act > 0:
            mdth = sum_dth / n_act
            var_th = sum_dth2 / n_act - mdth * mdth
            out_sth[s_i] = math.sqrt(max(var_th, 0.0))
            mr2 = 0.0
            mp2 = 0.0
            for q in range(d):
                mr2 += (sum_rh[q] / n_act) ** 2
                mp2 += (sum_pr[q] / n_act) ** 2
            out_srh[s_i] = math.sqrt(max(sum_rh2 / n_act - mr2, 0.0))
            out_sprh[s_i] = math.sqrt(max(sum_pr2 / n_act - mp2, 0.0))
            out_en[s_i] = sum_e / n_act
            out_loc[s_i] = math.sqrt(Sre * Sre + Sim * Sim) / n_act
        else:
            out_sth[s_i] = 0.0; out_srh[s_i] = 0.0
            out_sprh[s_i] = 0.0; out_en[s_i] = 0.0; out_loc[s_i] = 0.0
        if s_i == n_samples - 1:
            break

        for _ in range(n_sub):
            t_s = t0_s + tau / gamma_c
            da1re, da1im = _deriv(th, pth, rh, prh, are, aim, act, t_s,
                                  kax, krad, eps, cp, cm, U, n0_over_nsim,
                                  g_lin, beta_n0, xi_t0, xi_t1, xi_v,
                                  freeze_field, freeze_losses,
                                  k1t, k1p, k1r, k1q)
            for j in range(n):
                tt[j] = th[j] + 0.5 * h * k1t[j]
                tp[j] = pth[j] + 0.5 * h * k1p[j]
                for q in range(d):
                    tr[j, q] = rh[j, q] + 0.5 * h * k1r[j, q]
                    tq[j, q] = prh[j, q] + 0.5 * h * k1q[j, q]
            t_mid = t0_s + (tau + 0.5 * h) / gamma_c
            da2re, da2im = _deriv(tt, tp, tr, tq, are + 0.5 * h * da1re,
                                  aim + 0.5 * h * da1im, act, t_mid,
                                  kax, krad, eps, cp, cm, U, n0_over_nsim,
                                  g_lin, beta_n0, xi_t0, xi_t1, xi_v,
                                  freeze_field, freeze_losses,
                                  k2t, k2p, k2r, k2q)
            for j in range(n):
                tt[j] = th[j] + 0.5 * h * k2t[j]
                tp[j] = pth[j] + 0.5 * h * k2p[j]
                for q in range(d):
                    tr[j, q] = rh[j, q] + 0.5 * h * k2r[j, q]
                    tq[j, q] = prh[j, q] + 0.5 * h * k2q[j, q]
            da3re, da3im = _deriv(tt, tp, tr, tq, are + 0.5 * h * da2re,
                                  aim + 0.5 * h * da2im, act, t_mid,
                                  kax, krad, eps, cp, cm, U, n0_over_nsim,
                                  g_lin, beta_n0, xi_t0, xi_t1, xi_v,
                                  freeze_field, freeze_losses,
                                  k3t, k3p, k3r, k3q)
            for j in range(n):
                tt[j] = th[j] + h * k3t[j]
                tp[j] = pth[j] + h * k3p[j]
                for q in range(d):
                    tr[j, q] = rh[j, q] + h * k3r[j, q]
                    tq[j, q] = prh[j, q] + h * k3q[j, q]
            t_end = t0_s + (tau + h) / gamma_c
            da4re, da4im = _deriv(tt, tp, tr, tq, are + h * da3re,
                                  aim + h * da3im, act, t_end,
                                  kax, krad, eps, cp, cm, U, n0_over_nsim,
                                  g_lin, beta_n0, xi_t0, xi_t1, xi_v,
                                  freeze_field, freeze_losses,
                                  k4t, k4p, k4r, k4q)
            h6 = h / 6.0
            for j in range(n):
                th[j] += h6 * (k1t[j] + 2.0 * k2t[j] + 2.0 * k3t[j] + k4t[j])
                pth[j] += h6 * (k1p[j] + 2.0 * k2p[j] + 2.0 * k3p[j] + k4p[j])
                for q in range(d):
                    rh[j, q] += h6 * (k1r[j, q] + 2.0 * k2r[j, q]
                                      + 2.0 * k3r[j, q] + k4r[j, q])
                    prh[j, q] += h6 * (k1q[j, q] + 2.0 * k2q[j, q]
                                       + 2.0 * k3q[j, q] + k4q[j, q])
            are += h6 * (da1re + 2.0 * da2re + 2.0 * da3re + da4re)
            aim += h6 * (da1im + 2.0 * da2im + 2.0 * da3im + da4im)
            tau += h
        # escape check once per sample interval
        for j in range(n):
            if act[j]:
                r2 = 0.0
                for q in range(d):
                    r2 += rh[j, q] * rh[j, q]
                if r2 > ESCAPE_RADIUS * ESCAPE_RADIUS:
                    act[j] = False
    return are, aim


def evolve(sys: ParticleSystem, cav: CavityParams, pump: PumpConfig,
           ens: EnsembleParams, params: DynamicsParams,
           t_span: tuple[float, float], dt: float,
           out_dt: float = 10e-6, freeze_field: bool = False,
           freeze_losses: bool = False) -> ParticleTrace:
    """Fixed-step RK4 evolution of the joint field-particle state.

    ``dt`` must resolve the fastest oscillation (dt <= 1/(50*nu_ax) at the
    effective depth).  The per-particle weight follows N(t) referenced to
    t = 0, so ``sys.weight`` must be N(t_span[0])/n_sim with t_span starting
    at zero whenever losses are active.  Particles leaving |rho| > 5 waists
    are dropped with the remaining weight renormalized (noted in ``meta``).
    """
    nu_eff = params.nu_ax * math.sqrt(params.depth_factor)
    if dt > 1.0 / (50.0 * nu_eff) * (1.0 + 1e-9):
        raise DomainError(
            f"dt = {dt:.3e} s too coarse; need <= {1.0 / (50.0 * nu_eff):.3e} s")
    t0, t1 = t_span
    if t1 <= t0:
        raise DomainError("t_span must be ordered")
    n_sub = max(1, int(math.ceil(out_dt / dt - 1e-9)))
    dt_eff = out_dt / n_sub
    n_samples = int(round((t1 - t0) / out_dt)) + 1
    gc = cav.gamma_c
    a0_abs = abs(sys.a)
    k_ax, k_rad = params.stiffness(cav, pump, a0_abs)

    xi_t0 = np.array([w[0] for w in pump.xi_windows], dtype=float)
    xi_t1 = np.array([w[1] for w in pump.xi_windows], dtype=float)
    xi_v = np.array([w[2] for w in pump.xi_windows], dtype=float)

    th = sys.theta.copy()
    pth = sys.p_theta.copy()
    rh = sys.rho.copy()
    prh = sys.p_rho.copy()
    act = np.ones(sys.n_sim, dtype=np.bool_)

    n_out = n_samples
    out_are = np.empty(n_out); out_aim = np.empty(n_out)
    out_sth = np.empty(n_out); out_srh = np.empty(n_out)
    out_sprh = np.empty(n_out); out_en = np.empty(n_out)
    out_loc = np.empty(n_out); out_nact = np.empty(n_out, dtype=np.int64)

    # atoms per simulated particle at the loss-law reference time t = 0; the
    # kernel applies N(t)/N0 itself, so segments may start at any t0
    if freeze_losses:
        n0_over_nsim = sys.weight
    else:
        n0_over_nsim = ens.N0 / sys.n_sim
    _evolve_kernel(th, pth, rh, prh, sys.a.real, sys.a.imag, act,
                   n_samples, n_sub, gc * dt_eff, t0, gc,
                   k_ax, k_rad, params.eps, pump.chi0_plus, pump.chi0_minus,
                   cav.U, n0_over_nsim,
                   ens.gamma_lin, ens.beta * ens.N0,
                   xi_t0, xi_t1, xi_v,
                   freeze_field, freeze_losses,
                   out_are, out_aim, out_sth, out_srh, out_sprh,
                   out_en, out_loc, out_nact)

    t = t0 + np.arange(n_out) * out_dt
    a = out_are + 1j * out_aim
    if freeze_losses:
        n_atoms = np.full(n_out, sys.weight * sys.n_sim)
    else:
        n_atoms = np.array([atom_number(ti, ens) for ti in t])
    escaped = int(sys.n_sim - out_nact[-1])
    keep = act
    final_weight = (n_atoms[-1] / max(int(out_nact[-1]), 1))
    final_system = ParticleSystem(
        theta=th[keep].copy(), p_theta=pth[keep].copy(),
        rho=rh[keep].copy(), p_rho=prh[keep].copy(),
        a=complex(out_are[-1], out_aim[-1]), weight=float(final_weight))
    meta = {"n_sim": sys.n_sim, "escaped": escaped, "dt": dt_eff,
            "weight_renormalized": escaped > 0, "final_system": final_system}
    return ParticleTrace(t=t, tau=gc * t, a=a, chi_minus=np.abs(a) ** 2,
                         phi=np.unwrap(np.angle(a)), n_atoms=n_atoms,
                         loc=out_loc, sigma_theta=out_sth, sigma_rho=out_srh,
                         sigma_prho=out_sprh, mean_energy=out_en, meta=meta)


def periodogram_peak(x: np.ndarray, dt: float, median_factor: float = 3.0,
                     f_floor: float = 0.0, detrend: int = 1,
                     prefer_fundamental: bool = False):
    """Dominant spectral peak of a uniformly sampled signal.

    The mean (and, by default, a linear trend: slow baseline drifts would
    otherwise dominate the low bins) is removed, no taper.  Peaks below
    ``f_floor`` are ignored.  With ``prefer_fundamental`` the lowest peak
    within a factor 3 of the strongest one wins, so a distorted
    oscillation is not reported at its second harmonic.  Returns
    (f_peak, peak_over_median) refined by quadratic interpolation around
    the chosen bin, or None when no peak exceeds ``median_factor`` times
    the spectral median.
    """
    x = np.asarray(x, dtype=float)
    if detrend > 0 and len(x) > detrend + 1:
        tt = np.arange(len(x), dtype=float)
        y = x - np.polyval(np.polyfit(tt, x, detrend), tt)
    else:
        y = x - x.mean()
    if float(np.std(y)) < 1e-12 * (abs(float(x.mean())) + 1.0):
        return None
    p = np.abs(np.fft.rfft(y)) ** 2
    freqs = np.fft.rfftfreq(len(y), d=dt)
    if len(p) < 3:
        return None
    sel = (freqs >= max(f_floor, 0.5 * freqs[1]))
    if not np.any(sel):
        return None
    p_sel = np.where(sel, p, 0.0)
    k = int(np.argmax(p_sel))
    med = float(np.median(p[1:]))
    if med <= 0.0 or p[k] < median_factor * med:
        return None
    if prefer_fundamental:
        # local maxima above a third of the top peak, lowest frequency first
        strong = np.flatnonzero(sel & (p >= p[k] / 3.0))
        for kk in strong:
            if 0 < kk < len(p) - 1 and p[kk] >= p[kk - 1] and p[kk] >= p[kk + 1]:
                k = int(kk)
                break
    if 1 <= k < len(p) - 1:
        denom = p[k - 1] - 2.0 * p[k] + p[k + 1]
        delta = 0.0 if denom == 0.0 else 0.5 * (p[k - 1] - p[k + 1]) / denom
        delta = float(np.clip(delta, -0.5, 0.5))
    else:
        delta = 0.0
    df = freqs[1] - freqs[0]
    return float(freqs[k] + delta * df), float(p[k] / med)


def squeezing_frequency(trace: ParticleTrace, f_floor: float = 0.0):
    """(f_peak_hz, drift_hz_per_ms) of the radial-spread oscillation.

    f_peak is the periodogram peak of sigma_rho(t); drift comes from the peak
    frequencies of the two half-windows.  Returns None when no spectral peak
    stands 3x above the median ("no oscillation detected").  Raises when the
    trace covers fewer than 10 oscillation periods.
    """
    dt = float(trace.t[1] - trace.t[0])
    pk = periodogram_peak(trace.sigma_rho, dt, f_floor=f_floor, detrend=2,
                          prefer_fundamental=True)
    if pk is None:
        return None
    f_peak, _ = pk
    span = trace.t[-1] - trace.t[0]
    if span * f_peak < 10.0:
        raise DomainError(
            f"trace covers only {span * f_peak:.1f} periods of {f_peak:.0f} Hz; "
            "need >= 10")
    n = len(trace.sigma_rho)
    half = n // 2
    pk1 = periodogram_peak(trace.sigma_rho[:half], dt, f_floor=f_floor,
                           detrend=2, prefer_fundamental=True)
    pk2 = periodogram_peak(trace.sigma_rho[half:], dt, f_floor=f_floor,
                           detrend=2, prefer_fundamental=True)
    if pk1 is None or pk2 is None:
        return f_peak, 0.0
    dt_centers_ms = (half * dt) * 1e3
    drift = (pk2[0] - pk1[0]) / dt_centers_ms
    return f_peak, float(drift)


def spread_phase_difference(trace: ParticleTrace, f_hz: float) -> float:
    """Phase of sigma_prho relative to sigma_rho at frequency ``f_hz``, rad.

    Single-bin Fourier projection of both detrended spreads; pi means the
    spreads breathe anticyclically.
    """
    t = trace.t
    x = trace.sigma_rho - trace.sigma_rho.mean()
    y = trace.sigma_prho - trace.sigma_prho.mean()
    ph = np.exp(-2j * np.pi * f_hz * t)
    zx = np.sum(x * ph)
    zy = np.sum(y * ph)
    if abs(zx) == 0.0 or abs(zy) == 0.0:
        raise DomainError("no spectral content at the requested frequency")
    return float(np.angle(zy / zx))
