"""Adiabatic mean-field dynamics of the unlocked cavity mode.

The thermal ensemble is assumed to follow the instantaneous optical wells,
which collapses the whole system onto one complex ODE for the scaled
unlocked-mode amplitude a(tau), tau = gamma_c*t:

    da/dtau = i*(U*N/sqrt(chi0+)) * L(a) * |a| * a  -  a
              + sqrt(chi0-)  -  i*U*N*sqrt(chi0+) * L(a) * a/|a|

with the localization factor L(a) from :func:`cavsim.core.localization_factor`
and N(t) decaying by the configured loss law.  During a power-step window the
incoupled amplitudes sqrt(chi0+-) each carry an extra factor sqrt(xi_P) while
the t = 0 references inside L stay untouched.

This module integrates that equation with an adaptive embedded Runge-Kutta
pair, locates and classifies its fixed points, and extracts jump statistics
from computed traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CavityParams,
    CavsimError,
    DomainError,
    EnsembleParams,
    PumpConfig,
    atom_number,
    localization_factor,
)

UNDERFLOW_ABS = 1e-9      # |a| below this halts integration (1/|a| factors blow up)
MIN_STEP_TAU = 1e-12      # dimensionless step collapse threshold
SYMMETRIC_WINDOW = 0.005  # |chi0+ - chi0-| below this counts as symmetric pumping


class UnderflowError(CavsimError):
    """|a| fell below the guard threshold; the partial trace is attached."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class StiffnessError(CavsimError):
    """Adaptive step size collapsed; the equation left its non-stiff regime."""


def eq1_rhs(a: complex, UN: float, pump: PumpConfig, a0_abs: float,
            eta_ax: float, eta_rad: float, xi_p: float = 1.0) -> complex:
    """Right-hand side da/dtau of the adiabatic field equation.

    ``xi_p`` scales both incoupled amplitudes by sqrt(xi_p); the a0-referenced
    localization is evaluated with the unscaled t = 0 quantities.
    """
    r = abs(a)
    if r < UNDERFLOW_ABS:
        raise UnderflowError(f"|a| = {r:.3e} underflow, 1/|a| terms diverge")
    if UN < 0:
        raise DomainError("UN must be >= 0")
    L = localization_factor(r, a0_abs, pump.chi0_plus, eta_ax, eta_rad)
    sx = math.sqrt(xi_p)
    sp = sx * math.sqrt(pump.chi0_plus)
    sm = sx * math.sqrt(pump.chi0_minus)
    return 1j * (UN / sp) * L * r * a - a + sm - 1j * UN * sp * L * (a / r)


def initial_amplitude(pump: PumpConfig, eta_ax: float, eta_rad: float) -> float:
    """Default MOT-prepared starting amplitude |a(0)|.

    For symmetric pumping the lattice builds up undisturbed and the start
    value is the bare sqrt(chi0-).  Away from symmetry the measured
    truncation ratios fix the start value instead: eta_ax and eta_rad share
    one temperature, so their ratio equals the axial/radial well-depth ratio
    at t = 0,

        eta_rad/eta_ax = 4*sqrt(chi0+)*a0 / (sqrt(chi0+) + a0)^2,

    which solves to a0 = sqrt(chi0+) * ((2-q) - 2*sqrt(1-q))/q with
    q = eta_rad/eta_ax (suppressed branch).
    """
    if abs(pump.chi0_plus - pump.chi0_minus) < SYMMETRIC_WINDOW:
        return math.sqrt(pump.chi0_minus)
    q = eta_rad / eta_ax
    if not (0.0 < q < 1.0):
        raise DomainError(
            "default a(0) rule needs eta_rad < eta_ax; set a_init explicitly")
    return math.sqrt(pump.chi0_plus) * ((2.0 - q) - 2.0 * math.sqrt(1.0 - q)) / q


def initial_amplitude_self_consistent(UN0: float, pump: PumpConfig,
                                      eta_ax: float, eta_rad: float) -> float:
    """Lowest-|a| steady amplitude of the field equation closed at a0 = |a|.

    At t = 0 the localization factor degenerates to the constant
    L0 = exp(-eta_ax)/(1 + eta_rad), turning the stationarity condition into
    a quadratic in |a|^2.  Returns the smaller positive root (falls back to
    the larger one, then to sqrt(chi0-) when no root exists).
    """
    L0 = math.exp(-eta_ax) / (1.0 + eta_rad)
    cp, cm = pump.chi0_plus, pump.chi0_minus
    g2 = (UN0 * L0) ** 2
    # u + g2*(u - cp)^2/cp = cm
    coeffs = [g2 / cp, 1.0 - 2.0 * g2, g2 * cp - cm]
    roots = np.roots(coeffs)
    real = sorted(float(u.real) for u in roots
                  if abs(u.imag) < 1e-12 and 0.0 < u.real <= 1.0)
    if not real:
        return math.sqrt(cm)
    return math.sqrt(real[0])


@dataclass(frozen=True)
class AdiabaticRun:
    """Everything one integration needs: parameters, start value, span, tolerances."""

    cav: CavityParams
    pump: PumpConfig
    ens: EnsembleParams
    a_init: complex
    t_span: tuple[float, float] = (0.0, 0.05)
    rtol: float = 1e-8
    atol: float = 1e-10
    out_dt: float = 10e-6

    def __post_init__(self):
        if self.t_span[1] <= self.t_span[0]:
            raise DomainError("t_span must be ordered")
        if self.rtol <= 0 or self.atol <= 0:
            raise DomainError("tolerances must be > 0")
        if abs(self.a_init) <= 0:
            raise DomainError("a_init must have positive modulus")


@dataclass(frozen=True)
class FieldTrace:
    """Uniformly sampled adiabatic trace with derived observables."""

    t: np.ndarray           # s
    tau: np.ndarray         # gamma_c * t
    a: np.ndarray           # complex amplitude
    chi_minus: np.ndarray   # |a|^2
    phi: np.ndarray         # unwrapped phase, rad
    n_atoms: np.ndarray
    loc: np.ndarray         # localization factor along the trace
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)


# Dormand-Prince 5(4) pair, FSAL.  The 5th-order solution propagates, the
# embedded 4th-order difference drives step control.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                  -17253 / 339200, 22 / 525, -1 / 40])  # b5 - b4


def _dp45_step(f, tau, y, h, k1):
    """One embedded step; returns (y5, err_estimate, k_last)."""
    k = [k1]
    for i in range(1, 7):
        acc = 0.0 + 0.0j
        for j, aij in enumerate(_DP_A[i]):
            acc += aij * k[j]
        k.append(f(tau + _DP_C[i] * h, y + h * acc))
    y5 = y + h * sum(b * ki for b, ki in zip(_DP_B5, k) if b != 0.0)
    err = h * sum(e * ki for e, ki in zip(_DP_E, k) if e != 0.0)
    return y5, err, k[6]


def _integrate_adaptive(f, tau_grid, y0, rtol, atol):
    """Adaptive DP45 over a fixed output grid, landing exactly on each node.

    ``f(tau, y)`` -> complex derivative.  Returns the array of y at the grid
    nodes.  Raises StiffnessError on step collapse; an UnderflowError from
    the RHS propagates with the completed node values in ``exc.partial``.
    """
    y = complex(y0)
    out = np.empty(len(tau_grid), dtype=complex)
    out[0] = y
    tau = tau_grid[0]
    k1 = f(tau, y)
    h = min(1e-2, (tau_grid[-1] - tau_grid[0]) / 100.0) or 1e-2
    for idx in range(1, len(tau_grid)):
        tau_next = tau_grid[idx]
        while tau < tau_next - 1e-12 * max(1.0, abs(tau_next)):
            h = min(h, tau_next - tau)
            if h < MIN_STEP_TAU:
                raise StiffnessError(
                    f"step size collapsed to {h:.2e} at tau = {tau:.4f}")
            try:
                y5, err, k_last = _dp45_step(f, tau, y, h, k1)
            except UnderflowError as exc:
                exc.partial = out[:idx].copy()
                raise
            scale = atol + rtol * max(abs(y), abs(y5))
            enorm = abs(err) / scale
            if enorm <= 1.0:
                tau += h
                y = y5
                k1 = k_last  # FSAL
                fac = 5.0 if enorm == 0.0 else min(5.0, 0.9 * enorm ** -0.2)
                h *= max(0.2, fac)
            else:
                h *= max(0.2, 0.9 * enorm ** -0.2)
        out[idx] = y
    return out


def integrate(run: AdiabaticRun) -> FieldTrace:
    """Integrate the adiabatic field equation over ``run.t_span``.

    Adaptive embedded RK with per-step local error below the configured
    tolerances; output on a uniform grid (``run.out_dt`` spacing).  The trace
    carries chi-, unwrapped phase, N(t) and L(a(t)) alongside a(t).
    """
    gc = run.cav.gamma_c
    U = run.cav.U
    pump, ens = run.pump, run.ens
    a0_abs = abs(run.a_init)

    def f(tau, y):
        t = tau / gc
        return eq1_rhs(y, U * atom_number(t, ens), pump, a0_abs,
                       ens.eta_ax, ens.eta_rad, xi_p=pump.xi_at(t))

    t0, t1 = run.t_span
    n_out = int(round((t1 - t0) / run.out_dt)) + 1
    t_grid = t0 + np.arange(n_out) * run.out_dt
    tau_grid = gc * t_grid

    def build(t_arr, a_arr, meta=None):
        chi = np.abs(a_arr) ** 2
        phi = np.unwrap(np.angle(a_arr))
        n = np.array([atom_number(t, ens) for t in t_arr])
        loc = np.array([
            localization_factor(max(abs(av), UNDERFLOW_ABS), a0_abs,
                                pump.chi0_plus, ens.eta_ax, ens.eta_rad)
            for av in a_arr])
        return FieldTrace(t=t_arr, tau=gc * t_arr, a=a_arr, chi_minus=chi,
                          phi=phi, n_atoms=n, loc=loc, meta=meta or {})

    try:
        res = _integrate_adaptive(f, tau_grid, run.a_init, run.rtol, run.atol)
    except UnderflowError as exc:
        n_done = len(getattr(exc, "partial", []))
        if n_done:
            exc.trace = build(t_grid[:n_done], exc.partial, meta={"partial": True})
        raise
    return build(t_grid, res)


@dataclass(frozen=True)
class FixedPoint:
    a_star: complex
    stable: bool
    eigenvalues: tuple[complex, complex]


@dataclass(frozen=True)
class FixedPointSet:
    points: tuple[FixedPoint, ...]
    diagnostic: str = ""

    def stable_points(self):
        return [p for p in self.points if p.stable]

    def __len__(self):
        return len(self.points)


_FD_STEP = 1e-7  # central-difference step for the 2x2 Jacobian


def _rhs_vec(x, UN, pump, a0_abs, eta_ax, eta_rad, xi_p):
    d = eq1_rhs(complex(x[0], x[1]), UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
    return np.array([d.real, d.imag])


def _jacobian(x, UN, pump, a0_abs, eta_ax, eta_rad, xi_p):
    J = np.empty((2, 2))
    for j in range(2):
        dx = np.zeros(2)
        dx[j] = _FD_STEP
        fp = _rhs_vec(x + dx, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
        fm = _rhs_vec(x - dx, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
        J[:, j] = (fp - fm) / (2.0 * _FD_STEP)
    return J


def _newton(x0, UN, pump, a0_abs, eta_ax, eta_rad, xi_p,
            tol=1e-12, max_iter=60):
    """Damped Newton with backtracking on ||F||^2; None when not converged."""
    x = np.asarray(x0, dtype=float)
    for _ in range(max_iter):
        try:
            F = _rhs_vec(x, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
        except (UnderflowError, DomainError):
            return None
        nf = np.hypot(F[0], F[1])
        if nf < tol:
            return x
        try:
            J = _jacobian(x, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
            step = np.linalg.solve(J, -F)
        except (UnderflowError, DomainError, np.linalg.LinAlgError):
            return None
        lam = 1.0
        for _bt in range(40):
            xn = x + lam * step
            if np.hypot(xn[0], xn[1]) > UNDERFLOW_ABS:
                try:
                    Fn = _rhs_vec(xn, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
                    if np.hypot(Fn[0], Fn[1]) < nf * (1.0 - 1e-4 * lam):
                        break
                except (UnderflowError, DomainError):
                    pass
            lam *= 0.5
        else:
            return None
        x = x + lam * step
    return None


def fixed_points(UN: float, pump: PumpConfig, a0_abs: float,
                 eta_ax: float, eta_rad: float, xi_p: float = 1.0,
                 n_grid: int = 32, residual_tol: float = 1e-10,
                 dedup_tol: float = 1e-6) -> FixedPointSet:
    """Locate and classify the steady states of the field equation.

    Multi-start damped Newton on (Re rhs, Im rhs) from an ``n_grid`` x
    ``n_grid`` polar grid over |a| in (0, 1.2], phase in [0, 2pi).  Roots are
    deduplicated, filtered by residual, and classified via the eigenvalues of
    the central-difference 2x2 Jacobian (stable iff both real parts < 0).
    """
    if UN < 0:
        raise DomainError("UN must be >= 0")
    radii = np.linspace(1.2 / n_grid, 1.2, n_grid)
    phases = np.linspace(0.0, 2.0 * np.pi, n_grid, endpoint=False)
    found = []
    for r in radii:
        for ph in phases:
            x0 = np.array([r * math.cos(ph), r * math.sin(ph)])
            Xr = _newton(x0, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
            if Xr is None:
                continue
            if any(np.hypot(*(Xr - g)) < dedup_tol for g in found):
                continue
            F = _rhs_vec(Xr, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
            if np.hypot(F[0], F[1]) >= residual_tol:
                continue
            found.append(Xr)
    pts = []
    for Xr in sorted(found, key=lambda v: np.hypot(v[0], v[1])):
        J = _jacobian(Xr, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)
        ev = np.linalg.eigvals(J)
        pts.append(FixedPoint(a_star=complex(Xr[0], Xr[1]),
                              stable=bool(np.all(ev.real < 0.0)),
                              eigenvalues=(complex(ev[0]), complex(ev[1]))))
    diag = "" if pts else "no roots converged from the start grid"
    return FixedPointSet(points=tuple(pts), diagnostic=diag)


@dataclass(frozen=True)
class JumpInfo:
    t_jump: float       # s
    rise_time: float    # s, 10-90 of the jump amplitude
    delta_phi: float    # rad, unwrapped phase change across the jump window
    amplitude: float    # chi- change over the ramp


def detect_jump(trace: FieldTrace, settle_s: float = 1e-3,
                slope_factor: float = 5.0,
                min_amplitude: float = 0.02) -> JumpInfo | None:
    """Locate the bistability jump in a trace; ``None`` when there is none.

    t_jump is the time of maximum d(chi-)/dt by centred differences on the
    output grid, searched after an initial ``settle_s`` margin (the fast
    relaxation from the MOT-prepared value is not the jump).  A jump needs
    the peak slope to exceed ``slope_factor`` times the median absolute slope
    and the ramp amplitude to exceed ``min_amplitude``; rise time is the
    10-90 crossing of that ramp, and delta_phi the unwrapped phase change
    over [t_jump - 2*rise, t_jump + 2*rise].
    """
    if len(trace) < 3:
        raise DomainError("detect_jump needs at least 3 samples")
    t, chi, phi = trace.t, trace.chi_minus, trace.phi
    mask = t >= t[0] + settle_s
    if mask.sum() < 3:
        raise DomainError("trace shorter than the settle margin")
    ts, cs = t[mask], chi[mask]
    slope = np.gradient(cs, ts)
    i_pk = int(np.argmax(slope))
    pk = slope[i_pk]
    med = float(np.median(np.abs(slope)))
    if pk < slope_factor * med:
        return None

    # expand around the peak while the slope stays a meaningful fraction of it
    lo = i_pk
    while lo > 0 and slope[lo - 1] > 0.02 * pk:
        lo -= 1
    hi = i_pk
    while hi < len(slope) - 1 and slope[hi + 1] > 0.02 * pk:
        hi += 1
    c_lo, c_hi = cs[lo], cs[hi]
    amp = c_hi - c_lo
    if amp < min_amplitude:
        return None

    def crossing(level):
        seg = cs[lo:hi + 1]
        tt = ts[lo:hi + 1]
        above = np.flatnonzero(seg >= level)
        idx = int(above[0]) if len(above) else len(seg) - 1
        idx = min(max(idx, 1), len(seg) - 1)
        x0, x1 = seg[idx - 1], seg[idx]
        f = 0.0 if x1 == x0 else (level - x0) / (x1 - x0)
        return tt[idx - 1] + f * (tt[idx] - tt[idx - 1])

    t10 = crossing(c_lo + 0.1 * amp)
    t90 = crossing(c_lo + 0.9 * amp)
    rise = t90 - t10
    t_jump = ts[i_pk]

    w = (t >= t_jump - 2.0 * rise) & (t <= t_jump + 2.0 * rise)
    dphi = float(phi[w][-1] - phi[w][0]) if w.sum() >= 2 else 0.0
    return JumpInfo(t_jump=float(t_jump), rise_time=float(rise),
                    delta_phi=dphi, amplitude=float(amp))


def integrate_frozen(UN: float, pump: PumpConfig, a0_abs: float,
                     eta_ax: float, eta_rad: float, a_start: complex,
                     tau_end: float = 400.0, rtol: float = 1e-10,
                     atol: float = 1e-12, xi_p: float = 1.0) -> complex:
    """Endpoint of the field equation at frozen coupling (basin-scan helper)."""

    def f(tau, y):
        return eq1_rhs(y, UN, pump, a0_abs, eta_ax, eta_rad, xi_p)

    res = _integrate_adaptive(f, np.array([0.0, tau_end]), a_start, rtol, atol)
    return complex(res[-1])
