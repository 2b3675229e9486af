"""Configuration documents: parsing, validation, defaults, serialization.

The on-disk format is an INI-style document with sections ``cavity``,
``pump``, ``ensemble``, ``dynamics`` and ``scenario``.  Every physical
quantity carries its unit in the key name (``gamma_c_per_s``, ``t_end_ms``).
Unknown keys are hard errors; missing keys fall back to the documented
defaults, which reproduce the published parameter set.  Internally all
dynamics are dimensionless; this module is the only place where file-facing
units are converted.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .core import (
    DEFAULT_BETA_N0,
    DEFAULT_DELTA0,
    DEFAULT_ETA_AX,
    DEFAULT_ETA_RAD,
    DEFAULT_FINESSE,
    DEFAULT_GAMMA_C,
    DEFAULT_GAMMA_LIN,
    DEFAULT_MODE_VOLUME,
    DEFAULT_T0,
    DEFAULT_UN0,
    DEFAULT_WAIST,
    DEFAULT_WAVELENGTH,
    CavityParams,
    CavsimError,
    DomainError,
    EnsembleParams,
    PumpConfig,
)
from .particles import DynamicsParams


class ConfigError(CavsimError):
    """Malformed configuration document; message names the offending key."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Run-level knobs: what to run, for how long, from which start value."""

    kind: str = "adiabatic"
    seed: int = 1234
    t_end: float = 0.05
    out_dt: float = 10e-6
    a_init_mode: str = "auto"      # auto | self-consistent | fixed
    a_init_abs: float = 0.0
    settle: float = 1e-3
    rtol: float = 1e-8
    atol: float = 1e-10
    n_particles: int = 100
    particle_dt: float = 2e-6
    xi_window: tuple[float, float] = (5e-3, 7e-3)
    xi_factor: float = 0.5
    target_t_jump: float = 0.035


@dataclass(frozen=True)
class Config:
    cav: CavityParams = field(default_factory=CavityParams)
    pump: PumpConfig = field(default_factory=lambda: PumpConfig(0.5, 0.5))
    ens: EnsembleParams = field(default_factory=lambda: EnsembleParams.from_rates(
        N0=DEFAULT_UN0 / (DEFAULT_DELTA0 / DEFAULT_GAMMA_C),
        gamma_lin=DEFAULT_GAMMA_LIN, beta_n0=DEFAULT_BETA_N0))
    dyn: DynamicsParams = field(default_factory=DynamicsParams)
    scen: ScenarioConfig = field(default_factory=ScenarioConfig)

    @property
    def un0(self) -> float:
        return self.cav.U * self.ens.N0


# (section, key) -> (aspect, converter); converters map file units to SI
_FLOAT = float
_INT = int


def _str(x):
    return str(x)


_SCHEMA = {
    ("cavity", "gamma_c_per_s"): _FLOAT,
    ("cavity", "delta0_per_s"): _FLOAT,
    ("cavity", "wavelength_m"): _FLOAT,
    ("cavity", "waist_m"): _FLOAT,
    ("cavity", "finesse"): _FLOAT,
    ("cavity", "mode_volume_m3"): _FLOAT,
    ("pump", "chi0_minus"): _FLOAT,
    ("pump", "chi0_plus"): _FLOAT,
    ("ensemble", "un0"): _FLOAT,
    ("ensemble", "gamma_lin_per_s"): _FLOAT,
    ("ensemble", "beta_n0_per_s"): _FLOAT,
    ("ensemble", "eta_ax"): _FLOAT,
    ("ensemble", "eta_rad"): _FLOAT,
    ("ensemble", "temperature_k"): _FLOAT,
    ("dynamics", "nu_ax_hz"): _FLOAT,
    ("dynamics", "nu_rad_hz"): _FLOAT,
    ("dynamics", "radial_dims"): _INT,
    ("dynamics", "depth_factor"): _FLOAT,
    ("scenario", "kind"): _str,
    ("scenario", "seed"): _INT,
    ("scenario", "t_end_ms"): _FLOAT,
    ("scenario", "out_grid_us"): _FLOAT,
    ("scenario", "a_init_mode"): _str,
    ("scenario", "a_init_abs"): _FLOAT,
    ("scenario", "settle_ms"): _FLOAT,
    ("scenario", "rtol"): _FLOAT,
    ("scenario", "atol"): _FLOAT,
    ("scenario", "n_particles"): _INT,
    ("scenario", "particle_dt_us"): _FLOAT,
    ("scenario", "xi_window_start_ms"): _FLOAT,
    ("scenario", "xi_window_end_ms"): _FLOAT,
    ("scenario", "xi_factor"): _FLOAT,
    ("scenario", "target_t_jump_ms"): _FLOAT,
}

_SECTIONS = ("cavity", "pump", "ensemble", "dynamics", "scenario")


def _collect(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            conv = _SCHEMA.get((section, key))
            if conv is None:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                values[(section, key)] = conv(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"{section}.{key}: cannot parse '{raw}'") from exc
    return values


def _apply(values: dict) -> Config:
    def get(sec, key, default):
        return values.get((sec, key), default)

    gamma_c = get("cavity", "gamma_c_per_s", DEFAULT_GAMMA_C)
    delta0 = get("cavity", "delta0_per_s", DEFAULT_DELTA0)
    if gamma_c <= 0:
        raise ConfigError("cavity.gamma_c_per_s must be > 0")
    if delta0 <= 0:
        raise ConfigError("cavity.delta0_per_s must be > 0")
    try:
        cav = CavityParams(
            gamma_c=gamma_c, delta0=delta0,
            wavelength=get("cavity", "wavelength_m", DEFAULT_WAVELENGTH),
            waist=get("cavity", "waist_m", DEFAULT_WAIST),
            finesse=get("cavity", "finesse", DEFAULT_FINESSE),
            mode_volume=get("cavity", "mode_volume_m3", DEFAULT_MODE_VOLUME))
    except DomainError as exc:
        raise ConfigError(f"cavity: {exc}") from exc

    has_m = ("pump", "chi0_minus") in values
    has_p = ("pump", "chi0_plus") in values
    if has_m and has_p:
        cm = values[("pump", "chi0_minus")]
        cpl = values[("pump", "chi0_plus")]
        if abs(cm + cpl - 1.0) > 1e-9:
            raise ConfigError(
                "pump.chi0_minus + pump.chi0_plus must equal 1 "
                f"(got {cm} + {cpl})")
    elif has_m:
        cm = values[("pump", "chi0_minus")]
        cpl = 1.0 - cm
    elif has_p:
        cpl = values[("pump", "chi0_plus")]
        cm = 1.0 - cpl
    else:
        cm, cpl = 0.5, 0.5
    if not (0.0 <= cm <= 1.0):
        raise ConfigError("pump.chi0_minus must lie in [0, 1]")
    try:
        pump = PumpConfig(chi0_plus=cpl, chi0_minus=cm)
    except DomainError as exc:
        raise ConfigError(f"pump: {exc}") from exc

    un0 = get("ensemble", "un0", DEFAULT_UN0)
    if un0 < 0:
        raise ConfigError("ensemble.un0 must be >= 0")
    n0 = un0 / cav.U if un0 > 0 else 1.0
    try:
        ens = EnsembleParams.from_rates(
            N0=n0,
            gamma_lin=get("ensemble", "gamma_lin_per_s", DEFAULT_GAMMA_LIN),
            beta_n0=get("ensemble", "beta_n0_per_s", DEFAULT_BETA_N0),
            eta_ax=get("ensemble", "eta_ax", DEFAULT_ETA_AX),
            eta_rad=get("ensemble", "eta_rad", DEFAULT_ETA_RAD),
            T0=get("ensemble", "temperature_k", DEFAULT_T0))
    except DomainError as exc:
        raise ConfigError(f"ensemble: {exc}") from exc

    try:
        dyn = DynamicsParams(
            nu_ax=get("dynamics", "nu_ax_hz", 5e3),
            nu_rad=get("dynamics", "nu_rad_hz", 500.0),
            depth_factor=get("dynamics", "depth_factor", 1.0),
            radial_dims=get("dynamics", "radial_dims", 2))
    except DomainError as exc:
        raise ConfigError(f"dynamics: {exc}") from exc

    kind = get("scenario", "kind", "adiabatic")
    a_mode = get("scenario", "a_init_mode", "auto")
    if a_mode not in ("auto", "self-consistent", "bare", "fixed"):
        raise ConfigError(f"scenario.a_init_mode: unknown mode '{a_mode}'")
    scen = ScenarioConfig(
        kind=kind,
        seed=get("scenario", "seed", 1234),
        t_end=get("scenario", "t_end_ms", 50.0) * 1e-3,
        out_dt=get("scenario", "out_grid_us", 10.0) * 1e-6,
        a_init_mode=a_mode,
        a_init_abs=get("scenario", "a_init_abs", 0.0),
        settle=get("scenario", "settle_ms", 1.0) * 1e-3,
        rtol=get("scenario", "rtol", 1e-8),
        atol=get("scenario", "atol", 1e-10),
        n_particles=get("scenario", "n_particles", 100),
        particle_dt=get("scenario", "particle_dt_us", 2.0) * 1e-6,
        xi_window=(get("scenario", "xi_window_start_ms", 5.0) * 1e-3,
                   get("scenario", "xi_window_end_ms", 7.0) * 1e-3),
        xi_factor=get("scenario", "xi_factor", 0.5),
        target_t_jump=get("scenario", "target_t_jump_ms", 35.0) * 1e-3)
    for name, v in (("t_end_ms", scen.t_end), ("out_grid_us", scen.out_dt),
                    ("rtol", scen.rtol), ("atol", scen.atol),
                    ("particle_dt_us", scen.particle_dt)):
        if v <= 0:
            raise ConfigError(f"scenario.{name} must be > 0")
    if scen.n_particles < 1:
        raise ConfigError("scenario.n_particles must be >= 1")
    return Config(cav=cav, pump=pump, ens=ens, dyn=dyn, scen=scen)


def parse_config(text: str) -> Config:
    """Validated configuration from an INI document (empty -> defaults)."""
    return _apply(_collect(text))


def apply_overrides(cfg_text: str, overrides) -> str:
    """Merge ``--set section.key=value`` pairs into a config document."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(cfg_text)
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(
                f"override '{ov}' must look like section.key=value")
        path, value = ov.split("=", 1)
        section, key = path.split(".", 1)
        if (section, key) not in _SCHEMA:
            raise ConfigError(f"unknown key {section}.{key}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def serialize_config(cfg: Config) -> str:
    """Full config document; parse(serialize(cfg)) reproduces cfg exactly."""
    s = cfg.scen
    lines = [
        "[cavity]",
        f"gamma_c_per_s = {cfg.cav.gamma_c!r}",
        f"delta0_per_s = {cfg.cav.delta0!r}",
        f"wavelength_m = {cfg.cav.wavelength!r}",
        f"waist_m = {cfg.cav.waist!r}",
        f"finesse = {cfg.cav.finesse!r}",
        f"mode_volume_m3 = {cfg.cav.mode_volume!r}",
        "",
        "[pump]",
        f"chi0_minus = {cfg.pump.chi0_minus!r}",
        f"chi0_plus = {cfg.pump.chi0_plus!r}",
        "",
        "[ensemble]",
        f"un0 = {cfg.un0!r}",
        f"gamma_lin_per_s = {cfg.ens.gamma_lin!r}",
        f"beta_n0_per_s = {cfg.ens.beta * cfg.ens.N0!r}",
        f"eta_ax = {cfg.ens.eta_ax!r}",
        f"eta_rad = {cfg.ens.eta_rad!r}",
        f"temperature_k = {cfg.ens.T0!r}",
        "",
        "[dynamics]",
        f"nu_ax_hz = {cfg.dyn.nu_ax!r}",
        f"nu_rad_hz = {cfg.dyn.nu_rad!r}",
        f"radial_dims = {cfg.dyn.radial_dims}",
        f"depth_factor = {cfg.dyn.depth_factor!r}",
        "",
        "[scenario]",
        f"kind = {s.kind}",
        f"seed = {s.seed}",
        f"t_end_ms = {s.t_end * 1e3!r}",
        f"out_grid_us = {s.out_dt * 1e6!r}",
        f"a_init_mode = {s.a_init_mode}",
        f"a_init_abs = {s.a_init_abs!r}",
        f"settle_ms = {s.settle * 1e3!r}",
        f"rtol = {s.rtol!r}",
        f"atol = {s.atol!r}",
        f"n_particles = {s.n_particles}",
        f"particle_dt_us = {s.particle_dt * 1e6!r}",
        f"xi_window_start_ms = {s.xi_window[0] * 1e3!r}",
        f"xi_window_end_ms = {s.xi_window[1] * 1e3!r}",
        f"xi_factor = {s.xi_factor!r}",
        f"target_t_jump_ms = {s.target_t_jump * 1e3!r}",
        "",
    ]
    return "\n".join(lines)
