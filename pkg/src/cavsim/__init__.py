"""Collective atomic motion in a pumped high-finesse ring-cavity lattice.

Two engines under one parameter set: an adiabatic mean-field solver for the
unlocked cavity mode (with fixed-point/bistability analysis and jump
detection) and a coupled field-particle integrator for non-adiabatic
effects such as self-induced squeezing oscillations, plus scenario runners
reproducing the pumping-asymmetry family, the power-step response, and the
frequency-depth scaling.
"""

from .core import (
    CavityParams,
    CavsimError,
    DomainError,
    EnsembleParams,
    FieldState,
    PumpConfig,
    atom_number,
    coupling_strength,
    localization_factor,
)
from .adiabatic import (
    AdiabaticRun,
    FieldTrace,
    FixedPoint,
    FixedPointSet,
    JumpInfo,
    StiffnessError,
    UnderflowError,
    detect_jump,
    eq1_rhs,
    fixed_points,
    initial_amplitude,
    initial_amplitude_self_consistent,
    integrate,
)
from .particles import (
    DynamicsParams,
    ParticleSystem,
    ParticleTrace,
    SamplingError,
    evolve,
    field_rhs,
    forces,
    mode_profile,
    potential,
    sample_thermal,
    squeezing_frequency,
)
from .scenarios import (
    ASYMMETRY_PRESETS,
    CalibrationError,
    ScenarioSpec,
    SweepResult,
    calibrate_losses,
    compare_adiabatic_full,
    run_asymmetry_family,
    run_freq_vs_depth,
    run_power_step,
    run_squeezing,
)
from .config import Config, ConfigError, parse_config, serialize_config

__version__ = "0.1.0"
