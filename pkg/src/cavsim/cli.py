"""Command-line interface.

One subcommand per scenario/analysis operation.  Results go to ``--out``
(trace CSV, or summary CSV for sweeps); a single machine-readable line of
``key=value`` pairs is printed to stdout.  Diagnostics go to stderr only.
Exit codes: 0 success, 1 domain error, 2 usage error.

Seed precedence: ``--seed`` flag > ``CAVSIM_SEED`` environment variable >
config file.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import csvio
from .adiabatic import detect_jump, fixed_points
from .config import Config, ConfigError, apply_overrides, parse_config
from .core import CavsimError
from .scenarios import (
    ASYMMETRY_PRESETS,
    calibrate_losses,
    compare_adiabatic_full,
    resolve_a_init,
    run_adiabatic,
    run_asymmetry_family,
    run_particles,
    run_power_step,
    run_freq_vs_depth,
    run_squeezing,
)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _summary_line(prefix: str, pairs: dict) -> None:
    body = " ".join(f"{k}={_fmt(v)}" for k, v in pairs.items())
    print(f"{prefix} {body}".strip())


def _load_config(args) -> Config:
    text = ""
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    if args.set:
        text = apply_overrides(text, args.set)
    cfg = parse_config(text)
    seed = cfg.scen.seed
    env = os.environ.get("CAVSIM_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError as exc:
            raise ConfigError(f"CAVSIM_SEED='{env}' is not an integer") from exc
    if args.seed is not None:
        seed = args.seed
    if seed != cfg.scen.seed:
        cfg = replace(cfg, scen=replace(cfg.scen, seed=seed))
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="configuration document")
    p.add_argument("--set", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config key")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (overrides env and config)")


def _a_init(cfg: Config) -> float:
    return resolve_a_init(cfg.pump, cfg.ens.eta_ax, cfg.ens.eta_rad, cfg.un0,
                          mode=cfg.scen.a_init_mode,
                          a_init_abs=cfg.scen.a_init_abs)


def _cmd_adiabatic(args) -> int:
    cfg = _load_config(args)
    a0 = _a_init(cfg)
    tr = run_adiabatic(cfg.cav, cfg.pump, cfg.ens, a0, cfg.scen.t_end,
                       cfg.scen.out_dt, cfg.scen.rtol, cfg.scen.atol)
    jump = detect_jump(tr, settle_s=cfg.scen.settle)
    if args.out:
        csvio.write_trace(args.out, tr)
    pairs = {"a_init": a0, "chi_end": float(tr.chi_minus[-1]),
             "jump": jump is not None}
    if jump:
        pairs.update(t_jump_s=jump.t_jump, rise_time_s=jump.rise_time,
                     delta_phi_rad=jump.delta_phi)
    _summary_line("adiabatic", pairs)
    return 0


def _cmd_particles(args) -> int:
    cfg = _load_config(args)
    a0 = _a_init(cfg)
    tr = run_particles(cfg.cav, cfg.pump, cfg.ens, cfg.dyn,
                       cfg.scen.n_particles, cfg.scen.seed, a0, cfg.un0,
                       cfg.scen.t_end, dt=cfg.scen.particle_dt,
                       out_dt=cfg.scen.out_dt)
    if args.out:
        csvio.write_trace(args.out, tr)
    _summary_line("particles", {
        "a_init": a0, "chi_end": float(tr.chi_minus[-1]),
        "sigma_rho_end": float(tr.sigma_rho[-1]),
        "escaped": tr.meta["escaped"]})
    return 0


def _cmd_fixed_points(args) -> int:
    cfg = _load_config(args)
    if args.chi0m is not None:
        pump = replace(cfg.pump, chi0_minus=args.chi0m,
                       chi0_plus=1.0 - args.chi0m)
    else:
        pump = cfg.pump
    un = args.un if args.un is not None else cfg.un0
    a0 = args.a0 if args.a0 is not None else resolve_a_init(
        pump, cfg.ens.eta_ax, cfg.ens.eta_rad, un,
        mode=cfg.scen.a_init_mode, a_init_abs=cfg.scen.a_init_abs)
    fps = fixed_points(un, pump, a0, cfg.ens.eta_ax, cfg.ens.eta_rad)
    if args.out:
        rows = [{"re_a": p.a_star.real, "im_a": p.a_star.imag,
                 "abs_a": abs(p.a_star), "chi_minus": abs(p.a_star) ** 2,
                 "stable": p.stable,
                 "eig1_re": p.eigenvalues[0].real,
                 "eig2_re": p.eigenvalues[1].real} for p in fps.points]
        csvio.write_summary(args.out, "abs_a", rows,
                            ("re_a", "im_a", "abs_a", "chi_minus", "stable",
                             "eig1_re", "eig2_re"),
                            comment=f"fixed points at UN={un}")
    stable = fps.stable_points()
    pairs = {"un": un, "a0": a0, "n_points": len(fps),
             "n_stable": len(stable)}
    for i, p in enumerate(stable):
        pairs[f"stable{i}_abs_a"] = abs(p.a_star)
        pairs[f"stable{i}_chi"] = abs(p.a_star) ** 2
    _summary_line("fixed-points", pairs)
    return 0


def _cmd_sweep_asymmetry(args) -> int:
    cfg = _load_config(args)
    pairs = ASYMMETRY_PRESETS.get(args.preset) if args.preset else None
    if args.preset and pairs is None:
        raise ConfigError(f"unknown preset '{args.preset}'; expected one of "
                          + ", ".join(ASYMMETRY_PRESETS))
    if pairs is None:
        pairs = ASYMMETRY_PRESETS["paper-fig4"]
    sweep = run_asymmetry_family(pairs, cfg.cav, cfg.ens,
                                 t_end=cfg.scen.t_end,
                                 a_init_mode=cfg.scen.a_init_mode,
                                 out_dt=cfg.scen.out_dt,
                                 settle_s=cfg.scen.settle,
                                 rtol=cfg.scen.rtol, atol=cfg.scen.atol)
    cols = ("chi0_minus", "un0", "a_init", "plateau", "jump", "t_jump_s",
            "rise_time_s", "delta_phi_rad", "chi_end", "error")
    if args.out:
        csvio.write_summary(args.out, "chi0_minus", sweep.rows, cols,
                            comment="pumping asymmetry family")
        base, ext = os.path.splitext(args.out)
        for row in sweep.rows:
            if "trace" in row:
                csvio.write_trace(
                    f"{base}_chi{int(round(row['chi0_minus'] * 100)):02d}{ext}",
                    row["trace"])
    jumps = [r for r in sweep.rows if r.get("jump")]
    _summary_line("sweep-asymmetry", {
        "rows": len(sweep.rows), "jumps": len(jumps),
        "t_jump_first_s": jumps[0]["t_jump_s"] if jumps else float("nan")})
    return 0


def _cmd_power_step(args) -> int:
    cfg = _load_config(args)
    xi_list = ([float(x) for x in args.xi.split(",")] if args.xi
               else [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    a0 = _a_init(cfg)
    sweep = run_power_step(xi_list, cfg.scen.xi_window, cfg.cav, cfg.pump,
                           cfg.ens, a0, out_dt=cfg.scen.out_dt,
                           rtol=cfg.scen.rtol, atol=cfg.scen.atol)
    cols = ("xi_p", "chi_scaled", "chi_before_window", "chi_early_window",
            "chi_at_sample", "error")
    if args.out:
        csvio.write_summary(args.out, "xi_p", sweep.rows, cols,
                            comment="power-step response, sampled at "
                                    f"{sweep.meta['t_sample']:.6g} s")
    vals = [r.get("chi_scaled") for r in sweep.rows if not r.get("error")]
    mono = all(b < a for a, b in zip(vals, vals[1:]))
    _summary_line("power-step", {"rows": len(sweep.rows),
                                 "monotone_decreasing": mono})
    return 0


def _cmd_squeezing(args) -> int:
    cfg = _load_config(args)
    mode = cfg.scen.a_init_mode
    if mode == "auto":
        # the ring is measured on the robust collective branch
        mode = "bare"
    s = run_squeezing(cfg.cav, cfg.pump, cfg.ens, cfg.dyn,
                      n_sim=cfg.scen.n_particles, seed=cfg.scen.seed,
                      t_end=cfg.scen.t_end, a_init_mode=mode,
                      out_dt=cfg.scen.out_dt)
    if args.out:
        csvio.write_trace(args.out, s["trace"])
    _summary_line("squeezing", {
        "oscillation": s["oscillation"], "f_peak_hz": s["f_peak_hz"],
        "drift_hz_per_ms": s["drift_hz_per_ms"],
        "phase_diff_rad": s["phase_diff_rad"],
        "two_nu_rad_hz": 2.0 * cfg.dyn.nu_rad})
    return 0


def _cmd_freq_vs_depth(args) -> int:
    cfg = _load_config(args)
    factors = ([float(x) for x in args.factors.split(",")] if args.factors
               else [0.25, 0.5, 1.0, 2.0])
    sweep = run_freq_vs_depth(factors, cfg.cav, cfg.pump, cfg.ens, cfg.dyn,
                              n_sim=cfg.scen.n_particles, seed=cfg.scen.seed,
                              t_end=cfg.scen.t_end)
    if args.out:
        csvio.write_summary(args.out, "depth_factor", sweep.rows,
                            ("depth_factor", "f_peak_hz", "oscillation",
                             "error"),
                            comment="squeezing frequency vs well depth; "
                                    f"exponent={sweep.meta['exponent']:.6g} "
                                    f"+- {sweep.meta['exponent_std']:.3g}")
    _summary_line("freq-vs-depth", {"exponent": sweep.meta["exponent"],
                                    "exponent_std": sweep.meta["exponent_std"]})
    return 0


def _cmd_calibrate_losses(args) -> int:
    cfg = _load_config(args)
    target = (args.target_ms * 1e-3 if args.target_ms is not None
              else cfg.scen.target_t_jump)
    a0 = _a_init(cfg)
    g, bn = calibrate_losses(target, cfg.cav, cfg.pump, cfg.ens, a0,
                             out_dt=cfg.scen.out_dt)
    _summary_line("calibrate-losses", {
        "target_t_jump_s": target, "gamma_lin_per_s": g,
        "beta_n0_per_s": bn})
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    res = compare_adiabatic_full(cfg.cav, cfg.pump, cfg.ens, cfg.dyn,
                                 n_sim=cfg.scen.n_particles,
                                 seed=cfg.scen.seed, t_end=cfg.scen.t_end,
                                 out_dt=cfg.scen.out_dt,
                                 a_init_mode=cfg.scen.a_init_mode)
    if args.out:
        base, ext = os.path.splitext(args.out)
        csvio.write_trace(f"{base}_adiabatic{ext}", res["trace_adiabatic"])
        csvio.write_trace(f"{base}_particles{ext}", res["trace_particles"])
    _summary_line("compare", {
        "rms_full": res["rms_full"], "rms_excluded": res["rms_excluded"],
        "excluded_fraction": res["excluded_fraction"]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cavsim",
        description="Collective atom dynamics in a pumped ring-cavity lattice")
    sub = ap.add_subparsers(dest="command", required=True)

    cmds = {
        "adiabatic": (_cmd_adiabatic, "integrate the adiabatic field equation"),
        "particles": (_cmd_particles, "run the coupled field-particle engine"),
        "fixed-points": (_cmd_fixed_points, "steady states of the field equation"),
        "sweep-asymmetry": (_cmd_sweep_asymmetry, "pumping-asymmetry trace family"),
        "power-step": (_cmd_power_step, "power-step response sweep"),
        "squeezing": (_cmd_squeezing, "self-induced squeezing oscillation run"),
        "freq-vs-depth": (_cmd_freq_vs_depth, "squeezing frequency vs well depth"),
        "calibrate-losses": (_cmd_calibrate_losses, "fit loss rates to a jump time"),
        "compare": (_cmd_compare, "adiabatic vs full-engine deviation"),
    }
    for name, (fn, help_) in cmds.items():
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        p.set_defaults(fn=fn)
        if name == "fixed-points":
            p.add_argument("--un", type=float, default=None,
                           help="coupling strength U*N")
            p.add_argument("--chi0m", type=float, default=None,
                           help="unlocked-mode pump fraction")
            p.add_argument("--a0", type=float, default=None,
                           help="localization reference amplitude")
        elif name == "sweep-asymmetry":
            p.add_argument("--preset", default="paper-fig4",
                           help="named (chi0-, UN0) table: "
                                + ", ".join(ASYMMETRY_PRESETS))
        elif name == "power-step":
            p.add_argument("--xi", default=None,
                           help="comma-separated power factors")
        elif name == "freq-vs-depth":
            p.add_argument("--factors", default=None,
                           help="comma-separated depth factors")
        elif name == "calibrate-losses":
            p.add_argument("--target-ms", type=float, default=None,
                           help="requested jump time in ms")
    return ap


def run_cli(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except CavsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
