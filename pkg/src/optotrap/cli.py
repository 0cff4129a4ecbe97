"""Command-line front end.

``optotrap <command> --config run.json [--out DIR] [--seed N]
[--allow-unstable] [--equal-total-power | --no-equal-total-power]``

Every command writes one or more CSV files plus ``<command>.meta.json``
into ``--out``. Exit codes: 0 success, 1 invalid configuration,
2 numerical failure, 3 refusal to analyse an unstable configuration.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, InvalidParameterError, OptotrapError, UnstableSystemError
from .landscape import potential_2mc, potential_3mc
from .linear_dynamics import (
    build_drift_matrix_2mc,
    build_drift_matrix_3mc,
    joint_equilibrium_2mc,
    routh_hurwitz_stable,
)
from .params import derive_constants
from .response import (
    combine_fields,
    effective_params_closed_form,
    fit_effective_params,
    frequency_ratio,
    ground_state_damping_bound,
    phonon_number,
    resonance_grid,
    susceptibility_from_drift,
)
from .steady_state import (
    bistability_analysis,
    three_mirror_monostability_check,
    three_mirror_steady_state,
    two_mirror_equilibrium,
)
from .timedomain import (
    MIN_LENGTH_FACTOR,
    NoiseModel,
    WindowConfig,
    estimate_spectrum,
    integrate_trajectory,
    max_step,
)

COMMANDS = ("steady", "stability", "effective", "potential", "quanta", "simulate", "sweep", "compare")
EXIT_CONFIG, EXIT_NUMERIC, EXIT_UNSTABLE = 1, 2, 3

STATE_UNITS = {"dX": "1", "dY": "1", "dQ": "m", "dP": "kg*m/s", "dq": "m", "dp": "kg*m/s"}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    """CSV with a ``quantity [unit]`` header and round-trip float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_metadata(out: Path, command: str, cfg: RunConfig, args, files, results) -> Path:
    meta = {
        "artifact": "optotrap",
        "version": __version__,
        "command": command,
        "config": cfg.normalized,
        "flags": {
            "seed": args.seed,
            "allow_unstable": args.allow_unstable,
            "equal_total_power": args.equal_total_power,
        },
        "outputs": [Path(f).name for f in files],
        "results": results,
    }
    path = out / f"{command}.meta.json"
    path.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _total_power(cfg: RunConfig, args, default: bool = True) -> bool:
    """Whether a 2MC field power is the full pump (False doubles it)."""
    if args.equal_total_power is not None:
        return not args.equal_total_power
    return bool(cfg.options.get("total_power", default))


def _drift(cfg: RunConfig, total_power: bool, position=None):
    if cfg.configuration == "3MC":
        return build_drift_matrix_3mc(cfg.system, cfg.fields)
    return build_drift_matrix_2mc(cfg.system, cfg.fields, position, total_power)


def _require_stable(A, args):
    rep = routh_hurwitz_stable(A)
    if not rep.routh_hurwitz_stable and not args.allow_unstable:
        raise UnstableSystemError(
            f"configuration is {rep.verdict} (max Re lambda = {rep.max_real_part:.4e} 1/s); "
            "pass --allow-unstable to proceed"
        )
    return rep


def _closed_form(cfg: RunConfig, total_power: bool, eval_freq=None):
    return effective_params_closed_form(cfg.system, cfg.fields, cfg.configuration, eval_freq,
                                        None, total_power)


# ---------------------------------------------------------------- commands


def cmd_steady(cfg: RunConfig, args, out: Path):
    p = cfg.system
    gamma = p.cavity_decay
    header = ["role", "branch [1]", "position [m]", "effective_detuning [rad/s]",
              "effective_detuning_over_gamma [1]", "field_amplitude [1]", "root_count [1]"]
    rows, results = [], {}
    if cfg.configuration == "3MC":
        for f in cfg.fields:
            ss = three_mirror_steady_state(p, f)
            roots = three_mirror_monostability_check(p, f)
            rows.append([f.role, 0, ss.mirror_position, f.detuning, f.detuning / gamma,
                         ss.field_amplitude, len(roots)])
            results[f.role] = {"field_amplitude": ss.field_amplitude, "static_roots": roots}
    else:
        tp = _total_power(cfg, args)
        if len(cfg.fields) == 1:
            f = cfg.fields[0]
            eq = two_mirror_equilibrium(p, f, tp)
            for b, (q, dp, a) in enumerate(zip(eq.positions, eq.effective_detunings, eq.field_amplitudes)):
                rows.append([f.role, b, q, dp, dp / gamma, a, eq.n_roots])
            results = {
                "stability_class": eq.stability_class,
                "positions": eq.positions,
                "delta_prime_over_gamma": [d / gamma for d in eq.effective_detunings],
                "default_branch": eq.default_branch,
            }
            pr = cfg.options.get("power_range")
            if pr is not None:
                rep = bistability_analysis(p, f.detuning, (float(pr[0]), float(pr[1])))
                results["bistability"] = {
                    "classification": rep.classification,
                    "threshold_power": rep.threshold_power,
                    "analytic_window": rep.analytic_window,
                }
        else:
            qs = joint_equilibrium_2mc(p, cfg.fields, tp)
            for b, q in enumerate(qs):
                A = build_drift_matrix_2mc(p, cfg.fields, q, tp)
                for f, dp, a in zip(cfg.fields, A.detunings, A.amplitudes):
                    rows.append([f.role, b, q, dp, dp / gamma, a, len(qs)])
            results = {"positions": qs}
    path = write_csv(out / "steady.csv", header, rows)
    for r in rows:
        print(f"{r[0]:>5} branch {r[1]}: q_s = {r[2]:.6e} m, Delta'/gamma = {r[4]:.6f}, roots = {r[6]}")
    return [path], results


def cmd_stability(cfg: RunConfig, args, out: Path):
    p = cfg.system
    tp = _total_power(cfg, args)
    positions = [0.0] if cfg.configuration == "3MC" else joint_equilibrium_2mc(p, cfg.fields, tp)
    header = ["branch [1]", "position [m]", "routh_hurwitz_stable [1]", "verdict", "rhp_roots [1]",
              "max_real_eigenvalue [1/s]", "eigenvalue_agreement [1]"]
    rows = []
    for b, q in enumerate(positions):
        A = _drift(cfg, tp, None if cfg.configuration == "3MC" else q)
        rep = routh_hurwitz_stable(A)
        rows.append([b, q, rep.routh_hurwitz_stable, rep.verdict, rep.rhp_roots, rep.max_real_part,
                     rep.consistent])
        print(f"branch {b}: q_s = {q:.6e} m  Routh-Hurwitz {rep.verdict} "
              f"(max Re lambda = {rep.max_real_part:.6e} 1/s)")
    path = write_csv(out / "stability.csv", header, rows)
    return [path], {"verdicts": [r[3] for r in rows]}


def cmd_effective(cfg: RunConfig, args, out: Path):
    p = cfg.system
    tp = _total_power(cfg, args)
    closed = _closed_form(cfg, tp)
    A = _drift(cfg, tp)
    _require_stable(A, args)
    rows = [["closed_form", closed.eval_freq, closed.omega_eff, closed.gamma_eff,
             closed.omega_eff / p.mech_freq]]
    results = {"closed_form": {"omega_eff": closed.omega_eff, "gamma_eff": closed.gamma_eff}}
    if not closed.anti_trapped:
        fit = fit_effective_params(susceptibility_from_drift(A, resonance_grid(A)))
        rows.append(["numeric_fit", fit.eval_freq, fit.omega_eff, fit.gamma_eff, fit.omega_eff / p.mech_freq])
        results["numeric_fit"] = {"omega_eff": fit.omega_eff, "gamma_eff": fit.gamma_eff,
                                  "fit_residual": fit.fit_residual}
    header = ["method", "eval_freq [rad/s]", "omega_eff [rad/s]", "gamma_eff [rad/s]",
              "omega_eff_over_omega_m [1]"]
    path = write_csv(out / "effective.csv", header, rows)
    for r in rows:
        print(f"{r[0]:>12}: Omega_eff = {r[2]:.6e} rad/s ({r[4]:.4f} Omega_M), Gamma_eff = {r[3]:.6e} 1/s")
    return [path], results


def cmd_potential(cfg: RunConfig, args, out: Path):
    p = cfg.system
    if len(cfg.fields) != 1:
        raise ConfigError("potential needs exactly one drive field")
    f = cfg.fields[0]
    window = float(cfg.options.get("q_window", p.wavelength / 4.0))
    n = int(cfg.options.get("n_points", 4001))
    if cfg.configuration == "3MC":
        curve = potential_3mc(p, f, window, n)
    else:
        curve = potential_2mc(p, f, window, n, _total_power(cfg, args))
    files = [
        write_csv(out / "potential.csv", ["position [m]", "potential [J]", "force [N]"],
                  zip(curve.positions, curve.potential, curve.force)),
        write_csv(out / "potential_minima.csv", ["position [m]", "curvature [N/m]"], curve.minima),
    ]
    for q, k in curve.minima:
        print(f"minimum at q = {q:.6e} m, curvature {k:.6e} N/m")
    return files, {"minima": curve.minima}


def cmd_quanta(cfg: RunConfig, args, out: Path):
    p = cfg.system
    tp = _total_power(cfg, args)
    trap, cool = cfg.field_by_role("trap"), cfg.field_by_role("cool")
    if trap is not None and cool is not None:
        eff = combine_fields(p, trap, cool, cfg.configuration, tp)
    else:
        eff = _closed_form(cfg, tp)
    _require_stable(_drift(cfg, tp), args)
    occ = phonon_number(p, eff)
    bound = ground_state_damping_bound(p, cfg.fields, cfg.configuration, tp)
    scale = derive_constants(p).thermal_quanta_scale
    row = [occ.n_quanta, scale, occ.gamma_ratio, occ.omega_ratio, occ.omega_ratio**3, eff.omega_eff,
           eff.gamma_eff, p.mech_freq / p.mech_damping,
           bound.max_mech_damping, bound.min_quality_factor]
    header = ["n_quanta [1]", "thermal_quanta_scale [1]", "gamma_ratio [1]", "omega_ratio [1]",
              "omega_ratio_cubed [1]", "omega_eff [rad/s]", "gamma_eff [rad/s]", "quality_factor [1]",
              "max_mech_damping [rad/s]", "min_quality_factor [1]"]
    path = write_csv(out / "quanta.csv", header, [row])
    print(f"n = {occ.n_quanta:.6g}")
    print(f"  k_B T / hbar Omega_M   = {scale:.6g}")
    print(f"  Gamma_M / Gamma_eff    = {occ.gamma_ratio:.6g}")
    print(f"  (Omega_M / Omega_eff)^3 = {occ.omega_ratio**3:.6g}")
    if bound.max_mech_damping > 0:
        print(f"  n < 1 requires Gamma_M < {bound.max_mech_damping:.6g} 1/s (Q_M > {bound.min_quality_factor:.6g})")
    return [path], dict(zip([h.split(" ")[0] for h in header], row))


def cmd_simulate(cfg: RunConfig, args, out: Path):
    p = cfg.system
    opts = cfg.options
    tp = _total_power(cfg, args)
    A = _drift(cfg, tp)
    seed = args.seed if args.seed is not None else int(opts.get("seed", 0))
    noise = NoiseModel.for_system(p, seed=seed, vacuum=bool(opts.get("vacuum", True)),
                                  thermal=bool(opts.get("thermal", True)))
    dt = float(opts.get("dt", 0.8 * max_step(A)))
    duration = float(opts.get("duration", 1.0))
    record_every = int(opts.get("record_every", max(1, round(1e-5 / dt))))
    n_steps = max(1, round(duration / (dt * record_every))) * record_every
    seg = int(opts.get("segment_length", 4096))
    win = WindowConfig(segment_length=seg, discard=int(opts.get("discard", 0)))
    usable = n_steps // record_every + 1 - win.discard
    if usable < MIN_LENGTH_FACTOR * seg:
        raise ConfigError(
            f"duration gives {usable} usable samples; the spectrum needs {MIN_LENGTH_FACTOR} x {seg}"
        )
    try:
        traj = integrate_trajectory(A, noise, dt, n_steps, record_every=record_every,
                                    allow_unstable=args.allow_unstable)
    except UnstableSystemError as exc:
        raise UnstableSystemError(f"{exc}; pass --allow-unstable to proceed") from None
    files = []
    if opts.get("write_trajectory", True):
        header = ["time [s]"] + [f"{lab} [{STATE_UNITS.get(lab.split('_')[0], '1')}]" for lab in traj.ordering]
        files.append(write_csv(out / "trajectory.csv", header,
                               (np.concatenate([[t], s]) for t, s in zip(traj.times, traj.states))))
    results = {"dt": dt, "n_steps": n_steps, "sample_interval": traj.sample_interval, "seed": seed}
    sp = estimate_spectrum(traj, win)
    files.append(write_csv(out / "spectrum.csv", ["angular_frequency [rad/s]", "psd [m^2*s]"],
                           zip(sp.freq_grid, sp.psd)))
    results["spectrum"] = {
        "segments_averaged": sp.segments_averaged, "fitted_peak": sp.fitted_peak,
        "fitted_width": sp.fitted_width, "fit_residual": sp.fit_residual,
        "peak_stderr": sp.peak_stderr, "width_stderr": sp.width_stderr,
    }
    print(f"simulated {n_steps} steps of {dt:.4e} s; {sp.segments_averaged} segments")
    print(f"fitted peak {sp.fitted_peak:.6e} +- {sp.peak_stderr:.2e} rad/s, "
          f"width {sp.fitted_width:.6e} +- {sp.width_stderr:.2e} 1/s")
    return files, results


_SWEEP_UNITS = {
    "omega_eff": "rad/s", "gamma_eff": "rad/s", "n_quanta": "1", "stability": "1",
    "root_count": "1", "delta_prime": "rad/s",
}


def _sweep_point(task):
    cfg, outputs, total_power = task
    p = cfg.system
    vals = {}
    err = ""
    try:
        eff = None
        if {"omega_eff", "gamma_eff", "n_quanta"} & set(outputs):
            eff = _closed_form(cfg, total_power)
        for o in outputs:
            if o == "omega_eff":
                vals[o] = eff.omega_eff
            elif o == "gamma_eff":
                vals[o] = eff.gamma_eff
            elif o == "n_quanta":
                vals[o] = phonon_number(p, eff).n_quanta
            elif o == "stability":
                vals[o] = routh_hurwitz_stable(_drift(cfg, total_power)).routh_hurwitz_stable
            elif o == "root_count":
                if cfg.configuration == "3MC":
                    vals[o] = len(three_mirror_monostability_check(p, cfg.fields[0]))
                else:
                    vals[o] = len(joint_equilibrium_2mc(p, cfg.fields, total_power))
            elif o == "delta_prime":
                if cfg.configuration == "3MC":
                    vals[o] = cfg.fields[0].detuning
                else:
                    vals[o] = two_mirror_equilibrium(p, cfg.fields[0], total_power).effective_detuning
    except (OptotrapError, ValueError) as exc:
        err = f"{type(exc).__name__}: {exc}"
    return [vals.get(o, float("nan")) for o in outputs], err


def cmd_sweep(cfg: RunConfig, args, out: Path):
    if cfg.sweep is None:
        raise ConfigError("sweep command needs a 'sweep' section")
    axes = cfg.sweep.axes
    grids = [ax.values() for ax in axes]
    tp = _total_power(cfg, args)
    points = list(itertools.product(*grids))
    tasks = []
    for pt in points:
        c = cfg
        for ax, v in zip(axes, pt):
            c = c.with_value(ax.path, float(v))
        tasks.append((c, cfg.sweep.outputs, tp))
    workers = int(cfg.options.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]

    from .config import FIELD_KINDS, SYSTEM_KINDS

    unit_of = {"power": "W", "rate": "rad/s", "length": "m", "mass": "kg", "temperature": "K"}
    header = []
    for ax in axes:
        kind = SYSTEM_KINDS.get(ax.path.split(".")[-1]) if ax.path.startswith("system.") \
            else FIELD_KINDS[ax.path.split(".")[-1]]
        header.append(f"{ax.path} [{unit_of[kind]}]")
    header += [f"{o} [{_SWEEP_UNITS[o]}]" for o in cfg.sweep.outputs] + ["error"]
    rows = [list(pt) + vals + [err] for pt, (vals, err) in zip(points, results)]
    path = write_csv(out / "sweep.csv", header, rows)
    n_err = sum(1 for _, e in results if e)
    print(f"swept {len(points)} points ({n_err} with errors) -> {path}")
    return [path], {"points": len(points), "errors": n_err}


def cmd_compare(cfg: RunConfig, args, out: Path):
    p = cfg.system
    f = cfg.field_by_role("trap") or cfg.fields[0]
    doubled = True if args.equal_total_power is None else args.equal_total_power
    three = effective_params_closed_form(p, f, "3MC", 0.0)
    two = effective_params_closed_form(p, f, "2MC", 0.0, None, total_power=not doubled)
    gamma = p.cavity_decay
    rows = [
        ["omega_eff_over_omega_m", "1", three.omega_eff / p.mech_freq, two.omega_eff / p.mech_freq],
        ["omega_eff", "rad/s", three.omega_eff, two.omega_eff],
        ["gamma_eff", "rad/s", three.gamma_eff, two.gamma_eff],
        ["effective_detuning_over_gamma", "1", three.detunings[0] / gamma, two.detunings[0] / gamma],
        ["pump_power", "W", 2.0 * f.power, (2.0 if doubled else 1.0) * f.power],
    ]
    results = {r[0]: {"3MC": r[2], "2MC": r[3]} for r in rows}
    ratio = three.omega_eff / two.omega_eff
    results["frequency_ratio"] = ratio
    if doubled:
        fr = frequency_ratio(p, f)
        results["frequency_ratio_formula"] = fr.formula
    path = write_csv(out / "compare.csv", ["quantity", "unit", "3MC", "2MC"], rows)
    print(f"{'quantity':<32}{'3MC':>16}{'2MC':>16}")
    for r in rows:
        print(f"{r[0]:<32}{r[2]:>16.6g}{r[3]:>16.6g}")
    print(f"{'frequency ratio 3MC/2MC':<32}{ratio:>16.6g}")
    return [path], results


HANDLERS = {
    "steady": cmd_steady, "stability": cmd_stability, "effective": cmd_effective,
    "potential": cmd_potential, "quanta": cmd_quanta, "simulate": cmd_simulate,
    "sweep": cmd_sweep, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optotrap", description="Optical trapping and cooling of a movable mirror.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default="optotrap-out", help="output directory (default: %(default)s)")
    ap.add_argument("--seed", type=int, default=None, help="u64 seed for stochastic runs")
    ap.add_argument("--allow-unstable", action="store_true",
                    help="analyse configurations that fail the Routh-Hurwitz test")
    ap.add_argument("--equal-total-power", action=argparse.BooleanOptionalAction, default=None,
                    help="pump the two-mirror cavity with twice the per-side power "
                         "(default on for compare, off elsewhere)")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: ConfigError: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        files, results = HANDLERS[args.command](cfg, args, out)
    except UnstableSystemError as exc:
        print(f"error: UnstableSystemError: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OptotrapError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError) as exc:
        # malformed command options
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_metadata(out, args.command, cfg, args, files, results)
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
