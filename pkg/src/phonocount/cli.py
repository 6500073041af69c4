"""Command-line front end: dispatch experiment modes and write artifacts.

Every subcommand accepts its options as flags or as a flat JSON config
file (flags win). Unknown config keys are rejected. Exit codes: 0 on
success, 2 on configuration errors (the message names the key), 3 on
numerical failure (partial artifacts plus a failure record are written
where possible).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import reports
from .cascaded import ModelParams
from .errors import ConfigError, NumericalFailure
from .experiment import (ExperimentConfig, rate_profile_report,
                         run_cascaded_collapse, run_damped_sweep,
                         run_jc_protocol)
from .fock import coherent_state, default_cutoff, fock_state, thermal_distribution
from .jc import outcome_probability_curve

ENV_OUT = "PHONOCOUNT_OUT"

_PHYSICS_FLAGS = (
    ("--g", "g", float, "opto-mechanical coupling"),
    ("--gamma", "gamma", float, "source emission rate"),
    ("--kappa1", "kappa1", float, "loss rate of the conversion cavity"),
    ("--kappa2", "kappa2", float, "detected-output cavity rate (unit scale)"),
    ("--kappa2-prime", "kappa2_prime", float, "undetected cavity loss rate"),
)

_RUN_FLAGS = (
    ("--seed", "seed", int, "random seed"),
    ("--n-max", "n_max", int, "Fock cutoff"),
    ("--r-max", "r_max", int, "number of measurements"),
    ("--dt", "dt", float, "stored grid step"),
    ("--delta", "delta", float, "window start offset past the dip"),
    ("--epsilon", "epsilon", float, "window end rate fraction"),
    ("--t-max", "t_max", float, "profile horizon override"),
    ("--idle-time", "idle_time", float, "free damping time between measurements"),
    ("--resolution", "wigner_resolution", int, "Wigner grid resolution"),
    ("--tail-tol", "tail_tol", float, "thermal truncation tail tolerance"),
    ("--threads", "threads", int, "worker threads for sweeps"),
)


def _add_common(sub, physics=True, initial=True):
    sub.add_argument("--config", default=None, metavar="FILE",
                     help="flat JSON config file; flags override its values")
    sub.add_argument("--out", default=None, metavar="DIR",
                     help="output directory (default: $%s/<subcommand>)" % ENV_OUT)
    if physics:
        for flag, dest, typ, hlp in _PHYSICS_FLAGS:
            sub.add_argument(flag, dest=dest, type=typ, default=None, help=hlp)
    for flag, dest, typ, hlp in _RUN_FLAGS:
        sub.add_argument(flag, dest=dest, type=typ, default=None, help=hlp)
    if initial:
        sub.add_argument("--beta", type=str, default=None,
                         help="coherent initial amplitude (complex ok)")
        sub.add_argument("--nbar", dest="N_bar", type=float, default=None,
                         help="thermal initial occupancy")
        sub.add_argument("--fock", dest="fock_n", type=int, default=None,
                         help="Fock initial state")
    sub.add_argument("--wigner-r", dest="wigner_r", type=str, default=None,
                     help="comma-separated snapshot rounds (empty to disable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phonocount",
        description="Conditional phonon-number measurement with single photons")
    subs = parser.add_subparsers(dest="subcommand")

    s = subs.add_parser("jc-sweep", help="single-readout outcome probability vs theta")
    _add_common(s, physics=False)
    s.add_argument("--theta-min", type=float, default=None)
    s.add_argument("--theta-max", type=float, default=None)
    s.add_argument("--points", type=int, default=None)
    s.set_defaults(func=cmd_jc_sweep)

    s = subs.add_parser("jc-collapse", help="repeated interaction-time readouts")
    _add_common(s, physics=False)
    s.add_argument("--theta", type=float, default=None, help="constant readout angle")
    s.add_argument("--thetas", type=str, default=None,
                   help="comma-separated explicit angle schedule")
    s.add_argument("--sample-outcomes", dest="jc_sample_outcomes",
                   action="store_true", default=None,
                   help="draw outcomes from the Born rule instead of postselecting x=1")
    s.set_defaults(func=cmd_jc_collapse)

    s = subs.add_parser("rate-profile", help="no-count detection rate decomposition")
    _add_common(s)
    s.set_defaults(func=cmd_rate_profile)

    s = subs.add_parser("collapse", help="repeated single-photon readout (pure state)")
    _add_common(s)
    s.set_defaults(func=cmd_collapse)

    s = subs.add_parser("damped-sweep",
                        help="damped collapse runs over gamma_m values")
    _add_common(s)
    s.add_argument("--gamma-m-values", dest="gamma_m_values", type=str, default=None,
                   help="comma-separated mechanical damping rates")
    s.set_defaults(func=cmd_damped_sweep)

    s = subs.add_parser("wigner", help="Wigner snapshots along a collapse run")
    _add_common(s)
    s.set_defaults(func=cmd_wigner)

    return parser


def _parse_beta(raw):
    if raw is None:
        return None
    if isinstance(raw, (int, float)):
        return complex(raw)
    if isinstance(raw, (list, tuple)) and len(raw) == 2:
        return complex(raw[0], raw[1])
    try:
        return complex(str(raw).replace(" ", ""))
    except ValueError:
        raise ConfigError("beta: cannot parse %r as a complex number" % (raw,))


def _parse_float_list(raw, key):
    if raw is None:
        return None
    if isinstance(raw, (list, tuple)):
        return tuple(float(v) for v in raw)
    parts = [p for p in str(raw).split(",") if p.strip() != ""]
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError("%s: cannot parse %r as a list of numbers" % (key, raw))


def _parse_int_list(raw, key):
    vals = _parse_float_list(raw, key)
    if vals is None:
        return None
    out = []
    for v in vals:
        if v != int(v):
            raise ConfigError("%s: %r is not an integer" % (key, v))
        out.append(int(v))
    return tuple(out)


def _merge_config_file(args):
    if args.config is None:
        return
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError("config: cannot read %s (%s)" % (args.config, e))
    except json.JSONDecodeError as e:
        raise ConfigError("config: %s is not valid JSON (%s)" % (args.config, e))
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    allowed = {k for k in vars(args) if k not in ("func", "config", "subcommand")}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError("unknown config key %r" % key)
        if getattr(args, key) is None:
            setattr(args, key, value)


def _fill(args, **defaults):
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _out_dir(args, subcommand: str) -> str:
    if args.out is not None:
        out = str(args.out)
    else:
        base = os.environ.get(ENV_OUT, "phonocount-out")
        out = os.path.join(base, subcommand)
    os.makedirs(out, exist_ok=True)
    return out


def _params_from(args) -> ModelParams:
    kw = {}
    for _, dest, _, _ in _PHYSICS_FLAGS:
        v = getattr(args, dest, None)
        if v is not None:
            kw[dest] = v
    try:
        return ModelParams(**kw)
    except ValueError as e:
        raise ConfigError(str(e))


def _warn_units(params: ModelParams, warnings: list):
    if abs(params.kappa2 - 1.0) > 1e-12:
        msg = ("kappa2 = %g: rates are quoted in units of kappa2, "
               "so reference outputs assume kappa2 = 1" % params.kappa2)
        warnings.append(msg)
        print("warning: " + msg, file=sys.stderr)


def _run_flags_kwargs(args) -> dict:
    kw = {}
    for _, dest, _, _ in _RUN_FLAGS:
        if dest in ("seed", "r_max"):
            continue
        v = getattr(args, dest, None)
        if v is not None:
            kw[dest] = v
    wr = getattr(args, "wigner_r", None)
    if wr is not None:
        kw["wigner_r"] = _parse_int_list(wr, "wigner_r") or ()
    return kw


def _config_error(e) -> int:
    print("config error: %s" % e, file=sys.stderr)
    return 2


def _numerical_failure(e, config, subcommand, outdir, warnings) -> int:
    print("numerical failure: %s" % e, file=sys.stderr)
    files = []
    trace = getattr(e, "partial_trace", None)
    if trace is not None:
        try:
            mode = config.mode if config is not None else "cascaded_collapse"
            files = reports.emit_figure_bundle(trace, mode, outdir)
        except Exception as inner:
            print("could not write partial artifacts: %s" % inner, file=sys.stderr)
    failure = {"type": type(e).__name__, "message": str(e)}
    extra = reports.trace_manifest_extra(trace) if trace is not None else None
    manifest = reports.build_manifest(config, subcommand,
                                      getattr(config, "seed", None), files,
                                      warnings, extra, failure)
    reports.atomic_write_json(os.path.join(outdir, "manifest.json"), manifest)
    return 3


def cmd_jc_sweep(args) -> int:
    _merge_config_file(args)
    _fill(args, theta_min=0.0, theta_max=float(np.pi), points=361, seed=0)
    if args.beta is None and args.N_bar is None and args.fock_n is None:
        args.beta = "3"
    outdir = _out_dir(args, "jc-sweep")
    warnings = []
    beta = _parse_beta(args.beta)
    kw = _run_flags_kwargs(args)
    kw.pop("wigner_r", None)
    config = ExperimentConfig(mode="jc_protocol", beta=beta, N_bar=args.N_bar,
                              fock_n=args.fock_n, r_max=1,
                              seed=args.seed, wigner_r=(), **{
                                  k: v for k, v in kw.items()
                                  if k in ("n_max", "tail_tol")})
    if args.points < 2:
        raise ConfigError("points must be >= 2")
    if not (args.theta_min < args.theta_max):
        raise ConfigError("theta_min must be < theta_max")
    if beta is not None:
        state = coherent_state(beta, config_cutoff(config),
                               tail_tol=config.tail_tol)
    elif args.fock_n is not None:
        state = fock_state(args.fock_n, config_cutoff(config))
    else:
        state = thermal_distribution(args.N_bar, config_cutoff(config),
                                     tail_tol=config.tail_tol)
    thetas = np.linspace(args.theta_min, args.theta_max, args.points)
    try:
        p1 = outcome_probability_curve(state, thetas)
    except NumericalFailure as e:
        return _numerical_failure(e, config, "jc-sweep", outdir, warnings)
    files = [reports.emit_jc_sweep_csv(
        thetas, p1, os.path.join(outdir, "jc_sweep.csv"))]
    manifest = reports.build_manifest(
        config, "jc-sweep", config.seed, files, warnings,
        {"theta_grid": {"min": args.theta_min, "max": args.theta_max,
                        "points": args.points}})
    reports.atomic_write_json(os.path.join(outdir, "manifest.json"), manifest)
    return 0


def config_cutoff(config: ExperimentConfig):
    from .experiment import _config_cutoff
    return _config_cutoff(config)


def cmd_jc_collapse(args) -> int:
    _merge_config_file(args)
    _fill(args, seed=0, r_max=55)
    if args.beta is None and args.N_bar is None and args.fock_n is None:
        args.beta = "3"
    outdir = _out_dir(args, "jc-collapse")
    warnings = []
    kw = _run_flags_kwargs(args)
    thetas = _parse_float_list(args.thetas, "thetas")
    config = ExperimentConfig(mode="jc_protocol", beta=_parse_beta(args.beta),
                              N_bar=args.N_bar, fock_n=args.fock_n,
                              r_max=args.r_max, seed=args.seed,
                              theta=args.theta, thetas=thetas,
                              jc_sample_outcomes=bool(args.jc_sample_outcomes),
                              **{k: v for k, v in kw.items()
                                 if k in ("n_max", "tail_tol", "wigner_r",
                                          "wigner_resolution")})
    try:
        trace = run_jc_protocol(config)
    except NumericalFailure as e:
        return _numerical_failure(e, config, "jc-collapse", outdir, warnings)
    files = reports.emit_figure_bundle(trace, "jc_protocol", outdir)
    manifest = reports.build_manifest(config, "jc-collapse", config.seed, files,
                                      warnings, reports.trace_manifest_extra(trace))
    reports.atomic_write_json(os.path.join(outdir, "manifest.json"), manifest)
    return 0


def cmd_rate_profile(args) -> int:
    _merge_config_file(args)
    _fill(args, seed=0)
    if args.beta is None and args.N_bar is None and args.fock_n is None:
        args.fock_n = 0
    outdir = _out_dir(args, "rate-profile")
    warnings = []
    params = _params_from(args)
    _warn_units(params, warnings)
    kw = _run_flags_kwargs(args)
    config = ExperimentConfig(mode="rate_profile", params=params,
                              beta=_parse_beta(args.beta), N_bar=args.N_bar,
                              fock_n=args.fock_n, r_max=1, seed=args.seed,
                              **{k: v for k, v in kw.items()
                                 if k in ("n_max", "dt", "delta", "epsilon",
                                          "t_max", "tail_tol")})
    try:
        report = rate_profile_report(config)
    except NumericalFailure as e:
        return _numerical_failure(e, config, "rate-profile", outdir, warnings)
    files = [reports.emit_rate_csv(report, os.path.join(outdir, "rate.csv"))]
    extra = {
        "decomposition_error": report.decomposition_error,
        "max_analytic_error": report.max_analytic_error,
        "dip_time": report.dip_time,
        "window": None if report.window is None else {
            "t_start": report.window.t_start, "t_end": report.window.t_end,
            "in_window_mass": report.window.in_window_mass,
            "discarded_fraction": report.window.discarded_fraction},
    }
    manifest = reports.build_manifest(config, "rate-profile", config.seed,
                                      files, warnings, extra)
    reports.atomic_write_json(os.path.join(outdir, "manifest.json"), manifest)
    return 0


def cmd_collapse(args) -> int:
    _merge_config_file(args)
    _fill(args, seed=0, r_max=100)
    if args.beta is None and args.N_bar is None and args.fock_n is None:
        args.beta = "2"
    outdir = _out_dir(args, "collapse")
    warnings = []
    params = _params_from(args)
    _warn_units(params, warnings)
    kw = _run_flags_kwargs(args)
    config = ExperimentConfig(mode="cascaded_collapse", params=params,
                              beta=_parse_beta(args.beta), N_bar=args.N_bar,
                              fock_n=args.fock_n, r_max=args.r_max,
                              seed=args.seed, **kw)
    try:
        trace = run_cascaded_collapse(config)
    except NumericalFailure as e:
        return _numerical_failure(e, config, "collapse", outdir, warnings)
    files = reports.emit_figure_bundle(trace, "cascaded_collapse", outdir)
    manifest = reports.build_manifest(config, "collapse", config.seed, files,
                                      warnings, reports.trace_manifest_extra(trace))
    reports.atomic_write_json(os.path.join(outdir, "manifest.json"), manifest)
    return 0


def cmd_damped_sweep(args) -> int:
    _merge_config_file(args)
    _fill(args, seed=0, r_max=70, N_bar=4.0)
    outdir = _out_dir(args, "damped-sweep")
    warnings = []
    params = _params_from(args)
    _warn_units(params, warnings)
    values = _parse_float_list(args.gamma_m_values, "gamma_m_values")
    if values is None:
        values = (0.0, 1e-5, 1e-4, 1e-3)
    kw = _run_flags_kwargs(args)
    config = ExperimentConfig(mode="damped_sweep", params=params,
                              N_bar=args.N_bar, r_max=args.r_max,
                              seed=args.seed, gamma_m_values=values, **kw)
    try:
        traces = run_damped_sweep(config)
    except NumericalFailure as e:
        return _numerical_failure(e, config, "damped-sweep", outdir, warnings)
    files = []
    diag = {}
    for tr in traces:
        sub = os.path.join(outdir, "gamma_m_%s" % _gamma_m_tag(tr.gamma_m))
        files.extend(reports.emit_figure_bundle(tr, "damped", sub))
        diag[_gamma_m_tag(tr.gamma_m)] = reports.trace_manifest_extra(tr)
    files.append(reports.emit_damped_summary(
        traces, os.path.join(outdir, "summary.csv")))
    manifest = reports.build_manifest(config, "damped-sweep", config.seed,
                                      files, warnings, {"per_gamma_m": diag})
    reports.atomic_write_json(os.path.join(outdir, "manifest.json"), manifest)
    return 0


def _gamma_m_tag(gm: float) -> str:
    return ("%g" % gm).replace("-", "m").replace(".", "p")


def cmd_wigner(args) -> int:
    _merge_config_file(args)
    _fill(args, seed=0, r_max=50)
    if args.beta is None and args.N_bar is None and args.fock_n is None:
        args.beta = "2"
    outdir = _out_dir(args, "wigner")
    warnings = []
    params = _params_from(args)
    _warn_units(params, warnings)
    kw = _run_flags_kwargs(args)
    kw.setdefault("wigner_r", (0, 10, 30, 50))
    config = ExperimentConfig(mode="wigner_series", params=params,
                              beta=_parse_beta(args.beta), N_bar=args.N_bar,
                              fock_n=args.fock_n, r_max=args.r_max,
                              seed=args.seed, **kw)
    try:
        trace = run_cascaded_collapse(config)
    except NumericalFailure as e:
        return _numerical_failure(e, config, "wigner", outdir, warnings)
    os.makedirs(outdir, exist_ok=True)
    files = reports.emit_wigner_bundle(trace, outdir)
    manifest = reports.build_manifest(config, "wigner", config.seed, files,
                                      warnings, reports.trace_manifest_extra(trace))
    reports.atomic_write_json(os.path.join(outdir, "manifest.json"), manifest)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        return _config_error(e)
    except NumericalFailure as e:
        print("numerical failure: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
