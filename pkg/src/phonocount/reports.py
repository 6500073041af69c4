"""Plot-ready CSV and JSON artifacts for experiment traces.

All floats are printed with 17 significant digits so that rerunning a
manifest reproduces every file byte for byte. Manifests are written
atomically (temp file + rename). No plotting happens here: every output
is served as a CSV a contour or line plotter can consume directly.
"""

import dataclasses
import datetime
import json
import os
import platform
import tempfile

import numpy as np
import scipy

from . import __version__
from .experiment import CollapseTrace, ExperimentConfig, RateProfileReport

FLOAT_FMT = "%.17g"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    return str(value)


def write_csv(path: str, header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def atomic_write_json(path: str, payload: dict) -> str:
    text = json.dumps(_json_safe(payload), indent=2, sort_keys=True)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def build_manifest(config: ExperimentConfig, subcommand: str, seed: int,
                   outputs, warnings=(), extra=None, failure=None) -> dict:
    payload = {
        "tool": "phonocount",
        "version": __version__,
        "subcommand": subcommand,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": dataclasses.asdict(config) if config is not None else None,
        "seed": seed,
        "rng": "numpy PCG64 seeded via SeedSequence(seed)",
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "platform": platform.platform(),
        "outputs": list(outputs),
        "warnings": list(warnings),
        "failure": failure,
    }
    if extra:
        payload.update(extra)
    return payload


def trace_manifest_extra(trace: CollapseTrace) -> dict:
    return {
        "window_diagnostics": trace.window_diagnostics,
        "tail_audit": trace.tail_audit,
        "restart_total": trace.restart_total,
        "recursion_max_error": trace.recursion_max_error,
        "history_probability": trace.history_probability,
        "bimodal": trace.bimodal,
        "measurements_completed": len(trace.records) if trace.records else
                                  (len(trace.distributions) - 1),
    }


def emit_collapse_csv(trace: CollapseTrace, path: str) -> str:
    header = ["r", "t_r", "entropy", "variance", "argmax", "max_prob"]
    rows = []
    for rec in trace.records:
        m = trace.metrics[rec.r]
        rows.append((rec.r, rec.t_r, m["entropy"], m["variance"],
                     m["argmax"], m["max_prob"]))
    return write_csv(path, header, rows)


def emit_jc_collapse_csv(trace: CollapseTrace, path: str) -> str:
    header = ["r", "theta", "x", "history_probability", "entropy",
              "variance", "argmax", "max_prob"]
    rows = []
    for i, theta in enumerate(trace.thetas or []):
        r = i + 1
        m = trace.metrics[r]
        rows.append((r, theta, trace.outcomes[i],
                     m.get("history_probability", trace.history_probability),
                     m["entropy"], m["variance"], m["argmax"], m["max_prob"]))
    return write_csv(path, header, rows)


def emit_dists_csv(trace: CollapseTrace, path: str) -> str:
    dim = len(trace.distributions[0].probs)
    header = ["r"] + ["p%d" % n for n in range(dim)]
    rows = []
    for r, dist in enumerate(trace.distributions):
        rows.append((r, *dist.probs))
    return write_csv(path, header, rows)


def emit_wigner_csv(grid, path: str) -> str:
    header = ["x", "p", "w"]
    rows = []
    for i, x in enumerate(grid.x):
        for j, p in enumerate(grid.p):
            rows.append((x, p, grid.W[i, j]))
    return write_csv(path, header, rows)


def emit_rate_csv(report: RateProfileReport, path: str) -> str:
    prof = report.profile
    header = ["t", "rate", "survival", "source", "cavity", "interference",
              "loss_kappa1_rate", "loss_kappa2_prime_rate"]
    cols = [prof.times, prof.rates, prof.survival, report.source,
            report.cavity, report.interference, report.loss_kappa1,
            report.loss_kappa2_prime]
    if report.analytic is not None:
        header.append("analytic")
        cols.append(report.analytic)
    rows = zip(*cols)
    return write_csv(path, header, rows)


def emit_jc_sweep_csv(thetas, p1, path: str) -> str:
    return write_csv(path, ["theta", "p1"], zip(thetas, p1))


def emit_wigner_bundle(trace: CollapseTrace, outdir: str) -> list:
    files = []
    for r in sorted(trace.wigner):
        path = os.path.join(outdir, "wigner_r%d.csv" % r)
        files.append(emit_wigner_csv(trace.wigner[r], path))
    return files


def emit_figure_bundle(trace: CollapseTrace, mode: str, outdir: str) -> list:
    """Write the CSV artifacts for one trace; returns the file list."""
    os.makedirs(outdir, exist_ok=True)
    files = []
    if mode == "jc_protocol":
        files.append(emit_jc_collapse_csv(trace, os.path.join(outdir, "collapse.csv")))
    elif trace.records:
        files.append(emit_collapse_csv(trace, os.path.join(outdir, "collapse.csv")))
    files.append(emit_dists_csv(trace, os.path.join(outdir, "dists.csv")))
    files.extend(emit_wigner_bundle(trace, outdir))
    return files


def emit_damped_summary(traces, path: str) -> str:
    header = ["gamma_m", "final_entropy", "final_variance", "final_argmax",
              "final_max_prob", "final_purity", "restart_total"]
    rows = []
    for tr in traces:
        m = tr.metrics[-1]
        rows.append((tr.gamma_m, m["entropy"], m["variance"], m["argmax"],
                     m["max_prob"], m.get("purity", 1.0), tr.restart_total))
    return write_csv(path, header, rows)
