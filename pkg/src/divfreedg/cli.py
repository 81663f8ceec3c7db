"""Command-line front end: experiment subcommands with CSV and Markdown
output mirroring the solver's standard experiment tables.

Exit codes: 0 success, 1 usage/IO error, 2 blow-up detected (single-run only;
study commands encode blow-up as nan rows and exit 0).
"""

import argparse
import math
import os
import sys
from fractions import Fraction

from . import diagnostics, integrators, manufactured
from .mesh import build_structured

DEFAULTS = {
    "k": 1,
    "n": 8,
    "n_list": None,
    "tau": None,
    "tau_list": None,
    "cfl": None,
    "co": None,
    "nu": 0.0,
    "sigma": None,
    "T": 2.0,
    "perturb": 0.15,
    "seed": 0,
    "f_mode": "taylor",
    "integrator": "rk2",
    "f_zero": False,
    "out_dir": ".",
    "format": "both",
}

STANDARD_CO = 0.5
FOURTHIRDS_CO = 1.0


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage errors, per the CLI contract."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


class UsageError(ValueError):
    """Raised for bad flags/config; argparse converts it during parsing and
    main() maps it to exit code 1 otherwise."""


def _parse_tau(text):
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_list(text, conv):
    items = [s for s in text.replace(",", " ").split() if s]
    if not items:
        raise UsageError("empty list argument")
    return [conv(s) for s in items]


def _fmt3(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.2e}"


def _fmt_rate(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.2f}"


def _fmt17(x):
    if x is None:
        return "nan"
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _tau_fraction(tau):
    if tau is None or (isinstance(tau, float) and math.isnan(tau)):
        return "nan"
    frac = Fraction(tau).limit_denominator(1000000)
    return f"{frac.numerator}/{frac.denominator}"


ECHO_EXCLUDE = ("out_dir", "format")


def _config_lines(cfg):
    return [f"# {key}={_fmt17(value) if isinstance(value, float) else value}"
            for key, value in sorted(cfg.items()) if key not in ECHO_EXCLUDE]


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emit(cfg, name, csv_text, md_text):
    os.makedirs(cfg["out_dir"], exist_ok=True)
    fmt = cfg["format"]
    written = []
    if fmt in ("csv", "both"):
        path = os.path.join(cfg["out_dir"], f"{name}.csv")
        _write(path, csv_text)
        written.append(path)
    if fmt in ("md", "both"):
        path = os.path.join(cfg["out_dir"], f"{name}.md")
        _write(path, md_text)
        written.append(path)
    return written


def _load_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"malformed config line: {raw.strip()!r}")
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    return values


_CONVERTERS = {
    "k": int, "n": int, "seed": int,
    "tau": _parse_tau, "co": float, "nu": float, "sigma": float,
    "T": float, "perturb": float,
    "n_list": lambda s: _parse_list(s, int),
    "tau_list": lambda s: _parse_list(s, _parse_tau),
    "f_zero": lambda s: s.lower() in ("1", "true", "yes", "on"),
}


def _effective_config(args):
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        for key, value in _load_config_file(args.config).items():
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r}")
            conv = _CONVERTERS.get(key, str)
            cfg[key] = conv(value)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            cfg[key] = value
    if cfg["k"] not in (1, 2):
        raise UsageError(f"unsupported degree k={cfg['k']}; supported degrees: 1, 2")
    return cfg


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file; flags override")
    parser.add_argument("--k", type=int)
    parser.add_argument("--n", type=int)
    parser.add_argument("--n-list", dest="n_list",
                        type=lambda s: _parse_list(s, int))
    parser.add_argument("--tau", type=_parse_tau)
    parser.add_argument("--tau-list", dest="tau_list",
                        type=lambda s: _parse_list(s, _parse_tau))
    parser.add_argument("--cfl", choices=["std", "fourthirds", "search"])
    parser.add_argument("--co", type=float)
    parser.add_argument("--nu", type=float)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--T", type=float)
    parser.add_argument("--perturb", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--f-mode", dest="f_mode", choices=["next", "taylor"])
    parser.add_argument("--integrator", choices=["rk2", "cn"])
    parser.add_argument("--f-zero", dest="f_zero", action="store_true",
                        default=None)
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--format", choices=["csv", "md", "both"])


def _scheme_config(cfg, tau, integrator=None):
    return integrators.SchemeConfig(
        tau=tau, k=cfg["k"], T=cfg["T"], nu=cfg["nu"], sigma=cfg["sigma"],
        f_mode=cfg["f_mode"], integrator=integrator or cfg["integrator"],
        f_zero=cfg["f_zero"])


def cmd_single_run(cfg):
    if cfg["tau"] is None:
        cfg["tau"] = (cfg["co"] if cfg["co"] is not None else FOURTHIRDS_CO) \
            * (1.0 / cfg["n"]) ** (4.0 / 3.0)
    mesh = build_structured(cfg["n"], perturb=cfg["perturb"], seed=cfg["seed"])
    problem = manufactured.taylor_green(cfg["nu"])
    config = _scheme_config(cfg, cfg["tau"])
    report = integrators.run(config, mesh, problem)

    lines = _config_lines(cfg)
    header = "step,t,l2_norm,div_norm,jump_u,jump_w,energy_residual"
    lines.append(header)
    for i in range(len(report.times)):
        lines.append(",".join([
            str(i), _fmt17(report.times[i]), _fmt17(report.l2_norms[i]),
            _fmt17(report.div_norms[i]), _fmt17(report.jump_u[i]),
            _fmt17(report.jump_w[i]), _fmt17(report.energy_residuals[i])]))
    lines.append("")
    lines.append("summary,key,value")
    summary = [
        ("tau", config.tau), ("steps_completed", report.n_steps_done),
        ("blow_up_step", report.blow_up if report.blow_up is not None else ""),
        ("l2_norm_final", report.l2_norms[-1]),
        ("l2_error", report.l2_err), ("h1_error", report.h1_err),
        ("div_norm_final", report.div_norms[-1]),
        ("max_div_norm", report.max_div),
    ]
    if config.f_zero:
        summary.append(("max_rel_energy_residual",
                        report.max_relative_energy_residual()))
    for key, value in summary:
        lines.append(f"summary,{key},{_fmt17(value)}")
    csv_text = "\n".join(lines) + "\n"

    md = ["# Single run", "",
          "Config: " + ", ".join(
              f"{k}={v}" for k, v in sorted(cfg.items()) if v is not None), ""]
    cols = ["tau", "||u_h||_L2", "||u - u_h||_L2", "||grad_h(u - u_h)||_L2",
            "||div u_h||_L2"]
    md.append("| " + " | ".join(cols) + " |")
    md.append("|" + "---|" * len(cols))
    if report.completed:
        md.append("| " + " | ".join([
            _tau_fraction(config.tau), _fmt3(report.l2_norms[-1]),
            _fmt3(report.l2_err), _fmt3(report.h1_err),
            _fmt3(report.div_norms[-1])]) + " |")
    else:
        md.append("| " + _tau_fraction(config.tau) + " | nan | nan | nan | nan |")
        md.append("")
        md.append(f"Blow-up detected at step {report.blow_up}.")
    if config.f_zero:
        md.append("")
        md.append("Max relative energy-identity residual: "
                  + _fmt3(report.max_relative_energy_residual()))
    md_text = "\n".join(md) + "\n"

    written = _emit(cfg, "single-run", csv_text, md_text)
    for path in written:
        print(f"wrote {path}")
    print(f"completed={report.completed} l2_err={_fmt3(report.l2_err)} "
          f"max_div={_fmt3(report.max_div)} wall={report.wall_time:.2f}s")
    return 2 if not report.completed else 0


def _study_tables(cfg, rows, caption):
    lines = _config_lines(cfg)
    lines.append("h,n,tau,l2_norm,l2_err,l2_rate,h1_err,h1_rate,max_div,blow_up_step")
    for r in rows:
        lines.append(",".join([
            _fmt17(r["h"]), str(r["n"]), _fmt17(r["tau"]),
            _fmt17(r["l2_norm"]), _fmt17(r["l2_err"]), _fmt17(r["l2_rate"]),
            _fmt17(r["h1_err"]), _fmt17(r["h1_rate"]), _fmt17(r["max_div"]),
            "" if r["blow_up"] is None else str(r["blow_up"])]))
    csv_text = "\n".join(lines) + "\n"

    md = [f"# {caption}", "",
          "Config: " + ", ".join(f"{k}={v}" for k, v in sorted(cfg.items())
                                 if v is not None), ""]
    cols = ["h", "||u_h||_L2", "||u - u_h||_L2", "Rate",
            "||grad_h(u - u_h)||_L2", "Rate"]
    md.append("| " + " | ".join(cols) + " |")
    md.append("|" + "---|" * len(cols))
    for r in rows:
        md.append("| " + " | ".join([
            _tau_fraction(r["h"]), _fmt3(r["l2_norm"]), _fmt3(r["l2_err"]),
            _fmt_rate(r["l2_rate"]), _fmt3(r["h1_err"]),
            _fmt_rate(r["h1_rate"])]) + " |")
    md_text = "\n".join(md) + "\n"
    return csv_text, md_text


def cmd_convergence(cfg):
    if cfg["n_list"] is None:
        raise UsageError("convergence needs --n-list")
    cfl = cfg["cfl"] or "fourthirds"
    if cfl == "search":
        raise UsageError("convergence supports --cfl std or fourthirds")
    co = cfg["co"] if cfg["co"] is not None else \
        (STANDARD_CO if cfl == "std" else FOURTHIRDS_CO)
    problem = manufactured.taylor_green(cfg["nu"])
    rows = diagnostics.convergence_study(
        cfg["k"], cfg["n_list"], cfl_form=cfl, co=co, T=cfg["T"],
        perturb=cfg["perturb"], seed=cfg["seed"], nu=cfg["nu"],
        f_mode=cfg["f_mode"], integrator=cfg["integrator"], problem=problem)
    caption = (f"Convergence under tau = {co} * h^(4/3), k={cfg['k']}"
               if cfl == "fourthirds"
               else f"Convergence under tau = {co} * h, k={cfg['k']}")
    csv_text, md_text = _study_tables({**cfg, "cfl": cfl, "co": co}, rows, caption)
    for path in _emit(cfg, "convergence", csv_text, md_text):
        print(f"wrote {path}")
    return 0


def cmd_cfl_sweep(cfg):
    if cfg["n_list"] is None:
        raise UsageError("cfl-sweep needs --n-list")
    cfl = cfg["cfl"] or "search"
    co = cfg["co"] if cfg["co"] is not None else STANDARD_CO
    problem = manufactured.taylor_green(cfg["nu"])
    result = diagnostics.cfl_sweep(
        cfg["n_list"], cfg["k"], cfl_form=cfl, co=co, T=cfg["T"],
        perturb=cfg["perturb"], seed=cfg["seed"], nu=cfg["nu"],
        f_mode=cfg["f_mode"], problem=problem)

    lines = _config_lines({**cfg, "cfl": cfl, "co": co})
    lines.append("h,n,tau_max,denominator,alpha,l2_norm,l2_err,h1_err,max_div")
    for r in result.rows:
        lines.append(",".join([
            _fmt17(r["h"]), str(r["n"]), _fmt17(r["tau_max"]),
            "" if r["denominator"] is None else str(r["denominator"]),
            _fmt17(r["alpha"]), _fmt17(r["l2_norm"]), _fmt17(r["l2_err"]),
            _fmt17(r["h1_err"]), _fmt17(r["max_div"])]))
    csv_text = "\n".join(lines) + "\n"

    trace_lines = _config_lines({**cfg, "cfl": cfl, "co": co})
    trace_lines.append("h,tau,stable")
    for h, tau, stable in result.trace:
        trace_lines.append(f"{_fmt17(h)},{_fmt17(tau)},{int(stable)}")
    trace_text = "\n".join(trace_lines) + "\n"

    md = ["# Maximum stable time steps", "",
          "Config: " + ", ".join(f"{k}={v}" for k, v in sorted(cfg.items())
                                 if v is not None), ""]
    cols = ["h", "tau_max", "alpha", "||u_h||_L2", "||u - u_h||_L2",
            "||grad_h(u - u_h)||_L2"]
    md.append("| " + " | ".join(cols) + " |")
    md.append("|" + "---|" * len(cols))
    for r in result.rows:
        tau_cell = "nan" if not math.isfinite(r["tau_max"]) else \
            f"{_tau_fraction(r['tau_max'])} ({r['tau_max']:.2e})"
        md.append("| " + " | ".join([
            _tau_fraction(r["h"]), tau_cell, _fmt_rate(r["alpha"]),
            _fmt3(r["l2_norm"]), _fmt3(r["l2_err"]), _fmt3(r["h1_err"])])
            + " |")
    md_text = "\n".join(md) + "\n"

    written = _emit(cfg, "cfl-sweep", csv_text, md_text)
    if cfg["format"] in ("csv", "both"):
        path = os.path.join(cfg["out_dir"], "cfl-sweep-trace.csv")
        _write(path, trace_text)
        written.append(path)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_compare_cn(cfg):
    taus = cfg["tau_list"] or [1.0 / m for m in (12, 14, 16, 18, 20, 22, 24)]
    mesh = build_structured(cfg["n"], perturb=cfg["perturb"], seed=cfg["seed"])
    problem = manufactured.taylor_green(cfg["nu"])

    blocks = {}
    for name, scheme in (("Explicit RK", "rk2"), ("Semi-implicit CN", "cn")):
        disc = integrators.Discretization(
            mesh, cfg["k"], integrators.FormParams(sigma=cfg["sigma"],
                                                   nu=cfg["nu"]))
        rows = []
        for tau in taus:
            config = _scheme_config(cfg, tau, integrator=scheme)
            report = integrators.run(config, mesh, problem, disc=disc)
            rows.append(dict(
                tau=config.tau,
                l2_norm=report.l2_norms[-1] if report.completed else float("nan"),
                l2_err=report.l2_err, h1_err=report.h1_err,
                div=report.div_err if report.completed else float("nan"),
                blow_up=report.blow_up))
        blocks[name] = rows

    lines = _config_lines(cfg)
    lines.append("scheme,tau,l2_norm,l2_err,h1_err,div_norm,blow_up_step")
    for name, rows in blocks.items():
        tag = "rk2" if "RK" in name else "cn"
        for r in rows:
            lines.append(",".join([
                tag, _fmt17(r["tau"]), _fmt17(r["l2_norm"]),
                _fmt17(r["l2_err"]), _fmt17(r["h1_err"]), _fmt17(r["div"]),
                "" if r["blow_up"] is None else str(r["blow_up"])]))
    csv_text = "\n".join(lines) + "\n"

    md = ["# Explicit RK vs semi-implicit CN", "",
          "Config: " + ", ".join(f"{k}={v}" for k, v in sorted(cfg.items())
                                 if v is not None), ""]
    cols = ["tau", "||u_h||_L2", "||u - u_h||_L2", "||grad_h(u - u_h)||_L2",
            "||div u_h||_L2"]
    for name, rows in blocks.items():
        md.append(f"## {name}")
        md.append("")
        md.append("| " + " | ".join(cols) + " |")
        md.append("|" + "---|" * len(cols))
        for r in rows:
            md.append("| " + " | ".join([
                _tau_fraction(r["tau"]), _fmt3(r["l2_norm"]),
                _fmt3(r["l2_err"]), _fmt3(r["h1_err"]), _fmt3(r["div"])])
                + " |")
        md.append("")
    md_text = "\n".join(md) + "\n"

    for path in _emit(cfg, "compare-cn", csv_text, md_text):
        print(f"wrote {path}")
    return 0


def main(argv=None):
    parser = _Parser(prog="divfree",
                     description="Exactly divergence-free DG flow solver")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    for name in ("single-run", "convergence", "cfl-sweep", "compare-cn"):
        p = sub.add_parser(name)
        _add_common(p)

    args = parser.parse_args(argv)
    handlers = {
        "single-run": cmd_single_run,
        "convergence": cmd_convergence,
        "cfl-sweep": cmd_cfl_sweep,
        "compare-cn": cmd_compare_cn,
    }
    try:
        cfg = _effective_config(args)
        return handlers[args.command](cfg)
    except UsageError as exc:
        print(f"divfree: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"divfree: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
