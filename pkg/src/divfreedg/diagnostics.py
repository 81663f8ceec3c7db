"""Per-run and cross-run analysis: energy-identity residuals, CFL sweeps with
maximum-step search and exponent fitting, and convergence-study orchestration.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .manufactured import rate_table

NAN = float("nan")


def energy_residual(mass, prev_u, stage, next_u, jump_u, jump_w, tau):
    """Defect of the per-step discrete energy identity for unforced RK2 runs:

        ||u^{n+1}||^2 - ||u^n||^2
            = -tau |u^n|^2_up - tau |w^n|^2_up + ||u^{n+1} - w^n||^2

    with all norms in the mass inner product.  For the exact scheme this is
    zero up to solver roundoff.
    """
    def msq(vec):
        v = vec.values if hasattr(vec, "values") else np.asarray(vec)
        return float(v @ (mass @ v))

    lhs = msq(next_u) - msq(prev_u)
    diff = (next_u.values if hasattr(next_u, "values") else next_u) - \
           (stage.values if hasattr(stage, "values") else stage)
    rhs = -tau * jump_u - tau * jump_w + msq(diff)
    return lhs - rhs


@dataclass
class RunReport:
    """Per-step records plus final errors of one time-stepping run."""

    config: dict
    times: list = field(default_factory=list)
    l2_norms: list = field(default_factory=list)
    div_norms: list = field(default_factory=list)
    jump_u: list = field(default_factory=list)
    jump_w: list = field(default_factory=list)
    energy_residuals: list = field(default_factory=list)
    energy_scales: list = field(default_factory=list)
    l2_errors: list = field(default_factory=list)
    blow_up: int = None
    l2_err: float = NAN
    h1_err: float = NAN
    div_err: float = NAN
    wall_time: float = 0.0

    def record(self, t, l2, div, jump_u=NAN, jump_w=NAN,
               energy_residual=NAN, energy_scale=NAN, l2_error=NAN):
        self.times.append(t)
        self.l2_norms.append(l2)
        self.div_norms.append(div)
        self.jump_u.append(jump_u)
        self.jump_w.append(jump_w)
        self.energy_residuals.append(energy_residual)
        self.energy_scales.append(energy_scale)
        self.l2_errors.append(l2_error)

    @property
    def completed(self):
        return self.blow_up is None

    @property
    def n_steps_done(self):
        return len(self.times) - 1

    @property
    def max_l2(self):
        return max(self.l2_norms) if self.l2_norms else NAN

    @property
    def max_div(self):
        return max(self.div_norms) if self.div_norms else NAN

    def max_time_error(self):
        errs = np.asarray(self.l2_errors, dtype=float)
        ok = np.isfinite(errs)
        return float(errs[ok].max()) if np.any(ok) else NAN

    def max_relative_energy_residual(self):
        res = np.asarray(self.energy_residuals, dtype=float)
        scale = np.asarray(self.energy_scales, dtype=float)
        ok = np.isfinite(res) & np.isfinite(scale)
        if not np.any(ok):
            return NAN
        return float(np.max(np.abs(res[ok]) / scale[ok]))


@dataclass
class SweepResult:
    """Rows of (h, tau_max, alpha, errors) plus the full search trace."""

    rows: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def _max_workers():
    try:
        return max(1, int(os.environ.get("DIVFREE_THREADS", "1")))
    except ValueError:
        return 1


def _map_ordered(func, items):
    workers = _max_workers()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _tau_for(cfl_form, co, h):
    if cfl_form == "std":
        return co * h
    if cfl_form == "fourthirds":
        return co * h ** (4.0 / 3.0)
    raise ValueError(f"unknown CFL form {cfl_form!r}")


def _single_run(k, n, tau, T, perturb, seed, nu, f_mode, integrator, problem):
    from . import integrators
    from .mesh import build_structured

    mesh = build_structured(n, perturb=perturb, seed=seed)
    config = integrators.SchemeConfig(tau=tau, k=k, T=T, nu=nu, f_mode=f_mode,
                                      integrator=integrator)
    return integrators.run(config, mesh, problem)


def _stable(report, factor=10.0):
    if not report.completed:
        return False
    if not math.isfinite(report.l2_err):
        return False
    norm0 = report.l2_norms[0]
    return report.max_l2 <= factor * norm0


def cfl_sweep(n_list, k, cfl_form="search", co=0.5, T=2.0, perturb=0.15,
              seed=0, nu=0.0, f_mode="f_taylor", problem=None,
              tau_floor=1e-5, integrator="explicit_rk2"):
    """Stability sweep over mesh sizes h = 1/n.

    In search mode tau = 1/m is scanned with the integer denominator starting
    at the standard-CFL value m = ceil(2 n) and increasing by 2 until the
    first stable run; fixed forms run tau = co*h or co*h^(4/3) once per h.
    """
    if problem is None:
        from .manufactured import taylor_green
        problem = taylor_green(nu)
    if len(n_list) == 0:
        raise ValueError("empty mesh-size list")

    from . import integrators
    from .mesh import build_structured

    result = SweepResult()

    def sweep_one(n):
        h = 1.0 / n
        mesh = build_structured(n, perturb=perturb, seed=seed)
        disc = None
        trials = []

        def attempt(tau):
            nonlocal disc
            config = integrators.SchemeConfig(tau=tau, k=k, T=T, nu=nu,
                                              f_mode=f_mode,
                                              integrator=integrator)
            if disc is None:
                disc = integrators.Discretization(
                    mesh, k, _params_for(config))
            report = integrators.run(config, mesh, problem, disc=disc)
            stable = _stable(report)
            trials.append((h, tau, stable))
            return report, stable

        if cfl_form == "search":
            m = math.ceil(1.0 / (0.5 * h))
            row = None
            while 1.0 / m >= tau_floor:
                report, stable = attempt(1.0 / m)
                if stable:
                    row = dict(h=h, n=n, tau_max=1.0 / m, denominator=m,
                               l2_norm=report.l2_norms[-1],
                               l2_err=report.l2_err, h1_err=report.h1_err,
                               max_div=report.max_div)
                    break
                m += 2
            if row is None:
                row = dict(h=h, n=n, tau_max=NAN, denominator=None,
                           l2_norm=NAN, l2_err=NAN, h1_err=NAN, max_div=NAN)
        else:
            tau = _tau_for(cfl_form, co, h)
            report, stable = attempt(tau)
            if stable:
                row = dict(h=h, n=n, tau_max=tau, denominator=None,
                           l2_norm=report.l2_norms[-1], l2_err=report.l2_err,
                           h1_err=report.h1_err, max_div=report.max_div)
            else:
                row = dict(h=h, n=n, tau_max=NAN, denominator=None,
                           l2_norm=NAN, l2_err=NAN, h1_err=NAN, max_div=NAN)
        return row, trials

    outcomes = _map_ordered(sweep_one, sorted(n_list))
    prev = None
    for row, trials in outcomes:
        result.trace.extend(trials)
        row["alpha"] = NAN
        if prev is not None and math.isfinite(row["tau_max"]) \
                and math.isfinite(prev["tau_max"]):
            row["alpha"] = math.log(prev["tau_max"] / row["tau_max"]) \
                / math.log(prev["h"] / row["h"])
        result.rows.append(row)
        prev = row
    return result


def _params_for(config):
    from .forms import FormParams
    return FormParams(sigma=config.sigma, nu=config.nu)


def convergence_study(k, n_list, cfl_form="fourthirds", co=1.0, T=2.0,
                      perturb=0.15, seed=0, nu=0.0, f_mode="f_taylor",
                      integrator="explicit_rk2", problem=None):
    """Error/rate table over a sequence of meshes at the given CFL schedule.

    Blown-up runs appear as nan rows (the standard-CFL fragility experiment
    uses the same operation)."""
    if problem is None:
        from .manufactured import taylor_green
        problem = taylor_green(nu)
    if len(n_list) == 0:
        raise ValueError("empty mesh-size list")

    def study_one(n):
        h = 1.0 / n
        tau = _tau_for(cfl_form, co, h)
        report = _single_run(k, n, tau, T, perturb, seed, nu, f_mode,
                             integrator, problem)
        return dict(h=h, n=n, tau=tau,
                    l2_norm=report.l2_norms[-1] if report.completed else NAN,
                    l2_err=report.l2_err if report.completed else NAN,
                    h1_err=report.h1_err if report.completed else NAN,
                    max_div=report.max_div if report.completed else NAN,
                    blow_up=report.blow_up)

    rows = _map_ordered(study_one, sorted(n_list))
    hs = [r["h"] for r in rows]
    for key, rate_key in (("l2_err", "l2_rate"), ("h1_err", "h1_rate")):
        errs = [r[key] if math.isfinite(r[key]) and r[key] > 0 else NAN
                for r in rows]
        rows[0][rate_key] = NAN
        for i in range(1, len(rows)):
            if math.isfinite(errs[i - 1]) and math.isfinite(errs[i]):
                rows[i][rate_key] = math.log(errs[i - 1] / errs[i]) \
                    / math.log(hs[i - 1] / hs[i])
            else:
                rows[i][rate_key] = NAN
    return rows


__all__ = ["RunReport", "SweepResult", "energy_residual", "cfl_sweep",
           "convergence_study", "rate_table"]
