"""Command-line driver: meshing, convergence studies, stability sweeps
and single runs, all configured from a flat INI file.

Exit codes: 0 success, 2 configuration/validation error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from configparser import ConfigParser
from dataclasses import dataclass, field

import numpy as np

from . import analysis, mms
from .analysis import (
    DEFAULT_EPSILONS,
    build_coupled_system,
    convergence_study_spatial,
    convergence_study_temporal,
    initial_state,
    perturbation_study,
    write_error_csv,
    write_plot_data,
    write_rate_csv,
    write_slice,
    write_stability_csv,
    write_stability_errors_csv,
)
from .assembly import SystemOptions
from .constitutive import ModelParameters, anisotropy_regularity_margin
from .mesh import generate_rect_mesh, mesh_statistics
from .spaces import save_function
from .timestepper import NewtonConfig, TimeGrid, solve_transient

OUTPUT_ENV = "MHD_DENDRITE_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    pass


_PARAM_FIELDS = {
    f.name for f in dataclasses.fields(ModelParameters)
    if f.name not in ("g", "pbar", "a1", "f")
}

_SCHEMA = {
    "run": {"case", "pair", "T", "tau", "tau_list", "h", "h_list", "seed",
            "epsilon_list", "output_dir", "deterministic", "jobs",
            "jacobian_mode", "quad_degree", "temporal_reference",
            "snapshot_times", "rand_dist"},
    "params": _PARAM_FIELDS,
    "newton": {"tol_abs", "tol_rel", "max_iter", "divergence_factor"},
}


@dataclass
class RunConfig:
    case: str = "ex2"
    pair: str = "P2-P1"
    T: float | None = None
    tau: float = 0.001
    tau_list: tuple = (0.1, 0.05, 0.025, 0.0125)
    h: float = 0.05
    h_list: tuple = (0.2, 0.15, 0.1, 0.05)
    seed: int = 0
    epsilon_list: tuple = DEFAULT_EPSILONS
    output_dir: str = "out"
    deterministic: bool = True
    jobs: int = 1
    jacobian_mode: str = "frozen"
    quad_degree: int | None = None
    temporal_reference: str = "fine-tau"
    snapshot_times: tuple = (1.0,)
    rand_dist: str = "uniform"
    params: ModelParameters = field(default_factory=ModelParameters)
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def validate(self):
        mms.get_case(self.case)
        analysis.parse_pair(self.pair)
        if not self.h_list:
            raise ConfigError("h_list must not be empty")
        for h in self.h_list:
            if not 0.0 < h:
                raise ConfigError(f"invalid mesh size {h!r}")
        for e in self.epsilon_list:
            if not 0.0 <= e < 1.0:
                raise ConfigError(f"epsilon {e!r} outside [0, 1)")
        if self.jacobian_mode not in ("frozen", "full"):
            raise ConfigError(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if self.temporal_reference not in ("fine-tau", "exact"):
            raise ConfigError(f"unknown temporal_reference {self.temporal_reference!r}")
        if self.rand_dist not in ("uniform", "f"):
            raise ConfigError(f"unknown rand_dist {self.rand_dist!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if anisotropy_regularity_margin(self.params) <= 0.0:
            raise ConfigError(
                "anisotropy amplitude violates min(eta + eta'') > 0; "
                f"gamma={self.params.gamma} is too large for k={self.params.k}")


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean {text!r}")


def _parse_floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _coerce(current, text, key):
    if isinstance(current, bool):
        return _parse_bool(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return _parse_floats(text)
    if current is None:
        if key in ("quad_degree",):
            return int(text)
        return float(text)
    return text.strip()


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = ConfigParser()
    parser.read(path)
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            if section == "run":
                if key == "h_list" and not raw.strip():
                    raise ConfigError("h_list must not be empty")
                setattr(cfg, key, _coerce(getattr(cfg, key), raw, key))
            elif section == "newton":
                cur = getattr(cfg.newton, key)
                setattr(cfg.newton, key, type(cur)(float(raw)))
            else:
                cfg.params = _apply_param(cfg.params, key, raw)
    cfg.validate()
    return cfg


def _apply_param(params, key, raw):
    cur = getattr(params, key)
    if isinstance(cur, bool):
        val = _parse_bool(raw)
    elif isinstance(cur, int):
        val = int(raw)
    elif isinstance(cur, float):
        val = float(raw)
    elif isinstance(cur, tuple):
        vals = _parse_floats(raw)
        if len(vals) != len(cur):
            raise ConfigError(f"parameter {key} expects {len(cur)} values")
        val = vals
    else:
        raise ConfigError(f"parameter {key} is not configurable from file")
    try:
        return params.with_overrides(**{key: val})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def resolved_snapshot(cfg: RunConfig, path):
    """Write every resolved setting so the run can be reproduced exactly."""
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.17g}"
        if isinstance(v, tuple):
            return " ".join(fmt(x) for x in v)
        return str(v)

    with open(path, "w") as f:
        f.write("[run]\n")
        for key in sorted(_SCHEMA["run"]):
            v = getattr(cfg, key)
            if v is not None:
                f.write(f"{key} = {fmt(v)}\n")
        f.write("\n[params]\n")
        for key in sorted(_PARAM_FIELDS):
            f.write(f"{key} = {fmt(getattr(cfg.params, key))}\n")
        f.write("\n[newton]\n")
        for key in sorted(_SCHEMA["newton"]):
            f.write(f"{key} = {fmt(getattr(cfg.newton, key))}\n")


def _outdir(cfg: RunConfig):
    out = os.environ.get(OUTPUT_ENV, cfg.output_dir)
    os.makedirs(out, exist_ok=True)
    resolved_snapshot(cfg, os.path.join(out, "resolved_config.ini"))
    return out


def _options(cfg: RunConfig):
    return SystemOptions(quad_degree=cfg.quad_degree, jacobian_mode=cfg.jacobian_mode)


def cmd_mesh_stats(cfg: RunConfig):
    case = mms.get_case(cfg.case)
    out = _outdir(cfg)
    scale = max(case.domain.width, case.domain.height)
    lines = ["h_ref,h,elements,boundary_edges"]
    print(f"{'h_ref':>8} {'h':>12} {'elements':>9} {'boundary_edges':>15}")
    for h in cfg.h_list:
        stats = mesh_statistics(generate_rect_mesh(case.domain, h * scale))
        print(f"{h:>8g} {stats.h:>12.6g} {stats.n_elements:>9d} {stats.n_boundary_edges:>15d}")
        lines.append(f"{h:.17g},{stats.h:.17g},{stats.n_elements},{stats.n_boundary_edges}")
    with open(os.path.join(out, "mesh_stats.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_convergence(cfg: RunConfig):
    if len(cfg.h_list) < 3:
        raise ConfigError("need >= 3 meshes for rates")
    case = mms.get_case(cfg.case)
    out = _outdir(cfg)
    report = convergence_study_spatial(case, cfg.pair, cfg.h_list, cfg.tau, cfg.params,
                                       T=cfg.T, options=_options(cfg),
                                       newton_cfg=cfg.newton)
    write_rate_csv(report, os.path.join(out, "spatial_rates.csv"))
    write_error_csv(report, os.path.join(out, "spatial_errors.csv"))
    write_plot_data(report, out, "spatial")
    for name in analysis.FIELDS:
        print(f"beta[{name}] = {report.rates[name].slope:.4f} "
              f"(R^2 = {report.rates[name].r_squared:.5f})")
    return EXIT_OK


def cmd_temporal(cfg: RunConfig):
    if len(cfg.tau_list) < 3:
        raise ConfigError("need >= 3 time steps for rates")
    case = mms.get_case(cfg.case)
    out = _outdir(cfg)
    report = convergence_study_temporal(case, cfg.pair, cfg.h, cfg.tau_list, cfg.params,
                                        T=cfg.T, options=_options(cfg),
                                        newton_cfg=cfg.newton,
                                        reference=cfg.temporal_reference)
    write_rate_csv(report, os.path.join(out, "temporal_rates.csv"))
    write_error_csv(report, os.path.join(out, "temporal_errors.csv"))
    write_plot_data(report, out, "temporal")
    for name in analysis.FIELDS:
        print(f"alpha[{name}] = {report.rates[name].slope:.4f} "
              f"(R^2 = {report.rates[name].r_squared:.5f})")
    return EXIT_OK


def cmd_stability(cfg: RunConfig):
    case = mms.get_case(cfg.case)
    out = _outdir(cfg)
    report = perturbation_study(case, cfg.params, epsilons=cfg.epsilon_list,
                                seed=cfg.seed, h_ref=cfg.h, tau=cfg.tau,
                                pair=cfg.pair, T=cfg.T, options=_options(cfg),
                                newton_cfg=cfg.newton)
    write_stability_csv(report, os.path.join(out, "stability.csv"))
    write_stability_errors_csv(report, os.path.join(out, "stability_errors.csv"))
    for name in analysis.FIELDS:
        se, sa = report.slopes_ex[name], report.slopes_app[name]
        print(f"m[{name}]: ex = {se.slope:.4f} (R^2 {se.r_squared:.4f}), "
              f"app = {sa.slope:.4f} (R^2 {sa.r_squared:.4f})")
    failed = [r for r in report.records if r.failed]
    if failed:
        for r in failed:
            print(f"epsilon = {r.epsilon}: FAILED ({r.message})", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_single_run(cfg: RunConfig):
    case = mms.get_case(cfg.case)
    out = _outdir(cfg)
    system = build_coupled_system(case, cfg.pair, cfg.h, cfg.params, _options(cfg))
    T = cfg.T if cfg.T is not None else case.T
    K = int(round(T / cfg.tau))
    if abs(K * cfg.tau - T) > 1e-9 * T:
        raise ConfigError(f"tau={cfg.tau} does not divide T={T}")
    traj = solve_transient(system, initial_state(system, case), TimeGrid(T=T, K=K),
                           cfg.newton)
    traj.write_log(os.path.join(out, "run_log.csv"))

    times = traj.times
    for t_snap in cfg.snapshot_times:
        i = int(np.argmin(np.abs(times - t_snap)))
        u, p, psi, c = system.fe_functions(traj.states[i])
        tag = f"t{times[i]:.6g}".replace(".", "p")
        for name, fef in (("u", u), ("p", p), ("psi", psi), ("c", c)):
            save_function(fef, os.path.join(out, f"{name}_{tag}.txt"))
            write_slice(fef, os.path.join(out, f"slice_{name}_{tag}.dat"))
    print(f"completed {K} steps; max Newton iterations "
          f"{max(s.iterations for s in traj.step_stats)}")
    return EXIT_OK


_COMMANDS = {
    "mesh-stats": cmd_mesh_stats,
    "convergence": cmd_convergence,
    "temporal": cmd_temporal,
    "stability": cmd_stability,
    "run": cmd_single_run,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mhd-dendrite",
        description="Verification harness for the coupled solidification solver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=False, default=None,
                        help="INI configuration file (defaults apply if omitted)")
        sp.add_argument("--jobs", type=int, default=None,
                        help="parallel workers for independent runs")
        sp.add_argument("--deterministic", action="store_true", default=None,
                        help="force serial, bit-reproducible execution")
    ns = parser.parse_args(argv)

    try:
        cfg = load_config(ns.config) if ns.config else RunConfig()
        if ns.config is None:
            cfg.validate()
        if ns.jobs is not None:
            cfg.jobs = ns.jobs
        if ns.deterministic:
            cfg.deterministic = True
            cfg.jobs = 1
        cfg.validate()
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return _COMMANDS[ns.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
