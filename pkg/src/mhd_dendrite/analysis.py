"""Space-time error norms, convergence-rate regression and the
epsilon-perturbation stability study."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mms
from .assembly import CoupledSystem, SystemOptions
from .constitutive import ModelParameters
from .mesh import generate_rect_mesh, mesh_statistics
from .mms import ManufacturedCase
from .spaces import FEFunction, build_space, l2_error
from .timestepper import NewtonConfig, PerturbedSources, TimeGrid, Trajectory, solve_transient

FIELDS = ("u", "p", "psi", "c")

DEFAULT_EPSILONS = (0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4)


# Study-level Newton tolerances: the bare step() defaults sit below the
# double-precision residual floor of the assembled forms at study scales,
# so studies run with attainable tolerances (recorded in every resolved
# config); solver noise stays ~6 decades under the discretization errors.
DEFAULT_STUDY_NEWTON = NewtonConfig(tol_abs=1e-10, tol_rel=1e-8)


def verification_parameters(**overrides) -> ModelParameters:
    """Order-one parameter set used by the verification studies.

    The tabulated alloy constants put the momentum operator 7 to 8
    decades above the pressure-gradient block, which drowns the
    pressure's own discretization error in amplified velocity error and
    spoils measured pressure orders.  Measured convergence orders are
    parameter-independent, so the studies default to this scaled set;
    every coupling pathway stays active (b, D, lambdas all vary).
    """
    base = dict(rho0=1.0, mu=0.05, sigma_A=1.0, sigma_B=2.0,
                D_S=0.1, D_L=1.0, lam1=(0.1, 0.1), lam2=(0.1, 0.1), alpha0=0.1,
                beta_c=0.1)
    base.update(overrides)
    return ModelParameters(**base)


def parse_pair(pair: str):
    """Element pair string like 'P2-P1' -> (velocity order, pressure order)."""
    try:
        up, pp = pair.upper().split("-")
        lu, lp = int(up.lstrip("P")), int(pp.lstrip("P"))
    except Exception as exc:
        raise ValueError(f"cannot parse element pair {pair!r}") from exc
    if lu != lp + 1 or lp < 1 or lu > 3:
        raise ValueError(f"element pair {pair!r} is not an admissible Taylor-Hood pair")
    return lu, lp


def build_coupled_system(case: ManufacturedCase, pair: str, h_ref: float,
                         params: ModelParameters,
                         options: SystemOptions | None = None) -> CoupledSystem:
    """Mesh + spaces + system for one study run.

    h_ref is the unit-square reference spacing; the physical target
    scales with the domain extent so subdivision counts match across
    domains.
    """
    lu, lp = parse_pair(pair)
    mesh = generate_rect_mesh(case.domain, h_ref * max(case.domain.width, case.domain.height))
    space_u = build_space(mesh, f"P{lu}", n_components=2, constraint="zero-boundary")
    space_p = build_space(mesh, f"P{lp}", constraint="zero-mean")
    space_s = build_space(mesh, f"P{lu}")
    return CoupledSystem(space_u, space_p, space_s, params,
                         mms.mms_sources(case, params), options)


def initial_state(system: CoupledSystem, case: ManufacturedCase) -> np.ndarray:
    """Interpolated exact fields at t = 0 (pressure included for reporting)."""
    from .spaces import apply_zero_mean, interpolate

    def vel(x, y, t):
        d = case.fields(x, y, t)
        return d.u.value, d.v.value

    Y = np.zeros(system.layout.total)
    Y[system.layout.u] = interpolate(system.space_u, vel, 0.0).coeffs
    p0 = interpolate(system.space_p, lambda x, y, t: case.fields(x, y, t).p.value, 0.0)
    Y[system.layout.p] = apply_zero_mean(p0).coeffs
    Y[system.layout.psi] = interpolate(
        system.space_s, lambda x, y, t: case.fields(x, y, t).psi.value, 0.0).coeffs
    Y[system.layout.c] = interpolate(
        system.space_s, lambda x, y, t: case.fields(x, y, t).c.value, 0.0).coeffs
    return Y


def _exact_of(case: ManufacturedCase, field_name: str):
    if field_name == "u":
        def f(x, y, t):
            d = case.fields(x, y, t)
            return d.u.value, d.v.value
    else:
        def f(x, y, t):
            return getattr(case.fields(x, y, t), field_name).value
    return f


def _field_fef(traj: Trajectory, i: int, field_name: str) -> FEFunction:
    u, p, psi, c = traj.system.fe_functions(traj.states[i])
    return {"u": u, "p": p, "psi": psi, "c": c}[field_name]


def space_time_error(traj: Trajectory, case: ManufacturedCase, field_name: str) -> float:
    """Discrete l2(0,T; L2) error (tau sum_{i=1..K} ||.||^2)^(1/2) vs the exact field."""
    exact = _exact_of(case, field_name)
    tau = traj.grid.tau
    total = 0.0
    for i in range(1, traj.grid.K + 1):
        err = l2_error(_field_fef(traj, i, field_name), exact, t=float(traj.times[i]))
        total += err * err
    return math.sqrt(tau * total)


def space_time_diff(traj: Trajectory, ref: Trajectory, field_name: str) -> float:
    """l2(0,T; L2) distance between two trajectories on nested time grids.

    The reference step must divide the coarse step so states are
    compared at exactly matching times.
    """
    ratio = ref.grid.K * traj.grid.tau / ref.grid.T
    stride = int(round(ratio))
    if abs(ratio - stride) > 1e-9 or abs(traj.grid.T - ref.grid.T) > 1e-12:
        raise ValueError("reference grid does not nest the coarse grid")
    tau = traj.grid.tau
    total = 0.0
    for i in range(1, traj.grid.K + 1):
        a = _field_fef(traj, i, field_name)
        b = _field_fef(ref, i * stride, field_name)
        diff = FEFunction(a.space, a.coeffs - b.coeffs)
        err = l2_error(diff, 0.0)
        total += err * err
    return math.sqrt(tau * total)


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    pairwise: list


def fit_rate(points) -> RateFit:
    """Least-squares slope of log(error) against log(scale).

    `points` is a sequence of (scale, error) pairs (linear values, at
    least 3); also reports pairwise two-point rates.
    """
    pts = [(float(s), float(e)) for s, e in points]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points for a rate fit, got {len(pts)}")
    xs = np.log([s for s, _ in pts])
    ys = np.log([e for _, e in pts])
    if np.ptp(xs) == 0.0 or len(np.unique(xs)) < len(xs):
        raise ValueError("rate fit needs distinct abscissae")
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    pairwise = [float((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])) for i in range(len(xs) - 1)]
    return RateFit(slope=float(slope), intercept=float(intercept),
                   r_squared=r2, pairwise=pairwise)


@dataclass
class ErrorRecord:
    h: float
    tau: float
    pair: str
    errors: dict
    n_elements: int = 0
    newton_max: int = 0


@dataclass
class RateReport:
    study: str
    case: str
    pair: str
    records: list
    rates: dict          # field -> RateFit
    norm: str = "l2(0,T;L2) vs exact"


def _run_transient(case, pair, h_ref, tau, T, params, options, newton_cfg,
                   perturbation=None):
    system = build_coupled_system(case, pair, h_ref, params, options)
    newton_cfg = newton_cfg or DEFAULT_STUDY_NEWTON
    K = int(round(T / tau))
    if abs(K * tau - T) > 1e-9 * T:
        raise ValueError(f"tau={tau!r} does not divide the horizon T={T!r}")
    grid = TimeGrid(T=T, K=K)
    traj = solve_transient(system, initial_state(system, case), grid,
                           newton_cfg, perturbation)
    return system, traj


def convergence_study_spatial(case: ManufacturedCase, pair: str, h_list, tau: float,
                              params: ModelParameters, T: float | None = None,
                              options: SystemOptions | None = None,
                              newton_cfg: NewtonConfig | None = None) -> RateReport:
    """Fixed small tau, h sweep; fits beta per field from the h sequence."""
    T = case.T if T is None else T
    records = []
    for h_ref in h_list:
        system, traj = _run_transient(case, pair, h_ref, tau, T, params, options, newton_cfg)
        stats = mesh_statistics(system.mesh)
        errors = {f: space_time_error(traj, case, f) for f in FIELDS}
        records.append(ErrorRecord(
            h=h_ref, tau=tau, pair=pair, errors=errors, n_elements=stats.n_elements,
            newton_max=max(s.iterations for s in traj.step_stats)))
    rates = {f: fit_rate([(r.h, r.errors[f]) for r in records]) for f in FIELDS}
    return RateReport(study="spatial", case=case.name, pair=pair,
                      records=records, rates=rates)


def convergence_study_temporal(case: ManufacturedCase, pair: str, h_ref: float,
                               tau_list, params: ModelParameters,
                               T: float | None = None,
                               options: SystemOptions | None = None,
                               newton_cfg: NewtonConfig | None = None,
                               reference: str = "fine-tau",
                               ref_refine: int = 8) -> RateReport:
    """Fixed fine mesh, tau sweep; fits alpha per field.

    With reference="fine-tau" (default) each run is measured against a
    trajectory at tau_min / ref_refine on the same mesh, which isolates
    the temporal error from the spatial floor.  reference="exact"
    measures against the manufactured solution directly.
    """
    if reference not in ("fine-tau", "exact"):
        raise ValueError(f"unknown temporal reference {reference!r}")
    T = case.T if T is None else T
    newton_cfg = newton_cfg or DEFAULT_STUDY_NEWTON
    taus = sorted(float(t) for t in tau_list)[::-1]
    system = build_coupled_system(case, pair, h_ref, params, options)
    initial = initial_state(system, case)

    ref_traj = None
    if reference == "fine-tau":
        tau_ref = taus[-1] / ref_refine
        K_ref = int(round(T / tau_ref))
        ref_traj = solve_transient(system, initial, TimeGrid(T=T, K=K_ref), newton_cfg)

    records = []
    for tau in taus:
        K = int(round(T / tau))
        if abs(K * tau - T) > 1e-9 * T:
            raise ValueError(f"tau={tau!r} does not divide the horizon T={T!r}")
        traj = solve_transient(system, initial, TimeGrid(T=T, K=K), newton_cfg)
        if ref_traj is not None:
            errors = {f: space_time_diff(traj, ref_traj, f) for f in FIELDS}
        else:
            errors = {f: space_time_error(traj, case, f) for f in FIELDS}
        records.append(ErrorRecord(
            h=h_ref, tau=tau, pair=pair, errors=errors,
            n_elements=system.mesh.n_triangles,
            newton_max=max(s.iterations for s in traj.step_stats)))
    rates = {f: fit_rate([(r.tau, r.errors[f]) for r in records]) for f in FIELDS}
    return RateReport(study="temporal", case=case.name, pair=pair, records=records,
                      rates=rates,
                      norm=f"l2(0,T;L2) vs {'exact' if ref_traj is None else 'fine-tau reference'}")


# ---------------------------------------------------------------------------
# randomness and the stability study

def random_stream(seed: int, run_index: int = 0) -> np.random.Generator:
    """Deterministic per-run stream derived from (seed, run index)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(seed) & (2**63 - 1), int(run_index)])))


def random_field(seed: int, index: int, dist: str = "uniform") -> float:
    """Deterministic random value in [0, 1] addressed by (seed, index)."""
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)).advance(int(index) * 4))
    if dist == "uniform":
        return float(gen.random())
    if dist == "f":
        x = float(gen.f(5.0, 10.0))
        return x / (1.0 + x)
    raise ValueError(f"unknown randf distribution {dist!r}")


@dataclass
class PerturbationRecord:
    epsilon: float
    seed: int
    E_ex: dict
    E_app: dict
    failed: bool = False
    message: str = ""


@dataclass
class StabilityReport:
    case: str
    pair: str
    h: float
    tau: float
    records: list
    slopes_ex: dict      # field -> RateFit (linear in epsilon, with intercept)
    slopes_app: dict
    baseline_errors: dict


def _linear_fit(xs, ys) -> RateFit:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(slope=float(slope), intercept=float(intercept), r_squared=r2,
                   pairwise=[])


def perturbation_study(case: ManufacturedCase, params: ModelParameters,
                       epsilons=DEFAULT_EPSILONS, seed: int = 0,
                       h_ref: float = 0.2, tau: float = 0.1, pair: str = "P2-P1",
                       T: float | None = None,
                       options: SystemOptions | None = None,
                       newton_cfg: NewtonConfig | None = None) -> StabilityReport:
    """Runs the unperturbed baseline and one perturbed transient per epsilon.

    Every right-hand-side source evaluation in a perturbed run is
    multiplied by (1 - eps * randf); E_ex compares against the exact
    solution and E_app against the epsilon = 0 baseline.
    """
    epsilons = [float(e) for e in epsilons]
    for e in epsilons:
        if not 0.0 <= e < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {e!r}")
    T = case.T if T is None else T

    system, baseline = _run_transient(case, pair, h_ref, tau, T, params, options,
                                      newton_cfg)
    baseline_errors = {f: space_time_error(baseline, case, f) for f in FIELDS}

    records = []
    for run_index, eps in enumerate(epsilons, start=1):
        pert = PerturbedSources(eps, random_stream(seed, run_index))
        try:
            _, traj = _run_transient(case, pair, h_ref, tau, T, params, options,
                                     newton_cfg, perturbation=pert)
        except Exception as exc:  # record per-epsilon failure, keep sweeping
            records.append(PerturbationRecord(
                epsilon=eps, seed=seed, E_ex={}, E_app={}, failed=True,
                message=f"{type(exc).__name__}: {exc}"))
            continue
        E_ex = {f: space_time_error(traj, case, f) for f in FIELDS}
        E_app = {f: space_time_diff(traj, baseline, f) for f in FIELDS}
        records.append(PerturbationRecord(epsilon=eps, seed=seed, E_ex=E_ex, E_app=E_app))

    ok = [r for r in records if not r.failed]
    slopes_ex = {f: _linear_fit([r.epsilon for r in ok], [r.E_ex[f] for r in ok])
                 for f in FIELDS} if len(ok) >= 2 else {}
    slopes_app = {f: _linear_fit([r.epsilon for r in ok], [r.E_app[f] for r in ok])
                  for f in FIELDS} if len(ok) >= 2 else {}
    return StabilityReport(case=case.name, pair=pair, h=h_ref, tau=tau,
                           records=records, slopes_ex=slopes_ex,
                           slopes_app=slopes_app, baseline_errors=baseline_errors)


# ---------------------------------------------------------------------------
# CSV / plot-data output

def _fmt(x):
    return f"{x:.17g}"


def write_rate_csv(report: RateReport, path):
    """Summary rows (one per field) matching the rate-table layout."""
    label = "beta1" if report.study == "spatial" else "alpha"
    with open(path, "w") as f:
        f.write("case,pair,field,estimate,slope,r_squared,n_points,norm\n")
        for name in FIELDS:
            fit = report.rates[name]
            est = "beta2" if (report.study == "spatial" and name == "p") else label
            f.write(f"{report.case},{report.pair},{name},{est},{_fmt(fit.slope)},"
                    f"{_fmt(fit.r_squared)},{len(report.records)},{report.norm}\n")


def write_error_csv(report: RateReport, path):
    with open(path, "w") as f:
        f.write("case,pair,h,tau,n_elements,newton_max,err_u,err_p,err_psi,err_c\n")
        for r in report.records:
            errs = ",".join(_fmt(r.errors[name]) for name in FIELDS)
            f.write(f"{report.case},{report.pair},{_fmt(r.h)},{_fmt(r.tau)},"
                    f"{r.n_elements},{r.newton_max},{errs}\n")


def write_plot_data(report: RateReport, directory, prefix):
    """Two-column log-log data files, one per field."""
    import os

    paths = []
    for name in FIELDS:
        path = os.path.join(directory, f"{prefix}_{name}.dat")
        with open(path, "w") as f:
            for r in report.records:
                x = r.h if report.study == "spatial" else r.tau
                f.write(f"{_fmt(x)} {_fmt(r.errors[name])}\n")
        paths.append(path)
    return paths


def write_stability_csv(report: StabilityReport, path):
    with open(path, "w") as f:
        f.write("case,field,slope_ex,slope_app,r2_ex,r2_app,intercept_ex,intercept_app\n")
        for name in FIELDS:
            se = report.slopes_ex.get(name)
            sa = report.slopes_app.get(name)
            if se is None or sa is None:
                f.write(f"{report.case},{name},,,,,,\n")
                continue
            f.write(f"{report.case},{name},{_fmt(se.slope)},{_fmt(sa.slope)},"
                    f"{_fmt(se.r_squared)},{_fmt(sa.r_squared)},"
                    f"{_fmt(se.intercept)},{_fmt(sa.intercept)}\n")


def write_stability_errors_csv(report: StabilityReport, path):
    with open(path, "w") as f:
        f.write("epsilon,seed,failed," +
                ",".join(f"E_ex_{n}" for n in FIELDS) + "," +
                ",".join(f"E_app_{n}" for n in FIELDS) + "\n")
        for r in report.records:
            if r.failed:
                f.write(f"{_fmt(r.epsilon)},{r.seed},1," + ",," * 3 + ",,\n")
                continue
            ex = ",".join(_fmt(r.E_ex[n]) for n in FIELDS)
            ap = ",".join(_fmt(r.E_app[n]) for n in FIELDS)
            f.write(f"{_fmt(r.epsilon)},{r.seed},0,{ex},{ap}\n")


def write_slice(fef, path, axis: str = "y", value: float | None = None,
                n_samples: int = 201):
    """Sampled values along an axis-aligned line, monotone coordinate first."""
    mesh = fef.space.mesh
    dom = mesh.domain
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    if axis == "y":   # fixed y, x varies
        if value is None:
            value = 0.5 * (dom.y0 + dom.y1)
        xs = np.linspace(dom.x0, dom.x1, n_samples)
        pts = np.column_stack([xs, np.full(n_samples, value)])
        coord = xs
    else:
        if value is None:
            value = 0.5 * (dom.x0 + dom.x1)
        ys = np.linspace(dom.y0, dom.y1, n_samples)
        pts = np.column_stack([np.full(n_samples, value), ys])
        coord = ys
    vals = fef.eval(pts)
    with open(path, "w") as f:
        for i, s in enumerate(coord):
            if vals.ndim == 1:
                f.write(f"{_fmt(s)} {_fmt(vals[i])}\n")
            else:
                f.write(f"{_fmt(s)} " + " ".join(_fmt(v) for v in vals[i]) + "\n")
    return path
