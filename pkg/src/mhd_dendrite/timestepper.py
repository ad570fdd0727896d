"""Backward-Euler time integration of the coupled DAE with a Newton
solve and a sparse direct factorization per iteration."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .assembly import AssembledSystem, CoupledSystem, NonFiniteStateError


class NewtonDivergenceError(RuntimeError):
    """Newton failed; carries the last iterate and residual history."""

    def __init__(self, message, iterate=None, history=None, step_index=None):
        super().__init__(message)
        self.iterate = iterate
        self.history = list(history or [])
        self.step_index = step_index


class SingularSystemError(RuntimeError):
    """The Jacobian factorization hit a zero pivot."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    K: int

    def __post_init__(self):
        if not (self.T > 0.0 and self.K >= 1):
            raise ValueError(f"need T > 0 and K >= 1, got T={self.T!r}, K={self.K!r}")

    @property
    def tau(self):
        return self.T / self.K

    @property
    def times(self):
        return self.tau * np.arange(self.K + 1)


@dataclass
class NewtonConfig:
    tol_abs: float = 1e-12
    tol_rel: float = 1e-10
    max_iter: int = 25
    divergence_factor: float = 1e4
    # Reuse the factored Jacobian across iterations (and steps) until the
    # contraction per iteration is worse than slow_contraction; set False
    # for a fresh factorization at every iterate (classic Newton).
    reuse_jacobian: bool = True
    slow_contraction: float = 0.2
    # Backtracking line search on the residual norm.
    max_backtracks: int = 10
    armijo: float = 1e-4


@dataclass
class StepStats:
    iterations: int
    residual: float
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    factorizations: int = 0


class JacobianCache:
    """Holds one LU factorization for reuse across Newton iterations/steps."""

    def __init__(self):
        self.lu = None
        self.key = None

    def invalidate(self):
        self.lu = None
        self.key = None

    def factor(self, jacobian_fn, y, key):
        system = jacobian_fn(y)
        matrix = system.matrix if isinstance(system, AssembledSystem) else system
        try:
            self.lu = splu(sparse.csc_matrix(matrix))
        except RuntimeError as exc:
            layout = system.layout if isinstance(system, AssembledSystem) else None
            raise SingularSystemError(
                _describe_singularity(sparse.csc_matrix(matrix), layout, exc)) from exc
        self.key = key
        return self.lu


def linear_solve(system, rhs):
    """Direct sparse solve; raises SingularSystemError naming the failing block."""
    if isinstance(system, AssembledSystem):
        matrix, layout = system.matrix, system.layout
    else:
        matrix, layout = system, None
    matrix = sparse.csc_matrix(matrix)
    if matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"matrix is not square: {matrix.shape}")
    try:
        lu = splu(matrix)
        x = lu.solve(np.asarray(rhs, dtype=float))
    except RuntimeError as exc:
        raise SingularSystemError(_describe_singularity(matrix, layout, exc)) from exc
    if not np.isfinite(x).all():
        raise SingularSystemError(_describe_singularity(matrix, layout, "non-finite solution"))
    return x


def _describe_singularity(matrix, layout, exc):
    msg = f"sparse factorization failed: {exc}"
    csr = matrix.tocsr()
    row_empty = np.flatnonzero(np.diff(csr.indptr) == 0)
    if len(row_empty):
        i = int(row_empty[0])
        block = layout.block_of(i) if layout is not None else "?"
        return msg + f"; row {i} (block '{block}') has no entries"
    diag = csr.diagonal()
    zer = np.flatnonzero(diag == 0.0)
    if len(zer) and layout is not None:
        counts = {}
        for i in zer:
            counts[layout.block_of(int(i))] = counts.get(layout.block_of(int(i)), 0) + 1
        return msg + f"; zero diagonal entries per block: {counts}"
    return msg


def newton_solve(residual_fn, jacobian_fn, y0, cfg: NewtonConfig | None = None,
                 cache: JacobianCache | None = None, cache_key=None):
    """Newton iteration on residual_fn(y) = 0 with analytic Jacobian.

    Returns (y, StepStats).  Raises NewtonDivergenceError after max_iter
    iterations or on residual growth beyond divergence_factor.  With
    cfg.reuse_jacobian a factorization held in `cache` is reused until
    the residual contraction degrades, then refreshed at the current
    iterate; without a cache each call factors at least once.
    """
    cfg = cfg or NewtonConfig()
    own_cache = cache if (cache is not None and cfg.reuse_jacobian) else JacobianCache()
    if not cfg.reuse_jacobian:
        own_cache.invalidate()
    y = np.asarray(y0, dtype=float).copy()
    r = residual_fn(y)
    norm0 = float(np.linalg.norm(r))
    tol = cfg.tol_abs + cfg.tol_rel * norm0
    history = [norm0]
    n_factor = 0

    def try_direction(delta, norm):
        """Backtracking on the residual norm; returns accepted (y, r) or None."""
        lam = 1.0
        for _ in range(cfg.max_backtracks + 1):
            y_trial = y + lam * delta
            try:
                r_trial = residual_fn(y_trial)
                n_trial = float(np.linalg.norm(r_trial))
            except (NonFiniteStateError, FloatingPointError):
                n_trial = np.inf
            if np.isfinite(n_trial) and n_trial <= (1.0 - cfg.armijo * lam) * norm:
                return y_trial, r_trial, n_trial
            lam *= 0.5
        return None

    fresh_at = -1
    for it in range(cfg.max_iter + 1):
        norm = history[-1]
        if norm <= tol:
            return y, StepStats(iterations=it, residual=norm, history=history,
                                factorizations=n_factor)
        if norm > cfg.divergence_factor * max(norm0, cfg.tol_abs):
            raise NewtonDivergenceError(
                f"Newton diverged after {it} iterations (residual {norm:.3e}, "
                f"started at {norm0:.3e})", iterate=y, history=history)
        if it == cfg.max_iter:
            break
        slow = it >= 1 and history[-1] > cfg.slow_contraction * history[-2]
        if (own_cache.lu is None or own_cache.key != cache_key
                or not cfg.reuse_jacobian or slow):
            own_cache.factor(jacobian_fn, y, cache_key)
            n_factor += 1
            fresh_at = it
        accepted = try_direction(own_cache.lu.solve(-r), norm)
        if accepted is None and fresh_at != it:
            # stale direction rejected by the line search: refresh and retry
            own_cache.factor(jacobian_fn, y, cache_key)
            n_factor += 1
            fresh_at = it
            accepted = try_direction(own_cache.lu.solve(-r), norm)
        if accepted is None:
            raise NewtonDivergenceError(
                f"line search found no residual decrease at iteration {it} "
                f"(residual {norm:.3e})", iterate=y, history=history)
        y, r, n_new = accepted
        history.append(n_new)
    raise NewtonDivergenceError(
        f"Newton did not converge in {cfg.max_iter} iterations "
        f"(residual {history[-1]:.3e}, tolerance {tol:.3e})",
        iterate=y, history=history)


def step(system: CoupledSystem, Y_n, t_next, tau, newton_cfg: NewtonConfig | None = None,
         source_factors=None, cache: JacobianCache | None = None):
    """One backward-Euler step: solve F(t_next, Y, (Y - Y_n)/tau) = 0."""
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    Y_n = np.asarray(Y_n, dtype=float)
    shift = 1.0 / tau

    def res(y):
        return system.residual(y, (y - Y_n) * shift, t_next, source_factors=source_factors)

    def jac(y):
        return system.jacobian(y, t_next, shift)

    t0 = time.perf_counter()
    y, stats = newton_solve(res, jac, Y_n, newton_cfg, cache=cache, cache_key=tau)
    stats.wall_time = time.perf_counter() - t0
    return y, stats


@dataclass(eq=False)
class Trajectory:
    """States at t_0..t_K plus per-step Newton statistics."""

    system: CoupledSystem
    grid: TimeGrid
    states: list
    step_stats: list

    @property
    def times(self):
        return self.grid.times

    def state(self, i):
        return self.states[i]

    def write_log(self, path):
        with open(path, "w") as f:
            f.write("step,newton_iterations,residual,wall_time_s\n")
            for i, st in enumerate(self.step_stats, start=1):
                f.write(f"{i},{st.iterations},{st.residual:.17g},{st.wall_time:.17g}\n")


class PerturbedSources:
    """Per-step multiplicative (1 - eps * randf) factors on source evaluations.

    Draws one uniform value per (equation group, element, quadrature
    point) per time step from a dedicated stream, so a run is
    reproducible from (seed, run index) alone.
    """

    def __init__(self, epsilon, rng):
        if not 0.0 <= epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {epsilon!r}")
        self.epsilon = float(epsilon)
        self.rng = rng

    def factors(self, n_triangles, n_quad):
        draws = self.rng.random((3, n_triangles, n_quad))
        return 1.0 - self.epsilon * draws


def solve_transient(system: CoupledSystem, initial, grid: TimeGrid,
                    newton_cfg: NewtonConfig | None = None,
                    perturbation: PerturbedSources | None = None) -> Trajectory:
    """Integrate from interpolated initial data over the whole grid.

    Newton starts each step from the previous time level.  Step failures
    propagate with the failing step index attached.
    """
    Y = np.asarray(initial, dtype=float).copy()
    states = [Y.copy()]
    stats = []
    nt = system.mesh.n_triangles
    nq = system.tab_u.rule.n_points
    cache = JacobianCache()
    for i, t_next in enumerate(grid.times[1:], start=1):
        factors = perturbation.factors(nt, nq) if perturbation is not None else None
        try:
            Y, st = step(system, Y, t_next, grid.tau, newton_cfg,
                         source_factors=factors, cache=cache)
        except NewtonDivergenceError as exc:
            exc.step_index = i
            raise
        states.append(Y.copy())
        stats.append(st)
    return Trajectory(system=system, grid=grid, states=states, step_stats=stats)
