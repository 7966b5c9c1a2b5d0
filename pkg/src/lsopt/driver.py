"""Outer optimization loop.

Wires the pieces end to end: state and adjoint solves (optionally
concurrent), cost and constraint evaluation, multiplier updates, the
velocity solve, level-set transport with adaptive step sizing, periodic
reinitialization and a windowed stopping check. Each iteration appends one
record to an ordered history log.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, SolverError
from .fem import FemField, FunctionSpace
from .levelset import reinitialize, transport
from .models.base import NewtonProblem, solve_problem
from .ppl import combine_derivatives, lagrangian_value, ppl_init, ppl_update
from .velocity import VelocitySolver

__all__ = [
    "RunParams",
    "IterationRecord",
    "adaptive_time",
    "stopping_check",
    "solve_concurrent",
    "run",
]

# B(theta, theta) is clamped below by this before inverting into a horizon.
BTT_FLOOR = 1e-12


@dataclass(frozen=True)
class RunParams:
    """Knobs of the outer loop.

    ``lv_time`` and ``lv_iter`` bound the transport horizon and its substep
    count, ``reinit_step`` reinitializes every k iterations (None disables),
    and ``random_pars = (seed, spread)`` jitters the adaptive step when the
    spread is positive. The stopping check sleeps until the iteration index
    passes ``start_to_check`` and then compares against the ``prev``
    preceding records.
    """

    niter: int = 100
    dfactor: float = 1e-2
    lv_time: tuple = (1e-3, 1e-1)
    lv_iter: tuple = (8, 16)
    smooth: bool = False
    reinit_step: Optional[int] = None
    reinit_pars: tuple = (8, 1e-1)
    start_to_check: int = 30
    ctrn_tol: float = 1e-2
    lgrn_tol: float = 1e-2
    cost_tol: float = 1e-2
    prev: int = 10
    random_pars: tuple = (1, 0.05)
    task_parallel: bool = False

    def __post_init__(self):
        try:
            t_min, t_max = map(float, self.lv_time)
            s_min, s_max = self.lv_iter
            _seed, spread = self.random_pars
            r_iters, r_final = self.reinit_pars
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed run parameter pair: {exc}")
        if not 0.0 < t_min < t_max:
            raise ConfigError(f"need 0 < t_min < t_max, got {self.lv_time}")
        if not 1 <= s_min < s_max:
            raise ConfigError(f"need 1 <= s_min < s_max, got {self.lv_iter}")
        if not 0.0 <= float(spread) < 1.0:
            raise ConfigError(f"random spread must lie in [0, 1), got {spread}")
        if self.prev < 1:
            raise ConfigError(f"stopping window needs prev >= 1, got {self.prev}")
        if self.niter < 0:
            raise ConfigError(f"niter must be nonnegative, got {self.niter}")
        if self.dfactor <= 0.0:
            raise ConfigError(f"dfactor must be positive, got {self.dfactor}")
        if self.reinit_step is not None and self.reinit_step < 1:
            raise ConfigError(
                f"reinit_step must be a positive count or None, got {self.reinit_step}"
            )
        if int(r_iters) < 1 or float(r_final) <= 0.0:
            raise ConfigError(f"bad reinit_pars {self.reinit_pars}")
        for name in ("ctrn_tol", "lgrn_tol", "cost_tol"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")

    @property
    def seed(self) -> int:
        return int(self.random_pars[0])

    @property
    def spread(self) -> float:
        return float(self.random_pars[1])


@dataclass
class IterationRecord:
    """One row of the run log; the transport fields stay zero on the
    terminal record, which is logged before any velocity solve happens."""

    iteration: int
    cost: float
    constraint: np.ndarray
    lagrangian: float
    ctrn_err: float
    multipliers: np.ndarray
    t_end: float = 0.0
    steps: int = 0
    form_value: float = 0.0
    wall_ms: float = 0.0


def adaptive_time(btt: float, params: RunParams, rng) -> tuple:
    """Transport horizon and substep count for one iteration.

    The horizon scales inversely with B(theta, theta) and the substep count
    follows a sixth-root profile between its bounds, so longer horizons get
    finer substepping. A positive spread draws a uniform factor for the
    horizon first and a normal perturbation of the count second; both land
    back in their clamped ranges.
    """
    if not math.isfinite(btt):
        raise ConfigError(f"B(theta, theta) must be finite, got {btt}")
    t_min, t_max = params.lv_time
    s_min, s_max = params.lv_iter
    t_end = params.dfactor / max(btt, BTT_FLOOR)
    spread = params.spread
    if spread > 0.0:
        t_end *= rng.uniform(1.0 - spread, 1.0 + spread)
    t_end = min(max(t_end, t_min), t_max)
    s_hat = (s_max - s_min) * ((t_end - t_min) / (t_max - t_min)) ** (1.0 / 6.0) + s_min
    if spread > 0.0:
        s_hat = rng.normal(s_hat, spread * s_hat)
    steps = int(round(min(max(s_hat, s_min), s_max)))
    return t_end, steps


def stopping_check(history, params: RunParams, has_constraints: bool) -> bool:
    """Flatness test of the newest record against its preceding window.

    Unconstrained runs compare costs; constrained runs compare Lagrangian
    values and additionally require the constraint error under ``ctrn_tol``.
    """
    if not history:
        return False
    current = history[-1]
    if current.iteration <= params.start_to_check:
        return False
    window = history[max(len(history) - 1 - params.prev, 0) : len(history) - 1]
    if not window:
        return False
    if has_constraints:
        if not current.ctrn_err < params.ctrn_tol:
            return False
        swing = max(abs(current.lagrangian - r.lagrangian) for r in window)
        return swing < params.lgrn_tol * abs(current.lagrangian)
    swing = max(abs(current.cost - r.cost) for r in window)
    return swing < params.cost_tol * abs(current.cost)


def solve_concurrent(problems, parallel: bool = False, x0=None) -> list:
    """Solve independent problem records, returning fields in input order.

    Serial unless ``parallel`` is set and there are at least two problems.
    The thread pool shares nothing mutable between tasks, so concurrent
    results match the serial ones bitwise. On failure the first error in
    input order propagates and pending siblings are cancelled.
    """
    problems = list(problems)
    guesses = list(x0) if x0 is not None else [None] * len(problems)
    if len(guesses) != len(problems):
        raise ConfigError(
            f"{len(guesses)} initial guesses for {len(problems)} problems"
        )
    if not parallel or len(problems) < 2:
        return [solve_problem(p, g) for p, g in zip(problems, guesses)]
    with ThreadPoolExecutor(max_workers=len(problems)) as pool:
        futures = [
            pool.submit(solve_problem, p, g) for p, g in zip(problems, guesses)
        ]
        try:
            return [f.result() for f in futures]
        except BaseException:
            for f in futures:
                f.cancel()
            raise


def _adjoint_fields(model, phi, states, parallel) -> list:
    """Adjoints for the given states; closed forms pass through, the rest
    are solved (concurrently when asked) keeping their positions."""
    items = model.adjoint(phi, states)
    pending = [(i, item) for i, item in enumerate(items) if not isinstance(item, FemField)]
    if not pending:
        return list(items)
    solved = solve_concurrent([p for _, p in pending], parallel)
    out = list(items)
    for (i, _), fld in zip(pending, solved):
        out[i] = fld
    return out


def run(model, phi0, params: RunParams, on_record: Optional[Callable] = None,
        timing: bool = True):
    """Optimize the level set; returns (final phi, history).

    One iteration solves states and adjoints, evaluates cost and
    constraints, updates the multipliers, checks the stopping window, and
    otherwise solves for a velocity, picks an adaptive horizon and
    transports (reinitializing every ``reinit_step`` iterations). The last
    logged record keeps zero transport fields when the stopping check fired.

    ``on_record`` receives (record, phi) right after each record completes,
    with phi already transported; streaming consumers therefore keep every
    finished iteration even when a later solve raises.

    ``timing=False`` is the deterministic-replay mode: wall_ms stays 0.0 in
    every record, so identical runs serialize to identical bytes.
    """
    if phi0.mesh is not model.space.mesh:
        raise ConfigError("model and initial level set live on different meshes")
    history: list = []
    if params.niter == 0:
        return phi0, history
    rng = np.random.default_rng(params.seed)
    nc = model.constraint_count
    ppl = ppl_init(nc)
    solver = VelocitySolver(model.bilinear_form(), FunctionSpace(model.space.mesh, 2))
    phi = phi0
    warm: Optional[list] = None
    for it in range(params.niter):
        tic = time.perf_counter()
        problems = model.pde(phi)
        if warm is not None and len(warm) == len(problems):
            for problem, start in zip(problems, warm):
                if isinstance(problem, NewtonProblem):
                    problem.init = start.copy()
            states = solve_concurrent(problems, params.task_parallel, x0=warm)
        else:
            states = solve_concurrent(problems, params.task_parallel)
        warm = [u.values for u in states]
        adjoints = _adjoint_fields(model, phi, states, params.task_parallel)
        cost = float(model.cost(phi, states))
        cvals = np.asarray(model.constraint(phi, states), dtype=float)
        if nc:
            ppl = ppl_update(ppl, cvals)
        record = IterationRecord(
            iteration=it,
            cost=cost,
            constraint=cvals.copy(),
            lagrangian=lagrangian_value(cost, cvals, ppl),
            ctrn_err=float(np.max(np.abs(cvals - 1.0))) if nc else 0.0,
            multipliers=ppl.lam.copy(),
        )
        history.append(record)
        if stopping_check(history, params, nc > 0):
            if timing:
                record.wall_ms = 1e3 * (time.perf_counter() - tic)
            if on_record is not None:
                on_record(record, phi)
            return phi, history
        cost_pair, constraint_pairs = model.derivative(phi, states, adjoints)
        pair = combine_derivatives(cost_pair, constraint_pairs, ppl.lam)
        result = solver.solve(pair)
        slack = 1e-12 * (1.0 + abs(result.form_value))
        if result.form_value < -slack or result.derivative > slack:
            raise SolverError(
                f"velocity solve lost descent: dJ={result.derivative:.3e}, "
                f"B={result.form_value:.3e}",
                residual=result.derivative,
            )
        if abs(result.derivative + result.form_value) > 1e-8 * (1.0 + abs(result.form_value)):
            raise SolverError(
                f"velocity derivative identity broke: dJ={result.derivative:.6e} "
                f"vs -B={-result.form_value:.6e}",
                residual=result.derivative + result.form_value,
            )
        t_end, steps = adaptive_time(result.form_value, params, rng)
        phi = transport(phi, result.theta, t_end, steps, smooth=params.smooth)
        if params.reinit_step is not None and (it + 1) % params.reinit_step == 0:
            iters, t_final = params.reinit_pars
            phi = reinitialize(phi, int(iters), float(t_final))
        record.t_end = t_end
        record.steps = steps
        record.form_value = result.form_value
        if timing:
            record.wall_ms = 1e3 * (time.perf_counter() - tic)
        if on_record is not None:
            on_record(record, phi)
    return phi, history
