"""Obedience (IC_t), ex-ante participation (IR) and the experiments built on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .beliefs import (
    BeliefTrajectory,
    entry_belief,
    fcfs_belief_ode,
    fcfs_rhs,
    fcfs_waiting_times,
    three_state_dynamics,
)
from .design import (
    CutoffPolicy,
    DesignOutcome,
    cutoff_distribution,
    ir_value,
    solve_optimal_design,
)
from .errors import RegularityError, ValidationError
from .process import PrimitiveProcess, regularity_check

RATIO_SLACK = 1e-7


@dataclass(frozen=True)
class IcVerdict:
    satisfied: bool
    min_utility: float
    first_violation_time: float | None
    profile: BeliefTrajectory | None = field(default=None, repr=False)

    def to_json(self) -> dict[str, Any]:
        return {
            "satisfied": self.satisfied,
            "min_utility": self.min_utility,
            "first_violation_time": self.first_violation_time,
        }


def ic_profile(trajectory: BeliefTrajectory, V: float, C: float) -> IcVerdict:
    """Check ``U(t) = S(t) V - W(t) C >= -1e-9 C`` at every grid point."""
    traj = trajectory.with_payoffs(V, C)
    u = traj.utility
    tol = 1e-9 * C
    bad = np.nonzero(u < -tol)[0]
    return IcVerdict(
        satisfied=bad.size == 0,
        min_utility=float(u.min()),
        first_violation_time=float(traj.t_grid[bad[0]]) if bad.size else None,
        profile=traj,
    )


def ic_grid(mu1: float, horizon: float | None = None, n: int = 512, refine: int = 16) -> np.ndarray:
    """Uniform grid on ``[0, horizon]`` merged with a ``refine``-times denser
    grid on ``[0, 0.5 / mu1]``, where violations first appear."""
    T = 10.0 / mu1 if horizon is None else horizon
    base = np.linspace(0.0, T, n)
    step = (base[1] - base[0]) / refine
    prefix = np.arange(0.0, min(0.5 / mu1, T), step)
    return np.unique(np.concatenate([base, prefix]))


def ic0_equals_ir(process: PrimitiveProcess, cutoff: CutoffPolicy, V: float, C: float) -> tuple[float, float]:
    """Entry-time obedience value and the IR value of a cutoff design.

    ``ic0 = V - C sum_l gamma0_l tau*_l`` is built from entry beliefs and
    FCFS waits; it equals ``ir / sum_i p_i mu_i``.  A design with no
    entrants returns ``(0, 0)``.
    """
    p = cutoff_distribution(process, cutoff.K, cutoff.x_last)
    ir = ir_value(p, process.mu, V, C)
    if cutoff.K == 0:
        return 0.0, ir
    gamma0 = entry_belief(process, cutoff)
    ic0 = V - C * float(gamma0 @ fcfs_waiting_times(process, cutoff.K))
    return ic0, ir


def max_ratio_increase(trajectory: BeliefTrajectory) -> float:
    """Largest increase of any likelihood ratio between consecutive grid points."""
    r = trajectory.r
    if r is None or r.shape[1] < 2:
        return 0.0
    inc = np.diff(r[:, 1:], axis=0)
    inc = inc[np.isfinite(inc)]
    return float(inc.max(initial=0.0))


@dataclass(frozen=True)
class VerificationReport:
    outcome: DesignOutcome
    verdict: IcVerdict | None
    max_ratio_increase: float
    regular: bool

    @property
    def satisfied(self) -> bool:
        return self.verdict is None or self.verdict.satisfied

    def to_json(self) -> dict[str, Any]:
        return {
            **self.outcome.to_json(),
            "ic_satisfied": self.satisfied,
            "min_utility": None if self.verdict is None else self.verdict.min_utility,
            "first_violation_time": None if self.verdict is None else self.verdict.first_violation_time,
            "max_ratio_increase": self.max_ratio_increase,
            "ratios_monotone": self.max_ratio_increase <= RATIO_SLACK,
        }


def verify_optimal_design(
    process: PrimitiveProcess,
    alpha: float,
    R: float,
    V: float,
    C: float,
    t_grid: Sequence[float] | None = None,
) -> VerificationReport:
    """Solve for the optimal cutoff and check FCFS with no information obeys (IC_t).

    Also reports the largest increase of any likelihood ratio along the
    path, which must stay within the monotonicity slack.
    """
    if not regularity_check(process).process_regular:
        raise RegularityError("verification requires a regular process")
    outcome = solve_optimal_design(process, alpha, R, V, C)
    if outcome.K_star == 0:
        return VerificationReport(outcome, None, 0.0, True)
    cutoff = CutoffPolicy(outcome.K_star, outcome.x_star)
    grid = ic_grid(process.mu[1]) if t_grid is None else np.asarray(t_grid, dtype=float)
    traj = fcfs_belief_ode(process, cutoff, grid)
    return VerificationReport(outcome, ic_profile(traj, V, C), max_ratio_increase(traj), True)


def necessity_environment(lam: float, mu: float, C: float) -> float:
    """Service value ``V`` that makes IR bind at cutoff 2 in an M/M/1 queue."""
    return C * (2 * lam + mu) / ((lam + mu) * mu)


@dataclass(frozen=True)
class NecessityRow:
    lam: float
    u0: float
    udot: float
    udot_over_lambda: float
    analytic_limit: float


@dataclass(frozen=True)
class NecessityResult:
    q22: float
    rows: tuple[NecessityRow, ...]

    def relative_error(self, lam: float) -> float:
        row = next(r for r in self.rows if r.lam == lam)
        if row.analytic_limit == 0:
            return abs(row.udot_over_lambda)
        return abs(row.udot_over_lambda - row.analytic_limit) / abs(row.analytic_limit)

    def to_csv(self) -> str:
        lines = ["lambda,udot_over_lambda,analytic_limit"]
        for r in self.rows:
            lines.append(f"{r.lam:.17g},{r.udot_over_lambda:.17g},{r.analytic_limit:.17g}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict[str, Any]:
        return {
            "q22": self.q22,
            "rows": [
                {
                    "lambda": r.lam,
                    "u0": r.u0,
                    "udot_over_lambda": r.udot_over_lambda,
                    "analytic_limit": r.analytic_limit,
                }
                for r in self.rows
            ],
        }


def necessity_experiment(
    q22_fraction: float, mu: float, C: float, lambda_grid: Sequence[float]
) -> NecessityResult:
    """Initial utility slope of an agent under a non-FCFS split, as arrivals vanish.

    For each ``lam`` the environment has cutoff 2, binding IR and ``alpha =
    0``; service at length 2 gives ``q22 = q22_fraction * mu`` to the newer
    agent.  ``U'(0)`` uses a second-order one-sided difference with step
    ``1e-4 / mu``.  Its ratio to ``lam`` tends to ``-C q22 / mu^2``.
    """
    if not 0 <= q22_fraction <= 1:
        raise ValidationError("q22_fraction must lie in [0, 1]")
    if mu <= 0 or C <= 0:
        raise ValidationError("mu and C must be positive")
    q22 = q22_fraction * mu
    h = 1e-4 / mu
    rows = []
    for lam in lambda_grid:
        if lam <= 0:
            raise ValidationError("arrival rates must be positive")
        V = necessity_environment(lam, mu, C)
        traj = three_state_dynamics(lam, mu, mu - q22, q22, 0.0, t_grid=[0.0, h, 2 * h], V=V, C=C)
        u = traj.utility
        udot = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
        rows.append(NecessityRow(float(lam), float(u[0]), float(udot), float(udot / lam), -C * q22 / mu**2))
    return NecessityResult(q22, tuple(rows))


@dataclass(frozen=True)
class NaorResult:
    K_FI: int
    K_star: int
    holds: bool


def naor_full_info_K(process: PrimitiveProcess, V: float, C: float, R: float = 1.0) -> NaorResult:
    """Full-information cutoff ``K_FI = max{k : mu_k V >= C k}`` versus ``K*`` at ``alpha = 1``."""
    k = np.arange(process.k_max + 1)
    ok = np.nonzero(process.mu * V - C * k >= 0)[0]
    K_FI = int(ok.max())
    K_star = solve_optimal_design(process, 1.0, R, V, C).K_star
    return NaorResult(K_FI, K_star, K_star <= K_FI)


@dataclass(frozen=True)
class CounterexampleResult:
    epsilon: float
    slope: float
    entry_belief: np.ndarray
    process: PrimitiveProcess


def counterexample_process(epsilon: float) -> PrimitiveProcess:
    return PrimitiveProcess([1.0, epsilon, epsilon, 1.0 / (2 * epsilon**2), 0.0], [0.0, 1.0, 1.0, 1.0, 1.0])


def nonregular_counterexample(epsilon: float) -> CounterexampleResult:
    """Initial slope of the FCFS expected residual wait in a non-regular process.

    Arrivals ``(1, eps, eps, 1/(2 eps^2))`` with unit service and cutoff 4:
    the slope tends to ``1/3`` as ``eps -> 0``, so waiting looks worse the
    longer one has waited.
    """
    if not 0 < epsilon <= 0.1:
        raise ValidationError("epsilon must lie in (0, 0.1]")
    process = counterexample_process(epsilon)
    cutoff = CutoffPolicy(4, 1.0)
    g0 = entry_belief(process, cutoff)
    gdot = fcfs_rhs(process, 4)(g0)
    slope = float(gdot @ fcfs_waiting_times(process, 4))
    return CounterexampleResult(epsilon, slope, g0, process)
