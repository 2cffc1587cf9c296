"""Optimal queue design: cutoff entry, FCFS service and no information disclosure."""
from .design import (
    CutoffPolicy,
    DesignOutcome,
    Discipline,
    DisciplineKind,
    EntryExitPolicy,
    cutoff_distribution,
    discipline_rates,
    invariant_distribution,
    lp_oracle,
    solve_optimal_design,
)
from .errors import FeasibilityError, NumericalError, OptQueueError, RegularityError, UnsupportedError, ValidationError
from .process import (
    PrimitiveProcess,
    RegularityReport,
    greedy_fcfs_rates,
    make_mmc,
    make_one_sided_matching,
    make_team,
    regularity_check,
)
from .beliefs import BeliefTrajectory, fcfs_belief_ode, discipline_wait_curves
from .incentives import ic_profile, verify_optimal_design

__all__ = [
    "BeliefTrajectory",
    "CutoffPolicy",
    "DesignOutcome",
    "Discipline",
    "DisciplineKind",
    "EntryExitPolicy",
    "FeasibilityError",
    "NumericalError",
    "OptQueueError",
    "PrimitiveProcess",
    "RegularityError",
    "RegularityReport",
    "UnsupportedError",
    "ValidationError",
    "cutoff_distribution",
    "discipline_rates",
    "fcfs_belief_ode",
    "discipline_wait_curves",
    "greedy_fcfs_rates",
    "ic_profile",
    "invariant_distribution",
    "lp_oracle",
    "make_mmc",
    "make_one_sided_matching",
    "make_team",
    "regularity_check",
    "solve_optimal_design",
    "verify_optimal_design",
]
