"""Waiting times and the belief dynamics of an uninformed agent in the queue.

An agent who only knows that it is still waiting updates its belief over
its state by Bayes' rule.  For a tagged agent whose state follows a
continuous-time chain with transient generator ``Q`` and exit rates ``e``,
the normalized belief obeys the filter equation

    gamma' = Q^T gamma + gamma (e . gamma),

which preserves total mass.  FCFS needs only the position; other
disciplines need the pair ``(k, l)`` of queue length and position.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Sequence, TextIO

import numpy as np

from .design import (
    CutoffPolicy,
    Discipline,
    DisciplineKind,
    EntryExitPolicy,
    cutoff_distribution,
    effective_arrivals,
    invariant_distribution,
)
from .errors import NumericalError, ValidationError
from .ode import integrate
from .process import PrimitiveProcess

CLAMP = 1e-15
DEFAULT_POINTS = 512


def default_grid(process: PrimitiveProcess, n: int = DEFAULT_POINTS, horizon: float | None = None) -> np.ndarray:
    """Uniform grid on ``[0, 10 / mu_1]`` unless a horizon is given."""
    T = 10.0 / process.mu[1] if horizon is None else horizon
    return np.linspace(0.0, T, n)


@dataclass(frozen=True)
class BeliefTrajectory:
    """Belief path of an uninformed agent.

    ``gamma[i, j]`` is the belief at ``t_grid[i]`` on state ``labels[j]``.
    For position-indexed trajectories ``r[i, j] = gamma[i, j] / gamma[i,
    j-1]`` (NaN for the first position or a vanishing denominator);
    state-indexed trajectories carry ``r = None``.
    """

    t_grid: np.ndarray
    gamma: np.ndarray
    r: np.ndarray | None
    residual_wait: np.ndarray
    serve_prob: np.ndarray
    labels: tuple
    utility: np.ndarray | None = None
    tau: np.ndarray | None = None
    sigma: np.ndarray | None = None

    def with_payoffs(self, V: float, C: float) -> BeliefTrajectory:
        return replace(self, utility=self.serve_prob * V - self.residual_wait * C)

    def to_csv(self, fh: TextIO | None = None) -> str:
        """Write ``t, gamma_1.., W, S, U``; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"gamma_{j + 1}" for j in range(self.gamma.shape[1])] + ["W", "S", "U"])
        util = self.utility if self.utility is not None else np.full(self.t_grid.size, np.nan)
        for i, t in enumerate(self.t_grid):
            row = [t, *self.gamma[i], self.residual_wait[i], self.serve_prob[i], util[i]]
            writer.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue() if fh is None else ""


@dataclass(frozen=True)
class StateWaitTable:
    """``tau[k, l]`` expected residual wait and ``sigma[k, l]`` service probability.

    Entries outside ``1 <= l <= k <= K`` are NaN.
    """

    tau: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class TaggedChain:
    """Transient chain of a tagged agent over states ``(k, l)``."""

    states: tuple[tuple[int, int], ...]
    Q: np.ndarray
    exit_served: np.ndarray
    exit_removed: np.ndarray

    @property
    def exit_rate(self) -> np.ndarray:
        return self.exit_served + self.exit_removed

    def index(self, k: int, l: int) -> int:
        return self.states.index((k, l))

    def solve(self) -> tuple[np.ndarray, np.ndarray]:
        """Expected residual time and service probability from each state."""
        A = -self.Q
        try:
            tau = np.linalg.solve(A, np.ones(len(self.states)))
            sigma = np.linalg.solve(A, self.exit_served)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("tagged-agent chain has a state that never exits") from exc
        if np.linalg.cond(A) > 1e12:
            raise NumericalError("tagged-agent chain is numerically singular")
        return tau, sigma

    def rhs(self, gamma: np.ndarray) -> np.ndarray:
        return self.Q.T @ gamma + gamma * (self.exit_rate @ gamma)


def tagged_chain(process: PrimitiveProcess, policy: EntryExitPolicy, discipline: Discipline) -> TaggedChain:
    """Build the chain of a tagged agent for lengths up to ``discipline.K``.

    From ``(k, l)``: service or removal of the agent at ``j < l`` moves it to
    ``(k-1, l-1)``, of ``j > l`` to ``(k-1, l)``; its own service or removal
    is an exit.  A joining arrival (rate ``lam_k x_k``) removes position ``j``
    with probability ``z[k, j]`` (its own removal exits, ``j < l`` moves it to
    ``(k, l-1)``) and otherwise lengthens the queue to ``(k+1, l)``.
    """
    K = discipline.K
    if policy.size < K + 1 or process.k_max < K:
        raise ValidationError("policy and process must cover lengths 0..K")
    states = tuple((k, l) for k in range(1, K + 1) for l in range(1, k + 1))
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    Q = np.zeros((n, n))
    served = np.zeros(n)
    removed = np.zeros(n)

    def move(i: int, target: tuple[int, int], rate: float) -> None:
        if rate == 0.0:
            return
        if target not in idx:
            raise ValidationError(f"transition leaves the modeled lengths 1..{K} into {target}")
        Q[i, idx[target]] += rate

    for i, (k, l) in enumerate(states):
        q = discipline.q[k]
        y = policy.y[k]
        for j in range(1, k + 1):
            rate = q[j] + y[j]
            if j == l:
                served[i] += q[j]
                removed[i] += y[j]
            elif k > 1:
                move(i, (k - 1, l - 1) if j < l else (k - 1, l), rate)
        arrive = process.lam[k] * policy.x[k] if k < policy.size else 0.0
        if arrive > 0.0:
            z = policy.z[k]
            for j in range(1, k + 1):
                if z[j] == 0.0:
                    continue
                if j == l:
                    removed[i] += arrive * z[j]
                else:
                    move(i, (k, l - 1) if j < l else (k, l), arrive * z[j])
            grow = arrive * (1.0 - z[1 : k + 1].sum())
            if grow > 1e-15 * arrive:
                move(i, (k + 1, l), grow)
    np.fill_diagonal(Q, 0.0)
    Q -= np.diag(Q.sum(axis=1) + served + removed)
    return TaggedChain(states, Q, served, removed)


def tagged_entry_belief(process: PrimitiveProcess, policy: EntryExitPolicy, chain: TaggedChain) -> np.ndarray:
    """Stationary belief of a new entrant over ``(k, l)``.

    Joining at length ``k`` leads to ``(k+1, k+1)``, or to ``(k, k)`` when
    the arrival triggers a removal.
    """
    K = max(k for k, _ in chain.states)
    p = invariant_distribution(process, policy, min(process.k_max, policy.size - 1))
    gamma = np.zeros(len(chain.states))
    idx = {s: i for i, s in enumerate(chain.states)}
    for k in range(min(p.size, K + 1)):
        w = p[k] * process.lam[k] * policy.x[k]
        if w == 0.0:
            continue
        zsum = policy.z[k, 1 : k + 1].sum()
        if zsum < 1.0:
            if (k + 1, k + 1) not in idx:
                raise ValidationError(f"entrants at length {k} exceed the modeled lengths")
            gamma[idx[(k + 1, k + 1)]] += w * (1.0 - zsum)
        if zsum > 0.0:
            gamma[idx[(k, k)]] += w * zsum
    total = gamma.sum()
    if total <= 0.0:
        raise ValidationError("no agent ever enters under this policy")
    return gamma / total


def fcfs_waiting_times(process: PrimitiveProcess, K: int) -> np.ndarray:
    """Expected FCFS wait ``l / mu_l`` of positions ``l = 1..K``."""
    if not 1 <= K <= process.k_max:
        raise ValidationError(f"K={K} outside 1..{process.k_max}")
    if process.mu[1] <= 0:
        raise ValidationError("mu_1 must be positive")
    l = np.arange(1, K + 1)
    return l / process.mu[1 : K + 1]


def entry_belief(process: PrimitiveProcess, cutoff: CutoffPolicy) -> np.ndarray:
    """Entrant's belief over positions ``1..K``: ``gamma_l ~ p_{l-1} lam~_{l-1}``."""
    if cutoff.K < 1:
        raise ValidationError("entry beliefs need a cutoff K >= 1")
    p = cutoff_distribution(process, cutoff.K, cutoff.x_last)
    w = p[: cutoff.K] * effective_arrivals(process, cutoff)
    total = w.sum()
    if total <= 0:
        raise ValidationError("no agent ever enters under this cutoff")
    return w / total


def fcfs_rhs(process: PrimitiveProcess, K: int):
    """Right-hand side ``gamma_l' = -mu_l gamma_l + mu_l gamma_{l+1} + gamma_l sum_i gamma_i q_i``."""
    mu = process.mu[1 : K + 1].copy()
    q = np.diff(process.mu[: K + 1])

    def f(g: np.ndarray) -> np.ndarray:
        nxt = np.zeros_like(g)
        nxt[:-1] = g[1:]
        return -mu * g + mu * nxt + g * (q @ g)

    return f


def _ratios(gamma: np.ndarray) -> np.ndarray:
    g = np.where(gamma < CLAMP, 0.0, gamma)
    r = np.full(g.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        r[:, 1:] = np.where(g[:, :-1] > 0, g[:, 1:] / g[:, :-1], np.nan)
    return r


def _clean(raw: np.ndarray) -> np.ndarray:
    if np.any(raw < -1e-12):
        raise NumericalError("belief integration produced negative mass")
    return np.clip(raw, 0.0, None)


def fcfs_belief_ode(
    process: PrimitiveProcess,
    cutoff: CutoffPolicy,
    t_grid: Sequence[float] | None = None,
    V: float | None = None,
    C: float | None = None,
) -> BeliefTrajectory:
    """Position beliefs of an uninformed agent under FCFS.

    Integrates the belief dynamics by RK4 with step halving.  The
    likelihood ratios ``r`` are derived from ``gamma``.  Under FCFS every
    agent is served, so ``S(t) = 1``.
    """
    t_grid = default_grid(process) if t_grid is None else np.asarray(t_grid, dtype=float)
    K = cutoff.K
    g0 = entry_belief(process, cutoff)
    gamma = _clean(integrate(fcfs_rhs(process, K), g0, t_grid))
    tau = fcfs_waiting_times(process, K)
    traj = BeliefTrajectory(
        t_grid=t_grid,
        gamma=gamma,
        r=_ratios(gamma),
        residual_wait=gamma @ tau,
        serve_prob=np.ones(t_grid.size),
        labels=tuple(range(1, K + 1)),
        tau=tau,
        sigma=np.ones(K),
    )
    return traj.with_payoffs(V, C) if V is not None and C is not None else traj


@dataclass(frozen=True)
class BeliefDecomposition:
    t_grid: np.ndarray
    overall: np.ndarray
    top: np.ndarray
    bottom: np.ndarray

    def to_csv(self) -> str:
        lines = ["t,overall,top,bottom"]
        for row in zip(self.t_grid, self.overall, self.top, self.bottom):
            lines.append(",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def belief_decomposition(
    process: PrimitiveProcess, cutoff: CutoffPolicy, t_grid: Sequence[float] | None = None
) -> BeliefDecomposition:
    """Split the FCFS belief in position 1 into its two driving effects.

    Evolves the survival-conditioned joint belief over (initial position
    ``l0``, current position ``l``).  ``overall`` is the belief in ``l = 1``;
    ``top`` holds the initial-position belief at the prior and averages the
    per-``l0`` chance of having reached position 1; ``bottom`` is the
    posterior belief that ``l0 = 1``.
    """
    t_grid = default_grid(process) if t_grid is None else np.asarray(t_grid, dtype=float)
    K = cutoff.K
    if K * K > 10_000:
        raise ValidationError("cutoff too large for the joint decomposition chain")
    g0 = entry_belief(process, cutoff)
    pairs = [(l0, l) for l0 in range(1, K + 1) for l in range(1, l0 + 1)]
    idx = {s: i for i, s in enumerate(pairs)}
    n = len(pairs)
    Q = np.zeros((n, n))
    exits = np.zeros(n)
    mu = process.mu
    for i, (l0, l) in enumerate(pairs):
        if l > 1:
            Q[i, idx[(l0, l - 1)]] = mu[l - 1]
        exits[i] = mu[l] - mu[l - 1]
        Q[i, i] = -mu[l]
    start = np.zeros(n)
    for l0 in range(1, K + 1):
        start[idx[(l0, l0)]] = g0[l0 - 1]

    def f(g: np.ndarray) -> np.ndarray:
        return Q.T @ g + g * (exits @ g)

    gamma = _clean(integrate(f, start, t_grid))
    overall = sum(gamma[:, idx[(l0, 1)]] for l0 in range(1, K + 1))
    bottom = gamma[:, idx[(1, 1)]]
    top = np.zeros(t_grid.size)
    for l0 in range(1, K + 1):
        cols = [idx[(l0, l)] for l in range(1, l0 + 1)]
        mass = gamma[:, cols].sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(mass > 0, gamma[:, idx[(l0, 1)]] / mass, 1.0)
        top += g0[l0 - 1] * share
    return BeliefDecomposition(t_grid, overall, top, bottom)


def _as_policy(process: PrimitiveProcess, cutoff: CutoffPolicy | EntryExitPolicy) -> EntryExitPolicy:
    return cutoff.to_policy(process.k_max) if isinstance(cutoff, CutoffPolicy) else cutoff


def discipline_waiting_times(
    process: PrimitiveProcess, cutoff: CutoffPolicy | EntryExitPolicy, discipline: Discipline
) -> StateWaitTable:
    """Expected residual wait and service probability in each state ``(k, l)``.

    Solves the first-step equations of the tagged-agent chain for lengths
    ``1..discipline.K``.
    """
    if isinstance(cutoff, CutoffPolicy) and cutoff.K > discipline.K:
        raise ValidationError("discipline table is shorter than the cutoff")
    chain = tagged_chain(process, _as_policy(process, cutoff), discipline)
    tau_v, sigma_v = chain.solve()
    K = discipline.K
    tau = np.full((K + 1, K + 1), np.nan)
    sigma = np.full((K + 1, K + 1), np.nan)
    for i, (k, l) in enumerate(chain.states):
        tau[k, l] = tau_v[i]
        sigma[k, l] = sigma_v[i]
    return StateWaitTable(tau, sigma)


def tagged_trajectory(
    process: PrimitiveProcess,
    policy: EntryExitPolicy,
    discipline: Discipline,
    t_grid: Sequence[float],
    V: float | None = None,
    C: float | None = None,
) -> BeliefTrajectory:
    """Belief path over ``(k, l)`` states for an arbitrary discipline."""
    t_grid = np.asarray(t_grid, dtype=float)
    chain = tagged_chain(process, policy, discipline)
    tau, sigma = chain.solve()
    g0 = tagged_entry_belief(process, policy, chain)
    gamma = _clean(integrate(chain.rhs, g0, t_grid))
    traj = BeliefTrajectory(
        t_grid=t_grid,
        gamma=gamma,
        r=None,
        residual_wait=gamma @ tau,
        serve_prob=gamma @ sigma,
        labels=chain.states,
        tau=tau,
        sigma=sigma,
    )
    return traj.with_payoffs(V, C) if V is not None and C is not None else traj


def three_state_setup(
    lam: float, mu: float, q21: float, q22: float, x2: float, z21: float = 0.0, z22: float = 0.0
) -> tuple[PrimitiveProcess, EntryExitPolicy, Discipline]:
    """Single-server queue capped at two agents with a given split of service."""
    if lam <= 0 or mu <= 0:
        raise ValidationError("lambda and mu must be positive")
    if min(q21, q22) < 0 or abs(q21 + q22 - mu) > 1e-12 * max(1.0, mu):
        raise ValidationError("q21 and q22 must be nonnegative and sum to mu")
    if not 0 <= x2 <= 1 or min(z21, z22) < 0 or z21 + z22 > 1 + 1e-12:
        raise ValidationError("x2 and z must be probabilities with z21 + z22 <= 1")
    if x2 > 0 and abs(z21 + z22 - 1) > 1e-12:
        raise ValidationError("admitting at length 2 requires z21 + z22 = 1 to keep at most two agents")
    process = PrimitiveProcess([lam, lam, lam], [0.0, mu, mu])
    z = np.zeros((3, 3))
    z[2, 1], z[2, 2] = z21, z22
    policy = EntryExitPolicy(np.array([1.0, 1.0, x2]), np.zeros((3, 3)), z)
    q = np.zeros((3, 3))
    q[1, 1] = mu
    q[2, 1], q[2, 2] = q21, q22
    return process, policy, Discipline.build(DisciplineKind.CUSTOM, q, process.mu)


def three_state_dynamics(
    lam: float,
    mu: float,
    q21: float,
    q22: float,
    x2: float,
    z21: float = 0.0,
    z22: float = 0.0,
    t_grid: Sequence[float] | None = None,
    V: float | None = None,
    C: float | None = None,
) -> BeliefTrajectory:
    """Beliefs over states (1,1), (2,1), (2,2) in a single-server queue of at most two.

    The entrant starts at (1,1) or (2,2); ``q21``/``q22`` split the service
    rate at length 2, ``x2`` admits an arrival at length 2 and ``z21``/``z22``
    pick whom that arrival displaces.
    """
    process, policy, disc = three_state_setup(lam, mu, q21, q22, x2, z21, z22)
    t_grid = np.linspace(0.0, 10.0 / mu, DEFAULT_POINTS) if t_grid is None else t_grid
    return tagged_trajectory(process, policy, disc, t_grid, V, C)


COMPARISON_ORDER = ("FCFS", "SIRO", "LIEW", "LCFS", "LCFS-PR")


def discipline_comparison_parameters(lam: float, mu: float) -> dict[str, tuple[float, float, float, float, float]]:
    """``(q21, q22, x2, z21, z22)`` for each curve of the discipline comparison."""
    from .design import liew_split

    q21, q22 = liew_split(PrimitiveProcess([lam, lam, lam], [0.0, mu, mu]))
    return {
        "FCFS": (mu, 0.0, 0.0, 0.0, 0.0),
        "SIRO": (mu / 2, mu / 2, 0.0, 0.0, 0.0),
        "LIEW": (q21, q22, 0.0, 0.0, 0.0),
        "LCFS": (0.0, mu, 0.0, 0.0, 0.0),
        # Preemption: an arrival to a full queue displaces the agent in service.
        "LCFS-PR": (0.0, mu, 1.0, 0.0, 1.0),
    }


def discipline_wait_curves(lam: float, mu: float, t_grid: Sequence[float] | None = None) -> dict[str, BeliefTrajectory]:
    """Expected residual waits under five disciplines in the two-agent queue."""
    t_grid = np.linspace(0.0, 10.0 / mu, DEFAULT_POINTS) if t_grid is None else np.asarray(t_grid, dtype=float)
    return {
        name: three_state_dynamics(lam, mu, *params, t_grid=t_grid)
        for name, params in discipline_comparison_parameters(lam, mu).items()
    }


def discipline_curves_csv(curves: dict[str, BeliefTrajectory]) -> str:
    names = [n for n in COMPARISON_ORDER if n in curves]
    t = curves[names[0]].t_grid
    lines = [",".join(["t", *names])]
    for i, ti in enumerate(t):
        lines.append(",".join(f"{v:.17g}" for v in [ti, *(curves[n].residual_wait[i] for n in names)]))
    return "\n".join(lines) + "\n"


def discipline_initial_slopes(lam: float, mu: float) -> dict[str, float]:
    """``dW/dt`` at ``t = 0`` for each discipline, from the belief ODE's right-hand side."""
    slopes = {}
    for name, params in discipline_comparison_parameters(lam, mu).items():
        process, policy, disc = three_state_setup(lam, mu, *params)
        chain = tagged_chain(process, policy, disc)
        tau, _ = chain.solve()
        g0 = tagged_entry_belief(process, policy, chain)
        slopes[name] = float(chain.rhs(g0) @ tau)
    return slopes
