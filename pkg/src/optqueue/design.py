"""Entry/exit policies, service disciplines, invariant distributions and the
optimal cutoff design.

The designer maximizes a weighted sum of provider revenue and agent surplus
over stationary queue-length distributions, subject to break-even (IR) for
agents.  For a regular service process the optimum is a cutoff policy
``p(K, x)``: admit every arrival below length ``K - 1``, ration the arrival
at ``K - 1`` with probability ``x`` and admit no one at ``K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

import numpy as np

from .errors import FeasibilityError, NumericalError, RegularityError, UnsupportedError, ValidationError
from .process import PrimitiveProcess, regularity_check
from .simplex import simplex_max

_PROB_TOL = 1e-12


class DisciplineKind(str, Enum):
    FCFS = "FCFS"
    LCFS = "LCFS"
    SIRO = "SIRO"
    LIEW = "LIEW"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class EntryExitPolicy:
    """Entry probabilities and removal rules per queue length.

    Attributes
    ----------
    x : ndarray, shape (n,)
        ``x[k]``: probability an arrival at length ``k`` joins.
    y : ndarray, shape (n, n)
        ``y[k, l]``: Poisson removal rate of the agent at position ``l``.
    z : ndarray, shape (n, n)
        ``z[k, l]``: probability that a joining arrival at length ``k``
        triggers removal of the agent at position ``l``.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        n = x.size
        y = np.zeros((n, n)) if self.y is None else np.array(self.y, dtype=float)
        z = np.zeros((n, n)) if self.z is None else np.array(self.z, dtype=float)
        if y.shape != (n, n) or z.shape != (n, n):
            raise ValidationError("y and z must be square with side len(x)")
        if np.any((x < 0) | (x > 1)):
            raise ValidationError("entry probabilities x must lie in [0, 1]")
        if np.any(y < 0):
            raise ValidationError("removal rates y must be nonnegative")
        if np.any((z < 0) | (z > 1)) or np.any(z.sum(axis=1) > 1 + _PROB_TOL):
            raise ValidationError("z rows must be probabilities summing to at most 1")
        # Only positions 1..k exist at length k.
        mask = np.tril(np.ones((n, n), dtype=bool))
        mask[:, 0] = False
        if np.any(y[~mask] != 0) or np.any(z[~mask] != 0):
            raise ValidationError("y and z may be nonzero only at positions 1..k")
        for name, arr in (("x", x), ("y", y), ("z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.x.size

    @classmethod
    def entry_only(cls, x: Sequence[float]) -> EntryExitPolicy:
        n = len(x)
        return cls(np.asarray(x, dtype=float), np.zeros((n, n)), np.zeros((n, n)))


@dataclass(frozen=True)
class CutoffPolicy:
    """Admit below ``K - 1``, ration at ``K - 1`` with ``x_last``, none from ``K``."""

    K: int
    x_last: float = 1.0

    def __post_init__(self) -> None:
        if self.K < 0:
            raise ValidationError("cutoff K must be nonnegative")
        if not 0 < self.x_last <= 1:
            raise ValidationError("x_last must lie in (0, 1]")

    def entry_probs(self, k_max: int) -> np.ndarray:
        if self.K > k_max:
            raise ValidationError(f"cutoff K={self.K} exceeds truncation {k_max}")
        x = np.zeros(k_max + 1)
        x[: self.K] = 1.0
        if self.K >= 1:
            x[self.K - 1] = self.x_last
        return x

    def to_policy(self, k_max: int) -> EntryExitPolicy:
        return EntryExitPolicy.entry_only(self.entry_probs(k_max))


def effective_arrivals(process: PrimitiveProcess, cutoff: CutoffPolicy) -> np.ndarray:
    """``lam_k x_k`` for ``k = 0..K-1`` under a cutoff policy."""
    return process.lam[: cutoff.K] * cutoff.entry_probs(process.k_max)[: cutoff.K]


@dataclass(frozen=True)
class Discipline:
    """Service rates ``q[k, l]`` for positions ``l = 1..k`` and lengths ``k = 1..K``."""

    kind: DisciplineKind
    q: np.ndarray
    mu: np.ndarray
    feasible: bool
    work_conserving: bool

    @property
    def K(self) -> int:
        return self.q.shape[0] - 1

    def rates(self, k: int) -> np.ndarray:
        """Rates of positions ``1..k`` at length ``k``."""
        return self.q[k, 1 : k + 1]

    @classmethod
    def build(cls, kind: DisciplineKind | str, q: np.ndarray, mu: Sequence[float]) -> Discipline:
        """Wrap a rate table and record its feasibility and work conservation."""
        q = np.array(q, dtype=float)
        K = q.shape[0] - 1
        mu = np.array(mu[: K + 1], dtype=float)
        if q.shape != (K + 1, K + 1) or mu.size != K + 1:
            raise ValidationError("q must be (K+1)x(K+1) and mu must cover 0..K")
        mask = np.tril(np.ones_like(q, dtype=bool))
        mask[:, 0] = False
        if np.any(q[~mask] != 0):
            raise ValidationError("q may be nonzero only at positions 1..k")
        if np.any(q < 0):
            raise ValidationError("service rates must be nonnegative")
        scale = max(1.0, float(mu.max(initial=0.0)))
        feasible, conserving = True, True
        for k in range(1, K + 1):
            top = np.cumsum(np.sort(q[k, 1 : k + 1])[::-1])
            if np.any(top > mu[1 : k + 1] + 1e-12 * scale):
                feasible = False
            if abs(top[-1] - mu[k]) > 1e-12 * scale:
                conserving = False
        q.setflags(write=False)
        mu.setflags(write=False)
        return cls(DisciplineKind(kind), q, mu, feasible, conserving)


def discipline_rates(process: PrimitiveProcess, kind: DisciplineKind | str, K: int) -> Discipline:
    """Service-rate table of a named discipline for lengths ``1..K``.

    FCFS gives position ``l`` the increment ``mu_l - mu_{l-1}``, LCFS
    reverses the order, SIRO splits ``mu_k`` evenly.  LIEW is defined for
    ``K = 2`` only: the split of ``mu_2`` that equalizes the expected wait
    of an agent entering an empty queue and one entering behind another.
    """
    kind = DisciplineKind(kind)
    if not 1 <= K <= process.k_max:
        raise ValidationError(f"K={K} outside 1..{process.k_max}")
    mu = process.mu
    if kind in (DisciplineKind.FCFS, DisciplineKind.LCFS) and not regularity_check(process.truncate(K)).service_regular:
        raise FeasibilityError(f"{kind.value} is infeasible when service rates are not regular")
    q = np.zeros((K + 1, K + 1))
    if kind is DisciplineKind.FCFS:
        for k in range(1, K + 1):
            q[k, 1 : k + 1] = np.diff(mu[: k + 1])
    elif kind is DisciplineKind.LCFS:
        for k in range(1, K + 1):
            q[k, 1 : k + 1] = np.diff(mu[: k + 1])[::-1]
    elif kind is DisciplineKind.SIRO:
        for k in range(1, K + 1):
            q[k, 1 : k + 1] = mu[k] / k
    elif kind is DisciplineKind.LIEW:
        if K != 2:
            raise UnsupportedError("LIEW is defined only for K = 2")
        q21, q22 = liew_split(process)
        q[1, 1] = mu[1]
        q[2, 1], q[2, 2] = q21, q22
    else:
        raise UnsupportedError("use Discipline.build for custom rate tables")
    disc = Discipline.build(kind, q, mu)
    if not disc.feasible:
        raise FeasibilityError(f"{kind.value} rate table violates feasibility")
    return disc


def liew_split(process: PrimitiveProcess) -> tuple[float, float]:
    """``(q21, q22)`` equalizing entry waits at lengths 0 and 1 with cutoff 2."""
    from scipy.optimize import brentq

    from .beliefs import discipline_waiting_times

    mu1, mu2 = process.mu[1], process.mu[2]
    cutoff = CutoffPolicy(2, 1.0)

    def gap(q22: float) -> float:
        q = np.zeros((3, 3))
        q[1, 1] = mu1
        q[2, 1], q[2, 2] = mu2 - q22, q22
        table = discipline_waiting_times(process, cutoff, Discipline.build(DisciplineKind.CUSTOM, q, process.mu))
        return table.tau[1, 1] - table.tau[2, 2]

    lo, hi = mu2 - mu1, mu1
    f_lo, f_hi = gap(lo), gap(hi)
    if f_lo == 0:
        return mu2 - lo, lo
    if f_hi == 0:
        return mu2 - hi, hi
    if f_lo * f_hi > 0:
        raise NumericalError("no wait-equalizing split exists for these rates")
    q22 = brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return mu2 - q22, q22


def invariant_distribution(
    process: PrimitiveProcess, policy: EntryExitPolicy, K_max: int | None = None
) -> np.ndarray:
    """Stationary queue-length distribution under a policy.

    Solves the balance equation ``lam_k x_k (1 - sum_l z_{k,l}) p_k =
    (mu_{k+1} + sum_l y_{k+1,l}) p_{k+1}`` by forward recursion.  Births out
    of ``K_max`` are dropped (truncation).
    """
    K_max = process.k_max if K_max is None else K_max
    if not 0 <= K_max <= process.k_max or policy.size < K_max + 1:
        raise ValidationError("K_max must fit both the process and the policy")
    birth = process.lam[:K_max] * policy.x[:K_max] * (1.0 - policy.z[:K_max].sum(axis=1))
    death = process.mu[1 : K_max + 1] + policy.y[1 : K_max + 1].sum(axis=1)
    w = np.zeros(K_max + 1)
    w[0] = 1.0
    for k in range(K_max):
        if birth[k] == 0.0:
            break
        if death[k] <= 0.0:
            raise ValidationError(f"positive births into length {k + 1} with zero exit rate")
        w[k + 1] = w[k] * birth[k] / death[k]
    if not np.all(np.isfinite(w)):
        raise NumericalError("invariant distribution overflowed")
    return w / w.sum()


def _weights(process: PrimitiveProcess, K: int) -> np.ndarray:
    """``pi_k = prod_{l<=k} lam_{l-1} / mu_l`` for ``k = 0..K``."""
    pi = np.ones(K + 1)
    for k in range(1, K + 1):
        if process.lam[k - 1] == 0.0:
            pi[k:] = 0.0
            break
        if process.mu[k] <= 0.0:
            raise ValidationError(f"mu_{k} must be positive")
        pi[k] = pi[k - 1] * process.lam[k - 1] / process.mu[k]
    return pi


def cutoff_distribution(process: PrimitiveProcess, K: int, x: float = 1.0) -> np.ndarray:
    """The distribution ``p(K, x)`` over lengths ``0..K`` by the product formula."""
    if not 0 <= K <= process.k_max:
        raise ValidationError(f"cutoff K={K} exceeds truncation {process.k_max}")
    if not 0 < x <= 1:
        raise ValidationError("x must lie in (0, 1]")
    w = _weights(process, K)
    if K >= 1:
        w[K] *= x
    return w / w.sum()


def objective(p: Sequence[float], mu: Sequence[float], alpha: float, R: float, V: float, C: float) -> float:
    """Designer objective ``(1-a) R sum p_k mu_k + a sum p_k (mu_k V - k C)``."""
    p = np.asarray(p, dtype=float)
    mu = np.asarray(mu, dtype=float)[: p.size]
    k = np.arange(p.size)
    return float((1 - alpha) * R * (p @ mu) + alpha * (p @ (mu * V - k * C)))


def ir_value(p: Sequence[float], mu: Sequence[float], V: float, C: float) -> float:
    """Agents' aggregate surplus ``sum p_k (mu_k V - k C)``."""
    p = np.asarray(p, dtype=float)
    mu = np.asarray(mu, dtype=float)[: p.size]
    return float(p @ (mu * V - np.arange(p.size) * C))


def psi(process: PrimitiveProcess, V: float, C: float, K: int) -> float:
    """Unnormalized IR value of ``p(K, 1)``: ``sum_{k<=K} pi_k (mu_k V - C k)``."""
    if not 0 <= K <= process.k_max:
        raise ValidationError(f"K={K} exceeds truncation {process.k_max}")
    pi = _weights(process, K)
    k = np.arange(K + 1)
    return float(pi @ (process.mu[: K + 1] * V - C * k))


def k_bar_2(process: PrimitiveProcess, alpha: float, R: float, V: float, C: float) -> int:
    """Largest ``K`` with ``g(K) = (1-a) mu_K R + a (mu_K V - C K) >= 0``.

    Returns the truncation bound when ``alpha <= 0``.
    """
    if alpha <= 0:
        return process.k_max
    k = np.arange(process.k_max + 1)
    g = (1 - alpha) * process.mu * R + alpha * (process.mu * V - C * k)
    scale = max(1.0, R * process.mu.max(), V * process.mu.max(), C * process.k_max)
    ok = np.nonzero(g >= -1e-12 * scale)[0]
    return int(ok.max())


@dataclass(frozen=True)
class DesignOutcome:
    K_star: int
    x_star: float
    p_star: np.ndarray
    objective: float
    ir_value: float
    ir_binding: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "K_star": int(self.K_star),
            "x_star": float(self.x_star),
            "p_star": [float(v) for v in self.p_star],
            "objective": float(self.objective),
            "ir_value": float(self.ir_value),
            "ir_binding": bool(self.ir_binding),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> DesignOutcome:
        return cls(
            int(obj["K_star"]),
            float(obj["x_star"]),
            np.asarray(obj["p_star"], dtype=float),
            float(obj["objective"]),
            float(obj["ir_value"]),
            bool(obj["ir_binding"]),
        )


def ir_tolerance(process: PrimitiveProcess, V: float) -> float:
    return 1e-9 * max(1.0, V * float(process.mu.max()))


def _check_params(alpha: float, R: float, V: float, C: float) -> None:
    if not 0 <= alpha <= 1:
        raise ValidationError("alpha must lie in [0, 1]")
    for name, val in (("R", R), ("V", V), ("C", C)):
        if not (math.isfinite(val) and val > 0):
            raise ValidationError(f"{name} must be positive and finite")


def solve_optimal_design(process: PrimitiveProcess, alpha: float, R: float, V: float, C: float) -> DesignOutcome:
    """Optimal cutoff design ``(K*, x*)`` for a regular service process.

    For each ``K`` up to ``min(K_bar_2, k_max)`` the objective and the IR
    value of ``p(K, x)`` are ratios of affine functions of ``x``, so the best
    feasible ``x`` is ``1`` or the point ``x_bar`` where IR binds.  The limit
    ``x -> 0`` reproduces ``p(K-1, 1)``, already covered by ``K - 1``.

    Ties within ``1e-12`` (relative) go to the smaller ``K``, then the larger
    ``x``.

    Raises
    ------
    RegularityError
        If ``mu`` is not regular; use :func:`lp_oracle` instead.
    """
    _check_params(alpha, R, V, C)
    if not regularity_check(process).service_regular:
        raise RegularityError("service rates are not regular; the cutoff solver does not apply, use lp_oracle")
    K_cap = min(k_bar_2(process, alpha, R, V, C), process.k_max)
    pi = _weights(process, K_cap)
    k = np.arange(K_cap + 1)
    h = process.mu[: K_cap + 1] * V - C * k
    gain = (1 - alpha) * R * process.mu[: K_cap + 1] + alpha * h
    scale = max(1.0, V * float(process.mu.max()), C * K_cap, R * float(process.mu.max()))

    best = (0.0, 0, 1.0)  # (objective, K, x); K = 0 is the empty queue.
    for K in range(1, K_cap + 1):
        b = pi[K]
        if b == 0.0:
            continue  # the K-th state is unreachable; same design as K - 1
        num0 = float(pi[1:K] @ gain[1:K])
        den0 = float(pi[:K].sum())
        ir0 = float(pi[1:K] @ h[1:K])
        candidates = [1.0]
        if h[K] != 0.0:
            x_bar = -ir0 / (b * h[K])
            if 0.0 < x_bar < 1.0:
                candidates.append(x_bar)
        for x in candidates:
            ir_num = ir0 + x * b * h[K]
            if x == 1.0 and ir_num < -1e-12 * scale * den0:
                continue
            val = (num0 + x * b * gain[K]) / (den0 + x * b)
            if val > best[0] + 1e-12 * max(1.0, abs(best[0])):
                best = (val, K, x)
    _, K_star, x_star = best
    p = cutoff_distribution(process, K_star, x_star)
    ir = ir_value(p, process.mu, V, C)
    return DesignOutcome(
        K_star=K_star,
        x_star=float(x_star),
        p_star=p,
        objective=objective(p, process.mu, alpha, R, V, C),
        ir_value=ir,
        ir_binding=abs(ir) <= ir_tolerance(process, V),
    )


def lp_oracle(
    process: PrimitiveProcess, alpha: float, R: float, V: float, C: float, K_trunc: int | None = None
) -> np.ndarray:
    """Optimal vertex of the truncated relaxed program by dense simplex.

    Maximizes ``sum p_k [mu_k ((1-a) R + a V) - a C k]`` over distributions
    on ``0..K_trunc`` subject to IR and ``lam_k p_k >= mu_{k+1} p_{k+1}``.
    """
    _check_params(alpha, R, V, C)
    K = process.k_max if K_trunc is None else K_trunc
    if not 0 <= K <= process.k_max:
        raise ValidationError(f"K_trunc={K} outside 0..{process.k_max}")
    if K == 0:
        return np.array([1.0])
    mu = process.mu[: K + 1]
    lam = process.lam[: K + 1]
    k = np.arange(K + 1)
    c = mu * ((1 - alpha) * R + alpha * V) - alpha * C * k
    a_ub = np.zeros((K + 1, K + 1))
    a_ub[0] = -(mu * V - C * k)
    for j in range(K):
        a_ub[j + 1, j] = -lam[j]
        a_ub[j + 1, j + 1] = mu[j + 1]
    res = simplex_max(c, a_ub, np.zeros(K + 1), np.ones((1, K + 1)), np.ones(1))
    if res.status != "optimal":
        raise NumericalError(f"LP oracle ended with status {res.status}")
    p = np.where(np.abs(res.x) < 1e-14, 0.0, res.x)
    if np.any(p < -1e-9):
        raise NumericalError("LP oracle returned a negative mass")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def detect_cutoff(process: PrimitiveProcess, p: Sequence[float], tol: float = 1e-9) -> tuple[int, float] | None:
    """Return ``(K, x)`` when ``p`` equals some ``p(K, x)``, else ``None``.

    Checks that mass vanishes beyond ``K`` and that the balance inequality
    ``lam_k p_k >= mu_{k+1} p_{k+1}`` binds for ``k <= K - 2``.
    """
    p = np.asarray(p, dtype=float)
    support = np.nonzero(p > tol)[0]
    K = int(support.max()) if support.size else 0
    if K == 0:
        return (0, 1.0)
    lam, mu = process.lam, process.mu
    for j in range(K - 1):
        flow_in, flow_out = lam[j] * p[j], mu[j + 1] * p[j + 1]
        if abs(flow_in - flow_out) > tol * max(1.0, flow_in):
            return None
    denom = lam[K - 1] * p[K - 1]
    if denom <= 0:
        return None
    x = mu[K] * p[K] / denom
    if not 0 < x <= 1 + tol:
        return None
    return (K, min(x, 1.0))
