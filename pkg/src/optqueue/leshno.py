"""Buffer queues of an overloaded two-item waitlist.

Each period one item arrives: type A with probability ``mu_A``, else type
B.  Agents prefer A with probability ``mu_alpha``.  An A-buffer of size
``K`` holds agents waiting for A items under FCFS; the waitlist refills it
so it is always full.  An entrant who is told nothing must be willing to
stay in every period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ValidationError

DEFAULT_T_MAX = 500
#: Largest buffer size scanned before reporting the maximal size as unbounded.
SCAN_CAP = 100_000


@dataclass(frozen=True)
class BufferQueueModel:
    mu_A: float
    mu_alpha: float
    V: float
    C: float

    def __post_init__(self) -> None:
        if not (0 < self.mu_A < 1 and 0 < self.mu_alpha < 1):
            raise ValidationError("mu_A and mu_alpha must lie in (0, 1)")
        if not (self.V > 0 and self.C > 0):
            raise ValidationError("V and C must be positive")

    @property
    def mu_B(self) -> float:
        return 1.0 - self.mu_A

    @property
    def mu_beta(self) -> float:
        return 1.0 - self.mu_alpha

    def side(self, which: str) -> tuple[float, float]:
        """``(item probability, preference probability)`` of side ``"A"`` or ``"B"``."""
        if which == "A":
            return self.mu_A, self.mu_alpha
        if which == "B":
            return self.mu_B, self.mu_beta
        raise ValidationError("side must be 'A' or 'B'")

    def to_json(self) -> dict[str, Any]:
        return {"mu_A": self.mu_A, "mu_alpha": self.mu_alpha, "V": self.V, "C": self.C}


def entry_likelihood_ratio(model: BufferQueueModel, which: str = "A") -> float:
    """Constant odds ``r_l = gamma_l / gamma_{l-1}`` of an entrant: ``mu_alpha / mu_A``."""
    item, pref = model.side(which)
    return pref / item


def expected_entry_position(rho: float, K: int) -> float:
    """Mean position under entry weights ``rho^(l-1)``, ``l = 1..K``."""
    if K == 0:
        return 0.0
    if rho == 1.0:
        return (K + 1) / 2
    if abs(rho - 1.0) < 1e-6:
        # The closed form cancels catastrophically here; sum directly.
        logw = np.arange(K) * math.log(rho)
        w = np.exp(logw - logw.max())
        return float(w @ np.arange(1, K + 1) / w.sum())
    # Closed form: K + 1/(1-rho) + K/(rho^K - 1).
    with np.errstate(over="ignore"):
        return K + 1.0 / (1.0 - rho) + K / (rho**K - 1.0)


def _t0_ok(model: BufferQueueModel, which: str, K: int) -> bool:
    item, pref = model.side(which)
    if K == 0:
        return True
    if pref == item:
        return model.V - model.C * (K + 1) / (2 * item) >= 0
    return expected_entry_position(pref / item, K) <= model.V / model.C * item


def _max_side(model: BufferQueueModel, which: str) -> int | None:
    item, pref = model.side(which)
    if pref == item:
        return max(0, math.floor(2 * item * model.V / model.C) - 1)
    rho = pref / item
    if rho < 1 and 1.0 / (1.0 - rho) <= model.V / model.C * item:
        # The mean entry position increases to 1/(1-rho), so no size binds.
        return None
    K = 0
    while K < SCAN_CAP:
        if not _t0_ok(model, which, K + 1):
            return K
        K += 1
    return None


def max_buffer_size(model: BufferQueueModel) -> tuple[int | None, int | None]:
    """Largest buffer sizes ``(K_A*, K_B*)`` at which an entrant joins.

    ``None`` marks a side whose condition never fails below ``SCAN_CAP``.
    """
    return _max_side(model, "A"), _max_side(model, "B")


@dataclass(frozen=True)
class DiscreteBeliefs:
    gamma: np.ndarray  # (t_max + 1, K)
    r: np.ndarray  # (t_max + 1, K); column 0 is NaN


def discrete_belief_dynamics(
    model: BufferQueueModel, K: int, t_max: int = DEFAULT_T_MAX, which: str = "A"
) -> DiscreteBeliefs:
    """Iterate the per-period Bayes update of an agent still in the buffer.

    ``gamma_l' = (gamma_l mu_B + gamma_{l+1} mu_A) / (gamma_1 mu_B + sum_{i>=2} gamma_i)``
    from the constant-ratio entry belief.
    """
    if K < 1 or t_max < 0:
        raise ValidationError("need K >= 1 and t_max >= 0")
    item, pref = model.side(which)
    other = 1.0 - item
    rho = pref / item
    g = rho ** np.arange(K, dtype=float)
    g /= g.sum()
    gamma = np.empty((t_max + 1, K))
    gamma[0] = g
    for t in range(t_max):
        nxt = np.zeros(K)
        nxt[:-1] = g[1:]
        g = (g * other + nxt * item) / (g[0] * other + g[1:].sum())
        gamma[t + 1] = g
    r = np.full_like(gamma, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        r[:, 1:] = np.where(gamma[:, :-1] > 0, gamma[:, 1:] / gamma[:, :-1], np.nan)
    r[0, 1:] = rho  # entry odds are constant by construction
    return DiscreteBeliefs(gamma, r)


def ratio_recursion(model: BufferQueueModel, K: int, t_max: int = DEFAULT_T_MAX, which: str = "A") -> np.ndarray:
    """Likelihood ratios from ``r_l' = (mu_B + r_{l+1} mu_A) / (mu_B / r_l + mu_A)``.

    ``r_{K+1} = 0``.  Used to cross-check :func:`discrete_belief_dynamics`.
    """
    item, pref = model.side(which)
    other = 1.0 - item
    r = np.full(K + 1, pref / item)  # r[l] for l = 2..K; r[0], r[1] unused
    out = np.full((t_max + 1, K), np.nan)
    out[0, 1:] = r[2:]
    for t in range(t_max):
        nxt = np.zeros(K + 2)
        nxt[1 : K + 1] = r[1 : K + 1]
        new = r.copy()
        for l in range(2, K + 1):
            new[l] = (other + nxt[l + 1] * item) / (other / r[l] + item)
        r = new
        out[t + 1, 1:] = r[2:]
    return out


@dataclass(frozen=True)
class ObedienceVerdict:
    K: int
    values: np.ndarray  # V - C sum_l gamma_l l / mu_A per period
    satisfied: bool
    first_violation: int | None

    def to_json(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "satisfied": self.satisfied,
            "first_violation": self.first_violation,
            "min_value": float(self.values.min()) if self.values.size else None,
        }


def obedience_check(
    model: BufferQueueModel, K: int, t_max: int = DEFAULT_T_MAX, which: str = "A", tol: float = 1e-12
) -> ObedienceVerdict:
    """Evaluate ``V - C sum_l gamma_l^t l / mu_A >= 0`` for ``t = 0..t_max``.

    The ``t = 0`` value uses the closed-form mean entry position; later
    periods use the belief recursion.  Slack ``tol`` is relative to ``V``.
    """
    if K == 0:
        return ObedienceVerdict(0, np.full(t_max + 1, model.V), True, None)
    item, pref = model.side(which)
    beliefs = discrete_belief_dynamics(model, K, t_max, which)
    pos = np.arange(1, K + 1)
    values = model.V - model.C * (beliefs.gamma @ pos) / item
    values[0] = model.V - model.C * expected_entry_position(pref / item, K) / item
    bad = np.nonzero(values < -tol * model.V)[0]
    return ObedienceVerdict(K, values, bad.size == 0, int(bad[0]) if bad.size else None)
