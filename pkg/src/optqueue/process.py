"""Primitive birth-death processes, canonical families and regularity tests.

A primitive process is a pair of rate tables indexed by queue length
``k = 0..k_max``: the arrival rate ``lam[k]`` and the cumulative service
rate ``mu[k]`` (``mu[0] = 0``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Any, Sequence

import numpy as np

from .errors import ValidationError

#: Relative tolerance for regularity comparisons on floating-point inputs.
REL_TOL = 1e-12


def _readonly(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PrimitiveProcess:
    """Arrival and cumulative service rates per queue length.

    Parameters
    ----------
    lam : array_like
        Arrival rates ``lam[0..k_max]``.
    mu : array_like
        Cumulative service rates ``mu[0..k_max]`` with ``mu[0] == 0``.
    family : dict, optional
        Constructor parameters when the process comes from a canonical
        family; used only for serialization.
    """

    lam: np.ndarray
    mu: np.ndarray
    family: dict[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        lam = _readonly(self.lam, "lambda")
        mu = _readonly(self.mu, "mu")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        if lam.shape != mu.shape or lam.size < 1:
            raise ValidationError("lambda and mu must have equal nonzero length")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
            raise ValidationError("rates must be finite")
        if np.any(lam < 0) or np.any(mu < 0):
            raise ValidationError("rates must be nonnegative")
        if mu[0] != 0:
            raise ValidationError("mu[0] must equal 0")
        if lam[0] <= 0:
            raise ValidationError("lambda[0] must be positive")
        if np.any(np.diff(mu) < 0):
            k = int(np.argmax(np.diff(mu) < 0)) + 1
            raise ValidationError(f"mu must be nondecreasing (fails at k={k})")

    @property
    def k_max(self) -> int:
        return self.lam.size - 1

    def truncate(self, k_max: int) -> PrimitiveProcess:
        """Return the process restricted to lengths ``0..k_max``."""
        if not 0 <= k_max <= self.k_max:
            raise ValidationError(f"k_max={k_max} outside 0..{self.k_max}")
        return PrimitiveProcess(self.lam[: k_max + 1], self.mu[: k_max + 1])

    def to_json(self) -> dict[str, Any]:
        if self.family is not None:
            return dict(self.family)
        return {"lambda": self.lam.tolist(), "mu": self.mu.tolist()}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> PrimitiveProcess:
        return process_from_json(obj)


@dataclass(frozen=True)
class RegularityReport:
    service_regular: bool
    process_regular: bool
    first_service_violation: int | None
    first_process_violation: int | None


def _is_exact(values: Sequence[Any]) -> bool:
    return all(isinstance(v, Rational) for v in values)


def _le(a: Any, b: Any, scale: Any, exact: bool) -> bool:
    """``a <= b`` exactly for rationals, else up to ``REL_TOL * scale``."""
    if exact:
        return a <= b
    return a <= b + REL_TOL * scale


def _scale(*seqs: Sequence[Any]) -> float:
    return max([1.0] + [abs(float(v)) for s in seqs for v in s])


def _first_service_violation(mu: Sequence[Any]) -> int | None:
    exact = _is_exact(mu)
    scale = _scale(mu)
    for k in range(2, len(mu)):
        if not _le(mu[k] - mu[k - 1], mu[k - 1] - mu[k - 2], scale, exact):
            return k
    return None


def regularity_check(process: PrimitiveProcess | tuple[Sequence[Any], Sequence[Any]]) -> RegularityReport:
    """Test service regularity and process regularity.

    ``mu`` is service regular when its increments are nonincreasing; the
    process is regular when additionally ``lam[k] - lam[k-1] <= mu[k] -
    mu[k-1]`` for ``k >= 2``.  Violation indices are the smallest failing
    ``k``.  A ``(lam, mu)`` tuple of ints or Fractions is compared exactly.
    """
    if isinstance(process, PrimitiveProcess):
        lam, mu = list(process.lam), list(process.mu)
    else:
        lam, mu = list(process[0]), list(process[1])
    exact = _is_exact(lam) and _is_exact(mu)
    # Service regularity uses the mu-only scale so it matches greedy_fcfs_rates.
    svc = _first_service_violation(mu)
    scale = _scale(lam, mu)
    prc = None
    for k in range(2, len(mu)):
        if not _le(lam[k] - lam[k - 1], mu[k] - mu[k - 1], scale, exact):
            prc = k
            break
    if svc is not None:
        prc = svc if prc is None else min(prc, svc)
    return RegularityReport(
        service_regular=svc is None,
        process_regular=prc is None,
        first_service_violation=svc,
        first_process_violation=prc,
    )


def _check_rate(value: float, name: str) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be a positive finite rate, got {value}")


def make_mmc(lam: float, mu: float, c: int, k_max: int) -> PrimitiveProcess:
    """M/M/c: constant arrivals, ``mu_k = min(k, c) * mu``."""
    _check_rate(lam, "lambda")
    _check_rate(mu, "mu")
    if c < 1:
        raise ValidationError("c must be at least 1")
    if k_max < 0:
        raise ValidationError("k_max must be nonnegative")
    ks = np.arange(k_max + 1)
    return PrimitiveProcess(
        np.full(k_max + 1, float(lam)),
        np.minimum(ks, c) * float(mu),
        family={"family": "mmc", "lambda": lam, "mu": mu, "c": c, "k_max": k_max},
    )


def make_team(m: int, lam: float, mu: float, c: int) -> PrimitiveProcess:
    """Team servicing of a population of ``m``: ``lam_k = (m - k) * lam``."""
    if m < 1:
        raise ValidationError("population m must be at least 1")
    _check_rate(lam, "lambda")
    _check_rate(mu, "mu")
    if c < 1:
        raise ValidationError("c must be at least 1")
    ks = np.arange(m + 1)
    return PrimitiveProcess(
        (m - ks) * float(lam),
        np.minimum(ks, c) * float(mu),
        family={"family": "team", "m": m, "lambda": lam, "mu": mu, "c": c},
    )


def make_one_sided_matching(eta: float, theta: float, k_max: int) -> PrimitiveProcess:
    """Agents arrive at rate ``eta`` and each match with probability ``theta``.

    ``lam_k = eta (1-theta)^k`` and ``mu_k = eta (1 - (1-theta)^k)``.
    """
    _check_rate(eta, "eta")
    if not 0 < theta <= 1:
        raise ValidationError("theta must lie in (0, 1]")
    if k_max < 0:
        raise ValidationError("k_max must be nonnegative")
    decay = (1.0 - theta) ** np.arange(k_max + 1)
    return PrimitiveProcess(
        eta * decay,
        eta * (1.0 - decay),
        family={"family": "one_sided_matching", "eta": eta, "theta": theta, "k_max": k_max},
    )


def greedy_fcfs_rates(mu: Sequence[Any], k: int | None = None) -> tuple[list[Any], list[Any]]:
    """Service rates FCFS achieves when each position gets as much as it can.

    Implements ``mu*_j = mu*_{j-1} + min(mu_j - mu*_{j-1}, mu*_{j-1} - mu*_{j-2})``
    with ``mu*_0 = 0`` and ``mu*_1 = mu_1``.

    Parameters
    ----------
    mu : sequence
        Cumulative rates ``mu[0..]`` with ``mu[0] = 0``.  Ints and Fractions
        are handled exactly.
    k : int, optional
        Number of positions; defaults to ``len(mu) - 1``.

    Returns
    -------
    q_star : list
        Per-position rates ``q*_1..q*_k``.
    mu_star : list
        Achieved cumulative rates ``mu*_1..mu*_k``.

    Notes
    -----
    For floating-point input, when ``mu_j - mu*_{j-1}`` is within the
    regularity tolerance of the previous increment the recursion takes
    ``mu*_j = mu_j``.  The work-conservation test and the regularity test
    then apply the same comparison, so they agree on every input.
    """
    mu = list(mu)
    if k is None:
        k = len(mu) - 1
    if k > len(mu) - 1:
        raise ValidationError("k exceeds the length of mu")
    exact = _is_exact(mu)
    scale = _scale(mu)
    mu_star: list[Any] = []
    prev2, prev = mu[0] * 0, mu[0] * 0
    for j in range(1, k + 1):
        if j == 1:
            cur = mu[1]
        else:
            want = mu[j] - prev
            cap = prev - prev2
            cur = mu[j] if _le(want, cap, scale, exact) else prev + cap
        mu_star.append(cur)
        prev2, prev = prev, cur
    q_star = [mu_star[0]] + [mu_star[j] - mu_star[j - 1] for j in range(1, k)] if k else []
    return q_star, mu_star


def fcfs_work_conserving(mu: Sequence[Any], k_max: int | None = None) -> bool:
    """Whether FCFS allocates the full rate ``mu_k`` in every length ``k``."""
    mu = list(mu)
    if k_max is None:
        k_max = len(mu) - 1
    _, mu_star = greedy_fcfs_rates(mu, k_max)
    return all(ms == m for ms, m in zip(mu_star, mu[1 : k_max + 1]))


_FAMILIES = {
    "mmc": (make_mmc, ("lambda", "mu", "c", "k_max")),
    "team": (make_team, ("m", "lambda", "mu", "c")),
    "one_sided_matching": (make_one_sided_matching, ("eta", "theta", "k_max")),
}


def process_from_json(obj: dict[str, Any]) -> PrimitiveProcess:
    """Build a process from ``{"lambda": [...], "mu": [...]}`` or a family spec."""
    if not isinstance(obj, dict):
        raise ValidationError("process spec must be a JSON object")
    family = obj.get("family")
    if family is None:
        try:
            return PrimitiveProcess(obj["lambda"], obj["mu"])
        except KeyError as exc:
            raise ValidationError(f"process spec missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed rate table: {exc}") from None
    if family not in _FAMILIES:
        raise ValidationError(f"unknown process family {family!r}")
    ctor, keys = _FAMILIES[family]
    missing = [key for key in keys if key not in obj]
    if missing:
        raise ValidationError(f"family {family!r} missing keys {missing}")
    return ctor(*(obj[key] for key in keys))


def exact_sequence(values: Sequence[Any]) -> list[Fraction]:
    """Convert numbers to Fractions so regularity tests run in exact arithmetic."""
    return [Fraction(v) for v in values]
