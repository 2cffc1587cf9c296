"""Discrete-event simulation of a queue under a policy and a service discipline.

Each state change re-samples an exponential race among: a joining arrival
(rate ``lam_k x_k``), service of each position (``q[k, l]``) and removal of
each position (``y[k, l]``).  Replications draw from independent PCG64
streams spawned from one seed, so results are bit-reproducible.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import stats

from .design import Discipline, DisciplineKind, EntryExitPolicy
from .errors import ValidationError
from .process import PrimitiveProcess

_BLOCK = 1 << 16
MIN_BIN_SAMPLES = 200


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    warmup: float = 0.0
    seed: int = 0
    replications: int = 1
    batches: int = 32
    check_positions: bool = False

    def __post_init__(self) -> None:
        if not (self.horizon > self.warmup >= 0):
            raise ValidationError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if self.batches < 2:
            raise ValidationError("batches must be at least 2")


@dataclass
class _Run:
    """Raw accumulators of one replication over the statistics window."""

    occupancy: np.ndarray  # time spent at each length, per time batch
    services: np.ndarray  # service completions by pre-event length
    entries: int
    entry_time: list[float] = field(default_factory=list)
    sojourn: list[float] = field(default_factory=list)
    served: list[bool] = field(default_factory=list)
    entry_pos: list[int] = field(default_factory=list)


class _Stream:
    """Buffered standard exponentials and uniforms from one generator."""

    def __init__(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self._exp: list[float] = []
        self._uni: list[float] = []
        self._ie = self._iu = 0

    def exp(self) -> float:
        if self._ie == len(self._exp):
            self._exp = self.rng.standard_exponential(_BLOCK).tolist()
            self._ie = 0
        self._ie += 1
        return self._exp[self._ie - 1]

    def uni(self) -> float:
        if self._iu == len(self._uni):
            self._uni = self.rng.random(_BLOCK).tolist()
            self._iu = 0
        self._iu += 1
        return self._uni[self._iu - 1]


def _tables(process: PrimitiveProcess, policy: EntryExitPolicy, disc: Discipline):
    K = disc.K
    if policy.size < K + 1 or process.k_max < K:
        raise ValidationError("policy and process must cover lengths 0..K")
    siro = disc.kind is DisciplineKind.SIRO
    arrive, cum, zcum, total = [], [], [], []
    for k in range(K + 1):
        a = float(process.lam[k] * policy.x[k])
        zs = [float(v) for v in policy.z[k, 1 : k + 1]]
        if a > 0 and k == K and sum(zs) < 1 - 1e-12:
            raise ValidationError(f"arrivals at length {K} would exceed the discipline table")
        q = [float(v) for v in disc.q[k, 1 : k + 1]] if k else []
        y = [float(v) for v in policy.y[k, 1 : k + 1]] if k else []
        # Event layout: [arrival, service of 1..k, removal of 1..k].
        edges = [a]
        if siro:
            edges.append(a + sum(q))
        else:
            for v in q:
                edges.append(edges[-1] + v)
        for v in y:
            edges.append(edges[-1] + v)
        arrive.append(a)
        cum.append(edges)
        zc, acc = [], 0.0
        for v in zs:
            acc += v
            zc.append(acc)
        zcum.append(zc)
        total.append(edges[-1])
    return K, siro, arrive, cum, zcum, total


def _replicate(
    tables, horizon: float, warmup: float, n_batches: int, stream: _Stream, check_positions: bool
) -> _Run:
    K, siro, arrive, cum, zcum, total = tables
    width = (horizon - warmup) / n_batches
    occ = np.zeros((n_batches, K + 1))
    services = np.zeros(K + 1)
    run = _Run(occ, services, 0)
    queue: list[list[float]] = []  # [entry_time, entry_pos, last_pos]
    t, k = 0.0, 0
    rec_t, rec_s, rec_served, rec_pos = run.entry_time, run.sojourn, run.served, run.entry_pos
    occ_rows = [[0.0] * (K + 1) for _ in range(n_batches)]
    svc = [0] * (K + 1)
    entries = 0

    def leave(idx: int, now: float, was_served: bool) -> None:
        agent = queue.pop(idx)
        if agent[0] >= warmup:
            rec_t.append(agent[0])
            rec_s.append(now - agent[0])
            rec_served.append(was_served)
            rec_pos.append(int(agent[1]))

    while True:
        tot = total[k]
        t_next = horizon if tot <= 0.0 else t + stream.exp() / tot
        # Accumulate time in state k over [t, t_next] within the window.
        lo, hi = max(t, warmup), min(t_next, horizon)
        while lo < hi:
            b = min(int((lo - warmup) / width), n_batches - 1)
            edge = min(hi, warmup + (b + 1) * width) if b < n_batches - 1 else hi
            occ_rows[b][k] += edge - lo
            lo = edge
        if t_next >= horizon:
            break
        t = t_next
        u = stream.uni() * tot
        edges = cum[k]
        if u < edges[0]:
            zc = zcum[k]
            j = bisect_right(zc, stream.uni()) if zc else 0
            if j < k:
                leave(j, t, False)
                queue.append([t, k, k])
            else:
                queue.append([t, k + 1, k + 1])
                k += 1
            if t >= warmup:
                entries += 1
        else:
            if siro and u < edges[1]:
                j = int(stream.uni() * k)
                svc_event = True
            else:
                e = bisect_right(edges, u)
                if e > len(edges) - 1:
                    e = len(edges) - 1
                if siro:
                    j, svc_event = e - 2, False
                elif e <= k:
                    j, svc_event = e - 1, True
                else:
                    j, svc_event = e - 1 - k, False
            if svc_event and t >= warmup:
                svc[k] += 1
            leave(j, t, svc_event)
            k -= 1
        if check_positions:
            for pos, agent in enumerate(queue, start=1):
                if pos > agent[2]:
                    raise AssertionError("an agent's queue position increased")
                agent[2] = pos
    run.occupancy = np.array(occ_rows)
    run.services = np.array(svc, dtype=float)
    run.entries = entries
    return run


def _ci(batch_means: np.ndarray) -> float:
    vals = batch_means[np.isfinite(batch_means)]
    if vals.size < 2:
        return float("nan")
    return float(stats.t.ppf(0.975, vals.size - 1) * vals.std(ddof=1) / math.sqrt(vals.size))


def _batched(order_keys: np.ndarray, values: np.ndarray, mask: np.ndarray, n_batches: int) -> np.ndarray:
    """Batch means of ``values[mask]`` over equal-count batches in key order."""
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return np.full(n_batches, np.nan)
    idx = idx[np.argsort(order_keys[idx], kind="stable")]
    chunks = np.array_split(idx, n_batches)
    return np.array([values[c].mean() if c.size else np.nan for c in chunks])


@dataclass(frozen=True)
class ResidualWaitCurve:
    t_grid: np.ndarray
    estimate: np.ndarray
    ci_halfwidth: np.ndarray
    samples: np.ndarray
    flagged: np.ndarray

    def to_csv(self) -> str:
        lines = ["t,W,ci_halfwidth,samples,flagged"]
        for row in zip(self.t_grid, self.estimate, self.ci_halfwidth, self.samples, self.flagged):
            lines.append(f"{row[0]:.17g},{row[1]:.17g},{row[2]:.17g},{int(row[3])},{int(row[4])}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SimStats:
    """Pooled statistics over the window ``[warmup, horizon]`` of every replication."""

    time_avg_p: np.ndarray
    mean_wait_by_entry_position: np.ndarray
    arrival_rate_effective: float
    mean_queue_len: float
    mean_wait: float
    service_rate_by_state: np.ndarray
    n_entered: int
    window: float
    ci_halfwidths: dict[str, Any]
    residual_wait_by_elapsed: ResidualWaitCurve | None = None
    # Per-agent records pooled across replications, in entry order per replication.
    records: dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def to_json(self) -> dict[str, Any]:
        def arr(a: np.ndarray) -> list[Any]:
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

        out = {
            "time_avg_p": arr(self.time_avg_p),
            "mean_wait_by_entry_position": arr(self.mean_wait_by_entry_position),
            "arrival_rate_effective": self.arrival_rate_effective,
            "mean_queue_len": self.mean_queue_len,
            "mean_wait": self.mean_wait,
            "service_rate_by_state": arr(self.service_rate_by_state),
            "n_entered": self.n_entered,
            "window": self.window,
            "ci_halfwidths": {k: arr(v) if isinstance(v, np.ndarray) else v for k, v in self.ci_halfwidths.items()},
        }
        if self.residual_wait_by_elapsed is not None:
            c = self.residual_wait_by_elapsed
            out["residual_wait_by_elapsed"] = {
                "t": arr(c.t_grid),
                "W": arr(c.estimate),
                "ci_halfwidth": arr(c.ci_halfwidth),
                "samples": [int(v) for v in c.samples],
                "flagged": [bool(v) for v in c.flagged],
            }
        return out


def simulate(
    process: PrimitiveProcess,
    policy: EntryExitPolicy,
    discipline: Discipline,
    config: SimConfig,
    t_grid: Sequence[float] | None = None,
) -> SimStats:
    """Simulate from an empty queue and pool statistics across replications.

    Confidence half-widths (95%) use batch means: time batches for the
    queue-length distribution and entry-ordered agent batches for waits.
    When ``t_grid`` is given the residual-wait curve is estimated as well.
    """
    if not discipline.work_conserving:
        raise ValidationError("the discipline must be work-conserving")
    tables = _tables(process, policy, discipline)
    K = tables[0]
    children = np.random.SeedSequence(config.seed).spawn(config.replications)
    runs = [
        _replicate(
            tables,
            config.horizon,
            config.warmup,
            config.batches,
            _Stream(np.random.Generator(np.random.PCG64(child))),
            config.check_positions,
        )
        for child in children
    ]
    window = (config.horizon - config.warmup) * config.replications
    occ = np.vstack([r.occupancy for r in runs])  # (reps * batches, K+1)
    p = occ.sum(axis=0) / occ.sum()
    p_batches = occ / occ.sum(axis=1, keepdims=True)
    lengths = np.arange(K + 1)
    L = float(p @ lengths)
    entries = sum(r.entries for r in runs)
    lam_eff = entries / window

    entry_t = np.concatenate([np.asarray(r.entry_time, dtype=float) + i * config.horizon for i, r in enumerate(runs)])
    soj = np.concatenate([np.asarray(r.sojourn, dtype=float) for r in runs])
    served = np.concatenate([np.asarray(r.served, dtype=bool) for r in runs])
    pos = np.concatenate([np.asarray(r.entry_pos, dtype=int) for r in runs])
    n_b = config.batches * config.replications

    mean_wait = float(soj.mean()) if soj.size else float("nan")
    waits = np.full(K, np.nan)
    wait_ci = np.full(K, np.nan)
    for l in range(1, K + 1):
        m = served & (pos == l)
        if m.any():
            waits[l - 1] = soj[m].mean()
            wait_ci[l - 1] = _ci(_batched(entry_t, soj, m, n_b))
    ci = {
        "time_avg_p": np.array([_ci(p_batches[:, k]) for k in range(K + 1)]),
        "mean_wait_by_entry_position": wait_ci,
        "mean_wait": _ci(_batched(entry_t, soj, np.ones(soj.size, bool), n_b)) if soj.size else float("nan"),
        "mean_queue_len": _ci(p_batches @ lengths),
    }
    records = {"entry_time": entry_t, "sojourn": soj, "served": served, "entry_pos": pos}
    curve = None
    if t_grid is not None:
        curve = residual_wait_from_records(records, np.asarray(t_grid, dtype=float), n_b)
    return SimStats(
        time_avg_p=p,
        mean_wait_by_entry_position=waits,
        arrival_rate_effective=lam_eff,
        mean_queue_len=L,
        mean_wait=mean_wait,
        service_rate_by_state=sum(r.services for r in runs) / window,
        n_entered=int(soj.size),
        window=window,
        ci_halfwidths=ci,
        residual_wait_by_elapsed=curve,
        records=records,
    )


def residual_wait_from_records(
    records: dict[str, np.ndarray], t_grid: np.ndarray, n_batches: int, min_samples: int = MIN_BIN_SAMPLES
) -> ResidualWaitCurve:
    """Estimate ``E[sojourn - t | sojourn > t]`` at each grid time.

    A grid time with fewer than ``min_samples`` surviving agents pools the
    samples of neighbouring grid times until the minimum is met and is
    flagged.
    """
    soj = records["sojourn"]
    keys = records["entry_time"]
    n = t_grid.size
    counts = np.array([(soj > t).sum() for t in t_grid])
    est = np.full(n, np.nan)
    ci = np.full(n, np.nan)
    flagged = counts < min_samples
    for i, t in enumerate(t_grid):
        lo = hi = i
        while counts[lo : hi + 1].sum() < min_samples and (lo > 0 or hi < n - 1):
            lo, hi = max(lo - 1, 0), min(hi + 1, n - 1)
        vals, ks = [], []
        for j in range(lo, hi + 1):
            m = soj > t_grid[j]
            vals.append(soj[m] - t_grid[j])
            ks.append(keys[m])
        v = np.concatenate(vals)
        kk = np.concatenate(ks)
        if v.size == 0:
            continue
        est[i] = v.mean()
        ci[i] = _ci(_batched(kk, v, np.ones(v.size, bool), n_batches))
    return ResidualWaitCurve(t_grid, est, ci, counts, flagged)


def empirical_residual_wait(
    process: PrimitiveProcess,
    policy: EntryExitPolicy,
    discipline: Discipline,
    t_grid: Sequence[float],
    config: SimConfig,
) -> ResidualWaitCurve:
    """Simulated expected remaining wait of agents who have waited ``t``."""
    return simulate(process, policy, discipline, config, t_grid).residual_wait_by_elapsed


def little_check(stats_: SimStats) -> float:
    """Relative gap ``|L - lambda_eff W| / L`` of Little's law."""
    if stats_.arrival_rate_effective <= 0 or stats_.mean_queue_len <= 0 or not np.isfinite(stats_.mean_wait):
        raise ValidationError("Little's law needs positive throughput")
    L = stats_.mean_queue_len
    return abs(L - stats_.arrival_rate_effective * stats_.mean_wait) / L


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    n = max(p.size, q.size)
    p = np.pad(p, (0, n - p.size))
    q = np.pad(q, (0, n - q.size))
    return 0.5 * float(np.abs(p - q).sum())
