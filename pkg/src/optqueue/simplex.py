"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Intended for tiny, possibly degenerate LPs where determinism matters more
than speed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

_EPS = 1e-11


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    value: float
    status: str  # "optimal", "infeasible" or "unbounded"
    basis: tuple[int, ...]


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for r in range(tab.shape[0]):
        if r != row and tab[r, col] != 0.0:
            tab[r] -= tab[r, col] * tab[row]


def _run(tab: np.ndarray, basis: list[int], n_cols: int, max_iter: int) -> str:
    """Maximize the objective stored in the last row (reduced costs negated)."""
    m = tab.shape[0] - 1
    for _ in range(max_iter):
        # Bland: lowest-index column with positive reduced gain.
        enter = next((j for j in range(n_cols) if tab[-1, j] < -_EPS), None)
        if enter is None:
            return "optimal"
        col = tab[:m, enter]
        rows = [i for i in range(m) if col[i] > _EPS]
        if not rows:
            return "unbounded"
        ratios = [tab[i, -1] / col[i] for i in rows]
        best = min(ratios)
        tied = [i for i, r in zip(rows, ratios) if r <= best + _EPS * max(1.0, abs(best))]
        leave = min(tied, key=lambda i: basis[i])
        _pivot(tab, leave, enter)
        basis[leave] = enter
    raise NumericalError("simplex exceeded its iteration limit")


def simplex_max(
    c: np.ndarray,
    a_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    max_iter: int = 10_000,
) -> LPResult:
    """Maximize ``c @ x`` subject to ``a_ub x <= b_ub``, ``a_eq x = b_eq``, ``x >= 0``.

    Parameters
    ----------
    c : ndarray, shape (n,)
        Objective coefficients.
    a_ub, b_ub : ndarray, optional
        Inequality constraints.
    a_eq, b_eq : ndarray, optional
        Equality constraints.
    max_iter : int
        Pivot limit per phase.

    Returns
    -------
    LPResult
        ``x`` holds the optimal vertex when ``status == "optimal"``.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    a_ub = np.zeros((0, n)) if a_ub is None else np.atleast_2d(np.asarray(a_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = a_ub.shape[0], a_eq.shape[0]
    m = m_ub + m_eq

    # Columns: x (n), slacks (m_ub), artificials (m). Every row gets an
    # artificial so phase one starts from the identity basis.
    n_slack = m_ub
    n_cols = n + n_slack + m
    tab = np.zeros((m + 1, n_cols + 1))
    rows = np.vstack([a_ub, a_eq]) if m else np.zeros((0, n))
    rhs = np.concatenate([b_ub, b_eq])
    tab[:m, :n] = rows
    tab[:m_ub, n : n + n_slack] = np.eye(m_ub)
    tab[:m, -1] = rhs
    neg = rhs < 0
    tab[:m][neg] *= -1.0
    tab[:m, n + n_slack : n_cols] = np.eye(m)
    basis = list(range(n + n_slack, n_cols))

    # Phase one: maximize minus the sum of artificials.
    tab[-1, :] = 0.0
    tab[-1, n + n_slack : n_cols] = 1.0
    for i in range(m):
        tab[-1] -= tab[i]
    _run(tab, basis, n_cols, max_iter)
    if tab[-1, -1] < -1e-9 * max(1.0, float(np.abs(rhs).max(initial=0.0))):
        return LPResult(np.full(n, np.nan), float("nan"), "infeasible", tuple(basis))

    # Drive remaining zero-level artificials out of the basis where possible.
    for i in range(m):
        if basis[i] >= n + n_slack:
            cand = next((j for j in range(n + n_slack) if abs(tab[i, j]) > _EPS), None)
            if cand is not None:
                _pivot(tab, i, cand)
                basis[i] = cand

    # Phase two on the original columns; artificials are frozen out.
    n_orig = n + n_slack
    tab[:, n_orig:n_cols] = 0.0
    for i in range(m):
        if basis[i] >= n_orig:
            tab[i, basis[i]] = 1.0
    tab[-1, :] = 0.0
    tab[-1, :n] = -c
    for i in range(m):
        if basis[i] < n_orig and tab[-1, basis[i]] != 0.0:
            tab[-1] -= tab[-1, basis[i]] * tab[i]
    status = _run(tab, basis, n_orig, max_iter)
    x = np.zeros(n_cols)
    for i, b in enumerate(basis):
        x[b] = tab[i, -1]
    xs = x[:n]
    if status != "optimal":
        return LPResult(xs, float("inf"), status, tuple(basis))
    return LPResult(xs, float(c @ xs), "optimal", tuple(basis))
