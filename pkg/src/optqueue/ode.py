"""Classical RK4 on a fixed output grid with per-interval step halving."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericalError

Rhs = Callable[[np.ndarray], np.ndarray]


def _rk4(f: Rhs, y: np.ndarray, h: float, n: int) -> np.ndarray:
    dt = h / n
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def integrate(
    f: Rhs,
    y0: np.ndarray,
    t_grid: np.ndarray,
    tol: float = 1e-8,
    max_halvings: int = 20,
) -> np.ndarray:
    """Integrate the autonomous system ``y' = f(y)`` onto ``t_grid``.

    On each grid interval the number of RK4 substeps is doubled until two
    successive refinements differ by less than ``tol`` in sup-norm; the
    finer result is kept.

    Parameters
    ----------
    f : callable
        Right-hand side, ``f(y) -> dy/dt``.
    y0 : ndarray
        State at ``t_grid[0]``.
    t_grid : ndarray
        Strictly increasing output times.
    tol : float
        Sup-norm agreement required between refinements.
    max_halvings : int
        Refinement limit per interval.

    Returns
    -------
    ndarray, shape (len(t_grid), len(y0))

    Raises
    ------
    NumericalError
        If an interval does not converge within ``max_halvings``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be a strictly increasing 1-D array")
    y = np.array(y0, dtype=float)
    out = np.empty((t_grid.size, y.size))
    out[0] = y
    n = 1
    for i in range(t_grid.size - 1):
        h = t_grid[i + 1] - t_grid[i]
        coarse = _rk4(f, y, h, n)
        for _ in range(max_halvings):
            fine = _rk4(f, y, h, 2 * n)
            diff = float(np.max(np.abs(fine - coarse)))
            if not np.isfinite(diff):
                raise NumericalError("integration produced non-finite values")
            if diff < tol:
                break
            coarse, n = fine, 2 * n
        else:
            raise NumericalError(f"step refinement did not converge on [{t_grid[i]}, {t_grid[i + 1]}]")
        y = fine
        out[i + 1] = y
        if diff < tol / 64 and n > 1:
            n //= 2
    return out
