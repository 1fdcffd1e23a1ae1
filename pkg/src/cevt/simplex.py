"""Derivative-free minimisation with the Nelder-Mead simplex method."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# Standard coefficients (reflection, expansion, contraction, shrink).
ALPHA = 1.0
GAMMA = 2.0
RHO = 0.5
SHRINK = 0.5


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool


def nelder_mead(
    func: Callable[[np.ndarray], float],
    x0: np.ndarray,
    steps: np.ndarray | float = 0.1,
    tol: float = 1e-8,
    max_iters: int = 2000,
) -> SimplexResult:
    """Minimise ``func`` starting from ``x0``.

    The initial simplex is ``x0`` plus one vertex per axis displaced by
    ``steps[i]``. Iteration stops once the spread of objective values over
    the simplex is at most ``tol`` or after ``max_iters`` iterations.

    The returned point is never worse than ``x0`` because ``x0`` is a vertex
    of the initial simplex and the best vertex is only ever replaced by a
    strictly better one.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (n,))

    simplex = np.empty((n + 1, n))
    simplex[0] = x0
    for i in range(n):
        vertex = x0.copy()
        vertex[i] += steps[i]
        simplex[i + 1] = vertex
    fvals = np.array([func(v) for v in simplex], dtype=float)
    nfev = n + 1

    converged = False
    it = 0
    while it < max_iters:
        # stable sort keeps the earlier vertex on ties -> deterministic
        order = np.argsort(fvals, kind="stable")
        simplex = simplex[order]
        fvals = fvals[order]

        if fvals[-1] - fvals[0] <= tol:
            converged = True
            break
        it += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]

        xr = centroid + ALPHA * (centroid - worst)
        fr = func(xr)
        nfev += 1

        if fr < fvals[0]:
            xe = centroid + GAMMA * (xr - centroid)
            fe = func(xe)
            nfev += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue

        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue

        if fr < fvals[-1]:
            xc = centroid + RHO * (xr - centroid)
            fc = func(xc)
            nfev += 1
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + RHO * (worst - centroid)
            fc = func(xc)
            nfev += 1
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue

        best = simplex[0]
        for i in range(1, n + 1):
            simplex[i] = best + SHRINK * (simplex[i] - best)
            fvals[i] = func(simplex[i])
        nfev += n

    order = np.argsort(fvals, kind="stable")
    return SimplexResult(
        x=simplex[order[0]].copy(),
        fun=float(fvals[order[0]]),
        iterations=it,
        evaluations=nfev,
        converged=converged,
    )
