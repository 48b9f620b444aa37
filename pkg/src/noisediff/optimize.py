"""Box-constrained maximisation used by all estimators.

The default engine is Nelder-Mead with projection onto the box: every
candidate vertex is clipped before evaluation, so the returned argmax
satisfies the constraints exactly. Runs are multi-started from the box
center plus four random interior points; random starts come from a Philox
stream with a fixed key, so results are deterministic call to call.

A quasi-Newton alternative (L-BFGS-B on central-difference gradients) is
available via method="qn" for smooth objectives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonConvergenceError

__all__ = ["BoxProblem", "OptimizerReport", "maximize", "numeric_gradient"]

# fixed label for the multi-start stream ("nd-starts" as two 64-bit words)
_START_KEY = np.array([0x6E642D7374617274, 0x73], dtype=np.uint64)

BOUNDARY_TOL = 1e-6


@dataclass
class BoxProblem:
    """A maximisation problem over a box.

    lower/upper are per-coordinate closed bounds (equal bounds pin a
    coordinate). ``starts`` overrides the default multi-start set; every
    start must lie inside the box.
    """

    objective: Callable[[np.ndarray], float]
    lower: np.ndarray
    upper: np.ndarray
    starts: Optional[Sequence[np.ndarray]] = None
    n_random_starts: int = 4
    max_iter: Optional[int] = None
    tol: float = 1e-8

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must have the same length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("box bounds must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("box has lower > upper")
        if self.starts is not None:
            pts = [np.asarray(s, dtype=float).ravel() for s in self.starts]
            for s in pts:
                if np.any(s < self.lower - 1e-12) or np.any(s > self.upper + 1e-12):
                    raise ValueError("start point outside box")
            self.starts = pts

    @property
    def dim(self) -> int:
        return self.lower.size


@dataclass
class StartReport:
    start: np.ndarray
    value: float
    iterations: int
    converged: bool


@dataclass
class OptimizerReport:
    iterations: int
    n_evals: int
    converged: bool
    boundary: np.ndarray  # per-coordinate flag: argmax within 1e-6 of a bound
    starts: list = field(default_factory=list)

    def to_dict(self):
        return {
            "iterations": int(self.iterations),
            "n_evals": int(self.n_evals),
            "converged": bool(self.converged),
            "boundary": [bool(b) for b in self.boundary],
            "starts": [
                {
                    "value": float(s.value),
                    "iterations": int(s.iterations),
                    "converged": bool(s.converged),
                }
                for s in self.starts
            ],
        }


def numeric_gradient(f, x, rel_step: float = 1e-6):
    """Central-difference gradient with per-coordinate step rel_step*(1+|x_i|)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        step = rel_step * (1.0 + abs(x[i]))
        up = x.copy()
        up[i] += step
        dn = x.copy()
        dn[i] -= step
        g[i] = (f(up) - f(dn)) / (2.0 * step)
    return g


def _default_starts(problem: BoxProblem, free):
    width = problem.upper - problem.lower
    center = problem.lower + 0.5 * width
    starts = [center]
    if np.any(free):
        rng = np.random.Generator(np.random.Philox(key=_START_KEY))
        u = rng.random((problem.n_random_starts, problem.dim))
        for row in u:
            starts.append(problem.lower + row * width)
    return starts


def _nelder_mead(g, x0, lower, upper, free, tol, max_iter):
    """Minimise g over the box, moving the free coordinates only.

    Returns (x, gx, iterations, evals, converged). Points proposed outside
    the box are projected onto it before evaluation; NaN objective values
    are treated as +inf so the simplex simply avoids them.
    """
    idx = np.flatnonzero(free)
    nfree = idx.size
    lo, up = lower[idx], upper[idx]
    width = up - lo
    evals = 0

    def embed(zf):
        x = x0.copy()
        x[idx] = zf
        return x

    def gf(zf):
        nonlocal evals
        evals += 1
        val = float(g(embed(zf)))
        return np.inf if np.isnan(val) else val

    def run(z_init, step_frac, budget, tol_frac=1.0):
        verts = [np.clip(z_init, lo, up)]
        for i in range(nfree):
            v = verts[0].copy()
            step = step_frac * width[i]
            v[i] = v[i] + step if v[i] + step <= up[i] else v[i] - step
            verts.append(v)
        verts = np.array(verts)
        vals = np.array([gf(v) for v in verts])
        it = 0
        while True:
            order = np.argsort(vals, kind="stable")
            verts, vals = verts[order], vals[order]
            diam = np.max(np.linalg.norm(verts[1:] - verts[0], axis=1), initial=0.0)
            if diam < tol_frac * tol * (1.0 + np.linalg.norm(verts[0])):
                return verts[0], vals[0], it, True
            if it >= budget:
                return verts[0], vals[0], it, False
            it += 1
            centroid = verts[:-1].mean(axis=0)
            xr = np.clip(centroid + (centroid - verts[-1]), lo, up)
            fr = gf(xr)
            if vals[0] <= fr < vals[-2]:
                verts[-1], vals[-1] = xr, fr
                continue
            if fr < vals[0]:
                xe = np.clip(centroid + 2.0 * (centroid - verts[-1]), lo, up)
                fe = gf(xe)
                if fe < fr:
                    verts[-1], vals[-1] = xe, fe
                else:
                    verts[-1], vals[-1] = xr, fr
                continue
            xc = np.clip(centroid + 0.5 * (verts[-1] - centroid), lo, up)
            fc = gf(xc)
            if fc < vals[-1]:
                verts[-1], vals[-1] = xc, fc
                continue
            for i in range(1, len(verts)):
                verts[i] = verts[0] + 0.5 * (verts[i] - verts[0])
                vals[i] = gf(verts[i])

    z0 = np.clip(x0[idx], lo, up)
    f0 = float(g(embed(z0)))
    evals += 1
    if not np.isfinite(f0):
        raise NonConvergenceError(
            "objective not finite at start point", best_point=embed(z0), best_value=-f0
        )

    z1, g1, it1, conv1 = run(z0, 0.05, max_iter)
    # one restart from the incumbent with a shrunk simplex and a tighter
    # stop; polishes the optimum and rescues stagnated runs
    z2, g2, it2, conv2 = run(z1, 1e-3, max(max_iter - it1, 50), tol_frac=1e-2)
    if g2 <= g1:
        z_best, g_best = z2, g2
    else:
        z_best, g_best = z1, g1
    return embed(z_best), g_best, it1 + it2, evals, conv1 or conv2


def maximize(problem: BoxProblem, method: str = "nelder-mead"):
    """Maximise the objective over the box from every start; keep the best.

    Returns (argmax, value, OptimizerReport). Raises NonConvergenceError,
    with the best point attached, when no start converged within its
    iteration budget.
    """
    dim = problem.dim
    free = problem.upper > problem.lower
    max_iter = problem.max_iter if problem.max_iter is not None else 500 * max(int(np.sum(free)), 1)

    if not np.any(free):
        x = problem.lower.copy()
        val = float(problem.objective(x))
        report = OptimizerReport(
            iterations=0,
            n_evals=1,
            converged=True,
            boundary=np.ones(dim, dtype=bool),
            starts=[StartReport(start=x, value=val, iterations=0, converged=True)],
        )
        return x, val, report

    starts = problem.starts if problem.starts is not None else _default_starts(problem, free)
    neg = lambda x: -float(problem.objective(x))

    best = None
    total_iters = 0
    total_evals = 0
    start_reports = []
    for s in starts:
        s = np.clip(np.asarray(s, dtype=float), problem.lower, problem.upper)
        if method == "nelder-mead":
            x, gx, iters, evals, conv = _nelder_mead(
                neg, s, problem.lower, problem.upper, free, problem.tol, max_iter
            )
        elif method == "qn":
            x, gx, iters, conv, evals = _lbfgsb(neg, s, problem, free, max_iter)
        else:
            raise ValueError("unknown method %r" % (method,))
        total_iters += iters
        total_evals += evals
        start_reports.append(StartReport(start=s, value=-gx, iterations=iters, converged=conv))
        if best is None or gx < best[1]:
            best = (x, gx, conv)

    x_best, g_best, _ = best
    converged = any(r.converged for r in start_reports)
    boundary = (x_best - problem.lower <= BOUNDARY_TOL) | (problem.upper - x_best <= BOUNDARY_TOL)
    report = OptimizerReport(
        iterations=total_iters,
        n_evals=total_evals,
        converged=converged,
        boundary=boundary,
        starts=start_reports,
    )
    if not converged:
        raise NonConvergenceError(
            "no optimizer start converged in %d iterations" % max_iter,
            best_point=x_best,
            best_value=-g_best,
        )
    return x_best, -g_best, report


def _lbfgsb(neg, start, problem, free, max_iter):
    from scipy.optimize import minimize as _scipy_minimize

    bounds = [
        (lo, up) if f else (lo, lo)
        for lo, up, f in zip(problem.lower, problem.upper, free)
    ]
    res = _scipy_minimize(
        neg,
        start,
        jac=lambda x: -numeric_gradient(lambda z: -neg(z), x),
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-10},
    )
    return np.clip(res.x, problem.lower, problem.upper), float(res.fun), int(res.nit), bool(res.success), int(res.nfev)
