"""Sequential-threshold ridge regression (STRidge) and threshold selection.

Ridge solves alternate with hard thresholding of the normalized
coefficients until the active set stops changing; the surviving terms are
optionally refit without regularization.  :func:`threshold_sweep` runs the
fit over a grid of thresholds and :func:`select_threshold` picks the point
just past the sharpest drop in the number of active terms.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import EmptyModelError, NoKneeError, RankDeficiencyError
from .gmpe import PhysicalEquation
from .library import DesignMatrix, denormalize_coefficients

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-7
DEFAULT_MAX_ITERATIONS = 25


def default_delta_grid():
    """50 log-spaced thresholds on [1e-3, 10] (normalized-coefficient units)."""
    return tuple(float(x) for x in np.geomspace(1e-3, 10.0, 50))


def ridge_solve(theta, y, lam: float) -> np.ndarray:
    """argmin ||theta xi - y||^2 + lam ||xi||^2 via Cholesky on the normal equations.

    One step of iterative refinement is applied.  With ``lam == 0`` a
    numerically singular Gram matrix raises :class:`RankDeficiencyError`.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    if theta.ndim != 2 or theta.shape[0] < 1 or theta.shape[1] < 1:
        raise ValueError(f"theta must be a non-empty 2-D array, got shape {theta.shape}")
    if y.shape != (theta.shape[0],):
        raise ValueError("y length must match theta rows")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n = theta.shape[1]
    gram = theta.T @ theta
    if lam:
        gram[np.diag_indices(n)] += lam
    rhs = theta.T @ y
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"normal equations not positive definite (lambda={lam})") from exc
    diag = np.abs(np.diag(factor[0])) ** 2
    if diag.min() <= n * np.finfo(float).eps * np.abs(np.diag(gram)).max():
        raise RankDeficiencyError(f"normal equations numerically singular (lambda={lam})")
    xi = scipy.linalg.cho_solve(factor, rhs)
    xi += scipy.linalg.cho_solve(factor, rhs - gram @ xi)
    return xi


@dataclass(frozen=True)
class SolverConfig:
    lam: float = DEFAULT_LAMBDA
    delta: float = 0.0
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    final_refit_unregularized: bool = True

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.delta >= 0:
            raise ValueError("delta must be >= 0")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(frozen=True, eq=False)
class SparseModel:
    xi_normalized: np.ndarray
    support: tuple
    physical: PhysicalEquation
    fit_stats: dict
    config: SolverConfig
    trace: tuple = ()

    @property
    def n_terms(self) -> int:
        return len(self.support)

    def support_terms(self, library):
        return [library.terms[j] for j in self.support]

    def to_dict(self, library=None) -> dict:
        d = {
            "config": self.config.to_dict(),
            "support": list(self.support),
            "xi_normalized": [float(x) for x in self.xi_normalized],
            "fit_stats": dict(self.fit_stats),
            "physical": self.physical.to_dict(),
        }
        if library is not None:
            d["terms"] = library.descriptors
            d["support_terms"] = [library.terms[j].descriptor for j in self.support]
        return d


def _ridge_on(theta, y, support, lam):
    xi = np.zeros(theta.shape[1])
    xi[list(support)] = ridge_solve(theta[:, list(support)], y, lam)
    return xi


def stridge_fit(matrix: DesignMatrix, config: SolverConfig) -> SparseModel:
    """Fit a sparse model to ``matrix`` at threshold ``config.delta``.

    Raises
    ------
    EmptyModelError
        The threshold removed every term.
    """
    theta, y = matrix.theta, matrix.y
    n = theta.shape[1]
    delta = config.delta
    support = tuple(range(n))
    xi = ridge_solve(theta, y, config.lam)
    trace = [support]
    iterations = 0
    for _ in range(int(config.max_iterations)):
        new = tuple(j for j in support if abs(xi[j]) >= delta)
        if not new:
            raise EmptyModelError(delta)
        if new == support:
            break
        support = new
        trace.append(support)
        xi = _ridge_on(theta, y, support, config.lam)
        iterations += 1

    refit = "ridge"
    if config.final_refit_unregularized:
        try:
            xi = _ridge_on(theta, y, support, 0.0)
            refit = "ols"
        except RankDeficiencyError:
            log.warning("unregularized refit is rank deficient at delta=%g; keeping ridge solution", delta)
    xi[[j for j in range(n) if j not in support]] = 0.0

    resid = y - theta @ xi
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    stats = {
        "rss": rss,
        "r_squared": 1.0 - rss / tss if tss > 0 else float("nan"),
        "n_terms": len(support),
        "n_records": int(theta.shape[0]),
        "iterations": iterations,
        "refit": refit,
    }
    provenance = {"source": "fitted", "lambda": config.lam, "delta": delta,
                  "data_hash": matrix.data_hash(), "normalization": matrix.norm.mode}
    physical = denormalize_coefficients(xi, matrix, provenance)
    return SparseModel(xi, support, physical, stats, config, tuple(trace))


@dataclass(frozen=True, eq=False)
class SweepPoint:
    delta: float
    n_terms: int
    model: Optional[SparseModel]


@dataclass(frozen=True, eq=False)
class ThresholdSweep:
    points: tuple
    lam: float
    violations: tuple = field(default=())
    n_library: Optional[int] = None

    @property
    def deltas(self):
        return [p.delta for p in self.points]

    @property
    def n_terms(self):
        return [p.n_terms for p in self.points]

    def point(self, delta) -> SweepPoint:
        for p in self.points:
            if p.delta == delta:
                return p
        raise KeyError(delta)


def _check_grid(delta_grid):
    grid = [float(d) for d in delta_grid]
    if not grid:
        raise ValueError("delta grid is empty")
    if any(d < 0 for d in grid):
        raise ValueError("delta grid values must be >= 0")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("delta grid must be strictly increasing")
    return grid


def threshold_sweep(matrix: DesignMatrix, lam: float = DEFAULT_LAMBDA, delta_grid=None,
                    max_iterations: int = DEFAULT_MAX_ITERATIONS,
                    final_refit_unregularized: bool = True, workers: int = 1) -> ThresholdSweep:
    """One :func:`stridge_fit` per threshold, ordered by delta.

    Empty models are recorded with ``n_terms = 0``.  Increases of
    ``n_terms`` along the grid are collected in ``violations`` as
    ``(delta_before, delta_after)`` pairs rather than corrected.
    """
    grid = _check_grid(default_delta_grid() if delta_grid is None else delta_grid)

    def run(delta):
        cfg = SolverConfig(lam, delta, max_iterations, final_refit_unregularized)
        try:
            model = stridge_fit(matrix, cfg)
        except EmptyModelError:
            return SweepPoint(delta, 0, None)
        return SweepPoint(delta, model.n_terms, model)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(run, grid))
    else:
        points = [run(d) for d in grid]

    violations = tuple((a.delta, b.delta) for a, b in zip(points, points[1:])
                       if b.n_terms > a.n_terms)
    for a, b in violations:
        log.warning("n_terms increases between delta=%g and delta=%g", a, b)
    return ThresholdSweep(tuple(points), lam, violations, matrix.theta.shape[1])


def select_threshold(sweep: ThresholdSweep) -> float:
    """Threshold just after the largest single-step drop in ``n_terms``.

    Ties go to the larger threshold, and a drop that lands on zero terms is
    never selected.  When ``sweep.n_library`` is set, delta = 0 (every
    library term active) counts as an implicit point before the grid, so a
    drop that is already complete at the first grid point is still seen.

    Raises
    ------
    NoKneeError
        No eligible decrease anywhere on the curve.
    """
    counts = sweep.n_terms
    if len(counts) < 2:
        raise ValueError("need at least two sweep points")
    best, best_i = 0, None
    for i in range(0 if sweep.n_library is not None else 1, len(counts)):
        drop = (counts[i - 1] if i else sweep.n_library) - counts[i]
        if counts[i] == 0 or drop <= 0:
            continue
        if drop >= best:
            best, best_i = drop, i
    if best_i is None:
        raise NoKneeError("number of terms never decreases; choose delta explicitly")
    return sweep.points[best_i].delta


@dataclass(frozen=True, eq=False)
class Discovery:
    sweep: Optional[ThresholdSweep]
    delta: float
    model: SparseModel
    knee_selected: bool


def discover(matrix: DesignMatrix, lam: float = DEFAULT_LAMBDA, delta_grid=None,
             delta: Optional[float] = None, max_iterations: int = DEFAULT_MAX_ITERATIONS,
             final_refit_unregularized: bool = True, workers: int = 1) -> Discovery:
    """Sweep, pick the knee (unless ``delta`` is given) and fit there."""
    sweep = None
    if delta is None:
        sweep = threshold_sweep(matrix, lam, delta_grid, max_iterations,
                                final_refit_unregularized, workers)
        chosen = select_threshold(sweep)
        model = sweep.point(chosen).model
        return Discovery(sweep, chosen, model, True)
    cfg = SolverConfig(lam, float(delta), max_iterations, final_refit_unregularized)
    return Discovery(None, float(delta), stridge_fit(matrix, cfg), False)
