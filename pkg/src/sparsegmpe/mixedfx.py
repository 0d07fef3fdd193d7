"""Two-level random-effects analysis of prediction residuals.

Residuals r_ij of event i, record j are modelled as eta_i + eps_ij with
eta_i ~ N(0, tau^2) and eps_ij ~ N(0, phi^2).  Variance components are
estimated by maximizing the exact marginal likelihood; event terms are the
usual shrinkage (BLUP) estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .errors import DomainError, EstimationError

LOW_BREAK = 4.5
HIGH_BREAK = 5.5
PHI_FLOOR = 1e-8
_LN2PI = math.log(2.0 * math.pi)


def group_residuals(event_ids: Sequence, residuals: Sequence[float]) -> Dict[str, np.ndarray]:
    """Group a flat residual vector by event id, keeping first-seen order."""
    groups: Dict[str, list] = {}
    for eid, r in zip(event_ids, residuals):
        groups.setdefault(eid, []).append(float(r))
    return {k: np.asarray(v) for k, v in groups.items()}


class _Stats(NamedTuple):
    n: np.ndarray
    s: np.ndarray
    q: np.ndarray


def _sufficient_stats(grouped: Mapping[str, Sequence[float]]) -> _Stats:
    # Sorted keys and exact sums make the result independent of event and
    # record ordering, bit for bit.
    n, s, q = [], [], []
    for key in sorted(grouped):
        r = np.asarray(grouped[key], dtype=float).ravel()
        if r.size == 0:
            continue
        if not np.all(np.isfinite(r)):
            raise DomainError(f"non-finite residual in event {key!r}")
        n.append(r.size)
        s.append(math.fsum(r))
        q.append(math.fsum(r * r))
    return _Stats(np.array(n, dtype=float), np.array(s), np.array(q))


def _loglik(stats: _Stats, tau2, phi2):
    n, s, q = stats
    tau2 = np.asarray(tau2, dtype=float)[..., None]
    phi2 = np.asarray(phi2, dtype=float)[..., None]
    denom = phi2 + n * tau2
    per_event = -0.5 * (n * _LN2PI + (n - 1) * np.log(phi2) + np.log(denom)
                        + (q - tau2 * s * s / denom) / phi2)
    return per_event.sum(axis=-1)


def marginal_log_likelihood(grouped: Mapping[str, Sequence[float]], tau: float, phi: float) -> float:
    """Exact Gaussian log-likelihood with per-event covariance phi^2 I + tau^2 11'."""
    if not phi > 0:
        raise DomainError("phi must be > 0")
    if not tau >= 0:
        raise DomainError("tau must be >= 0")
    return float(_loglik(_sufficient_stats(grouped), tau * tau, phi * phi))


@dataclass(frozen=True)
class VarianceComponents:
    tau: float
    phi: float
    log_likelihood: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.tau, self.phi, self.log_likelihood))


def estimate_variance_components(grouped: Mapping[str, Sequence[float]]) -> VarianceComponents:
    """Maximum-likelihood (tau, phi).

    Nelder-Mead over (ln tau^2, ln phi^2) from several starts, compared
    against the tau = 0 boundary whose optimum is closed-form.  If all
    residuals are equal the boundary solution tau = 0, phi = PHI_FLOOR is
    returned with ``degenerate=True``.
    """
    stats = _sufficient_stats(grouped)
    n, s, q = stats
    if n.size < 2:
        raise EstimationError("need at least two events")
    if not np.any(n >= 2):
        raise EstimationError("need at least one event with two or more records")
    total = n.sum()
    mean = s.sum() / total
    if q.sum() / total - mean * mean <= 1e-15 * max(1.0, mean * mean):
        return VarianceComponents(0.0, PHI_FLOOR, float(_loglik(stats, 0.0, PHI_FLOOR ** 2)), True)

    # Method-of-moments starting values.
    within = (q - s * s / n)[n >= 2].sum() / max((n - 1).sum(), 1.0)
    within = max(within, 1e-12)
    between = max(np.mean(s * s / (n * n)) - within * np.mean(1.0 / n), 1e-6 * within)

    def neg(p):
        return -float(_loglik(stats, math.exp(p[0]), math.exp(p[1])))

    best = None
    for t0, p0 in ((between, within), (within, within), (0.1 * within, within),
                   (between, 0.5 * within), (between, 2.0 * within)):
        x0 = np.log([max(t0, 1e-12), max(p0, 1e-12)])
        res = optimize.minimize(neg, x0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20000, "maxfev": 40000})
        res = optimize.minimize(neg, res.x, method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000, "maxfev": 40000,
                                         "initial_simplex": res.x + 0.05 * np.array([[0, 0], [1, 0], [0, 1]])})
        if best is None or res.fun < best[0]:
            best = (res.fun, math.exp(0.5 * res.x[0]), math.exp(0.5 * res.x[1]))

    # tau = 0: iid normal, phi^2 = mean square.
    phi0 = math.sqrt(q.sum() / total)
    ll0 = float(_loglik(stats, 0.0, phi0 * phi0))
    if -ll0 <= best[0]:
        return VarianceComponents(0.0, phi0, ll0)
    return VarianceComponents(best[1], best[2], -best[0])


@dataclass(frozen=True)
class ResidualDecomposition:
    eta: Dict[str, float]
    epsilon: Dict[str, np.ndarray]
    tau: float
    phi: float
    log_likelihood: float

    def flat_epsilon(self, event_ids: Sequence) -> np.ndarray:
        """Intra-event residuals back in the order of a flat record list."""
        cursor = {k: 0 for k in self.epsilon}
        out = np.empty(len(event_ids))
        for i, eid in enumerate(event_ids):
            out[i] = self.epsilon[eid][cursor[eid]]
            cursor[eid] += 1
        return out


def decompose(grouped: Mapping[str, Sequence[float]], tau: float, phi: float,
              events=None) -> ResidualDecomposition:
    """Event terms eta_i = tau^2 sum_j r_ij / (phi^2 + n_i tau^2) and eps_ij = r_ij - eta_i.

    ``events``, if given, is the set of known event ids; residuals keyed by
    anything else raise KeyError.
    """
    if not phi > 0 or not tau >= 0:
        raise DomainError("need tau >= 0 and phi > 0")
    if events is not None:
        unknown = set(grouped) - set(events)
        if unknown:
            raise KeyError(f"unknown event id(s): {sorted(unknown)}")
    tau2, phi2 = tau * tau, phi * phi
    eta, eps = {}, {}
    for key, r in grouped.items():
        r = np.asarray(r, dtype=float).ravel()
        e = tau2 * math.fsum(r) / (phi2 + r.size * tau2)
        eta[key] = e
        eps[key] = r - e
    ll = marginal_log_likelihood(grouped, tau, phi)
    return ResidualDecomposition(eta, eps, tau, phi, ll)


@dataclass(frozen=True)
class SigmaModel:
    tau1: float
    tau2: float
    phi1: float
    phi2: float

    def __post_init__(self):
        if not min(self.tau1, self.tau2, self.phi1, self.phi2) >= 0:
            raise ValueError("standard deviations must be non-negative")

    def to_dict(self):
        return {"tau1": self.tau1, "tau2": self.tau2, "phi1": self.phi1, "phi2": self.phi2,
                "breakpoints": [LOW_BREAK, HIGH_BREAK]}


# Magnitude-dependent SDs reported for the published equations.
TABLE_SIGMA = {
    "pga": SigmaModel(tau1=0.511, tau2=0.392, phi1=0.756, phi2=0.576),
    "pgv": SigmaModel(tau1=0.374, tau2=0.438, phi1=0.670, phi2=0.547),
}


def _ramp(v1, v2, m):
    if m <= LOW_BREAK:
        return v1
    if m >= HIGH_BREAK:
        return v2
    return v1 + (v2 - v1) * (m - LOW_BREAK)


def sigma_at_magnitude(model: SigmaModel, m: float):
    """(tau, phi) at magnitude m: flat below 4.5 and above 5.5, linear between."""
    if not math.isfinite(m):
        raise DomainError("magnitude must be finite")
    return _ramp(model.tau1, model.tau2, m), _ramp(model.phi1, model.phi2, m)


def _sample_sd(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def fit_sigma_model(decomposition: ResidualDecomposition, magnitudes: Mapping[str, float]) -> SigmaModel:
    """Binned sample SDs (n-1) of event and intra-event residuals.

    Events with M <= 4.5 feed tau1/phi1, events with M >= 5.5 feed
    tau2/phi2; the transition zone is not used.
    """
    bins = {"low (M <= 4.5)": lambda m: m <= LOW_BREAK, "high (M >= 5.5)": lambda m: m >= HIGH_BREAK}
    out = []
    for name, member in bins.items():
        keys = [k for k in decomposition.eta if member(magnitudes[k])]
        if len(keys) < 2:
            raise EstimationError(f"fewer than two events in magnitude bin {name}")
        eps = np.concatenate([decomposition.epsilon[k] for k in keys])
        if eps.size < 2:
            raise EstimationError(f"fewer than two intra-event residuals in magnitude bin {name}")
        out.append((_sample_sd([decomposition.eta[k] for k in keys]), _sample_sd(eps)))
    (t1, p1), (t2, p2) = out
    return SigmaModel(t1, t2, p1, p2)


class BinStat(NamedTuple):
    center: float
    lo: float
    hi: float
    mean: float
    sd: float
    count: int


def log_bin_edges(lo: float, hi: float, n_bins: int) -> np.ndarray:
    return np.geomspace(lo, hi, n_bins + 1)


def binned_residual_stats(values, bin_variable, edges, log_spaced: bool = True):
    """Mean and sample SD of ``values`` within bins of ``bin_variable``.

    Bins are half-open [lo, hi) except the last, which is closed.  Centers
    are geometric midpoints when ``log_spaced``.  A bin with one value has
    SD 0; an empty bin reports NaN mean and SD with count 0.
    """
    values = np.asarray(values, dtype=float)
    x = np.asarray(bin_variable, dtype=float)
    edges = np.asarray(edges, dtype=float)
    if values.shape != x.shape:
        raise ValueError("values and bin_variable must have the same length")
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least two entries")
    if x.size and (x.min() < edges[0] or x.max() > edges[-1]):
        raise ValueError("bins do not cover the data range")
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, edges.size - 2)
    stats = []
    for b in range(edges.size - 1):
        lo, hi = edges[b], edges[b + 1]
        center = math.sqrt(lo * hi) if log_spaced else 0.5 * (lo + hi)
        v = values[idx == b]
        if v.size == 0:
            stats.append(BinStat(center, lo, hi, math.nan, math.nan, 0))
        else:
            stats.append(BinStat(center, lo, hi, float(v.mean()), _sample_sd(v), int(v.size)))
    return stats
