"""Synthetic flatfiles drawn from a known sparse equation.

Random numbers come from numpy's ``Generator(PCG64(seed))``.  Draw order,
which fixes every output for a given seed:

for each event, in order
    1. record count (only when ``records_per_event`` is a range),
       ``integers(lo, hi + 1)``
    2. M_w ``uniform``, source depth ``uniform``, FM ``integers(1, 4)``
    3. one event term per intensity measure (pga, then pgv), ``normal(0, tau)``
    4. per-record arrays: R_JB, V_S30, Z_1.0 (log-uniform, drawn as
       ``exp(uniform(ln lo, ln hi))``), then one ``normal(0, phi)`` vector
       per intensity measure (pga, then pgv)

Magnitude, depth and fault mechanism are event properties shared by all
records of the event.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Tuple, Union

import numpy as np

from .flatfile import GroundMotionRecord
from .gmpe import IMS, PhysicalEquation, predict


@dataclass(frozen=True)
class SynthSpec:
    truth: Union[PhysicalEquation, Mapping[str, PhysicalEquation]]
    n_events: int = 500
    records_per_event: Union[int, Tuple[int, int]] = 10
    tau: float = 0.0
    phi: float = 0.0
    m_w_range: Tuple[float, float] = (3.0, 7.6)
    r_jb_range: Tuple[float, float] = (1.0, 400.0)
    v_s30_range: Tuple[float, float] = (90.0, 1464.0)
    z_1_0_range: Tuple[float, float] = (1.0, 3520.0)
    depth_range: Tuple[float, float] = (1.0, 20.0)
    seed: int = 0
    event_prefix: str = "E"
    truths: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        truths = {self.truth.im: self.truth} if isinstance(self.truth, PhysicalEquation) else dict(self.truth)
        if not truths or set(truths) - set(IMS):
            raise ValueError("truth must cover pga and/or pgv")
        object.__setattr__(self, "truths", truths)
        if self.tau < 0 or self.phi < 0:
            raise ValueError("tau and phi must be >= 0")
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        rpe = self.records_per_event
        lo, hi = (rpe, rpe) if isinstance(rpe, int) else rpe
        if not 1 <= lo <= hi:
            raise ValueError("records_per_event must be >= 1 (and lo <= hi)")
        for name in ("m_w_range", "r_jb_range", "v_s30_range", "z_1_0_range", "depth_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name}: lower bound above upper bound")
        for name in ("m_w_range", "r_jb_range", "v_s30_range", "z_1_0_range"):
            if getattr(self, name)[0] <= 0:
                raise ValueError(f"{name} must be positive")


def _log_uniform(rng, bounds, size):
    lo, hi = bounds
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def generate(spec: SynthSpec):
    """Draw records; ln Y = truth(covariates) + eta_i + eps_ij.

    When the truth covers only one intensity measure, the other column
    copies its values.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    rpe = spec.records_per_event
    fixed = isinstance(rpe, int)
    records = []
    width = max(4, len(str(spec.n_events - 1)))
    for i in range(spec.n_events):
        k = rpe if fixed else int(rng.integers(rpe[0], rpe[1] + 1))
        m_w = float(rng.uniform(*spec.m_w_range))
        depth = float(rng.uniform(*spec.depth_range))
        fm = int(rng.integers(1, 4))
        eta = {im: float(rng.normal(0.0, spec.tau)) for im in IMS}
        r_jb = _log_uniform(rng, spec.r_jb_range, k)
        v_s30 = _log_uniform(rng, spec.v_s30_range, k)
        z_1_0 = _log_uniform(rng, spec.z_1_0_range, k)
        eps = {im: rng.normal(0.0, spec.phi, k) for im in IMS}

        ln_y = {}
        for im, eq in spec.truths.items():
            ln_y[im] = predict(eq, np.full(k, m_w), r_jb, v_s30, np.full(k, fm), z_1_0) + eta[im] + eps[im]
        for im in IMS:
            ln_y.setdefault(im, next(iter(ln_y.values())))
        event_id = f"{spec.event_prefix}{i:0{width}d}"
        for j in range(k):
            records.append(GroundMotionRecord(
                event_id=event_id,
                station_id=f"{event_id}-S{j:03d}",
                m_w=m_w, r_jb=float(r_jb[j]), v_s30=float(v_s30[j]), fm=fm,
                z_1_0=float(z_1_0[j]), depth=depth,
                pga=float(math.exp(ln_y["pga"][j])), pgv=float(math.exp(ln_y["pgv"][j])),
            ))
    return records
