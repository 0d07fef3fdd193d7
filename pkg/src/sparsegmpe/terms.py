"""Symbolic candidate terms and their vectorized evaluation.

A term is one basis function of the earthquake scenario covariates.  Terms
are hashable so they can key coefficient maps, and every term has a
canonical text descriptor (``"ln(r_jb+10)"``, ``"m_w^2"``...) that
round-trips through :func:`parse_term`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import DomainError

CONST = "const"
LINEAR = "linear"
LOG = "log"
SQUARE = "square"
LOG_SHIFTED_DISTANCE = "log_shifted_distance"
MW_LOG_SHIFTED_DISTANCE = "mw_log_shifted_distance"

KINDS = (CONST, LINEAR, LOG, SQUARE, LOG_SHIFTED_DISTANCE, MW_LOG_SHIFTED_DISTANCE)

# ``v`` is V_S30 divided by the library's reference velocity.
VARIABLES = ("m_w", "r_jb", "v", "fm", "z_1_0")
DISTANCE_KINDS = (LOG_SHIFTED_DISTANCE, MW_LOG_SHIFTED_DISTANCE)

DEFAULT_V_S30_REFERENCE = 1500.0


@dataclass(frozen=True)
class TermSpec:
    kind: str
    var: Optional[str] = None
    shift: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind in (LINEAR, LOG, SQUARE):
            if self.var not in VARIABLES:
                raise ValueError(f"unknown variable {self.var!r}")
            if self.shift is not None:
                raise ValueError("only distance-saturation terms take a shift")
        elif self.kind in DISTANCE_KINDS:
            if self.var is not None:
                raise ValueError("distance-saturation terms have a fixed variable")
            if self.shift is None or not self.shift > 0:
                raise ValueError("distance shift must be > 0")
            object.__setattr__(self, "shift", float(self.shift))
        elif self.var is not None or self.shift is not None:
            raise ValueError("the constant term takes no arguments")

    @property
    def descriptor(self) -> str:
        if self.kind == CONST:
            return "1"
        if self.kind == LINEAR:
            return self.var
        if self.kind == LOG:
            return f"ln({self.var})"
        if self.kind == SQUARE:
            return f"{self.var}^2"
        inner = f"ln(r_jb+{self.shift:g})"
        if self.kind == LOG_SHIFTED_DISTANCE:
            return inner
        return f"m_w*{inner}"

    def __str__(self):
        return self.descriptor

    @property
    def uses(self) -> frozenset:
        """Covariates the term depends on."""
        if self.kind == CONST:
            return frozenset()
        if self.kind == LOG_SHIFTED_DISTANCE:
            return frozenset({"r_jb"})
        if self.kind == MW_LOG_SHIFTED_DISTANCE:
            return frozenset({"m_w", "r_jb"})
        return frozenset({self.var})


def Constant():
    return TermSpec(CONST)


def Linear(var):
    return TermSpec(LINEAR, var)


def Log(var):
    return TermSpec(LOG, var)


def Square(var):
    return TermSpec(SQUARE, var)


def LogShiftedDistance(shift=10.0):
    return TermSpec(LOG_SHIFTED_DISTANCE, shift=shift)


def MwTimesLogShiftedDistance(shift=10.0):
    return TermSpec(MW_LOG_SHIFTED_DISTANCE, shift=shift)


_VAR = "|".join(VARIABLES)
_NUM = r"[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?"
_PATTERNS = [
    (re.compile(r"^1$"), lambda m: Constant()),
    (re.compile(rf"^m_w\*ln\(r_jb\+({_NUM})\)$"), lambda m: MwTimesLogShiftedDistance(float(m[1]))),
    (re.compile(rf"^ln\(r_jb\+({_NUM})\)$"), lambda m: LogShiftedDistance(float(m[1]))),
    (re.compile(rf"^ln\(({_VAR})\)$"), lambda m: Log(m[1])),
    (re.compile(rf"^({_VAR})\^2$"), lambda m: Square(m[1])),
    (re.compile(rf"^({_VAR})$"), lambda m: Linear(m[1])),
]


def parse_term(text: str) -> TermSpec:
    """Inverse of :attr:`TermSpec.descriptor`; whitespace is ignored."""
    s = re.sub(r"\s+", "", text)
    for pattern, build in _PATTERNS:
        m = pattern.match(s)
        if m:
            return build(m)
    raise ValueError(f"cannot parse term descriptor {text!r}")


def covariate_arrays(m_w, r_jb, v_s30, fm=None, z_1_0=None, v_s30_reference=DEFAULT_V_S30_REFERENCE):
    """Bundle covariates into the dict consumed by :func:`term_values`."""
    cov = {
        "m_w": np.asarray(m_w, dtype=float),
        "r_jb": np.asarray(r_jb, dtype=float),
        "v": np.asarray(v_s30, dtype=float) / float(v_s30_reference),
    }
    if fm is not None:
        cov["fm"] = np.asarray(fm, dtype=float)
    if z_1_0 is not None:
        cov["z_1_0"] = np.asarray(z_1_0, dtype=float)
    return cov


def term_values(term: TermSpec, cov: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate ``term`` elementwise on physical (unnormalized) covariates.

    Raises DomainError when a logarithm argument is not strictly positive;
    the error carries ``bad_index``, the flat index of the first offender.
    """
    missing = term.uses - cov.keys()
    if missing:
        raise DomainError(f"term {term} needs covariate(s) {sorted(missing)}")
    if term.kind == CONST:
        shape = np.broadcast(*cov.values()).shape if cov else ()
        return np.ones(shape)
    if term.kind == LINEAR:
        return np.asarray(cov[term.var], dtype=float)
    if term.kind == SQUARE:
        x = np.asarray(cov[term.var], dtype=float)
        return x * x
    if term.kind == LOG:
        return _safe_log(np.asarray(cov[term.var], dtype=float), term)
    lnr = _safe_log(np.asarray(cov["r_jb"], dtype=float) + term.shift, term)
    if term.kind == LOG_SHIFTED_DISTANCE:
        return lnr
    return np.asarray(cov["m_w"], dtype=float) * lnr


def _safe_log(x, term):
    bad = ~(x > 0)
    if np.any(bad):
        idx = int(np.flatnonzero(np.ravel(bad))[0])
        err = DomainError(f"non-positive argument to {term}: {np.ravel(x)[idx]!r}")
        err.bad_index = idx
        raise err
    return np.log(x)
