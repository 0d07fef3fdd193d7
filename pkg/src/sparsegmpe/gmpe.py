"""Physical-variable prediction equations: evaluation, curves, near-field slope.

Equations predict ln(PGA) or ln(PGV) as a linear combination of
:mod:`~sparsegmpe.terms` evaluated on physical covariates.  Every V_S30 term
is evaluated on the scaled velocity ``v = V_S30 / v_s30_reference``
(1500 m/s for the builtin fixtures).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from . import terms as T
from .errors import DomainError

IMS = ("pga", "pgv")

# Display order: linear, log, square, then distance saturation.
_KIND_RANK = {T.CONST: 0, T.LINEAR: 1, T.LOG: 2, T.SQUARE: 3,
              T.LOG_SHIFTED_DISTANCE: 4, T.MW_LOG_SHIFTED_DISTANCE: 5}
_VAR_RANK = {v: i for i, v in enumerate(T.VARIABLES)}
_DISPLAY = {"m_w": "M_w", "r_jb": "R_JB", "v": "v", "fm": "FM", "z_1_0": "Z_1.0"}


def display_order(term: T.TermSpec):
    return (_KIND_RANK[term.kind], _VAR_RANK.get(term.var, -1), term.shift or 0.0)


@dataclass(frozen=True)
class PhysicalEquation:
    coefficients: Mapping[T.TermSpec, float]
    constant: float = 0.0
    im: str = "pga"
    v_s30_reference: float = T.DEFAULT_V_S30_REFERENCE
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.im not in IMS:
            raise ValueError(f"unknown intensity measure {self.im!r}")
        coeffs = {}
        for term, c in self.coefficients.items():
            if not isinstance(term, T.TermSpec):
                term = T.parse_term(term)
            if term.kind == T.CONST:
                raise ValueError("put the intercept in `constant`, not the coefficient map")
            coeffs[term] = float(c)
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def terms(self):
        return list(self.coefficients)

    @property
    def n_terms(self) -> int:
        """Number of non-zero terms, the intercept included when non-zero."""
        n = sum(1 for c in self.coefficients.values() if c != 0.0)
        return n + (self.constant != 0.0)

    def uses(self, var: str) -> bool:
        return any(var in t.uses and c != 0.0 for t, c in self.coefficients.items())

    def coefficient(self, term) -> float:
        if isinstance(term, str):
            term = T.parse_term(term)
        if term.kind == T.CONST:
            return self.constant
        return self.coefficients.get(term, 0.0)

    def to_dict(self) -> dict:
        ordered = sorted(self.coefficients, key=display_order)
        return {
            "im": self.im,
            "constant": self.constant,
            "v_s30_reference": self.v_s30_reference,
            "coefficients": {t.descriptor: self.coefficients[t] for t in ordered},
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PhysicalEquation":
        return cls(
            coefficients={T.parse_term(k): v for k, v in d["coefficients"].items()},
            constant=d.get("constant", 0.0),
            im=d.get("im", "pga"),
            v_s30_reference=d.get("v_s30_reference", T.DEFAULT_V_S30_REFERENCE),
            provenance=d.get("provenance", {}),
        )

    def equation_text(self, digits: int = 3) -> str:
        """Render e.g. ``ln(PGA) = 16.101M_w - 0.005R_JB - ...``."""
        parts = []
        if self.constant != 0.0:
            parts.append((self.constant, ""))
        for t in sorted(self.coefficients, key=display_order):
            c = self.coefficients[t]
            if c != 0.0:
                parts.append((c, _display_term(t)))
        lhs = f"ln({self.im.upper()})"
        if not parts:
            return f"{lhs} = 0"
        out = []
        for i, (c, name) in enumerate(parts):
            mag = f"{abs(c):.{digits}f}{name}"
            if i == 0:
                out.append(f"-{mag}" if c < 0 else mag)
            else:
                out.append(f"{'-' if c < 0 else '+'} {mag}")
        text = f"{lhs} = " + " ".join(out)
        if self.uses("v"):
            text += f"   [v = V_S30/{self.v_s30_reference:g}]"
        return text


def _display_term(t: T.TermSpec) -> str:
    if t.kind == T.LINEAR:
        return _DISPLAY[t.var]
    if t.kind == T.LOG:
        return f"ln({_DISPLAY[t.var]})"
    if t.kind == T.SQUARE:
        return f"{_DISPLAY[t.var]}^2"
    inner = f"ln(R_JB + {t.shift:g})"
    return inner if t.kind == T.LOG_SHIFTED_DISTANCE else f"M_w {inner}"


def load_equation(path) -> PhysicalEquation:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    # Fitted-model JSON nests the equation under "physical".
    return PhysicalEquation.from_dict(d.get("physical", d))


def builtin_models():
    """The published sparse PGA and PGV equations, as shipped fixtures.

    Returns
    -------
    (PhysicalEquation, PhysicalEquation)
        PGA model (7 terms) and PGV model (9 terms).  No intercept, no FM
        and no Z_1.0 dependence.
    """
    out = []
    for im in IMS:
        text = resources.files("sparsegmpe.data").joinpath(f"builtin_{im}.json").read_text("utf-8")
        out.append(PhysicalEquation.from_dict(json.loads(text)))
    return tuple(out)


def builtin_model(im: str) -> PhysicalEquation:
    return builtin_models()[IMS.index(im)]


def predict(eq: PhysicalEquation, m_w, r_jb, v_s30, fm=None, z_1_0=None):
    """ln-intensity predicted by ``eq``; arguments broadcast like numpy.

    ``fm`` and ``z_1_0`` are only needed when the equation uses them.
    Raises DomainError for M_w <= 0, R_JB < 0 or V_S30 <= 0.
    """
    m_w = np.asarray(m_w, dtype=float)
    r_jb = np.asarray(r_jb, dtype=float)
    v_s30 = np.asarray(v_s30, dtype=float)
    if not np.all(np.isfinite(m_w) & (m_w > 0)):
        raise DomainError("m_w must be finite and > 0")
    if not np.all(np.isfinite(r_jb) & (r_jb >= 0)):
        raise DomainError("r_jb must be finite and >= 0")
    if not np.all(np.isfinite(v_s30) & (v_s30 > 0)):
        raise DomainError("v_s30 must be finite and > 0")
    cov = T.covariate_arrays(m_w, r_jb, v_s30, fm, z_1_0, eq.v_s30_reference)
    shape = np.broadcast(*cov.values()).shape
    total = np.full(shape, eq.constant)
    for term, c in eq.coefficients.items():
        if c != 0.0:
            total = total + c * T.term_values(term, cov)
    return total if total.ndim else float(total)


@dataclass(frozen=True)
class ScenarioGrid:
    m_w: Sequence[float]
    v_s30: Sequence[float]
    r_jb: Sequence[float]
    fm: Optional[int] = 1
    z_1_0: Optional[float] = None

    def __post_init__(self):
        for name in ("m_w", "v_s30", "r_jb"):
            vals = tuple(float(x) for x in getattr(self, name))
            if not vals:
                raise ValueError(f"scenario grid {name} is empty")
            object.__setattr__(self, name, vals)
        if min(self.r_jb) <= 0:
            raise ValueError("scenario r_jb values must be > 0")


def log_grid(lo: float, hi: float, n: int):
    return tuple(float(x) for x in np.geomspace(lo, hi, n))


class CurveRow(NamedTuple):
    m_w: float
    v_s30: float
    r_jb: float
    ln_y: float


def attenuation_curves(eq: PhysicalEquation, grid: ScenarioGrid):
    """Predictions over the grid; m_w outermost, then v_s30, then r_jb."""
    rows = []
    r = np.asarray(grid.r_jb)
    for m in grid.m_w:
        for v in grid.v_s30:
            try:
                ln_y = predict(eq, m, r, v, grid.fm, grid.z_1_0)
            except DomainError as exc:
                raise DomainError(f"at m_w={m}, v_s30={v}: {exc}") from exc
            rows.extend(CurveRow(m, v, float(rr), float(y)) for rr, y in zip(r, np.atleast_1d(ln_y)))
    return rows


_ANALYTIC_DISTANCE_KINDS = (T.LOG_SHIFTED_DISTANCE, T.MW_LOG_SHIFTED_DISTANCE)


def _has_analytic_distance_derivative(eq):
    for t, c in eq.coefficients.items():
        if c == 0.0 or "r_jb" not in t.uses:
            continue
        if t.kind in _ANALYTIC_DISTANCE_KINDS or t == T.Linear("r_jb"):
            continue
        return False
    return True


def distance_derivative(eq: PhysicalEquation, m_w, r_jb):
    """Analytic d ln(Y) / d R_JB for equations with saturation-type distance terms."""
    if not _has_analytic_distance_derivative(eq):
        raise DomainError("equation has distance terms without an analytic derivative")
    r = np.asarray(r_jb, dtype=float)
    d = np.zeros_like(r)
    for t, c in eq.coefficients.items():
        if t == T.Linear("r_jb"):
            d = d + c
        elif t.kind == T.LOG_SHIFTED_DISTANCE:
            d = d + c / (r + t.shift)
        elif t.kind == T.MW_LOG_SHIFTED_DISTANCE:
            d = d + c * m_w / (r + t.shift)
    return d


def near_field_slope(eq: PhysicalEquation, m_w: float, v_s30: float, fm=None, z_1_0=None,
                     r_max: float = 5.0, method: str = "auto", step: float = 1e-4):
    """Largest |d ln(Y)/d R_JB| over R_JB in [0, r_max] km.

    ``method`` is ``"analytic"``, ``"fd"`` (central differences with the given
    step, one-sided at R_JB = 0) or ``"auto"``, which uses the analytic path
    whenever every distance term is R_JB, ln(R_JB+s) or M_w ln(R_JB+s).
    """
    if method not in ("auto", "analytic", "fd"):
        raise ValueError(f"unknown method {method!r}")
    if not eq.uses("r_jb"):
        return 0.0
    r = np.linspace(0.0, r_max, 5001)
    if method == "analytic" or (method == "auto" and _has_analytic_distance_derivative(eq)):
        return float(np.max(np.abs(distance_derivative(eq, m_w, r))))

    def f(x):
        return np.asarray(predict(eq, m_w, x, v_s30, fm, z_1_0))

    h = step
    d = np.empty_like(r)
    inner = r >= h
    d[inner] = (f(r[inner] + h) - f(r[inner] - h)) / (2 * h)
    edge = r[~inner]
    d[~inner] = (-3 * f(edge) + 4 * f(edge + h) - f(edge + 2 * h)) / (2 * h)
    return float(np.max(np.abs(d)))


def saturation_slope_bound(eq: PhysicalEquation, m_w: float) -> float:
    """Upper bound on |d ln(Y)/d R_JB| at any R_JB >= 0 for saturation-type
    distance terms: |c_R| + sum over shifts s of (|c_ln| + |c_Mln| M_w) / s."""
    if not _has_analytic_distance_derivative(eq):
        raise DomainError("bound only defined for saturation-type distance terms")
    bound = 0.0
    for t, c in eq.coefficients.items():
        if t == T.Linear("r_jb"):
            bound += abs(c)
        elif t.kind == T.LOG_SHIFTED_DISTANCE:
            bound += abs(c) / t.shift
        elif t.kind == T.MW_LOG_SHIFTED_DISTANCE:
            bound += abs(c) * abs(m_w) / t.shift
    return bound


# Name used by callers that follow the method's own terminology.
builtin_pisl_models = builtin_models
