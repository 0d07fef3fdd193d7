"""Candidate-function library and the normalized design matrix.

Terms are evaluated on physical covariates first and the resulting columns
are normalized afterwards, so logarithms never see a rescaled input.  The
target ln(Y) is left on its natural scale, which keeps the mapping from
normalized coefficients back to physical ones linear.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import terms as T
from .errors import DegenerateColumnError, DomainError
from .gmpe import PhysicalEquation

MAXABS = "maxabs"
MINMAX = "minmax"
ZSCORE = "zscore"
NONE = "none"
NORM_MODES = (MAXABS, MINMAX, ZSCORE, NONE)
DEFAULT_NORM_MODE = MAXABS


@dataclass(frozen=True)
class TermLibrary:
    terms: tuple
    v_s30_reference: float = T.DEFAULT_V_S30_REFERENCE

    def __post_init__(self):
        terms = tuple(t if isinstance(t, T.TermSpec) else T.parse_term(t) for t in self.terms)
        if len(set(terms)) != len(terms):
            raise ValueError("duplicate terms in library")
        if not terms:
            raise ValueError("empty library")
        if not self.v_s30_reference > 0:
            raise ValueError("v_s30_reference must be > 0")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "v_s30_reference", float(self.v_s30_reference))

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def descriptors(self):
        return [t.descriptor for t in self.terms]

    def index(self, term) -> int:
        if isinstance(term, str):
            term = T.parse_term(term)
        return self.terms.index(term)

    def extended(self, extra) -> "TermLibrary":
        extra = [t if isinstance(t, T.TermSpec) else T.parse_term(t) for t in extra]
        return TermLibrary(self.terms + tuple(t for t in extra if t not in self.terms),
                           self.v_s30_reference)


def default_library(distance_shift: float = 10.0,
                    v_s30_reference: float = T.DEFAULT_V_S30_REFERENCE) -> TermLibrary:
    """12 candidate terms: 1, M_w, M_w^2, ln(M_w), R_JB, v, v^2, ln(v), FM,
    Z_1.0, ln(R_JB+10), M_w ln(R_JB+10), with v = V_S30/1500."""
    return TermLibrary((
        T.Constant(),
        T.Linear("m_w"), T.Square("m_w"), T.Log("m_w"),
        T.Linear("r_jb"),
        T.Linear("v"), T.Square("v"), T.Log("v"),
        T.Linear("fm"),
        T.Linear("z_1_0"),
        T.LogShiftedDistance(distance_shift),
        T.MwTimesLogShiftedDistance(distance_shift),
    ), v_s30_reference)


def record_covariates(records, v_s30_reference=T.DEFAULT_V_S30_REFERENCE):
    return T.covariate_arrays(
        [r.m_w for r in records], [r.r_jb for r in records], [r.v_s30 for r in records],
        [r.fm for r in records], [r.z_1_0 for r in records], v_s30_reference)


def evaluate_term(term: T.TermSpec, record, v_s30_reference=T.DEFAULT_V_S30_REFERENCE) -> float:
    try:
        return float(T.term_values(term, record_covariates([record], v_s30_reference))[0])
    except DomainError as exc:
        raise DomainError(f"record {record.record_id}: {exc}") from exc


def evaluate_library(library: TermLibrary, records) -> np.ndarray:
    """Raw (unnormalized) m x n matrix of term values."""
    cov = record_covariates(records, library.v_s30_reference)
    cols = []
    for term in library:
        try:
            cols.append(T.term_values(term, cov))
        except DomainError as exc:
            idx = getattr(exc, "bad_index", None)
            where = f"record {records[idx].record_id}: " if idx is not None else ""
            raise DomainError(f"{where}{exc}") from exc
    return np.column_stack(cols)


@dataclass(frozen=True)
class NormalizationSpec:
    """Column j is stored as (raw_j - shift_j) / scale_j."""
    mode: str
    shift: np.ndarray
    scale: np.ndarray

    def apply(self, raw):
        return (np.asarray(raw, dtype=float) - self.shift) / self.scale


def fit_normalization(raw: np.ndarray, library: TermLibrary, mode: str = DEFAULT_NORM_MODE):
    if mode not in NORM_MODES:
        raise ValueError(f"unknown normalization mode {mode!r}")
    n = raw.shape[1]
    shift = np.zeros(n)
    scale = np.ones(n)
    if mode == NONE:
        return NormalizationSpec(mode, shift, scale)
    for j, term in enumerate(library):
        if term.kind == T.CONST:
            continue
        col = raw[:, j]
        lo, hi = col.min(), col.max()
        # A constant column is indistinguishable from the intercept.
        if not hi > lo:
            raise DegenerateColumnError(term)
        if mode == MINMAX:
            shift[j], scale[j] = lo, hi - lo
        elif mode == ZSCORE:
            sd = col.std()
            if not sd > 0:
                raise DegenerateColumnError(term)
            shift[j], scale[j] = col.mean(), sd
        else:
            scale[j] = max(abs(lo), abs(hi))
    return NormalizationSpec(mode, shift, scale)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    theta: np.ndarray
    y: np.ndarray
    norm: NormalizationSpec
    library: TermLibrary
    im: str
    raw: np.ndarray

    @property
    def shape(self):
        return self.theta.shape

    def data_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.raw).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update("|".join(self.library.descriptors).encode())
        return h.hexdigest()[:16]

    def columns(self, idx) -> "DesignMatrix":
        """Sub-matrix restricted to the given column indices."""
        idx = list(idx)
        return DesignMatrix(
            self.theta[:, idx], self.y,
            NormalizationSpec(self.norm.mode, self.norm.shift[idx], self.norm.scale[idx]),
            TermLibrary(tuple(self.library.terms[i] for i in idx), self.library.v_s30_reference),
            self.im, self.raw[:, idx])


def build_design_matrix(records: Sequence, library: TermLibrary, im: str = "pga",
                        norm_mode: str = DEFAULT_NORM_MODE) -> DesignMatrix:
    """Evaluate the library on ``records`` and normalize the columns.

    Parameters
    ----------
    records : sequence of GroundMotionRecord
    library : TermLibrary
    im : {"pga", "pgv"}
        Target column; ``y = ln(record.im)``.
    norm_mode : {"maxabs", "minmax", "zscore", "none"}
        ``maxabs`` divides by max |column| without shifting, ``minmax`` maps
        to [0, 1], ``zscore`` centers and scales by the SD.  The constant
        column is never touched.
    """
    records = list(records)
    if not records:
        raise DomainError("no records")
    if im not in ("pga", "pgv"):
        raise ValueError(f"unknown intensity measure {im!r}")
    target = np.array([r.im(im) for r in records], dtype=float)
    bad = ~(np.isfinite(target) & (target > 0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"record {records[i].record_id}: {im} must be > 0")
    raw = evaluate_library(library, records)
    if not np.all(np.isfinite(raw)):
        i = int(np.flatnonzero(~np.isfinite(raw).all(axis=1))[0])
        raise DomainError(f"record {records[i].record_id}: non-finite term value")
    norm = fit_normalization(raw, library, norm_mode)
    theta = norm.apply(raw)
    for a in (theta, raw, target):
        a.setflags(write=False)
    y = np.log(target)
    y.setflags(write=False)
    return DesignMatrix(theta, y, norm, library, im, raw)


def denormalize_coefficients(xi_normalized, matrix: DesignMatrix, provenance=None) -> PhysicalEquation:
    """Map coefficients on normalized columns to physical-variable ones.

    With column j stored as (raw_j - a_j)/s_j, the physical coefficient is
    xi_j / s_j and the intercept collects xi_const - sum_j xi_j a_j / s_j.
    Terms whose normalized coefficient is zero stay exactly zero and are
    left out of the returned map.
    """
    xi = np.asarray(xi_normalized, dtype=float)
    if xi.shape != (len(matrix.library),):
        raise ValueError(f"expected {len(matrix.library)} coefficients, got {xi.shape}")
    coeffs = {}
    constant = 0.0
    for j, term in enumerate(matrix.library):
        if xi[j] == 0.0:
            continue
        if term.kind == T.CONST:
            constant += xi[j]
            continue
        c = xi[j] / matrix.norm.scale[j]
        coeffs[term] = c
        constant -= c * matrix.norm.shift[j]
    return PhysicalEquation(coeffs, constant, matrix.im, matrix.library.v_s30_reference,
                            dict(provenance or {}))
