"""INI-style run configuration.

Every section is optional; missing keys take the defaults below.  Numeric
lists are comma separated; grids may also be written ``logspace(lo, hi, n)``
or ``linspace(lo, hi, n)``; intervals are ``lo, hi`` with ``inf`` allowed.

    [flatfile]      missing_tokens, pga_scale, pgv_scale, required
    [columns]       <field> = <csv header>
    [fm_map]        <raw value> = <1|2|3>
    [filter]        m_w_range, r_jb_range, v_s30_range, depth_range,
                    min_records_per_event, require_fields
    [library]       terms (``default`` or descriptors), extra_terms,
                    distance_shift, v_s30_reference, normalization
    [solver]        lambda, max_iterations, final_refit_unregularized,
                    delta_grid, delta, workers
    [curves]        m_w, v_s30, r_jb, fm, z_1_0
    [extrapolate]   split_r_jb, m_w, v_s30, r_jb, fm, z_1_0
    [residuals]     r_jb_bins, m_w_bins, v_s30_bins
    [synth]         n_events, records_per_event, tau, phi, m_w_range,
                    r_jb_range, v_s30_range, z_1_0_range, depth_range
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import library as L
from .errors import ConfigError
from .flatfile import DEFAULT_COLUMN_MAP, DEFAULT_MISSING_TOKENS, FIELDS, FilterCriteria
from .stridge import DEFAULT_LAMBDA, DEFAULT_MAX_ITERATIONS, default_delta_grid
from .terms import DEFAULT_V_S30_REFERENCE, parse_term

SECTIONS = ("flatfile", "columns", "fm_map", "filter", "library", "solver",
            "curves", "extrapolate", "residuals", "synth")

_GRID = re.compile(r"^\s*(logspace|linspace)\(\s*([^,]+),\s*([^,]+),\s*([^,)]+)\)\s*$")


def parse_float(text: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_floats(text: str):
    m = _GRID.match(text)
    if m:
        kind, lo, hi, n = m.groups()
        lo, hi, n = parse_float(lo), parse_float(hi), int(parse_float(n))
        if n < 1:
            raise ConfigError(f"grid needs at least one point: {text!r}")
        xs = np.geomspace(lo, hi, n) if kind == "logspace" else np.linspace(lo, hi, n)
        return tuple(float(x) for x in xs)
    items = [t for t in text.split(",") if t.strip()]
    return tuple(parse_float(t) for t in items)


def parse_interval(text: str):
    vals = parse_floats(text)
    if len(vals) != 2:
        raise ConfigError(f"interval needs two values: {text!r}")
    return vals


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_names(text: str):
    return tuple(t.strip() for t in text.split(",") if t.strip())


@dataclass
class GridConfig:
    m_w: tuple
    v_s30: tuple
    r_jb: tuple
    fm: Optional[int] = 1
    z_1_0: Optional[float] = None


@dataclass
class RunConfig:
    column_map: dict = field(default_factory=lambda: dict(DEFAULT_COLUMN_MAP))
    missing_tokens: tuple = DEFAULT_MISSING_TOKENS
    fm_map: dict = field(default_factory=dict)
    pga_scale: float = 1.0
    pgv_scale: float = 1.0
    parse_required: tuple = FIELDS
    criteria: FilterCriteria = field(default_factory=FilterCriteria)

    terms: tuple = ()
    v_s30_reference: float = DEFAULT_V_S30_REFERENCE
    normalization: str = L.DEFAULT_NORM_MODE

    lam: float = DEFAULT_LAMBDA
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    final_refit_unregularized: bool = True
    delta_grid: tuple = field(default_factory=default_delta_grid)
    delta: Optional[float] = None
    workers: int = 1

    curves: GridConfig = field(default_factory=lambda: GridConfig(
        (4.0, 5.0, 6.0, 7.0), (200.0, 560.0, 760.0),
        tuple(float(x) for x in np.geomspace(1.0, 300.0, 60))))
    split_r_jb: float = 30.0
    near_field: GridConfig = field(default_factory=lambda: GridConfig(
        (4.0, 5.0, 6.0, 7.0), (760.0,),
        tuple(float(x) for x in np.linspace(0.5, 29.5, 59))))

    r_jb_bins: Optional[tuple] = None
    m_w_bins: Optional[tuple] = None
    v_s30_bins: Optional[tuple] = None

    synth: dict = field(default_factory=lambda: {
        "n_events": 500, "records_per_event": 10, "tau": 0.0, "phi": 0.1,
        "m_w_range": (3.0, 7.6), "r_jb_range": (1.0, 400.0), "v_s30_range": (90.0, 1464.0),
        "z_1_0_range": (1.0, 3520.0), "depth_range": (1.0, 20.0)})

    def __post_init__(self):
        if not self.terms:
            self.terms = tuple(L.default_library().descriptors)

    def library(self) -> L.TermLibrary:
        return L.TermLibrary(tuple(parse_term(t) for t in self.terms), self.v_s30_reference)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["criteria"] = {k: (sorted(v) if isinstance(v, frozenset) else v)
                         for k, v in asdict(self.criteria).items()}
        return d

    def digest(self, **extra) -> str:
        payload = {"config": self.to_dict(), **extra}
        text = json.dumps(payload, sort_keys=True, default=_jsonable)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    if isinstance(x, float) and math.isinf(x):
        return str(x)
    return str(x)


def load_config(path=None) -> RunConfig:
    """Read an INI file; ``None`` gives the defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    try:
        _apply(cfg, parser)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def _section(parser, name):
    return dict(parser[name]) if parser.has_section(name) else {}


def _reject_unknown(name, sec, allowed):
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"[{name}] unknown key(s): {sorted(extra)}")


def _apply(cfg: RunConfig, parser):
    sec = _section(parser, "flatfile")
    _reject_unknown("flatfile", sec, ("missing_tokens", "pga_scale", "pgv_scale", "required"))
    if "missing_tokens" in sec:
        cfg.missing_tokens = tuple(t.strip() for t in sec["missing_tokens"].split(","))
    cfg.pga_scale = parse_float(sec.get("pga_scale", "1"))
    cfg.pgv_scale = parse_float(sec.get("pgv_scale", "1"))
    if "required" in sec:
        cfg.parse_required = parse_names(sec["required"])

    sec = _section(parser, "columns")
    _reject_unknown("columns", sec, FIELDS)
    cfg.column_map.update({k: v.strip() for k, v in sec.items()})

    sec = _section(parser, "fm_map")
    cfg.fm_map = {k.strip(): int(parse_float(v)) for k, v in sec.items()}

    sec = _section(parser, "filter")
    _reject_unknown("filter", sec, ("m_w_range", "r_jb_range", "v_s30_range", "depth_range",
                                    "min_records_per_event", "require_fields"))
    kw = {k: parse_interval(sec[k]) for k in ("m_w_range", "r_jb_range", "v_s30_range", "depth_range")
          if k in sec}
    if "min_records_per_event" in sec:
        kw["min_records_per_event"] = int(parse_float(sec["min_records_per_event"]))
    if "require_fields" in sec:
        kw["require_fields"] = frozenset(parse_names(sec["require_fields"]))
    cfg.criteria = FilterCriteria(**kw)

    sec = _section(parser, "library")
    _reject_unknown("library", sec, ("terms", "extra_terms", "distance_shift", "v_s30_reference",
                                     "normalization"))
    shift = parse_float(sec.get("distance_shift", "10"))
    cfg.v_s30_reference = parse_float(sec.get("v_s30_reference", str(DEFAULT_V_S30_REFERENCE)))
    terms_text = sec.get("terms", "default").strip()
    if terms_text == "default":
        lib = L.default_library(shift, cfg.v_s30_reference)
    else:
        lib = L.TermLibrary(tuple(parse_term(t) for t in _split_terms(terms_text)), cfg.v_s30_reference)
    if "extra_terms" in sec:
        lib = lib.extended([parse_term(t) for t in _split_terms(sec["extra_terms"])])
    cfg.terms = tuple(lib.descriptors)
    cfg.normalization = sec.get("normalization", cfg.normalization).strip().lower()
    if cfg.normalization not in L.NORM_MODES:
        raise ConfigError(f"normalization must be one of {L.NORM_MODES}")

    sec = _section(parser, "solver")
    _reject_unknown("solver", sec, ("lambda", "max_iterations", "final_refit_unregularized",
                                    "delta_grid", "delta", "workers"))
    cfg.lam = parse_float(sec.get("lambda", repr(DEFAULT_LAMBDA)))
    cfg.max_iterations = int(parse_float(sec.get("max_iterations", str(DEFAULT_MAX_ITERATIONS))))
    cfg.final_refit_unregularized = parse_bool(sec.get("final_refit_unregularized", "true"))
    if "delta_grid" in sec:
        cfg.delta_grid = parse_floats(sec["delta_grid"])
    if "delta" in sec:
        cfg.delta = parse_float(sec["delta"])
    cfg.workers = int(parse_float(sec.get("workers", "1")))

    for name, target in (("curves", "curves"), ("extrapolate", "near_field")):
        sec = _section(parser, name)
        allowed = ("m_w", "v_s30", "r_jb", "fm", "z_1_0") + (("split_r_jb",) if name == "extrapolate" else ())
        _reject_unknown(name, sec, allowed)
        grid = getattr(cfg, target)
        for key in ("m_w", "v_s30", "r_jb"):
            if key in sec:
                setattr(grid, key, parse_floats(sec[key]))
        if "fm" in sec:
            grid.fm = int(parse_float(sec["fm"]))
        if "z_1_0" in sec:
            grid.z_1_0 = parse_float(sec["z_1_0"])
        if "split_r_jb" in sec:
            cfg.split_r_jb = parse_float(sec["split_r_jb"])

    sec = _section(parser, "residuals")
    _reject_unknown("residuals", sec, ("r_jb_bins", "m_w_bins", "v_s30_bins"))
    for key in ("r_jb_bins", "m_w_bins", "v_s30_bins"):
        if key in sec:
            setattr(cfg, key, parse_floats(sec[key]))

    sec = _section(parser, "synth")
    _reject_unknown("synth", sec, tuple(cfg.synth))
    for key, text in sec.items():
        if key == "n_events":
            cfg.synth[key] = int(parse_float(text))
        elif key == "records_per_event":
            vals = parse_floats(text)
            cfg.synth[key] = int(vals[0]) if len(vals) == 1 else (int(vals[0]), int(vals[1]))
        elif key in ("tau", "phi"):
            cfg.synth[key] = parse_float(text)
        else:
            cfg.synth[key] = parse_interval(text)


def _split_terms(text):
    # Descriptors contain no commas, so a plain split is safe.
    return [t.strip() for t in text.split(",") if t.strip()]
