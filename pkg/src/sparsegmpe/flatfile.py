"""Flatfile ingestion and record selection.

Reads flat CSV tables of processed strong-motion records, maps their
columns onto :class:`GroundMotionRecord` fields and applies selection rules
(required metadata, source-depth window, minimum records per event).
Distances, velocities and intensity measures are taken as given; nothing is
recomputed from coordinates.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import ConfigError, FlatfileParseError

ID_FIELDS = ("event_id", "station_id")
NUMERIC_FIELDS = ("m_w", "r_jb", "v_s30", "fm", "z_1_0", "depth", "pga", "pgv")
FIELDS = ID_FIELDS + NUMERIC_FIELDS
COVARIATES = ("m_w", "r_jb", "v_s30", "fm", "z_1_0", "depth", "pga", "pgv")
POSITIVE_FIELDS = ("m_w", "r_jb", "v_s30", "pga", "pgv")

FM_CODES = {1: "strike-slip", 2: "normal-slip", 3: "reverse-slip"}

DEFAULT_COLUMN_MAP = {f: f for f in FIELDS}
DEFAULT_MISSING_TOKENS = ("", "nan", "-999")

INF = math.inf


@dataclass(frozen=True)
class GroundMotionRecord:
    event_id: str
    station_id: str
    m_w: float
    r_jb: float
    v_s30: float
    fm: int
    z_1_0: float
    depth: float
    pga: float
    pgv: float

    @property
    def record_id(self) -> str:
        return f"{self.event_id}/{self.station_id}"

    def im(self, name: str) -> float:
        if name not in ("pga", "pgv"):
            raise ValueError(f"unknown intensity measure {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class FilterCriteria:
    m_w_range: tuple = (-INF, INF)
    r_jb_range: tuple = (-INF, INF)
    v_s30_range: tuple = (-INF, INF)
    depth_range: tuple = (1.0, 20.0)
    min_records_per_event: int = 5
    require_fields: frozenset = frozenset({"m_w", "fm", "r_jb", "v_s30", "z_1_0"})

    def __post_init__(self):
        for name in ("m_w_range", "r_jb_range", "v_s30_range", "depth_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if int(self.min_records_per_event) < 1:
            raise ConfigError("min_records_per_event must be >= 1")
        unknown = set(self.require_fields) - set(FIELDS)
        if unknown:
            raise ConfigError(f"require_fields: unknown field(s) {sorted(unknown)}")
        object.__setattr__(self, "require_fields", frozenset(self.require_fields))

    @classmethod
    def unrestricted(cls):
        """Criteria that keep every well-formed record."""
        return cls(depth_range=(-INF, INF), min_records_per_event=1, require_fields=frozenset())


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_dropped_by_rule: dict = field(default_factory=dict)
    n_records: int = 0
    n_events: int = 0
    n_stations: int = 0
    ranges: dict = field(default_factory=dict)

    @property
    def rows_dropped(self) -> int:
        return sum(self.rows_dropped_by_rule.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows_dropped_by_rule"] = dict(sorted(self.rows_dropped_by_rule.items()))
        d["ranges"] = {k: list(v) for k, v in self.ranges.items()}
        return d


def summarize(records: Iterable[GroundMotionRecord]) -> IngestReport:
    """Counts and observed min/max of every covariate."""
    records = list(records)
    ranges = {}
    for name in COVARIATES:
        vals = [getattr(r, name) for r in records]
        vals = [v for v in vals if not math.isnan(v)]
        if vals:
            ranges[name] = (min(vals), max(vals))
    return IngestReport(
        rows_read=len(records),
        n_records=len(records),
        n_events=len({r.event_id for r in records}),
        n_stations=len({r.station_id for r in records}),
        ranges=ranges,
    )


def combine_reports(parse_report: IngestReport, filter_report: IngestReport) -> IngestReport:
    """Chain a parse report and the report of filtering its output."""
    dropped = Counter(parse_report.rows_dropped_by_rule)
    dropped.update(filter_report.rows_dropped_by_rule)
    out = IngestReport(**{**asdict(filter_report), "rows_dropped_by_rule": dict(dropped)})
    out.rows_read = parse_report.rows_read
    return out


def _open_text(source):
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig"))
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8-sig", newline="")


def _uncommented(lines):
    for line in lines:
        if not line.lstrip().startswith("#"):
            yield line


def parse_flatfile(
    source,
    column_map: Optional[Mapping[str, str]] = None,
    *,
    missing_tokens=DEFAULT_MISSING_TOKENS,
    fm_map: Optional[Mapping[str, int]] = None,
    pga_scale: float = 1.0,
    pgv_scale: float = 1.0,
    required: Optional[Iterable[str]] = None,
):
    """Parse a flatfile CSV into records.

    Parameters
    ----------
    source : binary stream, text stream or bytes
        CSV with a header row.  Lines starting with ``#`` are skipped.
    column_map : mapping, optional
        Record field -> CSV header.  Defaults to the canonical field names.
    missing_tokens : iterable of str
        Cell values treated as missing (case-insensitive).  Tokens that look
        numeric also match numerically, so ``-999`` catches ``-999.0``.
    fm_map : mapping, optional
        Raw fault-mechanism cell value -> code in {1, 2, 3}.
    pga_scale, pgv_scale : float
        Multiplicative unit conversion applied to the intensity measures.
    required : iterable of str, optional
        Fields whose absence drops the row.  Defaults to every field; other
        missing numeric fields are stored as NaN.

    Returns
    -------
    (list of GroundMotionRecord, IngestReport)
        Records carry raw, unfiltered values.
    """
    column_map = dict(DEFAULT_COLUMN_MAP if column_map is None else column_map)
    missing_fields = [f for f in FIELDS if f not in column_map]
    if missing_fields:
        raise ConfigError(f"column map lacks field(s) {missing_fields}")
    required = set(FIELDS if required is None else required)
    tokens = {t.strip().lower() for t in missing_tokens}
    numeric_tokens = set()
    for t in tokens:
        try:
            numeric_tokens.add(float(t))
        except ValueError:
            pass
    numeric_tokens = {t for t in numeric_tokens if not math.isnan(t)}
    fm_lookup = {str(k).strip(): int(v) for k, v in (fm_map or {}).items()}

    def is_missing(cell):
        c = cell.strip()
        if c.lower() in tokens:
            return True
        if numeric_tokens:
            try:
                return float(c) in numeric_tokens
            except ValueError:
                return False
        return False

    reader = csv.reader(_uncommented(_open_text(source)), strict=True)
    try:
        header = next(reader, None)
    except csv.Error as exc:
        raise FlatfileParseError(str(exc), row=0) from exc
    if header is None:
        return [], IngestReport()
    header = [h.strip() for h in header]
    index = {}
    for f in FIELDS:
        col = column_map[f]
        if col not in header:
            raise ConfigError(f"mapped column {col!r} (field {f}) not in header")
        index[f] = header.index(col)

    records = []
    dropped = Counter()
    rows_read = 0
    row_no = 0
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise FlatfileParseError(str(exc), row=row_no + 1) from exc
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        row_no += 1
        if len(row) != len(header):
            raise FlatfileParseError(
                f"expected {len(header)} columns, found {len(row)}", row=row_no)
        rows_read += 1
        values, rule = _convert_row(row, index, required, is_missing, fm_lookup)
        if rule is not None:
            dropped[rule] += 1
            continue
        values["pga"] *= pga_scale
        values["pgv"] *= pgv_scale
        records.append(GroundMotionRecord(**values))

    report = summarize(records)
    report.rows_read = rows_read
    report.rows_dropped_by_rule = dict(dropped)
    return records, report


def _convert_row(row, index, required, is_missing, fm_lookup):
    values = {}
    for f in FIELDS:
        cell = row[index[f]].strip()
        if is_missing(cell):
            if f in required:
                return None, f"missing:{f}"
            values[f] = "" if f in ID_FIELDS else math.nan
            continue
        if f in ID_FIELDS:
            values[f] = cell
            continue
        if f == "fm":
            code = _parse_fm(cell, fm_lookup)
            if code is None:
                return None, "unparseable:fm"
            if code not in FM_CODES:
                return None, "invalid:fm"
            values[f] = code
            continue
        try:
            x = float(cell)
        except ValueError:
            return None, f"unparseable:{f}"
        if not math.isfinite(x):
            return None, f"unparseable:{f}"
        values[f] = x
    return values, None


def _parse_fm(cell, fm_lookup):
    if cell in fm_lookup:
        return fm_lookup[cell]
    try:
        x = float(cell)
    except ValueError:
        return None
    if not x.is_integer():
        return None
    key = str(int(x))
    if key in fm_lookup:
        return fm_lookup[key]
    return None if fm_lookup else int(x)


def filter_records(records: Iterable[GroundMotionRecord], criteria: FilterCriteria):
    """Apply selection rules; the per-event count rule runs last.

    Returns the surviving records in input order and a report whose
    ``rows_read`` is the input length.
    """
    records = list(records)
    dropped = Counter()
    ranges = (
        ("m_w", criteria.m_w_range),
        ("r_jb", criteria.r_jb_range),
        ("v_s30", criteria.v_s30_range),
        ("depth", criteria.depth_range),
    )
    kept = []
    for rec in records:
        rule = _first_violation(rec, criteria, ranges)
        if rule is None:
            kept.append(rec)
        else:
            dropped[rule] += 1

    counts = Counter(r.event_id for r in kept)
    out = [r for r in kept if counts[r.event_id] >= criteria.min_records_per_event]
    if len(out) < len(kept):
        dropped["min_records_per_event"] += len(kept) - len(out)

    report = summarize(out)
    report.rows_read = len(records)
    report.rows_dropped_by_rule = dict(dropped)
    return out, report


def _first_violation(rec, criteria, ranges):
    for f in FIELDS:
        if f not in criteria.require_fields:
            continue
        v = getattr(rec, f)
        if v == "" or (isinstance(v, float) and math.isnan(v)):
            return f"missing:{f}"
    for f in POSITIVE_FIELDS:
        v = getattr(rec, f)
        if not (math.isfinite(v) and v > 0):
            return f"nonpositive:{f}"
    for f, (lo, hi) in ranges:
        v = getattr(rec, f)
        if math.isinf(lo) and math.isinf(hi):
            continue
        if not lo <= v <= hi:
            return f"range:{f}"
    return None


def format_float(x) -> str:
    """Shortest repr that round-trips exactly."""
    return repr(float(x))


def write_dataset(records: Iterable[GroundMotionRecord], stream, comment: Optional[str] = None):
    """Write records in the canonical column layout read back by
    :func:`parse_flatfile` with the default column map."""
    if comment:
        stream.write(f"# {comment}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(FIELDS)
    for r in records:
        w.writerow([
            r.event_id, r.station_id, format_float(r.m_w), format_float(r.r_jb),
            format_float(r.v_s30), str(int(r.fm)), format_float(r.z_1_0),
            format_float(r.depth), format_float(r.pga), format_float(r.pgv),
        ])
