"""Command-line front end.

Subcommands: synth, ingest, fit, sweep, residuals, curves, extrapolate.
Every subcommand writes into ``--out``; CSVs start with a ``#`` comment line
carrying the tool version and a hash of the effective configuration.
Exit codes: 0 success, 1 domain/estimation error, 2 configuration/IO error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import gmpe, mixedfx, stridge
from .config import load_config, parse_floats
from .errors import ConfigError, DomainError, NoKneeError
from .flatfile import (combine_reports, filter_records, parse_flatfile, summarize,
                       write_dataset)
from .library import build_design_matrix
from .synth import SynthSpec, generate

log = logging.getLogger("sparsegmpe")


class Context:
    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config)
        self.out = Path(args.out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out}: {exc}") from exc
        self.im = args.im
        self.digest = self.cfg.digest(seed=args.seed, im=args.im, command=args.command)

    @property
    def comment(self):
        return f"sparsegmpe {__version__} config={self.digest}"

    def path(self, name):
        return self.out / name

    def write_csv(self, name, header, rows):
        path = self.path(name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# {self.comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(x) for x in row])
        return path

    def write_json(self, name, obj):
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_clean({"meta": {"tool": "sparsegmpe", "version": __version__,
                                       "config": self.digest}, **obj}),
                      fh, indent=2, allow_nan=False)
            fh.write("\n")
        return path

    def write_text(self, name, text):
        path = self.path(name)
        path.write_text(text + "\n", encoding="utf-8")
        return path


def _cell(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if math.isnan(x) else repr(x)
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return None if not math.isfinite(x) else x
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def read_dataset(path):
    """Canonical dataset CSV (output of ``ingest`` or ``synth``)."""
    try:
        with open(path, "rb") as fh:
            records, report = parse_flatfile(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if report.rows_dropped:
        log.warning("%d rows of %s were dropped while reading", report.rows_dropped, path)
    return records


def _design(ctx, records):
    return build_design_matrix(records, ctx.cfg.library(), ctx.im, ctx.cfg.normalization)


def _discover(ctx, records, delta=None):
    cfg = ctx.cfg
    return stridge.discover(_design(ctx, records), cfg.lam, cfg.delta_grid,
                            delta if delta is not None else cfg.delta,
                            cfg.max_iterations, cfg.final_refit_unregularized, cfg.workers)


def _model_json(ctx, found, matrix_library, data_path):
    d = found.model.to_dict(matrix_library)
    d["delta"] = found.delta
    d["knee_selected"] = found.knee_selected
    d["im"] = ctx.im
    d["data"] = os.path.basename(str(data_path))
    d["equation"] = found.model.physical.equation_text()
    return d


def _load_model(ctx):
    if ctx.args.model:
        try:
            eq = gmpe.load_equation(ctx.args.model)
        except OSError as exc:
            raise ConfigError(f"cannot read model {ctx.args.model}: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"malformed model file {ctx.args.model}: {exc}") from exc
        return eq, str(ctx.args.model)
    return gmpe.builtin_model(ctx.im), f"builtin-{ctx.im}"


# ---------------------------------------------------------------- commands

def cmd_synth(ctx):
    s = dict(ctx.cfg.synth)
    a = ctx.args
    for key in ("n_events", "tau", "phi"):
        if getattr(a, key) is not None:
            s[key] = getattr(a, key)
    if a.records_per_event is not None:
        s["records_per_event"] = a.records_per_event
    truth = {}
    if a.truth:
        for p in a.truth:
            eq = gmpe.load_equation(p)
            truth[eq.im] = eq
    else:
        truth = dict(zip(gmpe.IMS, gmpe.builtin_models()))
    records = generate(SynthSpec(truth=truth, seed=a.seed, **s))
    path = ctx.path("synthetic.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_dataset(records, fh, comment=ctx.comment)
    print(f"wrote {len(records)} records to {path}")
    return 0


def cmd_ingest(ctx):
    cfg = ctx.cfg
    try:
        with open(ctx.args.input, "rb") as fh:
            records, parse_report = parse_flatfile(
                fh, cfg.column_map, missing_tokens=cfg.missing_tokens, fm_map=cfg.fm_map,
                pga_scale=cfg.pga_scale, pgv_scale=cfg.pgv_scale, required=cfg.parse_required)
    except OSError as exc:
        raise ConfigError(f"cannot read {ctx.args.input}: {exc}") from exc
    kept, filter_report = filter_records(records, cfg.criteria)
    report = combine_reports(parse_report, filter_report)
    with open(ctx.path("dataset.csv"), "w", encoding="utf-8", newline="") as fh:
        write_dataset(kept, fh, comment=ctx.comment)
    ctx.write_json("ingest_report.json", {"report": report.to_dict()})
    print(f"{report.rows_read} rows read, {report.n_records} records kept "
          f"({report.n_events} events, {report.n_stations} stations)")
    for rule, n in sorted(report.rows_dropped_by_rule.items()):
        print(f"  dropped {n:6d}  {rule}")
    return 0


def cmd_fit(ctx):
    records = read_dataset(ctx.args.data)
    matrix = _design(ctx, records)
    found = stridge.discover(matrix, ctx.cfg.lam, ctx.cfg.delta_grid,
                             ctx.args.delta if ctx.args.delta is not None else ctx.cfg.delta,
                             ctx.cfg.max_iterations, ctx.cfg.final_refit_unregularized, ctx.cfg.workers)
    ctx.write_json(f"model_{ctx.im}.json", _model_json(ctx, found, matrix.library, ctx.args.data))
    text = found.model.physical.equation_text()
    ctx.write_text(f"equation_{ctx.im}.txt", text)
    how = "knee" if found.knee_selected else "fixed"
    print(f"delta = {found.delta:.6g} ({how}), {found.model.n_terms} terms, "
          f"R^2 = {found.model.fit_stats['r_squared']:.6f}")
    print(text)
    return 0


def cmd_sweep(ctx):
    records = read_dataset(ctx.args.data)
    grid = ctx.cfg.delta_grid if ctx.args.grid is None else parse_floats(ctx.args.grid)
    if not grid:
        raise ConfigError("delta grid is empty")
    matrix = _design(ctx, records)
    sweep = stridge.threshold_sweep(matrix, ctx.cfg.lam, grid, ctx.cfg.max_iterations,
                                    ctx.cfg.final_refit_unregularized, ctx.cfg.workers)
    try:
        chosen = stridge.select_threshold(sweep) if len(sweep.points) >= 2 else None
    except NoKneeError:
        chosen = None
    ctx.write_csv(f"sweep_{ctx.im}.csv", ("delta", "n_terms", "selected"),
                  [(p.delta, p.n_terms, int(p.delta == chosen)) for p in sweep.points])
    ctx.write_json(f"sweep_{ctx.im}.json", {
        "im": ctx.im, "lambda": ctx.cfg.lam, "selected_delta": chosen,
        "violations": [list(v) for v in sweep.violations],
        "points": [{"delta": p.delta, "n_terms": p.n_terms,
                    "model": p.model.to_dict(matrix.library) if p.model else None}
                   for p in sweep.points],
    })
    print(" ".join(str(n) for n in sweep.n_terms))
    if chosen is None:
        print("no knee found; pass --delta to fit", file=sys.stderr)
    else:
        print(f"selected delta = {chosen:.6g} "
              f"({sweep.point(chosen).n_terms} terms)")
    return 0


def _data_bins(values, log_spaced, n):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi <= lo:
        hi = lo * 1.01 + 1e-9
    return np.geomspace(lo, hi, n + 1) if log_spaced else np.linspace(lo, hi, n + 1)


def cmd_residuals(ctx):
    records = read_dataset(ctx.args.data)
    if not records:
        raise DomainError("dataset is empty")
    eq, source = _load_model(ctx)
    if eq.im != ctx.im:
        log.warning("model predicts %s but --im is %s; using the model's", eq.im, ctx.im)
    im = eq.im
    m = np.array([r.m_w for r in records])
    r_jb = np.array([r.r_jb for r in records])
    v_s30 = np.array([r.v_s30 for r in records])
    fm = np.array([r.fm for r in records])
    z = np.array([r.z_1_0 for r in records])
    obs = np.log([r.im(im) for r in records])
    resid = obs - gmpe.predict(eq, m, r_jb, v_s30, fm, z)
    event_ids = [r.event_id for r in records]
    grouped = mixedfx.group_residuals(event_ids, resid)
    vc = mixedfx.estimate_variance_components(grouped)
    dec = mixedfx.decompose(grouped, vc.tau, vc.phi)
    eps = dec.flat_epsilon(event_ids)
    mags = {r.event_id: r.m_w for r in records}
    sizes = {k: len(v) for k, v in grouped.items()}

    ctx.write_csv(f"eta_{im}.csv", ("event_id", "m_w", "n_records", "eta"),
                  [(k, mags[k], sizes[k], dec.eta[k]) for k in grouped])
    ctx.write_csv(f"epsilon_{im}.csv", ("record_id", "event_id", "m_w", "r_jb", "v_s30", "residual", "epsilon"),
                  [(rec.record_id, rec.event_id, rec.m_w, rec.r_jb, rec.v_s30, rr, e)
                   for rec, rr, e in zip(records, resid, eps)])

    try:
        sigma = mixedfx.fit_sigma_model(dec, mags).to_dict()
    except DomainError as exc:
        log.warning("magnitude-dependent sigma not estimated: %s", exc)
        sigma = None
    ctx.write_json(f"variance_{im}.json", {
        "im": im, "model": source, "tau": vc.tau, "phi": vc.phi,
        "log_likelihood": vc.log_likelihood, "degenerate": vc.degenerate,
        "n_records": len(records), "n_events": len(grouped),
        "mean_residual": float(np.mean(resid)), "sigma_model": sigma,
    })

    cfg = ctx.cfg
    eta_m = np.array([mags[k] for k in grouped])
    eta_v = np.array([dec.eta[k] for k in grouped])
    specs = (
        ("epsilon_vs_r_jb", eps, r_jb, cfg.r_jb_bins, True),
        ("epsilon_vs_m_w", eps, m, cfg.m_w_bins, False),
        ("epsilon_vs_v_s30", eps, v_s30, cfg.v_s30_bins, True),
        ("eta_vs_m_w", eta_v, eta_m, cfg.m_w_bins, False),
    )
    for name, values, x, edges, log_spaced in specs:
        edges = _data_bins(x, log_spaced, 10) if edges is None else edges
        stats = mixedfx.binned_residual_stats(values, x, edges, log_spaced)
        ctx.write_csv(f"binned_{name}_{im}.csv", ("center", "lo", "hi", "mean", "sd", "count"), stats)
    print(f"tau = {vc.tau:.4f}, phi = {vc.phi:.4f}, log-likelihood = {vc.log_likelihood:.3f}")
    if sigma:
        print("tau1 = {tau1:.3f}, tau2 = {tau2:.3f}, phi1 = {phi1:.3f}, phi2 = {phi2:.3f}".format(**sigma))
    return 0


COMPARE_REQUIRED = ("m_w", "v_s30", "r_jb")


def read_comparison(path):
    """Externally computed curves: columns m_w, v_s30, r_jb and ln_y or y;
    optional ``model`` (label) and ``im``."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh if not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read comparison file {path}: {exc}") from exc
    reader = csv.DictReader(lines)
    header = [h.strip() for h in (reader.fieldnames or [])]
    for col in COMPARE_REQUIRED:
        if col not in header:
            raise ConfigError(f"comparison CSV {path}: missing column {col!r}")
    if "ln_y" not in header and "y" not in header:
        raise ConfigError(f"comparison CSV {path}: missing column 'ln_y' (or 'y')")
    rows = []
    for i, raw in enumerate(reader, start=1):
        row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
        try:
            vals = {c: float(row[c]) for c in COMPARE_REQUIRED}
            ln_y = float(row["ln_y"]) if row.get("ln_y") else math.log(float(row["y"]))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"comparison CSV {path}: row {i}: bad value ({exc})") from exc
        rows.append((row.get("model") or "comparison", row.get("im") or None, vals, ln_y))
    return rows


def cmd_curves(ctx):
    eq, source = _load_model(ctx)
    g = ctx.cfg.curves
    grid = gmpe.ScenarioGrid(g.m_w, g.v_s30, g.r_jb, g.fm, g.z_1_0)
    label = "builtin" if source.startswith("builtin") else Path(source).stem
    rows = [(eq.im, label, c.m_w, c.v_s30, c.r_jb, c.ln_y, math.exp(c.ln_y))
            for c in gmpe.attenuation_curves(eq, grid)]
    if ctx.args.compare:
        for name, im, vals, ln_y in read_comparison(ctx.args.compare):
            rows.append((im or eq.im, name, vals["m_w"], vals["v_s30"], vals["r_jb"], ln_y, math.exp(ln_y)))
    ctx.write_csv(f"curves_{eq.im}.csv", ("im", "model", "m_w", "v_s30", "r_jb", "ln_y", "y"), rows)
    print(f"wrote {len(rows)} rows to {ctx.path(f'curves_{eq.im}.csv')}")
    return 0


def cmd_extrapolate(ctx):
    records = read_dataset(ctx.args.data)
    split = ctx.cfg.split_r_jb if ctx.args.split is None else ctx.args.split
    far = [r for r in records if r.r_jb >= split]
    if not far:
        raise DomainError(f"no records with r_jb >= {split} km")
    if len(far) == len(records):
        log.warning("dataset has no records with r_jb < %g km", split)
    models = {}
    for name, subset in (("full", records), ("far", far)):
        found = _discover(ctx, subset, ctx.args.delta)
        models[name] = found
        matrix_lib = ctx.cfg.library()
        ctx.write_json(f"model_{name}_{ctx.im}.json", _model_json(ctx, found, matrix_lib, ctx.args.data))
        print(f"{name:>4}: {found.model.physical.equation_text()}")

    g = ctx.cfg.near_field
    r_near = tuple(r for r in g.r_jb if 0 < r < split)
    grid = gmpe.ScenarioGrid(g.m_w, g.v_s30, r_near, g.fm, g.z_1_0)
    rows = []
    for name, found in models.items():
        for c in gmpe.attenuation_curves(found.model.physical, grid):
            rows.append((name, c.m_w, c.v_s30, c.r_jb, c.ln_y, math.exp(c.ln_y)))
    ctx.write_csv(f"nearfield_{ctx.im}.csv", ("model", "m_w", "v_s30", "r_jb", "ln_y", "y"), rows)

    slopes = []
    for name, found in models.items():
        eq = found.model.physical
        for m in g.m_w:
            for v in g.v_s30:
                s = gmpe.near_field_slope(eq, m, v, g.fm, g.z_1_0)
                try:
                    bound = gmpe.saturation_slope_bound(eq, m)
                except DomainError:
                    bound = None
                slopes.append({"model": name, "m_w": m, "v_s30": v, "slope": s, "bound": bound,
                               "within_bound": None if bound is None else bool(s <= bound + 1e-12)})
    ctx.write_json(f"slopes_{ctx.im}.json", {"split_r_jb": split, "n_full": len(records),
                                              "n_far": len(far), "slopes": slopes})
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, default=0, help="random seed (synth)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--im", choices=("pga", "pgv"), default="pga", help="intensity measure")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sparsegmpe", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic flatfile")
    s.add_argument("--n-events", type=int)
    s.add_argument("--records-per-event", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--phi", type=float)
    s.add_argument("--truth", action="append", help="equation JSON (repeatable; default: builtins)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="parse and filter a flatfile")
    s.add_argument("input", help="flatfile CSV")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("fit", parents=[common], help="discover a sparse equation")
    s.add_argument("--data", required=True, help="dataset CSV from ingest or synth")
    s.add_argument("--delta", type=float, help="fixed threshold (skips knee selection)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("sweep", parents=[common], help="number of terms vs threshold")
    s.add_argument("--data", required=True)
    s.add_argument("--grid", help="threshold grid, e.g. 'logspace(1e-3, 10, 50)' or '0.01, 0.1'")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("residuals", parents=[common], help="inter/intra-event residual analysis")
    s.add_argument("--data", required=True)
    s.add_argument("--model", help="equation or fitted-model JSON (default: builtin for --im)")
    s.set_defaults(func=cmd_residuals)

    s = sub.add_parser("curves", parents=[common], help="attenuation curves")
    s.add_argument("--model", help="equation or fitted-model JSON (default: builtin for --im)")
    s.add_argument("--compare", help="CSV of externally computed curves to merge")
    s.set_defaults(func=cmd_curves)

    s = sub.add_parser("extrapolate", parents=[common], help="far-field training, near-field check")
    s.add_argument("--data", required=True)
    s.add_argument("--split", type=float, help="R_JB split in km (default 30)")
    s.add_argument("--delta", type=float, help="fixed threshold for both fits")
    s.set_defaults(func=cmd_extrapolate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        ctx = Context(args)
        return args.func(ctx)
    except NoKneeError as exc:
        print(f"error: {exc}. Re-run with --delta <value> (see the sweep subcommand).", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # invalid parameters (e.g. a non-increasing threshold grid)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
