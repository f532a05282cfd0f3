"""Command-line interface.

Exit codes: 0 success, 1 input/output failure, 2 validation or numerical
failure (including usage errors). Failures print a one-line JSON
diagnostic to stderr.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys

import numpy as np

from . import __version__
from .aggregate import aggregate_gls, aggregate_ivw
from .blockcov import (CohortCounts, CorrelationStructure, att_correlation,
                       att_covariance, att_variance)
from .documents import (estimate_set_from_documents, make_manifest,
                        read_document, write_document, write_table)
from .errors import PanelParseError, StackDidError, ValidationError
from .estimator import att_plugin
from .icc import estimate_icc, estimate_icc_resampled
from .panel import CohortSpec, build_cohort, load_panel, overlap_counts
from .simulate import (OUTCOME_PARAMS, SimConfig, cannabis_correlations,
                       load_fixture, run_correlation_experiment,
                       run_coverage_experiment, table1_config)
from .simulate.experiments import default_threads

TABLE_COLUMNS = ["T_pre", "T_post", "delta", "shared_fraction", "rho", "phi", "psi",
                 "n_control_states", "true_cor", "est_cor_mean", "est_cor_bias",
                 "ivw_bias", "ivw_se", "ivw_coverage", "gls_bias", "gls_se",
                 "gls_coverage", "n_replicates", "n_correlation_batches", "seed", "prng"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(2, "UsageError", message)


def _fail(code, kind, message, **extra):
    diag = {"error": kind, "message": message, "exit_code": code}
    diag.update(extra)
    sys.stderr.write(json.dumps(diag, sort_keys=True) + "\n")
    raise SystemExit(code)


# --- shared helpers ----------------------------------------------------------

def _read_markers(path):
    marks = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                marks.setdefault(row["individual"], set()).add(int(row["occasion"]))
            except (KeyError, TypeError, ValueError):
                raise PanelParseError(f"{path} row {lineno}: bad marker row", [lineno]) from None
    return marks


def _cohort_specs(panel, cfg_path):
    cfg = read_document(cfg_path)
    try:
        T_pre, T_post = int(cfg["T_pre"]), int(cfg["T_post"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError(f"{cfg_path}: cohort config needs integer T_pre and T_post") from None
    marks = _read_markers(cfg["markers"]) if cfg.get("markers") else None
    entries = cfg.get("cohorts") or [{"treated_unit": u} for u in panel.treated_units()]
    specs = []
    for e in entries:
        unit = e["treated_unit"] if isinstance(e, dict) else str(e)
        pol = e.get("policy_occasion") if isinstance(e, dict) else None
        if pol is None:
            role = panel.unit_roles.get(unit)
            if role is None or not role.treated:
                raise ValidationError(f"{unit!r} is not a treated unit of the panel")
            pol = role.policy_occasion
        specs.append(CohortSpec(unit, int(pol), T_pre, T_post, marks))
    return specs, {"T_pre": T_pre, "T_post": T_post,
                   "cohorts": [{"treated_unit": s.treated_unit,
                                "policy_occasion": s.policy_occasion} for s in specs],
                   "markers": cfg.get("markers")}


def _load_panel(args):
    for p in (args.panel, args.units):
        if p and not os.path.exists(p):
            raise FileNotFoundError(p)
    return load_panel(args.panel, args.units, delimiter=args.delimiter)


def _corr_from_args(args):
    if getattr(args, "corr", None):
        return CorrelationStructure.from_dict(read_document(args.corr))
    if getattr(args, "outcome", None):
        if args.outcome not in OUTCOME_PARAMS:
            raise ValidationError(f"unknown outcome {args.outcome!r}; "
                                  f"choose from {sorted(OUTCOME_PARAMS)}")
        return CorrelationStructure.homogeneous(*OUTCOME_PARAMS[args.outcome])
    if args.rho is None:
        raise ValidationError("give --corr, --outcome or --rho/--phi/--psi")
    return CorrelationStructure.homogeneous(args.rho, args.phi, args.psi, args.sigma2)


def _covariance_document(labels, pairs, cohort_counts, corr):
    k = len(labels)
    W = np.zeros((k, k))
    for i, c in enumerate(cohort_counts):
        W[i, i] = att_variance(c, corr)
    R = np.eye(k)
    plist = []
    for (i, j), pc in pairs.items():
        W[i, j] = W[j, i] = att_covariance(pc, corr).value
        R[i, j] = R[j, i] = att_correlation(pc, corr)
        plist.append({"a": labels[i], "b": labels[j], "delta": pc.delta,
                      "covariance": W[i, j], "correlation": R[i, j]})
    off = [p["correlation"] for p in plist]
    summary = {"n_pairs": len(off)}
    if off:
        summary.update(min=min(off), max=max(off), median=float(np.median(off)))
    return {"labels": list(labels), "W": W.tolist(), "correlation": R.tolist(),
            "pairs": plist, "summary": summary, "corr": corr.to_dict()}


# --- commands ----------------------------------------------------------------

def cmd_estimate(args):
    panel = _load_panel(args)
    specs, resolved = _cohort_specs(panel, args.cohorts)
    ests = [att_plugin(panel, build_cohort(panel, s)) for s in specs]
    doc = {"estimates": [e.to_dict() for e in ests],
           "manifest": make_manifest("estimate", resolved,
                                     [args.panel, args.units, args.cohorts])}
    write_document(doc, args.out)


def cmd_covariance(args):
    corr = _corr_from_args(args)
    inputs = [args.corr] if args.corr else []
    if args.from_panel:
        if not (args.panel and args.cohorts):
            raise ValidationError("--from-panel needs --panel, --units and --cohorts")
        panel = _load_panel(args)
        specs, resolved = _cohort_specs(panel, args.cohorts)
        cohorts = [build_cohort(panel, s) for s in specs]
        labels = [c.treated_unit for c in cohorts]
        counts = [c.counts() for c in cohorts]
        pairs = {(i, j): overlap_counts(cohorts[i], cohorts[j])
                 for i, j in itertools.combinations(range(len(cohorts)), 2)}
        inputs += [args.panel, args.units, args.cohorts]
        config = {"source": "panel", **resolved}
    else:
        src = None if args.from_counts in (None, "bundled") else args.from_counts
        if src is not None and not os.path.isdir(src):
            raise FileNotFoundError(src)
        fx = load_fixture(src)
        labels = fx.cohorts
        pairs = {(i, j): fx.pair(labels[i], labels[j], args.t_pre, args.t_post)
                 for i, j in itertools.combinations(range(len(labels)), 2)}
        units = tuple(fx.control_units)
        counts = [CohortCounts(lab, fx.sizes[lab][0], units,
                               tuple(fx.control[lab][z] for z in units),
                               args.t_pre, args.t_post, fx.timing[lab])
                  for lab in labels]
        config = {"source": "counts", "counts": args.from_counts or "bundled",
                  "T_pre": args.t_pre, "T_post": args.t_post}
    doc = _covariance_document(labels, pairs, counts, corr)
    config["corr"] = corr.to_dict()
    doc["manifest"] = make_manifest("covariance", config, inputs)
    write_document(doc, args.out)


def cmd_aggregate(args):
    for p in (args.estimates, args.covariance):
        if not os.path.exists(p):
            raise FileNotFoundError(p)
    est = estimate_set_from_documents(read_document(args.estimates),
                                      read_document(args.covariance))
    methods = ["ivw", "gls"] if args.method == "both" else [args.method]
    out = {}
    for m in methods:
        if m == "ivw":
            out[m] = aggregate_ivw(est, args.level).to_dict()
        else:
            out[m] = aggregate_gls(est, args.level, args.shrinkage).to_dict()
    doc = {"pooled": out, "labels": list(est.labels),
           "manifest": make_manifest("aggregate",
                                     {"method": args.method, "level": args.level,
                                      "shrinkage": args.shrinkage},
                                     [args.estimates, args.covariance])}
    write_document(doc, args.out)


def _row_dict(cfg, corr_row, cov_row):
    r = {"T_pre": cfg.T_pre, "T_post": cfg.T_post, "delta": cfg.delta,
         "shared_fraction": cfg.shared_fraction, "rho": cfg.rho, "phi": cfg.phi,
         "psi": cfg.psi, "n_control_states": cfg.n_control_states,
         "seed": cfg.seed}
    base = corr_row or cov_row
    r["true_cor"] = base.true_cor
    r["prng"] = base.prng
    if corr_row is not None:
        r.update(est_cor_mean=corr_row.est_cor_mean, est_cor_bias=corr_row.est_cor_bias,
                 n_correlation_batches=corr_row.n_correlation_batches)
    if cov_row is not None:
        r.update(ivw_bias=cov_row.ivw.bias, ivw_se=cov_row.ivw.mean_se,
                 ivw_coverage=cov_row.ivw.coverage, gls_bias=cov_row.gls.bias,
                 gls_se=cov_row.gls.mean_se, gls_coverage=cov_row.gls.coverage,
                 n_replicates=cov_row.n_replicates)
    return r


def cmd_simulate(args):
    if args.replicates is not None and args.replicates < 1:
        _fail(2, "UsageError", "--replicates must be >= 1")
    if args.table1:
        rows = range(1, 25) if args.row is None else [args.row]
        seed = 0 if args.seed is None else args.seed
        configs = [table1_config(r, n_control_states=args.control_states, seed=seed) for r in rows]
        inputs = []
    else:
        if not args.config:
            raise ValidationError("give --config PATH or --table1")
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        cfg = SimConfig.from_dict(read_document(args.config))
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        configs = [cfg]
        inputs = [args.config]
    do_corr = args.correlation or not args.coverage
    do_cov = args.coverage or not args.correlation
    reps = args.replicates or 10000
    out = []
    for cfg in configs:
        c = run_correlation_experiment(cfg, args.batches, args.pairs_per_batch,
                                       args.threads) if do_corr else None
        v = run_coverage_experiment(cfg, reps, threads=args.threads) if do_cov else None
        out.append(_row_dict(cfg, c, v))
    resolved = {"table1": args.table1, "row": args.row, "control_states": args.control_states,
                "correlation": do_corr, "coverage": do_cov, "replicates": reps,
                "batches": args.batches, "pairs_per_batch": args.pairs_per_batch,
                "configs": [c.to_dict() for c in configs]}
    manifest = make_manifest("simulate", resolved, inputs,
                             seed=configs[0].seed if configs else None)
    if args.format == "json":
        write_document({"rows": out, "manifest": manifest}, args.out)
    else:
        write_table(out, TABLE_COLUMNS, manifest, args.out)


def cmd_icc(args):
    panel = _load_panel(args)
    if panel.n_individuals == 0:
        raise ValidationError("panel is empty")
    specs, resolved = (_cohort_specs(panel, args.cohorts) if args.cohorts else (None, None))
    if args.fraction is None:
        cohorts = [build_cohort(panel, s) for s in specs] if specs else None
        est = estimate_icc(panel, cohorts, clamp=args.clamp)
    else:
        est = estimate_icc_resampled(panel, specs, args.fraction, args.resamples,
                                     args.seed, clamp=args.clamp)
    doc = est.to_dict()
    doc["manifest"] = make_manifest(
        "icc", {"fraction": args.fraction, "resamples": args.resamples,
                "clamp": args.clamp, "cohorts": resolved},
        [args.panel, args.units, args.cohorts], seed=args.seed)
    write_document(doc, args.out)


def cmd_extract_counts(args):
    """Write count tables for a panel's cohorts in the fixture layout."""
    panel = _load_panel(args)
    specs, _ = _cohort_specs(panel, args.cohorts)
    cohorts = {s.treated_unit: build_cohort(panel, s) for s in specs}
    os.makedirs(args.out_dir, exist_ok=True)
    ctrl = panel.control_units()

    def w(name, header, rows):
        with open(os.path.join(args.out_dir, name), "w", newline="", encoding="utf-8") as fh:
            cw = csv.writer(fh, lineterminator="\n")
            cw.writerow(header)
            cw.writerows(rows)

    labs = sorted(cohorts)
    w("cohort_sample_sizes.csv", ["cohort", "n_treated", "n_control", "n_total"],
      [[c, cohorts[c].n_treated, cohorts[c].n_control,
        cohorts[c].n_treated + cohorts[c].n_control] for c in labs])
    w("control_counts.csv", ["cohort", "control_unit", "count"],
      [[c, z, len(cohorts[c].members.get(z, ()))] for c in labs for z in ctrl])
    dis, sh = [], []
    for a, b in itertools.permutations(labs, 2):
        for z in ctrl:
            ma = cohorts[a].members.get(z, frozenset())
            mb = cohorts[b].members.get(z, frozenset())
            dis.append([a, b, z, len(ma - mb)])
            if a < b:
                sh.append([a, b, z, len(ma & mb)])
    w("disjoint_counts.csv", ["cohort", "paired_cohort", "control_unit", "count"], dis)
    w("shared_counts.csv", ["cohort_a", "cohort_b", "control_unit", "count"], sh)
    w("policy_timing.csv", ["unit", "policy_occasion", "calendar_month"],
      [[c, cohorts[c].spec.policy_occasion, ""] for c in labs])


# --- entry point -------------------------------------------------------------

def build_parser():
    p = _Parser(prog="stackdid", description="Stacked DiD with shared control individuals.")
    p.add_argument("--version", action="version", version=f"stackdid {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $STACKDID_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def panel_args(sp, required=True):
        sp.add_argument("--panel", required=required)
        sp.add_argument("--units", required=required)
        sp.add_argument("--delimiter", default=",")

    def corr_args(sp):
        sp.add_argument("--corr", help="correlation document (JSON)")
        sp.add_argument("--outcome", help="preset parameters by outcome name")
        sp.add_argument("--rho", type=float)
        sp.add_argument("--phi", type=float)
        sp.add_argument("--psi", type=float)
        sp.add_argument("--sigma2", type=float, default=1.0)

    s = sub.add_parser("estimate", help="per-cohort DiD estimates")
    panel_args(s)
    s.add_argument("--cohorts", required=True, help="cohort config (JSON)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("covariance", help="closed-form covariance matrix W")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--from-counts", nargs="?", const="bundled", default=None,
                     metavar="DIR", help="count tables (default: bundled fixture)")
    src.add_argument("--from-panel", action="store_true")
    panel_args(s, required=False)
    s.add_argument("--cohorts")
    corr_args(s)
    s.add_argument("--t-pre", type=int, default=48)
    s.add_argument("--t-post", type=int, default=36)
    s.add_argument("--out")
    s.set_defaults(func=cmd_covariance)

    s = sub.add_parser("aggregate", help="pool estimates by IVW or GLS")
    s.add_argument("--estimates", required=True)
    s.add_argument("--covariance", required=True)
    s.add_argument("--method", choices=["ivw", "gls", "both"], default="both")
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--shrinkage", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("simulate", help="Monte Carlo correlation and coverage experiments")
    s.add_argument("--config", help="SimConfig document (JSON)")
    s.add_argument("--table1", action="store_true", help="use the standard design grid")
    s.add_argument("--row", type=int, help="grid row 1..24 (default: all)")
    s.add_argument("--control-states", type=int, default=3)
    s.add_argument("--coverage", action="store_true")
    s.add_argument("--correlation", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--replicates", type=int)
    s.add_argument("--batches", type=int, default=100)
    s.add_argument("--pairs-per-batch", type=int, default=100)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("icc", help="estimate rho, phi, psi and sigma2")
    panel_args(s)
    s.add_argument("--cohorts")
    s.add_argument("--fraction", type=float)
    s.add_argument("--resamples", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--clamp", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_icc)

    s = sub.add_parser("extract-counts", help="write cohort count tables for a panel")
    panel_args(s)
    s.add_argument("--cohorts", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_extract_counts)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = default_threads()
    elif args.threads < 1:
        _fail(2, "UsageError", "--threads must be >= 1")
    try:
        args.func(args)
    except FileNotFoundError as exc:
        path = exc.filename or (exc.args[0] if exc.args else "")
        _fail(1, "FileNotFoundError", f"cannot read {path}", path=str(path))
    except PanelParseError as exc:
        _fail(2, type(exc).__name__, str(exc), rows=exc.rows)
    except (StackDidError, ValueError) as exc:
        _fail(2, type(exc).__name__, str(exc))
    except OSError as exc:
        _fail(1, type(exc).__name__, str(exc), path=str(exc.filename or ""))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
