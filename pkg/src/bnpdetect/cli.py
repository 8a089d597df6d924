"""Command-line interface: ``bnpdetect {simulate,fit,grid,crp-prior,waic}``.

Exit codes: 0 success, 1 usage error, 2 data/validation or I/O error,
3 model-fitting failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    Family,
    HistoryParseError,
    HistoryValidationError,
    Mode,
    load_history_csv,
    write_history_csv,
)
from .diagnostics import (
    SUMMARY_COLUMNS,
    crp_prior_cluster_distribution,
    expected_crp_clusters,
    summary_row,
    waic,
    write_rows,
)
from .estimator import DetectionModel, parse_model_label, structural_name
from .mcmc import TruncationWarning
from .simharness import ExperimentGrid, default_workers, result_columns, run_grid, simulate
from .svgplot import bar_chart, interval_chart

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 1, 2, 3

log = logging.getLogger("bnpdetect")


class UsageError(Exception):
    pass


class FitError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _probability(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} is not a probability in [0, 1]")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def _float_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _model_list(text):
    labels = [t.strip().lower() for t in text.split(",") if t.strip()]
    out = []
    for label in labels:
        m = label.split("..")
        if len(m) == 2 and m[0].startswith("fm") and m[1].isdigit():
            # fm2..10 expands to fm2, fm3, ..., fm10
            out += [f"fm{k}" for k in range(int(m[0][2:]), int(m[1]) + 1)]
            continue
        try:
            parse_model_label(label)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
        out.append(label)
    if not out:
        raise argparse.ArgumentTypeError("no models given")
    return out


def _fresh_seed():
    return int(np.random.SeedSequence().generate_state(1)[0])


def _derived_seed(seed, *key):
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def _ensure_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Family, Mode)):
        return o.value
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _provenance(command, params):
    return {
        "tool": "bnpdetect",
        "version": __version__,
        "command": command,
        "parameters": params,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def cmd_simulate(args):
    family = Family.parse(args.family)
    key = "phi" if family is Family.CAPTURE_RECAPTURE else "psi"
    structural = getattr(args, key)
    if structural is None:
        raise UsageError(f"--{key} is required for family {family.value}")
    other = "psi" if key == "phi" else "phi"
    if getattr(args, other) is not None:
        raise UsageError(f"--{other} does not apply to family {family.value}")
    if args.n0 + args.n1 < 1:
        raise UsageError("need at least one unit (--n0 + --n1 >= 1)")
    seed = args.seed if args.seed is not None else _fresh_seed()
    table = simulate(family, args.n0, args.n1, args.T, structural, args.p0, args.p1, seed)
    out = Path(args.out)
    if out.parent != Path(""):
        _ensure_dir(out.parent)
    write_history_csv(table, out)
    params = {
        "family": family.value, "n0": args.n0, "n1": args.n1, "T": args.T,
        key: structural, "p0": args.p0, "p1": args.p1, "seed": seed,
    }
    prov = Path(args.provenance) if args.provenance else out.with_suffix(out.suffix + ".json")
    _write_json(prov, _provenance("simulate", params))
    print(f"wrote {table.n_units}x{table.n_occasions} histories to {out} (seed {seed})")
    return EXIT_OK


_CONFIG_KEYS = {
    "family", "mode", "K", "M", "alpha_prior", "seed", "iterations", "burnin", "thin",
    "label_thin", "aux", "chains", "models",
}


def _spec_params(args):
    """Merge JSON config (if any) with command-line flags; flags win."""
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(cfg) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    merged = {
        "family": cfg.get("family"),
        "models": None,
        "M": cfg.get("M"),
        "alpha_prior": cfg.get("alpha_prior", [1.0, 1.0]),
        "seed": cfg.get("seed"),
        "iterations": cfg.get("iterations", 5000),
        "burnin": cfg.get("burnin", 2000),
        "thin": cfg.get("thin", 1),
        "label_thin": cfg.get("label_thin", 10),
        "aux": cfg.get("aux", 1),
        "chains": cfg.get("chains", 3),
    }
    if "models" in cfg:
        merged["models"] = _model_list(",".join(cfg["models"]) if isinstance(cfg["models"], list) else cfg["models"])
    elif cfg.get("mode"):
        mode = Mode.parse(cfg["mode"])
        merged["models"] = [f"fm{cfg['K']}" if mode is Mode.FINITE_MIXTURE else mode.value]
    for name in ("family", "models", "M", "alpha_prior", "seed", "iterations", "burnin",
                 "thin", "label_thin", "aux", "chains"):
        v = getattr(args, name, None)
        if v is not None:
            merged[name] = v
    if merged["family"] is None:
        raise UsageError("model family required (--family or config 'family')")
    if merged["models"] is None:
        merged["models"] = ["hom", "fm2", "fm3", "np"]
    if merged["burnin"] > merged["iterations"]:
        raise UsageError("burn-in exceeds the number of iterations")
    return merged


def cmd_fit(args):
    params = _spec_params(args)
    family = Family.parse(params["family"])
    outdir = _ensure_dir(args.outdir)
    table = load_history_csv(args.data, family)
    if table.n_dropped:
        print(f"dropped {table.n_dropped} rows first detected on the final occasion", file=sys.stderr)
    seed = params["seed"] if params["seed"] is not None else _fresh_seed()
    params["seed"] = seed

    rows, reports, failures = [], {}, []
    for idx, label in enumerate(params["models"]):
        est = DetectionModel(
            family=family.value,
            model=label,
            truncation=params["M"],
            alpha_prior=tuple(params["alpha_prior"]),
            n_iter=params["iterations"],
            burnin=params["burnin"],
            thin=params["thin"],
            label_thin=params["label_thin"],
            n_chains=params["chains"],
            n_aux=params["aux"],
            random_state=_derived_seed(seed, idx),
            n_jobs=args.workers if args.workers is not None else default_workers(),
        )
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", TruncationWarning)
                est.fit(table)
            for w in caught:
                print(f"warning [{label}]: {w.message}", file=sys.stderr)
        except ValueError as exc:
            failures.append(f"{label}: {exc}")
            print(f"fit failed for {label}: {exc}", file=sys.stderr)
            continue
        if est.waic_ is None:
            failures.append(f"{label}: fewer than two retained draws; WAIC undefined")
            continue
        rows.append(summary_row(label, est.summary_, est.waic_))
        report = est.draws_.report()
        report["seed"] = est.seed_
        report["waic"] = {"lppd": est.waic_.lppd, "p_waic": est.waic_.p_waic, "waic": est.waic_.waic}
        reports[label] = report
        np.save(outdir / f"loglik_{label}.npy", est.draws_.pooled("loglik"))
        if est.draws_.labels is not None and args.save_labels:
            np.savez_compressed(outdir / f"labels_{label}.npz", labels=est.draws_.labels)
        if est.cluster_counts_ is not None:
            cc = est.cluster_counts_
            write_rows(
                [{"n_clusters": int(k), "probability": float(v)} for k, v in zip(cc.support, cc.probabilities)],
                outdir / f"clusters_{label}.csv",
                ["n_clusters", "probability"],
            )
            report["cluster_count"] = {"median": cc.median, "interval90": list(cc.interval), "mean": cc.mean}
            if args.plot:
                (outdir / f"clusters_{label}.svg").write_text(
                    bar_chart(
                        [(label, cc.support.tolist(), cc.probabilities.tolist())],
                        title="Posterior number of subgroups",
                        xlabel="number of subgroups",
                        ylabel="posterior probability",
                    )
                )

    write_rows(rows, outdir / "summary.csv", SUMMARY_COLUMNS)
    _write_json(outdir / "run_report.json", {"data": str(args.data), "n_units": table.n_units,
                                             "n_dropped": table.n_dropped, "models": reports})
    _write_json(outdir / "provenance.json", _provenance("fit", {**params, "data": str(args.data),
                                                                "failures": failures}))
    for r in rows:
        print(f"{r['model']:>6}  {structural_name(family)} median {r['median']:.3f} "
              f"({r['lo']:.3f}, {r['hi']:.3f})  WAIC {r['waic']:.1f}")
    if failures:
        raise FitError("; ".join(failures))
    return EXIT_OK


def cmd_grid(args):
    overrides = {}
    if args.p is not None:
        overrides["p_values"] = tuple(args.p)
    if args.models is not None:
        overrides["models"] = tuple(args.models)
    for name in ("seed", "iterations", "burnin", "thin", "replicates"):
        v = getattr(args, name)
        if v is not None:
            overrides[name] = v
    if args.chains is not None:
        overrides["n_chains"] = args.chains
    if args.n is not None:
        overrides["n0"] = overrides["n1"] = args.n
    if args.M is not None:
        overrides["truncation"] = args.M
    try:
        grid = ExperimentGrid.preset(args.family, args.scale, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    outdir = _ensure_dir(args.outdir)
    workers = args.workers if args.workers is not None else default_workers()
    rows = run_grid(grid, workers)
    write_rows(rows, outdir / "results.csv", result_columns(grid))
    failures = [r for r in rows if "error" in r]
    _write_json(
        outdir / "provenance.json",
        _provenance("grid", {**grid.to_dict(), "workers": workers,
                             "failures": [{"p": r["p"], "model": r["model"], "error": r["error"]} for r in failures]}),
    )
    series = []
    for label in grid.models:
        ok = [r for r in rows if r["model"] == label and "error" not in r]
        if ok:
            series.append((label, [r["p"] for r in ok], [r["median"] for r in ok],
                           [r["lo95"] for r in ok], [r["hi95"] for r in ok]))
    name = structural_name(grid.family)
    (outdir / "results.svg").write_text(
        interval_chart(series, title=f"Posterior {name} vs detection p", xlabel="p",
                       ylabel=name, reference=grid.structural)
    )
    print(f"wrote {len(rows)} rows to {outdir / 'results.csv'}")
    if failures:
        raise FitError(f"{len(failures)} grid cells failed")
    return EXIT_OK


def cmd_crp_prior(args):
    if any(a <= 0 for a in args.alpha):
        raise UsageError("alpha values must be positive")
    outdir = _ensure_dir(args.outdir)
    seed = args.seed if args.seed is not None else _fresh_seed()
    rows, series = [], []
    for idx, alpha in enumerate(args.alpha):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
        ks, probs = crp_prior_cluster_distribution(alpha, args.n, args.reps, rng)
        keep = probs > 0
        rows += [{"alpha": alpha, "n_clusters": int(k), "probability": float(v)} for k, v in zip(ks[keep], probs[keep])]
        series.append((f"alpha={alpha:g}", ks[keep].tolist(), probs[keep].tolist()))
        mean = float((ks * probs).sum())
        print(f"alpha={alpha:g}: mean clusters {mean:.3f} (expected {expected_crp_clusters(alpha, args.n):.3f}), "
              f"mode {int(ks[np.argmax(probs)])}")
    write_rows(rows, outdir / "crp_prior.csv", ["alpha", "n_clusters", "probability"])
    (outdir / "crp_prior.svg").write_text(
        bar_chart(series, title=f"CRP prior number of subgroups, N={args.n}",
                  xlabel="number of subgroups", ylabel="prior probability")
    )
    _write_json(outdir / "provenance.json", _provenance(
        "crp-prior", {"alpha": args.alpha, "n": args.n, "reps": args.reps, "seed": seed}))
    return EXIT_OK


def _load_matrix(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return z[z.files[0]]
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_waic(args):
    try:
        ll = _load_matrix(args.matrix)
    except (ValueError, OSError) as exc:
        raise HistoryParseError(f"cannot read log-likelihood matrix: {exc}") from None
    try:
        rep = waic(ll)
    except ValueError as exc:
        raise HistoryValidationError(str(exc)) from None
    doc = {"lppd": rep.lppd, "p_waic": rep.p_waic, "waic": rep.waic, "degenerate": rep.degenerate,
           "n_draws": rep.n_draws, "n_units": rep.n_units}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _add_mcmc_flags(p):
    p.add_argument("--iterations", type=_nonneg_int, help="iterations per chain, burn-in included")
    p.add_argument("--burnin", type=_nonneg_int)
    p.add_argument("--thin", type=_positive_int)
    p.add_argument("--chains", type=_positive_int)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--M", type=_positive_int, help="CRP truncation (cluster slots)")
    p.add_argument("--workers", type=_positive_int, help="worker processes (default: $BNPDETECT_WORKERS or 1)")


def build_parser():
    parser = _Parser(prog="bnpdetect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate two-group detection histories")
    p.add_argument("--family", required=True, choices=["cr", "occ"])
    p.add_argument("--n0", type=_nonneg_int, required=True)
    p.add_argument("--n1", type=_nonneg_int, required=True)
    p.add_argument("--T", type=_positive_int, required=True)
    p.add_argument("--phi", type=_probability)
    p.add_argument("--psi", type=_probability)
    p.add_argument("--p0", type=_probability, required=True)
    p.add_argument("--p1", type=_probability, required=True)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--out", default="detections.csv")
    p.add_argument("--provenance", help="provenance JSON path (default: <out>.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one or more models to a detection-history CSV")
    p.add_argument("data")
    p.add_argument("--family", choices=["cr", "occ"])
    p.add_argument("--models", type=_model_list, help="e.g. hom,fm2..10,np")
    p.add_argument("--config", help="JSON ModelSpec document; flags override it")
    p.add_argument("--alpha-prior", dest="alpha_prior", type=_float_list)
    p.add_argument("--label-thin", dest="label_thin", type=_positive_int)
    p.add_argument("--aux", type=_positive_int, help="auxiliary components per CRP label update")
    p.add_argument("--outdir", default="fit_out")
    p.add_argument("--save-labels", action="store_true")
    p.add_argument("--plot", action="store_true")
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="run a simulation grid")
    p.add_argument("--family", required=True, choices=["cr", "occ"])
    p.add_argument("--scale", default="desk", choices=["desk", "full"])
    p.add_argument("--p", type=_float_list, help="detection values of the varying group")
    p.add_argument("--models", type=_model_list)
    p.add_argument("--n", type=_positive_int, help="units per group")
    p.add_argument("--replicates", type=_positive_int)
    p.add_argument("--outdir", default="grid_out")
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("crp-prior", help="prior distribution of the CRP cluster count")
    p.add_argument("--alpha", type=_float_list, default=[0.1, 0.5, 1.0])
    p.add_argument("--n", type=_positive_int, default=60)
    p.add_argument("--reps", type=_positive_int, default=100000)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--outdir", default="crp_prior_out")
    p.set_defaults(func=cmd_crp_prior)

    p = sub.add_parser("waic", help="recompute WAIC from a saved (draws x units) log-likelihood matrix")
    p.add_argument("matrix", help=".npy, .npz or comma-separated text")
    p.set_defaults(func=cmd_waic)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"bnpdetect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HistoryParseError, HistoryValidationError, OSError) as exc:
        print(f"bnpdetect: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, ValueError) as exc:
        print(f"bnpdetect: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
