"""Command-line front end: ``mecluster {fit,correct,simulate}``.

Exit codes: 0 success, 2 input error, 3 method failure, 4 internal error.
The log level is read from the ``MECLUSTER_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import os
import re
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .correction import SimexConfig, run_method
from .errors import ConvergenceError, DegenerateVarianceError, MethodFailure
from .mixed_model import ErrorModelFit, ExposurePanel, fit_error_model
from .simulation import (
    CSV_COLUMNS,
    SIMPLE_COLUMNS,
    ConfigError,
    SimpleSettingConfig,
    load_config,
    run_scenarios,
    run_simple_setting,
    write_csv,
)

logger = logging.getLogger("mecluster")

EXIT_OK, EXIT_INPUT, EXIT_METHOD, EXIT_INTERNAL = 0, 2, 3, 4
METHOD_NAMES = {"naive": "naive", "rc": "rc", "simex": "simex", "mi": "mi", "mi-null": "mi_null"}
_EXPOSURE = re.compile(r"^y_(\d+)$")


class InputError(ValueError):
    """Malformed input file or option."""


# panel CSV ---------------------------------------------------------------------

def read_panel(path):
    """Read a long-format panel CSV.

    Columns: ``id``, ``day``, covariates, ``y_1 .. y_M`` and optionally
    ``outcome``. Rows of one individual need not be adjacent; they are
    grouped in order of first appearance and sorted by day.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read panel {path}: {exc}") from exc
    if not header:
        raise InputError("panel CSV is empty")
    header = [h.strip() for h in header]
    for required in ("id", "day"):
        if required not in header:
            raise InputError(f"panel CSV has no '{required}' column")
    exposures = sorted((h for h in header if _EXPOSURE.match(h)), key=lambda h: int(_EXPOSURE.match(h).group(1)))
    if not exposures:
        raise InputError("panel CSV has no exposure columns y_1 .. y_M")
    has_outcome = "outcome" in header
    covariates = [h for h in header if h not in ("id", "day", "outcome") and h not in exposures]
    col = {h: k for k, h in enumerate(header)}
    if not rows:
        raise InputError("panel CSV has no data rows")

    def number(r, name, line):
        try:
            return float(r[col[name]])
        except (ValueError, IndexError) as exc:
            raise InputError(f"line {line}: column '{name}' is not a number") from exc

    order, records = {}, {}
    for line, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise InputError(f"line {line}: expected {len(header)} fields, got {len(r)}")
        pid = r[col["id"]].strip()
        day = number(r, "day", line)
        entry = (day, [number(r, e, line) for e in exposures],
                 [number(r, c, line) for c in covariates],
                 number(r, "outcome", line) if has_outcome else None)
        order.setdefault(pid, len(order))
        records.setdefault(pid, []).append(entry)

    ids, T, reports, X, H = [], [], [], [], []
    for pid in sorted(order, key=order.get):
        recs = sorted(records[pid], key=lambda e: e[0])
        days = [e[0] for e in recs]
        if len(set(days)) != len(days):
            raise InputError(f"individual {pid}: duplicate day values (inconsistent T_i)")
        if any(e[2] != recs[0][2] for e in recs) or any(e[3] != recs[0][3] for e in recs):
            raise InputError(f"individual {pid}: covariates or outcome vary across days (inconsistent T_i)")
        ids.append(pid)
        T.append(len(recs))
        reports.extend(e[1] for e in recs)
        X.append(recs[0][2])
        H.append(recs[0][3])
    try:
        return ExposurePanel(
            T=np.array(T), reports=np.array(reports, dtype=float),
            covariates=np.array(X, dtype=float).reshape(len(ids), len(covariates)),
            outcome=np.array(H, dtype=float) if has_outcome else None,
            ids=np.array(ids, dtype=object), exposure_names=tuple(exposures),
            covariate_names=tuple(covariates),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _read_json(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a JSON object")
    return doc


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _version():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out, command, args, started):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", 1),
        "output_directory": str(out),
        "version": _version(),
        "started": datetime.datetime.fromtimestamp(started, datetime.timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _lam_option(value):
    if value is None or value == "estimate":
        return "estimate"
    if isinstance(value, list):
        return [None if v in (None, "none") else (v if v == "estimate" else float(v)) for v in value]
    if value == "none":
        return None
    return float(value)


# commands ----------------------------------------------------------------------

def cmd_fit(args):
    started = time.time()
    cfg = _read_json(args.config)
    panel = read_panel(args.panel)
    include = bool(cfg.get("include_outcome", False))
    if include and panel.outcome is None:
        raise InputError("include_outcome requires an 'outcome' column")
    fit = fit_error_model(panel, include_outcome=include, lam=_lam_option(cfg.get("lam")))
    doc = fit.to_dict()
    doc["exposure_names"] = list(panel.exposure_names)
    doc["covariate_names"] = list(panel.covariate_names)
    out = _outdir(args.out)
    (out / "fit.json").write_text(json.dumps(_jsonable(doc), indent=2) + "\n", encoding="utf-8")
    write_manifest(out, "fit", args, started)
    print(out / "fit.json")
    return EXIT_OK


def _load_fit(path, panel):
    doc = _read_json(path)
    try:
        fit = ErrorModelFit.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not an error-model fit ({exc})") from exc
    if len(fit) != panel.n_components:
        raise InputError(f"fit has {len(fit)} components, panel has {panel.n_components}")
    p = panel.covariates.shape[1] + int(fit.include_outcome)
    if any(c.beta.size != p for c in fit):
        raise InputError("fit coefficients do not match the panel's covariates")
    return fit


def cmd_correct(args):
    started = time.time()
    cfg = _read_json(args.config)
    panel = read_panel(args.panel)
    if panel.outcome is None:
        raise InputError("correction needs an 'outcome' column")
    if args.health == "logistic" and not np.all(np.isin(panel.outcome, (0.0, 1.0))):
        raise InputError("--health logistic needs a 0/1 outcome column")
    method = METHOD_NAMES[args.method]
    include_outcome = method == "mi" and not args.no_outcome
    if method == "mi" and args.no_outcome:
        method = "mi_null"
    options = {}
    lam = _lam_option(cfg.get("lam"))
    if method not in ("naive",):
        options["lam"] = lam
    fit = _load_fit(args.fit, panel) if args.fit else None
    if fit is not None and method != "naive":
        if fit.include_outcome != include_outcome:
            raise InputError("the supplied fit's outcome setting does not match the method")
        options["error_fit"] = fit
    if method in ("rc", "mi", "mi_null"):
        options["blup_mode"] = args.blup_mode
    if method == "simex":
        options["config"] = SimexConfig(
            zeta_grid=cfg.get("zeta_grid", SimexConfig().zeta_grid),
            L=int(cfg.get("simex_L", SimexConfig().L)), degree=args.degree)
    if method in ("mi", "mi_null"):
        options["L"] = args.imputations
        options["include_outcome"] = include_outcome
    result = run_method(method, panel, args.clusters, args.cluster_method, args.health, args.seed, **options)

    out = _outdir(args.out)
    diag = {
        "method": result.method, "tag": result.tag, "degree": result.degree,
        "failed": result.failed, "error": result.error,
        "cluster_model": None if result.cluster_model is None else result.cluster_model.to_dict(),
        "health_fit": None if result.health_fit is None else {
            "kind": result.health_fit.kind, "coef": result.health_fit.coef,
            "sigma_e": result.health_fit.sigma_e},
        "diagnostics": {k: v for k, v in result.diagnostics.items() if k != "imputation_coefs"},
    }
    (out / "diagnostics.json").write_text(json.dumps(_jsonable(diag), indent=2) + "\n", encoding="utf-8")
    with open(out / "contrasts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "degree", "cluster_method", "C", "health", "c", "c_prime", "estimate"])
        if not result.failed:
            for (c, c2), v in result.contrasts.as_dict().items():
                w.writerow([result.method, result.degree or "", args.cluster_method, args.clusters,
                            args.health, c, c2, repr(float(v))])
    write_manifest(out, "correct", args, started)
    if result.failed:
        logger.error("method failed: %s", result.error)
        return EXIT_METHOD
    print(out / "contrasts.csv")
    return EXIT_OK


def cmd_simulate(args):
    started = time.time()
    if args.seed is None:
        raise InputError("simulate requires --seed")
    try:
        configs = load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from exc
    out = _outdir(args.out)
    if isinstance(configs, SimpleSettingConfig):
        configs.seed = args.seed
        rows = run_simple_setting(configs, workers=args.workers)
        path, columns = out / "simple_setting.csv", SIMPLE_COLUMNS
    else:
        for c in configs:
            c.seed = args.seed
        rows = run_scenarios(configs, workers=args.workers)
        path, columns = out / "results.csv", CSV_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_csv(rows, fh, columns)
    write_manifest(out, "simulate", args, started)
    print(path)
    return EXIT_OK


# entry point -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="mecluster", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the Box-Cox random-intercept error model to a panel CSV")
    f.add_argument("panel", help="long-format panel CSV")
    f.add_argument("--config", help="JSON with optional keys 'lam' and 'include_outcome'")
    f.add_argument("--out", default=".", help="output directory (default: current)")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("correct", help="run one correction pipeline on a panel CSV")
    c.add_argument("panel", help="long-format panel CSV with an 'outcome' column")
    c.add_argument("--method", required=True, choices=sorted(METHOD_NAMES))
    c.add_argument("--clusters", type=int, default=3, help="number of clusters C")
    c.add_argument("--cluster-method", default="kmeans", choices=["kmeans", "gmm"])
    c.add_argument("--health", default="linear", choices=["linear", "logistic"])
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--degree", type=int, default=2, choices=[2, 3, 4], help="SIMEX extrapolation degree")
    c.add_argument("--imputations", type=int, default=300, help="MI imputations L")
    c.add_argument("--no-outcome", action="store_true", help="MI without the outcome in the error model")
    c.add_argument("--blup-mode", default="standard", choices=["standard", "between"])
    c.add_argument("--fit", help="error-model fit JSON from 'mecluster fit'")
    c.add_argument("--config", help="JSON with optional keys 'lam', 'zeta_grid', 'simex_L'")
    c.add_argument("--out", default=".", help="output directory (default: current)")
    c.set_defaults(func=cmd_correct)

    s = sub.add_parser("simulate", help="run a simulation config and write the scenario CSV")
    s.add_argument("--config", required=True, help="scenario or simple-setting JSON")
    s.add_argument("--seed", type=int, help="master seed (required)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=".", help="output directory (default: current)")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    level = os.environ.get("MECLUSTER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError, DegenerateVarianceError) as exc:
        print(f"mecluster: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MethodFailure, ConvergenceError) as exc:
        print(f"mecluster: method failure: {exc}", file=sys.stderr)
        return EXIT_METHOD
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"mecluster: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
