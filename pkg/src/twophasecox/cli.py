"""Command-line entry point: ``simulate``, ``fit`` and ``plotdata``.

Exit codes: 0 success, 1 numerical or degenerate-fit failure, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import math
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cox import make_folds
from .methods import DomainKnowledge, FitError, MethodConfig, TwoPhaseDataset, fit_method
from .metrics import RISK_LABELS, c_index, calibration_slope, integrated_brier_score, risk_stratify
from .simulation import (default_jobs, load_config, method_config_from, run_scenario,
                         write_rows)
from .survival import Dataset, kaplan_meier, log_rank_test, pairwise_log_rank, read_survival_csv

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
FIT_METHODS = {"eg": "EG", "cca": "CCA", "ni": "NI", "mi-wood": "MI-Wood", "mi-bartlett": "MI-Bartlett"}


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"twophasecox: {msg}", file=sys.stderr)


def _names(arg: str | None) -> list[str]:
    return [s.strip() for s in (arg or "").split(",") if s.strip()]


def _write_manifest(path: Path, **fields) -> None:
    fields.setdefault("timestamp", _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    fields.setdefault("version", __version__)
    with open(path, "w") as fh:
        yaml.safe_dump(fields, fh, sort_keys=False)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(config_path, seed=None, replications=None, jobs=None, out="results") -> int:
    try:
        specs, overrides = load_config(config_path)
        changes = {k: v for k, v in (("seed", seed), ("replications", replications)) if v is not None}
        specs = [dataclasses.replace(s, **changes) for s in specs]
        config = method_config_from(overrides)
    except FileNotFoundError:
        _err(f"config file not found: {config_path}")
        return EXIT_USAGE
    except KeyError as exc:
        _err(f"invalid config key: {exc.args[0]}")
        return EXIT_USAGE
    except (TypeError, ValueError, yaml.YAMLError) as exc:
        _err(f"invalid config: {exc}")
        return EXIT_USAGE
    jobs = jobs or default_jobs()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    table, raw, failures = [], [], []
    for spec in specs:
        print(f"[{spec.label}] {spec.replications} replications, methods {', '.join(spec.methods)}",
              file=sys.stderr)
        result = run_scenario(spec, config, jobs=jobs)
        table.extend(result.table_rows())
        raw.extend(result.raw_rows())
        failures.extend((spec.label, m, result.failures(m)) for m in spec.methods if result.failures(m))
    write_rows(table, out / "results.csv")
    write_rows(raw, out / "raw.csv")
    _write_manifest(out / "manifest.yaml", command="simulate", config=str(config_path),
                    seed=seed, replications=replications, jobs=jobs, out=str(out),
                    method_config=overrides, scenarios=[s.to_dict() for s in specs])
    for label, method, count in failures:
        _err(f"warning: {label} {method}: {count} failed replications (excluded from means)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _load_two_phase(data_path, v_cols, retain_cols):
    try:
        data = read_survival_csv(data_path)
    except FileNotFoundError:
        raise UsageError(f"data file not found: {data_path}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not v_cols:
        raise UsageError("--v-cols must name at least one column")
    unknown = [c for c in v_cols + retain_cols if c not in data.columns]
    if unknown:
        raise UsageError(f"undeclared column(s): {', '.join(unknown)}")
    overlap = set(v_cols) & set(retain_cols)
    if overlap:
        raise UsageError(f"column(s) both in --v-cols and --retain-cols: {', '.join(sorted(overlap))}")
    try:
        tp = TwoPhaseDataset.from_dataset(data, v_cols)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if np.isnan(tp.u).any():
        raise UsageError("U columns must be fully observed")
    dk = DomainKnowledge(retained_u=tuple(tp.u_names.index(c) for c in retain_cols))
    return tp, dk


def _evaluate_rows(fit, data: TwoPhaseDataset, rows):
    test = data.subset(rows)
    ds = Dataset(test.time, test.event, np.empty((test.n, 0)))
    lp = fit.linear_predictor(test.u, test.v)
    metrics = {"c_index": math.nan, "calibration_slope": math.nan, "ibs": math.nan}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for key, fn in (("c_index", lambda: c_index(ds, lp)),
                        ("calibration_slope", lambda: calibration_slope(ds, lp)),
                        ("ibs", lambda: integrated_brier_score(ds, fit.survival_fn(test.u, test.v)))):
            try:
                metrics[key] = fn()
            except ValueError:
                pass
    return metrics, lp


def cross_validated_evaluation(data: TwoPhaseDataset, method: str, dk, config, seed, folds: int):
    """k-fold evaluation on the complete rows; incomplete rows always stay in training.

    Returns per-fold metric dicts and out-of-fold linear predictors for the
    complete rows (in their original order).
    """
    complete = np.flatnonzero(data.observed)
    if complete.size < folds:
        raise UsageError("fewer complete rows than folds")
    fold_id = make_folds(data.event[complete], folds, np.random.default_rng(seed), stratify=True)
    rows, oof = [], np.full(complete.size, np.nan)
    for k in range(folds):
        test_rows = complete[fold_id == k]
        train = data.subset(np.setdiff1d(np.arange(data.n), test_rows))
        fit = fit_method(method, train, dk, config, seed)
        metrics, lp = _evaluate_rows(fit, data, test_rows)
        oof[fold_id == k] = lp
        rows.append({"fold": k + 1, "n_test": test_rows.size,
                     "events": int(data.event[test_rows].sum()), **metrics})
    return rows, oof


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "NA" if math.isnan(value) else repr(float(value))
    return str(value)


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _stratify(data: TwoPhaseDataset, rows, lp, n_groups: int, out: Path):
    groups = risk_stratify(lp, n_groups)
    labels = RISK_LABELS.get(n_groups, tuple(f"G{g + 1}" for g in range(n_groups)))
    _write_table(out / "risk_groups.csv", ["row", "time", "event", "lp", "group"],
                 [(r + 1, data.time[r], int(data.event[r]), v, labels[g]) for r, v, g in zip(rows, lp, groups)])
    parts = [Dataset(data.time[rows][groups == g], data.event[rows][groups == g], np.empty(((groups == g).sum(), 0)))
             for g in range(n_groups)]
    km_rows = []
    for g, part in enumerate(parts):
        if part.n == 0:
            continue
        km = kaplan_meier(part)
        km_rows.append((labels[g], 0.0, 1.0, part.n, 0))
        km_rows.extend((labels[g], t, s, a, e) for t, s, a, e in zip(km.times, km.survival, km.at_risk, km.n_events))
    _write_table(out / "km_groups.csv", ["group", "time", "survival", "at_risk", "events"], km_rows)
    nonempty = [g for g in range(n_groups) if parts[g].n > 0]
    overall = log_rank_test([parts[g] for g in nonempty])
    lr_rows = [("overall", overall.statistic, overall.df, overall.p_value, overall.p_value)]
    pairs = pairwise_log_rank([parts[g] for g in nonempty])
    for (a, b), (raw, adj) in pairs.items():
        res = log_rank_test([parts[nonempty[a]], parts[nonempty[b]]])
        lr_rows.append((f"{labels[nonempty[a]]}-vs-{labels[nonempty[b]]}", res.statistic, res.df, raw, adj))
    _write_table(out / "logrank.csv", ["comparison", "statistic", "df", "p_value", "p_holm"], lr_rows)
    return overall


def cmd_fit(data_path, method, v_cols, retain_cols, seed=0, out=".", cv_eval=None, stratify=None,
            config: MethodConfig = MethodConfig()) -> int:
    key = method.lower()
    if key not in FIT_METHODS:
        _err(f"unknown method {method!r}; choose from {', '.join(FIT_METHODS)}")
        return EXIT_USAGE
    try:
        data, dk = _load_two_phase(data_path, _names(v_cols), _names(retain_cols))
        if cv_eval is not None and cv_eval < 2:
            raise UsageError("--cv-eval needs at least 2 folds")
        if stratify is not None and stratify < 2:
            raise UsageError("--stratify needs at least 2 groups")
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    name = FIT_METHODS[key]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_method(name, data, dk, config, seed)
            cv_rows, oof = (cross_validated_evaluation(data, name, dk, config, seed, cv_eval)
                            if cv_eval else (None, None))
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (FitError, ValueError, np.linalg.LinAlgError) as exc:
        _err(f"fit failed: {exc}")
        return EXIT_NUMERIC

    mask = fit.selected_mask
    _write_table(out / "coefficients.csv", ["variable", "block", "coefficient", "selected"],
                 [(n, "U" if j < data.p else "V", c, int(s))
                  for j, (n, c, s) in enumerate(zip(data.names, fit.coefficients, mask))])
    complete = np.flatnonzero(data.observed)
    lp = fit.linear_predictor(data.u[complete], data.v[complete])
    pi_header, pi_cols = ["row", "time", "event"], []
    if fit.stage1 is not None:
        pi_header.append("prognostic_index")
        pi_cols.append(data.u[complete] @ fit.stage1.coefficients - fit.stage1_center)
    pi_header.append("lp")
    pi_cols.append(lp)
    _write_table(out / "prognostic_index.csv", pi_header,
                 [(r + 1, data.time[r], int(data.event[r]), *vals) for r, *vals in zip(complete, *pi_cols)])
    horizon = float(np.median(data.time[complete]))
    surv = fit.baseline.survival(np.array([horizon]), lp)[:, 0]
    _write_table(out / "predictions.csv", ["row", "time", "event", "lp", "horizon", "predicted_survival"],
                 [(r + 1, data.time[r], int(data.event[r]), v, horizon, s) for r, v, s in zip(complete, lp, surv)])
    if name == "EG":
        _write_table(out / "theta.csv", ["parameter", "value"],
                     [("theta0", fit.theta0)] + [(f"theta1_{n}", t) for n, t in zip(data.v_names, fit.theta1)])
    if cv_rows:
        means = {k: float(np.nanmean([r[k] for r in cv_rows])) for k in ("c_index", "calibration_slope", "ibs")}
        _write_table(out / "cv_metrics.csv", ["fold", "n_test", "events", "c_index", "calibration_slope", "ibs"],
                     [tuple(r.values()) for r in cv_rows]
                     + [("mean", sum(r["n_test"] for r in cv_rows), sum(r["events"] for r in cv_rows),
                         means["c_index"], means["calibration_slope"], means["ibs"])])
        print(f"cv: c-index {means['c_index']:.3f}, slope {means['calibration_slope']:.3f}, "
              f"IBS {means['ibs']:.4f}")
    if stratify:
        try:
            overall = _stratify(data, complete, oof if oof is not None else lp, stratify, out)
        except ValueError as exc:
            _err(f"stratification failed: {exc}")
            return EXIT_NUMERIC
        print(f"log-rank across {stratify} risk groups: chi2 {overall.statistic:.2f}, p {overall.p_value:.3g}")
    _write_manifest(out / "manifest.yaml", command="fit", data=str(data_path), method=name,
                    v_cols=_names(v_cols), retain_cols=_names(retain_cols), seed=seed,
                    cv_eval=cv_eval, stratify=stratify, out=str(out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# plotdata
# ---------------------------------------------------------------------------

def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_plotdata(results_dir) -> int:
    """Long-format CSVs for external plotting from a ``simulate`` or ``fit`` output directory."""
    d = Path(results_dir)
    raw, groups, preds = d / "raw.csv", d / "risk_groups.csv", d / "predictions.csv"
    if not d.is_dir() or not any(p.exists() for p in (raw, groups, preds)):
        _err(f"no results found in {d}")
        return EXIT_USAGE
    if raw.exists():
        rows = []
        for r in _read_rows(raw):
            for metric in ("c_index", "calibration_slope", "ibs", "mcc"):
                rows.append((r["scenario"], r["rep"], r["method"], metric, r[metric]))
        _write_table(d / "metrics_long.csv", ["scenario", "rep", "method", "metric", "value"], rows)
    if groups.exists() or preds.exists():
        src = _read_rows(groups) if groups.exists() else [dict(r, group="all") for r in _read_rows(preds)]
        km_rows = []
        for label in dict.fromkeys(r["group"] for r in src):
            part = [r for r in src if r["group"] == label]
            ds = Dataset(np.array([float(r["time"]) for r in part]), np.array([r["event"] == "1" for r in part]),
                         np.empty((len(part), 0)))
            km = kaplan_meier(ds)
            km_rows.append((label, 0.0, 1.0))
            km_rows.extend((label, t, s) for t, s in zip(km.times, km.survival))
        _write_table(d / "km_long.csv", ["group", "time", "survival"], km_rows)
    if preds.exists():
        p = _read_rows(preds)
        lp = np.array([float(r["lp"]) for r in p])
        t = np.array([float(r["time"]) for r in p])
        e = np.array([r["event"] == "1" for r in p])
        pred = np.array([float(r["predicted_survival"]) for r in p])
        horizon = float(p[0]["horizon"])
        n_groups = min(5, len(p))
        cal = []
        if np.ptp(lp) > 0 and len(p) >= 2:
            g = risk_stratify(lp, max(2, n_groups))
            for k in np.unique(g):
                sel = g == k
                km = kaplan_meier(Dataset(t[sel], e[sel], np.empty((sel.sum(), 0))))
                cal.append((int(k) + 1, int(sel.sum()), horizon, float(pred[sel].mean()), float(km(horizon))))
        _write_table(d / "calibration.csv", ["group", "n", "horizon", "predicted", "observed"], cal)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twophasecox", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run simulation scenarios from a YAML config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--replications", type=int)
    sim.add_argument("--jobs", type=int, help="parallel worker processes (default: available cores)")
    sim.add_argument("--out", default="results")

    fit = sub.add_parser("fit", help="fit one method to a survival CSV")
    fit.add_argument("--data", required=True)
    fit.add_argument("--method", required=True, choices=sorted(FIT_METHODS))
    fit.add_argument("--v-cols", required=True, help="comma-separated names of the partially observed columns")
    fit.add_argument("--retain-cols", default="", help="comma-separated U columns kept unpenalized")
    fit.add_argument("--cv-eval", type=int, metavar="K")
    fit.add_argument("--stratify", type=int, metavar="G")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", default=".")

    plot = sub.add_parser("plotdata", help="write plot-ready long CSVs from an output directory")
    plot.add_argument("--in", dest="results_dir", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "simulate":
        return cmd_simulate(args.config, args.seed, args.replications, args.jobs, args.out)
    if args.command == "fit":
        return cmd_fit(args.data, args.method, args.v_cols, args.retain_cols, args.seed, args.out,
                       args.cv_eval, args.stratify)
    return cmd_plotdata(args.results_dir)


if __name__ == "__main__":
    sys.exit(main())
