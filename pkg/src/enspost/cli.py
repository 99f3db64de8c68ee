"""Command-line driver: simulate, fit, predict, sample, and verify.

Subcommands: synth, fit, predict, sample, verify, experiment. Every command
takes explicit input/output paths and an optional --seed; experiment reads a
key=value config file whose values individual flags override. Exit status is
0 only when the command ran without errors (warnings do not change it).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bma as bma_mod
from . import ngr as ngr_mod
from . import verify as verify_mod
from .core import ForecastFieldSample, StationSet, seeded_rng
from .ecc import ecc_quantiles, ecc_reorder, rank_permutation
from .experiment import (
    _fit_day_variogram,
    _impute_row,
    _independent_fields,
    _predict_day,
    _variogram_doc,
    parse_experiment_config,
    run_experiment,
    validate_combo,
)
from .ingest import LoadError, load_dataset, read_key_values, rolling_windows, save_dataset
from .spatial import VariogramFit, build_correlation_matrix, build_spatial_ngr, sample_fields
from .synth import generate, parse_synth_spec

log = logging.getLogger(__name__)

FIELDS_HEADER = ("sample", "station_id", "value_c", "provenance")


def _data_paths(data_dir: str) -> tuple[Path, Path, Path]:
    root = Path(data_dir)
    return root / "stations.csv", root / "forecasts.csv", root / "observations.csv"


def _load(data_dir: str):
    return load_dataset(*_data_paths(data_dir))


def _fmt(value: float) -> str:
    return repr(float(value))


def _window_for(data, day: str, window_length: int):
    for window in rolling_windows(data, window_length):
        if window.target_day == day:
            return window
    raise ValueError(
        f"day {day!r} has no full {window_length}-day training window in this dataset"
    )


def _fit_params(data, window, method: str, init=None):
    if method == "ngr+":
        return ngr_mod.fit_ngr_plus(data, window, init=init)
    if method == "ngrc":
        return ngr_mod.fit_ngr_c(data, window)
    return bma_mod.fit_bma(data, window)


def _params_doc(params, method: str, window) -> dict:
    if method in ("ngr+", "ngrc"):
        return ngr_mod.params_to_json(params, window.target_day, window.training_days)
    return bma_mod.params_to_json(params, window.target_day, window.training_days)


def _params_from_doc(doc: dict):
    method = doc.get("method")
    if method in ("ngr+", "ngrc"):
        return method, ngr_mod.params_from_json(doc)
    if method == "bma":
        return method, bma_mod.params_from_json(doc)
    raise ValueError(f"parameter file has unknown method {method!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    spec = parse_synth_spec(args.spec, overrides)
    data = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data, *_data_paths(out))
    print(f"wrote {data.n_days} days x {data.n_stations} stations x {data.members} members to {out}")
    return 0


def cmd_fit(args) -> int:
    data = _load(args.data)
    window = _window_for(data, args.day, args.window)
    params = _fit_params(data, window, args.method)
    doc = _params_doc(params, args.method, window)
    if args.spatial == "grf":
        validate_combo(args.method, "grf")
        fit = _fit_day_variogram(args.method, params, data, window, data.stations)
        doc["variogram"] = _variogram_doc(fit)
    elif args.spatial == "spatial-bma":
        validate_combo(args.method, "spatial-bma")
        sp = bma_mod.fit_spatial_bma(data, window, params)
        doc["member_variograms"] = [_variogram_doc(f) for f in sp.variograms]
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"fitted {args.method} for {args.day} -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    data = _load(args.data)
    with open(args.params) as fh:
        doc = json.load(fh)
    method, params = _params_from_doc(doc)
    day = args.day or doc["target_day"]
    preds = _predict_day(method, params, data, data.day_index(day))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("station_id", "mean", "sd"))
        for sid, dist in zip(data.stations.ids, preds):
            if dist is not None:
                writer.writerow((sid, _fmt(dist.mean), _fmt(dist.sd)))
    print(f"wrote per-station predictive moments for {day} -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    data = _load(args.data)
    with open(args.params) as fh:
        doc = json.load(fh)
    method, params = _params_from_doc(doc)
    validate_combo(method, args.spatial)
    day = args.day or doc["target_day"]
    t = data.day_index(day)
    fc = data.forecasts[t]
    preds = _predict_day(method, params, data, t)
    active = np.array([p is not None for p in preds])
    if active.sum() < 1:
        raise ValueError(f"no station has a predictive distribution on {day}")
    act_idx = np.flatnonzero(active)
    ids = tuple(data.stations.ids[s] for s in act_idx)
    act_set = StationSet(data.stations[s] for s in act_idx)
    rng = seeded_rng(args.seed, f"sample/{method}/{args.spatial}/{day}")

    if args.spatial == "none":
        fields = _independent_fields(preds, active, args.n, rng)
        sample = ForecastFieldSample(ids, fields, "independent", seed=args.seed)
    elif args.spatial == "grf":
        if "variogram" not in doc:
            raise ValueError("params file has no variogram; rerun fit with --spatial grf")
        vg = doc["variogram"]
        corr = build_correlation_matrix((vg["theta"], vg["range_km"]), act_set)
        mu = np.array([preds[s].mean for s in act_idx])
        sd = np.array([preds[s].sd for s in act_idx])
        sample = sample_fields(build_spatial_ngr(mu, sd, corr, ids), args.n, rng, seed=args.seed)
    elif args.spatial == "ecc":
        q = np.vstack([ecc_quantiles(preds[s], data.members) for s in act_idx])
        tie_rng = seeded_rng(args.seed, f"ties/{day}")
        perms = np.vstack([rank_permutation(_impute_row(fc[s])[0], tie_rng) for s in act_idx])
        sample = ecc_reorder(q, perms, ids, seed=args.seed)
    else:
        if "member_variograms" not in doc:
            raise ValueError("params file has no member variograms; rerun fit with --spatial spatial-bma")
        fits = tuple(
            VariogramFit(v["theta"], v["range_km"], (), float(v.get("objective", float("nan"))), v.get("degenerate", False))
            for v in doc["member_variograms"]
        )
        sp = bma_mod.SpatialBmaParams(params, fits)
        sample = bma_mod.sample_spatial_bma(sp, fc[act_idx], act_set, args.n, rng, seed=args.seed)

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELDS_HEADER)
        for i in range(sample.n_samples):
            for j, sid in enumerate(sample.station_order):
                writer.writerow((i + 1, sid, _fmt(sample.fields[i, j]), sample.provenance))
    print(f"wrote {sample.n_samples} fields ({sample.provenance}) for {day} -> {args.out}")
    return 0


def load_fields_csv(path) -> ForecastFieldSample:
    """Read a fields CSV back into a sample; inverse of cmd_sample's writer."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FIELDS_HEADER:
            raise LoadError(f"{path}: expected header {','.join(FIELDS_HEADER)}")
        per_sample: dict = {}
        provenance = None
        for row in reader:
            if not row:
                continue
            idx = int(row[0])
            per_sample.setdefault(idx, []).append((row[1], float(row[2])))
            if provenance is None:
                provenance = row[3]
            elif provenance != row[3]:
                raise LoadError(f"{path}: mixed provenance values")
    if not per_sample:
        raise LoadError(f"{path}: no field rows")
    order = tuple(sid for sid, _ in per_sample[min(per_sample)])
    fields = np.empty((len(per_sample), len(order)))
    for k, idx in enumerate(sorted(per_sample)):
        rows = per_sample[idx]
        if tuple(sid for sid, _ in rows) != order:
            raise LoadError(f"{path}: sample {idx} has a different station order")
        fields[k] = [v for _, v in rows]
    return ForecastFieldSample(order, fields, provenance)


def cmd_verify(args) -> int:
    data = _load(args.data)
    sample = load_fields_csv(args.fields)
    day = args.day
    t = data.day_index(day)
    idx = [data.stations.index(sid) for sid in sample.station_order]
    y = data.observations[t][idx]
    if np.isnan(y).any():
        raise ValueError(f"missing observations on {day} for stations in the fields file")

    table = verify_mod.ScoreTable()
    fields = sample.fields
    n = fields.shape[0]
    if n >= 100:
        half = n // 2
        es = verify_mod.energy_score(fields[:half], fields[half: 2 * half], y)
    else:
        es = verify_mod.energy_score_ensemble(fields, y)
    table.add(day, "field", sample.provenance, "es", es)
    ee = verify_mod.euclidean_error(verify_mod.spatial_median(fields), y)
    table.add(day, "field", sample.provenance, "ee", ee)
    if n >= 2:
        table.add(day, "field", sample.provenance, "ds", verify_mod.ds_from_sample(fields, y))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "verify_scores.csv")
    print(f"ES={es:.6g} EE={ee:.6g} -> {out / 'verify_scores.csv'}")
    return 0


def cmd_experiment(args) -> int:
    kv = read_key_values(args.config) if args.config else {}
    overrides = {}
    if args.data is not None:
        overrides["data"] = args.data
    if args.out is not None:
        overrides["out"] = args.out
    if args.method is not None:
        spatial = args.spatial or "none"
        overrides["combos"] = args.method if spatial == "none" else f"{args.method}/{spatial}"
    elif args.spatial is not None:
        raise ValueError("--spatial needs --method")
    if args.window is not None:
        overrides["window"] = str(args.window)
    if args.samples is not None:
        overrides["samples"] = str(args.samples)
    if args.fields is not None:
        overrides["fields"] = str(args.fields)
    if args.threshold:
        overrides["thresholds"] = ",".join(str(x) for x in args.threshold)
    if args.region is not None:
        overrides["region"] = args.region
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = parse_experiment_config(kv, overrides)
    result = run_experiment(cfg)
    for label, scores in result.summary["methods"].items():
        crps = scores.get("crps")
        es = scores.get("es")
        parts = [f"{label}:"]
        if crps is not None:
            parts.append(f"crps={crps:.4f}")
        if es is not None:
            parts.append(f"es={es:.4f}")
        print(" ".join(parts))
    print(f"{result.summary['n_target_days']} target days, {result.n_warnings} warnings -> {cfg.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enspost",
        description="Ensemble postprocessing: calibrated univariate and spatially coherent forecasts.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="simulate a synthetic dataset from a spec file")
    p.add_argument("--spec", required=True, help="key=value synth spec file")
    p.add_argument("--out", required=True, help="output directory for the dataset CSVs")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit one method for one target day")
    p.add_argument("--data", required=True, help="directory with stations/forecasts/observations CSVs")
    p.add_argument("--method", required=True, choices=("ngr+", "ngrc", "bma"))
    p.add_argument("--day", required=True, help="target day (must have a full training window)")
    p.add_argument("--window", type=int, default=25)
    p.add_argument("--spatial", choices=("none", "grf", "spatial-bma"), default="none",
                   help="also fit the error-correlation model this mode needs")
    p.add_argument("--out", required=True, help="output params JSON")
    p.add_argument("--seed", type=int, default=0, help="accepted for interface uniformity; fits are deterministic")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="per-station predictive moments from fitted params")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True, help="params JSON from fit")
    p.add_argument("--day", default=None, help="defaults to the params file's target day")
    p.add_argument("--out", required=True, help="output CSV (station_id,mean,sd)")
    p.add_argument("--seed", type=int, default=0, help="accepted for interface uniformity; predictions are deterministic")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sample", help="draw forecast fields from fitted params")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--day", default=None)
    p.add_argument("--spatial", choices=("none", "grf", "ecc", "spatial-bma"), default="none")
    p.add_argument("--n", type=int, default=100, help="number of fields (ecc always yields M)")
    p.add_argument("--out", required=True, help="output CSV (sample,station_id,value_c,provenance)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="score a fields file against observations")
    p.add_argument("--fields", required=True, help="fields CSV from sample")
    p.add_argument("--data", required=True)
    p.add_argument("--day", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="accepted for interface uniformity; scores are deterministic")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="rolling-window experiment over all target days")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--method", choices=("ngr+", "ngrc", "bma"), default=None)
    p.add_argument("--spatial", choices=("none", "grf", "ecc", "spatial-bma"), default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--samples", type=int, default=None, help="paired draws per univariate mixture score")
    p.add_argument("--fields", type=int, default=None, help="sampled fields per day")
    p.add_argument("--threshold", type=float, action="append", default=[],
                   help="composite-minimum Brier threshold (repeatable)")
    p.add_argument("--region", default=None, help="comma list of station ids for the composite minimum")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (LoadError, OSError, KeyError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
