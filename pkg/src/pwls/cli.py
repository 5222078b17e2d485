"""Command-line interface.

Subcommands: fit, path, tune, check-theorem1, bench.  Tabular inputs are
header-bearing delimited files; observation ids in every output are 1-based
row numbers of the input.  JSON output carries full float precision (17
significant digits); CSV output uses 10.  Errors exit nonzero after printing
a single machine-parsable line ``error: <reason>`` on stderr.

The PWLS_LOG environment variable (quiet, info, debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import hetero, m_equiv, simbench, solver, tuning
from .numerics import Dataset, PwlsError

log = logging.getLogger(__name__)

_LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def load_csv(path: str, response: str, predictors: list[str],
             intercept: bool = True, delimiter: str = ","):
    """Read a header-bearing delimited file into a Dataset.

    Returns (Dataset, obs_ids) where obs_ids are 1-based data-row numbers.
    Any non-numeric or missing field in a selected column is an error naming
    the row.
    """
    if not os.path.exists(path):
        raise PwlsError(f"input file not found: {path}")
    cols = [response] + list(predictors)
    if len(set(cols)) != len(cols):
        raise PwlsError("column selected twice")
    if not predictors and not intercept:
        raise PwlsError("no predictors selected")
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise PwlsError("empty input file") from None
        header = [h.strip() for h in header]
        for c in cols:
            if c not in header:
                raise PwlsError(f"unknown column: {c}")
        pos = {c: header.index(c) for c in cols}
        rows = []
        for lineno, rec in enumerate(reader, start=1):
            if not rec or all(f.strip() == "" for f in rec):
                continue
            vals = []
            for c in cols:
                if pos[c] >= len(rec):
                    raise PwlsError(f"row {lineno}: missing field in column {c}")
                raw = rec[pos[c]].strip()
                if raw == "":
                    raise PwlsError(f"row {lineno}: missing field in column {c}")
                try:
                    vals.append(float(raw))
                except ValueError:
                    raise PwlsError(
                        f"row {lineno}: non-numeric value {raw!r} in column {c}"
                    ) from None
            rows.append(vals)
    p = len(predictors) + (1 if intercept else 0)
    if len(rows) < p + 1:
        raise PwlsError("fewer than p+1 usable rows")
    arr = np.asarray(rows, dtype=float)
    y = arr[:, 0]
    X = arr[:, 1:]
    if intercept:
        X = np.hstack([np.ones((arr.shape[0], 1)), X])
    return Dataset(X=X, y=y), np.arange(1, arr.shape[0] + 1)


def _load_from_args(args):
    preds = [c.strip() for c in args.predictors.split(",") if c.strip()] \
        if args.predictors else []
    delim = "\t" if args.tab else ","
    return load_csv(args.input, args.response, preds,
                    intercept=not args.no_intercept, delimiter=delim)


def _zspec_from_args(args, p: int) -> hetero.ZSpec:
    if args.z_cols:
        cols = tuple(int(c) - 1 for c in args.z_cols.split(","))
        for c in cols:
            if not (0 <= c < p):
                raise PwlsError(f"z column {c + 1} out of range")
    else:
        cols = (p - 1,)  # default: last predictor column
    return hetero.ZSpec(columns=cols, intercept=True)


def _scales_for(method: str, data: Dataset, config) -> solver.PenaltyScales:
    if method == "pwls":
        return solver.PenaltyScales.unit(data.n)
    _, w0 = solver.initial_estimates(data, config)
    return solver.adaptive_scales(w0)


def _write_fit_json(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    dest = os.path.join(out_dir, "fit.json")
    with open(dest, "w") as fh:
        json.dump(payload, fh, default=_json_default, indent=1)
        fh.write("\n")
    return dest


def _write_fit_csv(out_dir, payload):
    """Tidy key,index,value rows; vectors get 1-based index entries."""
    os.makedirs(out_dir, exist_ok=True)
    dest = os.path.join(out_dir, "fit.csv")
    with open(dest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "index", "value"])
        for key, val in payload.items():
            if isinstance(val, dict):
                for sub, sv in val.items():
                    writer.writerow([f"{key}.{sub}", "", _cell(sv)])
            elif isinstance(val, (list, np.ndarray)):
                for i, entry in enumerate(np.asarray(val).reshape(-1)):
                    writer.writerow([key, i + 1, _cell(entry)])
            else:
                writer.writerow([key, "", _cell(val)])
    return dest


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_cell(x) for x in np.asarray(v).reshape(-1))
    return str(v)


def cmd_fit(args) -> int:
    data, obs = _load_from_args(args)
    config = solver.SolverConfig()
    if args.lam is None:
        raise PwlsError("--lambda is required for fit")
    lam = float(args.lam)
    beta0, w0 = solver.initial_estimates(data, config)
    if args.method == "pwls":
        scales = solver.PenaltyScales.unit(data.n)
    else:
        scales = solver.adaptive_scales(w0)
    if args.method in ("pwls", "apwls"):
        f = solver.fit(data, lam, scales, beta0, w0, config)
        variance = None
    else:
        zspec = _zspec_from_args(args, data.p)
        f = hetero.hpwls_fit(data, zspec, args.g, scales, lam, config)
        variance = {"g": args.g, "theta": f.variance.theta,
                    "z_cols": [c + 1 for c in zspec.columns]}
    payload = {
        "method": args.method,
        "lambda": lam,
        "beta": f.beta,
        "w": f.w,
        "residuals": f.residuals,
        "flagged": [int(obs[i]) for i in f.flagged],
        "objective": f.objective,
        "sigma2": f.sigma2,
        "iterations": f.iterations,
        "converged": f.converged,
        "varpi": scales.varpi,
    }
    if variance is not None:
        payload["variance"] = variance
    if getattr(args, "format", "json") == "csv":
        dest = _write_fit_csv(args.out, payload)
    else:
        dest = _write_fit_json(args.out, payload)
    print(dest)
    return 0


def _path_for(args, data, config):
    if args.method in ("pwls", "apwls"):
        scales = _scales_for(args.method, data, config)
        return solver.solution_path(data, scales, config)
    zspec = _zspec_from_args(args, data.p)
    return hetero.hpwls_path(data, zspec, args.g, None, config)


def cmd_path(args) -> int:
    data, obs = _load_from_args(args)
    config = solver.SolverConfig()
    path = _path_for(args, data, config)
    os.makedirs(args.out, exist_ok=True)
    dest = os.path.join(args.out, "path.csv")
    with open(dest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "obs_id", "weight"])
        for lam, f in zip(path.lambdas, path.fits):
            for i in range(data.n):
                writer.writerow([_fmt(lam), int(obs[i]), _fmt(f.w[i])])
    print(dest)
    return 0


def cmd_tune(args) -> int:
    data, obs = _load_from_args(args)
    config = solver.SolverConfig()
    path = _path_for(args, data, config)
    os.makedirs(args.out, exist_ok=True)
    summary = {"method": args.method, "tuner": args.tuner}
    if args.tuner == "bic":
        pick = tuning.select_bic(path, data)
        summary.update({
            "lambda_hat": pick.lambda_hat,
            "argmin": int(pick.argmin),
            "bic": pick.values,
            "lambdas": path.lambdas,
            "flagged": [int(obs[i]) for i in path.fits[pick.argmin].flagged],
        })
    else:
        # stability selection reuses the path grid; hetero paths perturb the
        # rescaled problem, so rebuild the effective dataset the path used
        eff = data
        if args.method == "hpwls":
            eff = _effective_hetero_dataset(args, data, config)
        scales = path.scales
        rep = tuning.stability_curve(eff, path.lambdas, scales,
                                     B=args.B, seed=args.seed, config=config)
        _write_stability(args.out, rep, obs)
        summary.update({"lambda_hat": rep.lambda_hat, "B": rep.B, "seed": rep.seed})
    dest = os.path.join(args.out, "tune.json")
    with open(dest, "w") as fh:
        json.dump(summary, fh, default=_json_default, indent=1)
        fh.write("\n")
    print(dest)
    return 0


def _effective_hetero_dataset(args, data, config):
    zspec = _zspec_from_args(args, data.p)
    beta0, w0 = solver.initial_estimates(data, config)
    hom_path = solver.solution_path(data, solver.adaptive_scales(w0), config)
    pick = tuning.select_bic(hom_path, data)
    beta_homo = hom_path.fits[pick.argmin].beta
    z = zspec.matrix(data.X)
    R = np.abs(data.y - data.X @ beta_homo)
    theta = hetero.variance_fit(z, R, args.g, hetero._default_theta(zspec))
    s = hetero._scale_values(args.g, z, theta)
    return Dataset(X=data.X / s[:, None], y=data.y / s)


def _write_stability(out_dir, rep: tuning.StabilityReport, obs):
    with open(os.path.join(out_dir, "stability.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "S"])
        for lam, s in zip(rep.lambdas, rep.s_curve):
            writer.writerow([_fmt(lam), _fmt(s)])
    with open(os.path.join(out_dir, "probs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "obs_id", "prob"])
        for gi, lam in enumerate(rep.lambdas):
            for i in range(rep.outlier_prob.shape[0]):
                writer.writerow([_fmt(lam), int(obs[i]),
                                 _fmt(rep.outlier_prob[i, gi])])


def cmd_check_theorem1(args) -> int:
    data, _ = _load_from_args(args)
    cfg = m_equiv.MConfig(lam=float(args.lam), c=args.c)
    rep = m_equiv.theorem1_check(data, cfg)
    print(json.dumps({
        "lambda": cfg.lam,
        "c": cfg.c,
        "beta_gap": rep.beta_gap,
        "sigma_gap": rep.sigma_gap,
        "pass": rep.passed,
    }))
    return 0 if rep.passed else 1


def cmd_bench(args) -> int:
    with open(args.config) as fh:
        spec = json.load(fh)
    jobs = spec if isinstance(spec, list) else [spec]
    os.makedirs(args.out, exist_ok=True)
    dest = os.path.join(args.out, "bench.csv")
    lines = ["method,k,p,scenario,JD,M,S,reps,failures"]
    for job in jobs:
        method = job.get("method", "pwls")
        reps = int(job.get("reps", 100))
        base_seed = int(job.get("base_seed", 0))
        if job.get("example") == "hetero":
            cfg = simbench.HeteroSimConfig(
                n=int(job.get("n", 1000)), p=int(job.get("p", 15)),
                k=int(job.get("k", 10)), r=float(job.get("r", 20.0)),
                case=int(job.get("case", 1)))
        else:
            lev = job.get("leverage")
            cfg = simbench.HomoSimConfig(
                n=int(job.get("n", 1000)), p=int(job.get("p", 15)),
                k=int(job.get("k", 100)), r=float(job.get("r", 5.0)),
                leverage=None if lev is None else float(lev))
        report = simbench.run_benchmark(method, cfg, reps, base_seed,
                                        workers=args.threads)
        lines.append(simbench.format_row(method, cfg, report))
        log.info("bench: %s", lines[-1])
    with open(dest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(dest)
    return 0


def _add_io_args(sp, need_lambda=False):
    sp.add_argument("--input", required=True)
    sp.add_argument("--response", required=True)
    sp.add_argument("--predictors", default="")
    sp.add_argument("--no-intercept", action="store_true")
    sp.add_argument("--tab", action="store_true", help="tab-delimited input")
    sp.add_argument("--lambda", dest="lam", type=float,
                    required=need_lambda, default=None)
    sp.add_argument("--out", default=".")


def _add_method_args(sp):
    sp.add_argument("--method", choices=["pwls", "apwls", "hpwls"],
                    default="apwls")
    sp.add_argument("--g", choices=list(hetero.G_KINDS), default="absolute")
    sp.add_argument("--z-cols", default="",
                    help="1-based predictor columns for the variance covariate")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pwls",
        description="Penalized weighted least squares with outlier flagging")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="single-penalty fit, writes fit.json")
    _add_io_args(sp, need_lambda=True)
    _add_method_args(sp)
    sp.add_argument("--format", choices=["json", "csv"], default="json")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("path", help="penalty path, writes path.csv")
    _add_io_args(sp)
    _add_method_args(sp)
    sp.set_defaults(func=cmd_path)

    sp = sub.add_parser("tune", help="select the penalty, writes tune.json")
    _add_io_args(sp)
    _add_method_args(sp)
    sp.add_argument("--tuner", choices=["bic", "stability"], default="bic")
    sp.add_argument("--B", type=int, default=50, help="stability pairs")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("check-theorem1",
                        help="compare the M and penalized-weights routes")
    _add_io_args(sp, need_lambda=True)
    sp.add_argument("--c", type=float, default=1.0)
    sp.set_defaults(func=cmd_check_theorem1)

    sp = sub.add_parser("bench", help="simulation benchmark, writes bench.csv")
    sp.add_argument("--config", required=True, help="JSON benchmark spec")
    sp.add_argument("--out", default=".")
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("PWLS_LOG", "quiet"), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except PwlsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
