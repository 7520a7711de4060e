"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``mc-study``, ``bootstrap``, ``replay``
and ``fetch-melanoma``. Every command that writes an output also writes a
run manifest (``<output>.manifest.json``) with the fully resolved arguments,
so ``dnbcure replay <manifest>`` regenerates the same bytes.

Exit codes: 0 success, 2 usage, 3 data, 4 numerical, 5 I/O, 6 fit did not
converge (the report is still written).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from dnbcure.data_io import (
    DesignSpec,
    IOFailure,
    default_melanoma_path,
    fetch_melanoma,
    read_json,
    read_table,
    build_dataset,
    write_json,
    write_rows_csv,
    write_simulated_csv,
)
from dnbcure.estimator import auto_initial_guess
from dnbcure.exceptions import DataError, DNBCureError, UsageError
from dnbcure.inference import bootstrap_se
from dnbcure.likelihood import project
from dnbcure.model import Dataset, ParamVector, cure_rate, logistic_link, loglinear_link
from dnbcure.optimizer import VARIANTS, OptimizerConfig, fit, normalize_variant
from dnbcure.simulation import SimSetting, gen_dataset, replicate_rng, run_mc_study

EXIT_OK = 0
EXIT_NOT_CONVERGED = 6
THREADS_ENV = "DNBCURE_THREADS"
MC_COLUMNS = ["parameter", "variant", "bias", "rmse", "converged_frac", "mean_iters"]


def tool_version() -> str:
    try:
        return version("dnbcure")
    except PackageNotFoundError:  # running from a source tree
        return "0+unknown"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _split(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def _optimizer_config(args) -> OptimizerConfig:
    return OptimizerConfig(k_max=args.kmax, tol=args.tol, lam=args.lam, variant=getattr(args, "variant", "hz"))


def _load_setting(path: str | None, seed: int | None) -> SimSetting:
    raw = read_json(path) if path else {}
    if not isinstance(raw, dict):
        raise DataError(f"{path}: setting file must hold a JSON object")
    if seed is not None:
        raw = {**raw, "seed": seed}
    return SimSetting.from_dict(raw)


def _theta_from_json(obj, data: Dataset) -> np.ndarray:
    """Accept a fit report, a truths file, a ParamVector dict or a bare list."""
    if isinstance(obj, dict):
        for key in ("theta", "theta_hat", "truths"):
            if key in obj:
                return _theta_from_json(obj[key], data)
        try:
            return ParamVector.from_dict(obj).to_array()
        except KeyError as exc:
            raise DataError(f"parameter file lacks field {exc}") from None
    arr = np.asarray(obj, dtype=float)
    if arr.shape != (3 + data.q1 + data.q2,):
        raise UsageError(f"parameter vector has length {arr.size}, the design needs {3 + data.q1 + data.q2}")
    return arr


def _initial_value(spec: str, data: Dataset) -> np.ndarray:
    if spec == "auto":
        return auto_initial_guess(data)
    if Path(spec).suffix == ".json" or Path(spec).exists():
        return project(_theta_from_json(read_json(spec), data))
    try:
        values = [float(v) for v in _split(spec)]
    except ValueError:
        raise UsageError(f"--init must be 'auto', a JSON file or comma-separated numbers, got {spec!r}") from None
    return project(_theta_from_json(values, data))


def _write_manifest(out: str | Path, command: str, args: dict, inputs: list, outputs: list, wall: float,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": tool_version(),
        "seed": args.get("seed"),
        "args": args,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_time": wall,
    }
    if extra:
        manifest.update(extra)
    write_json(manifest_path(out), manifest)


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _threads(args) -> int:
    n = args.threads
    if n is None:
        env = os.environ.get(THREADS_ENV, "1")
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    setting = _load_setting(args.setting, args.seed)
    data, truths = gen_dataset(setting, replicate_rng(setting.seed, 0))
    out = Path(args.out)
    truths_out = Path(args.truths_out) if args.truths_out else out.with_suffix(".truths.json")
    write_simulated_csv(out, data.time, data.event, data.x_eta[:, 0], data.x_p[:, 1])
    write_json(truths_out, {
        "theta": truths.to_array().tolist(),
        "truths": truths.to_dict(),
        "setting": setting.to_dict(),
        "design": DesignSpec(["thickness"], ["ulcer"]).to_dict(),
    })
    return EXIT_OK


def _design_from_args(args) -> DesignSpec:
    eta = _split(args.eta_covariates)
    if not eta:
        raise UsageError("--eta-covariates needs at least one column")
    return DesignSpec(_split(args.p_covariates), eta, _split(args.categorical))


def cmd_fit(args) -> int:
    spec = _design_from_args(args)
    data = build_dataset(read_table(args.data), spec)
    theta0 = _initial_value(args.init, data)
    result = fit(data, theta0, _optimizer_config(args))
    theta = result.theta_hat
    cure = cure_rate(loglinear_link(data.x_eta, theta.beta2), logistic_link(data.x_p, theta.beta1), theta.phi)
    names = data.param_names()
    report = {
        "theta": result.theta.tolist(),
        "theta_hat": theta.to_dict(),
        "estimates": dict(zip(names, result.theta.tolist())),
        "param_names": names,
        "loglik": result.loglik,
        "iterations": result.iterations,
        "converged": result.converged,
        "status": result.status,
        "n": data.n,
        "cure_rates": np.asarray(cure).tolist(),
        "mean_cure_rate": float(np.mean(cure)),
        "design": spec.to_dict(),
        "initial_value": np.asarray(theta0).tolist(),
        "config": result_config(args),
    }
    if args.truths:
        truths = _theta_from_json(read_json(args.truths), data)
        report["truths"] = truths.tolist()
        report["deviation"] = (result.theta - truths).tolist()
    write_json(args.out, report)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def result_config(args) -> dict:
    return _optimizer_config(args).to_dict()


def cmd_mc_study(args) -> int:
    setting = _load_setting(args.setting, args.seed)
    variants = [normalize_variant(v) for v in _split(args.variants)]
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    cfg = OptimizerConfig(k_max=args.kmax, tol=args.tol, lam=args.lam)
    report = run_mc_study(setting, args.reps, variants, cfg, n_jobs=_threads(args))
    write_rows_csv(args.out, MC_COLUMNS, report.rows())
    args._extra = {"dataset_hashes": report.dataset_hashes, "setting": setting.to_dict()}
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    if args.B < 2:
        raise UsageError("--B must be >= 2")
    fit_report = read_json(args.report)
    if not isinstance(fit_report, dict) or "design" not in fit_report:
        raise DataError(f"{args.report} is not a fit report (no 'design' field)")
    spec = DesignSpec.from_dict(fit_report["design"])
    data = build_dataset(read_table(args.data), spec)
    theta_hat = project(_theta_from_json(fit_report, data))
    cfg = OptimizerConfig(**{**fit_report.get("config", {}), **_cfg_overrides(args)})
    res = bootstrap_se(data, theta_hat, B=args.B, cfg=cfg, rng=args.seed, n_jobs=_threads(args))
    out = res.to_dict()
    out["param_names"] = res.param_names
    out["se_vector"] = res.se.tolist()
    out["seed"] = args.seed
    out["theta_hat"] = theta_hat.tolist()
    write_json(args.out, out)
    return EXIT_OK


def _cfg_overrides(args) -> dict:
    over = {}
    for flag, key in (("kmax", "k_max"), ("tol", "tol"), ("lam", "lam")):
        value = getattr(args, flag, None)
        if value is not None:
            over[key] = value
    return over


def cmd_fetch_melanoma(args) -> int:
    out = Path(args.out) if args.out else default_melanoma_path()
    frame = fetch_melanoma(out)
    print(f"wrote {len(frame)} rows to {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    manifest = read_json(args.manifest)
    try:
        command, recorded = manifest["command"], dict(manifest["args"])
    except (KeyError, TypeError):
        raise DataError(f"{args.manifest} is not a run manifest") from None
    if command not in _COMMANDS or command == "replay":
        raise DataError(f"manifest names unknown command {command!r}")
    if args.out:
        recorded["out"] = args.out
    if args.threads is not None:
        recorded["threads"] = args.threads
    return _run(command, argparse.Namespace(**recorded))


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "mc-study": cmd_mc_study,
    "bootstrap": cmd_bootstrap,
    "fetch-melanoma": cmd_fetch_melanoma,
    "replay": cmd_replay,
}

#: Argument names that are plumbing, not part of the recorded configuration.
_NOT_RECORDED = {"command", "func", "_extra"}
_PATH_ARGS = ("setting", "data", "report", "truths", "out", "truths_out")


def _run(command: str, args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    code = _COMMANDS[command](args)
    if command in ("replay", "fetch-melanoma"):
        return code
    recorded = {k: v for k, v in vars(args).items() if k not in _NOT_RECORDED}
    # absolute paths so the manifest replays from any working directory
    for key in _PATH_ARGS:
        if recorded.get(key):
            recorded[key] = str(Path(recorded[key]).resolve())
    if isinstance(recorded.get("init"), str) and recorded["init"] != "auto" and Path(recorded["init"]).exists():
        recorded["init"] = str(Path(recorded["init"]).resolve())
    inputs = [recorded[k] for k in ("setting", "data", "report", "truths") if recorded.get(k)]
    if isinstance(recorded.get("init"), str) and recorded["init"] != "auto" and Path(recorded["init"]).exists():
        inputs.append(recorded["init"])
    outputs = [recorded["out"]]
    if command == "simulate":
        outputs.append(recorded["truths_out"] or str(Path(recorded["out"]).with_suffix(".truths.json")))
    _write_manifest(recorded["out"], command, recorded, inputs, outputs, time.perf_counter() - t0,
                    getattr(args, "_extra", None))
    return code


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _add_optimizer_flags(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    base = OptimizerConfig()
    p.add_argument("--tol", type=float, default=base.tol if defaults else None,
                   help="relative-change stopping tolerance")
    p.add_argument("--kmax", type=int, default=base.k_max if defaults else None, help="maximum iterations")
    p.add_argument("--lambda", dest="lam", type=float, default=base.lam if defaults else None,
                   help="Armijo sufficient-increase constant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnbcure", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one synthetic dataset")
    p.add_argument("setting", nargs="?", help="JSON simulation setting (defaults if omitted)")
    p.add_argument("--seed", type=_seed, help="overrides the setting's seed")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--truths-out", help="truths JSON (default: <out>.truths.json)")

    p = sub.add_parser("fit", help="fit the model to a CSV file")
    p.add_argument("data", help="CSV with time,status and covariate columns")
    p.add_argument("--p-covariates", default="", help="comma-separated columns for the activation probability")
    p.add_argument("--eta-covariates", required=True, help="comma-separated columns for the mean number of risks")
    p.add_argument("--categorical", default="", help="eta columns to expand into one indicator per level")
    p.add_argument("--init", default="auto", help="'auto', a JSON parameter file, or comma-separated values")
    p.add_argument("--variant", default="hz", choices=sorted(set(VARIANTS) | {"steepest"}))
    p.add_argument("--truths", help="truths JSON; adds the deviation of the estimate to the report")
    p.add_argument("--out", required=True, help="output report JSON")
    _add_optimizer_flags(p)

    p = sub.add_parser("mc-study", help="Monte Carlo bias/RMSE table")
    p.add_argument("setting", nargs="?", help="JSON simulation setting (defaults if omitted)")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--variants", default="hz", help="comma-separated list from " + ",".join(VARIANTS))
    p.add_argument("--seed", type=_seed, help="overrides the setting's seed")
    p.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", required=True, help="output CSV table")
    _add_optimizer_flags(p)

    p = sub.add_parser("bootstrap", help="bootstrap standard errors for a fit report")
    p.add_argument("data", help="the CSV that was fitted")
    p.add_argument("report", help="fit report JSON from 'dnbcure fit'")
    p.add_argument("--B", type=int, default=500, help="number of resamples")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", required=True, help="output JSON")
    _add_optimizer_flags(p, defaults=False)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to this path instead of the recorded one")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("fetch-melanoma", help="download and convert the melanoma data")
    p.add_argument("--out", help="destination CSV (default: $DNBCURE_MELANOMA or the user cache)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    try:
        return _run(args.command, args)
    except DNBCureError as exc:
        print(f"dnbcure: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dnbcure: error: {exc}", file=sys.stderr)
        return IOFailure.exit_code


if __name__ == "__main__":
    sys.exit(main())
