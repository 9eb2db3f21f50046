"""Command-line front end: ``feederid <command> --config cfg.json --out DIR``.

Commands
--------
generate   write a dataset bundle (feeder.json, p.csv, q.csv, v.csv, partition.json)
estimate   run ZI and AM, write report.json and reactance.csv
cv         K-fold cross validation over (lambda, alpha), write cv.json
validate   AC voltage prediction error of a report on a holdout bundle
powerflow  AC and LDF voltages for the configured load series
defaults   print the default configuration

Every output directory gets a manifest.json with the seed, version, input
hashes and hyperparameters.  Nothing time-dependent is written, so reruns are
byte-identical.  Exit codes: 0 ok, 2 configuration error, 3 numerical
failure, 4 I/O or data-format error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import subprocess
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataFormatError, FeederIdError, InvalidConfig, MaxItersExceeded, NumericalError
from .estimator import Hyperparameters, am_solve, cross_validate, validate_voltage
from .feeder import load_bundled, load_feeder, random_feeder, save_feeder
from .powerflow import InjectionState, ac_sweep, ldf_voltage, power_mismatch
from .regression import RegressionOperator
from .scenario import (
    LoadSeries,
    ObservabilityPartition,
    SparseChangeConfig,
    difference_dataset,
    ingest_csv,
    make_partition,
    simulate_voltages,
    synth_loads,
    write_series_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "feeder_path": "bundled:radial12",
    "data": {"synthetic": {"T": 200, "change_prob": 0.05, "magnitude": [0.01, 0.1],
                           "pf_range": [0.9, 0.95], "load_max": 0.2}},
    "partition": {"fraction": 0.5, "always_observe_leaves": True, "voltage_observed": "all"},
    "mode": "RATIO_FIXED",
    "ratios": None,
    "truth_mode": "AC",
    "noise_sigma": 0.0,
    "hyperparameters": asdict(Hyperparameters()),
    "cv": {"lambda_grid": [3e-8, 1e-7, 3e-7], "alpha_grid": [1e-6, 1e-5, 1e-4], "K": 5},
    "out": "run",
    "seed": 0,
}


class ConfigError(InvalidConfig):
    pass


# configuration -----------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k == "data":
            out[k] = copy.deepcopy(v)      # data sources replace, never mix
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, seed=None) -> dict:
    """Defaults overlaid with the JSON file at ``path``; ``seed`` overrides the file."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: the configuration must be a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = _merge(cfg, user)
        cfg["_path"] = str(Path(path).resolve().parent)
    if seed is not None:
        cfg["seed"] = seed
    data = cfg["data"]
    if not isinstance(data, dict) or len(set(data) & {"synthetic", "bundle"}) != 1 or len(data) != 1:
        raise ConfigError("data must name exactly one source: 'synthetic' or 'bundle'")
    if cfg["mode"] not in ("FULL", "RATIO_FIXED"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    return cfg


def _resolve(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_path", ".")) / p


def _hyper(cfg) -> Hyperparameters:
    try:
        return Hyperparameters(**cfg["hyperparameters"])
    except TypeError as e:
        raise ConfigError(f"bad hyperparameters: {e}") from None


def _feeder(cfg):
    source = str(cfg["feeder_path"])
    if source.startswith("bundled:"):
        try:
            return load_bundled(source.split(":", 1)[1])
        except KeyError as e:
            raise ConfigError(str(e)) from None
    if source.startswith("random:"):
        return random_feeder(int(source.split(":", 1)[1]), np.random.default_rng(cfg["seed"]))
    return load_feeder(_resolve(cfg, source))


def _partition(cfg, feeder) -> ObservabilityPartition:
    pcfg = dict(cfg["partition"] or {})
    observed = pcfg.get("observed")
    fraction = pcfg.get("fraction") if observed is None else None
    return make_partition(feeder, fraction=fraction, observed=observed, seed=cfg["seed"],
                          voltage_observed=pcfg.get("voltage_observed"),
                          always_observe_leaves=bool(pcfg.get("always_observe_leaves", False)))


def _synthetic(cfg, feeder):
    syn = dict(cfg["data"]["synthetic"])
    try:
        T = int(syn.pop("T"))
        sc = SparseChangeConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in syn.items()},
                                seed=cfg["seed"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad synthetic data settings: {e}") from None
    loads = synth_loads(feeder, sc, T)
    v = simulate_voltages(feeder, loads, cfg["truth_mode"])
    if cfg["noise_sigma"]:
        v = v + np.random.default_rng(cfg["seed"]).normal(0.0, cfg["noise_sigma"], v.shape)
    return loads, v


class Inputs:
    """Everything a command needs: feeder, loads, voltages, partition and file hashes."""

    def __init__(self, cfg, bundle=None):
        self.hashes = {}
        bundle = bundle or cfg["data"].get("bundle")
        if bundle is not None:
            d = _resolve(cfg, bundle)
            for name in ("feeder.json", "p.csv", "q.csv", "v.csv", "partition.json", "manifest.json"):
                if (d / name).exists():
                    self.hashes[name] = _sha256(d / name)
            self.feeder = load_feeder(d / "feeder.json")
            self.loads, self.v = ingest_csv(d / "p.csv", d / "q.csv", d / "v.csv", self.feeder)
            part_file = d / "partition.json"
            if part_file.exists():
                self.partition = ObservabilityPartition.from_dict(
                    self.feeder, json.loads(part_file.read_text()))
            else:
                self.partition = _partition(cfg, self.feeder)
            man = d / "manifest.json"
            self.truth_known = bool(json.loads(man.read_text()).get("truth_known")) if man.exists() else False
        else:
            self.feeder = _feeder(cfg)
            self.loads, self.v = _synthetic(cfg, self.feeder)
            self.partition = _partition(cfg, self.feeder)
            self.truth_known = True
        self.z = None if cfg["ratios"] is None else np.asarray(cfg["ratios"], dtype=float)

    def dataset(self):
        return difference_dataset(self.loads, self.v, self.partition)


# output helpers -------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _manifest(out, command, cfg, inputs, outputs, extra=None):
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    man = {
        "command": command,
        "version": _version(),
        "seed": cfg["seed"],
        "config": public,
        "hyperparameters": public["hyperparameters"],
        "truth_known": inputs.truth_known,
        "inputs": inputs.hashes,
        "outputs": {name: _sha256(out / name) for name in outputs},
    }
    man.update(extra or {})
    _dump(out / "manifest.json", man)


def _outdir(cfg, out):
    d = Path(out if out is not None else cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


# commands ---------------------------------------------------------------------------

def cmd_generate(cfg, out=None, **_):
    inputs = Inputs(cfg)
    d = _outdir(cfg, out)
    f = inputs.feeder
    save_feeder(f, d / "feeder.json")
    times = np.arange(inputs.loads.p.shape[0])
    write_series_csv(d / "p.csv", f, inputs.loads.p, times)
    write_series_csv(d / "q.csv", f, inputs.loads.q, times)
    write_series_csv(d / "v.csv", f, inputs.v, times)
    _dump(d / "partition.json", inputs.partition.to_dict(f))
    _manifest(d, "generate", cfg, inputs, ["feeder.json", "p.csv", "q.csv", "v.csv", "partition.json"])
    return d


def _dump_regression(d, inputs, cfg, S, t) -> str:
    """Write A(s_t) at the final estimate: observed rows by bus label, one column per parameter."""
    ds = inputs.dataset()
    if not 1 <= t <= ds.T:
        raise ConfigError(f"--dump-regression step must lie in 1..{ds.T}")
    f = inputs.feeder
    op = RegressionOperator(f, cfg["mode"], inputs.z, ds.partition.vobs_cols)
    dp = np.nan_to_num(ds.dp[t - 1])
    dq = np.nan_to_num(ds.dq[t - 1])
    cols = ds.partition.unobs_cols
    dp[cols], dq[cols] = S[t - 1, 0::2], S[t - 1, 1::2]
    A = op.assemble(dp, dq)
    names = [f"x_{k}" for k in range(1, f.n_lines + 1)]
    if cfg["mode"] == "FULL":
        names = [f"r_{k}" for k in range(1, f.n_lines + 1)] + names
    name = f"regression_t{t}.csv"
    with open(d / name, "w") as fh:
        fh.write("bus," + ",".join(names) + "\n")
        for i, row in zip(op.rows, A):
            fh.write(f.labels[i + 1] + "," + ",".join("%.17g" % v for v in row) + "\n")
    return name


def cmd_estimate(cfg, out=None, threads=1, dump_regression=None, bundle=None, **_):
    inputs = Inputs(cfg, bundle)
    d = _outdir(cfg, out)
    hp = _hyper(cfg)
    truth = inputs.feeder if inputs.truth_known else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MaxItersExceeded)
        res = am_solve(inputs.dataset(), inputs.feeder, cfg["mode"], hp, inputs.z,
                       truth=truth, threads=threads)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    rep = res.report.to_dict()
    rep["warnings"] = sorted({str(w.message) for w in caught})
    _dump(d / "report.json", rep)
    x_am, x_zi = res.report.reactance(inputs.feeder)
    lines = inputs.feeder.lines()
    with open(d / "reactance.csv", "w") as fh:
        fh.write("line,from,to,x_true,x_am,x_zi\n" if truth is not None else "line,from,to,x_am,x_zi\n")
        for k, seg in enumerate(lines):
            vals = ([inputs.feeder.x[k]] if truth is not None else []) + [x_am[k], x_zi[k]]
            fh.write(",".join([str(k + 1), seg.from_bus, seg.to_bus] + ["%.17g" % v for v in vals]) + "\n")
    outputs = ["report.json", "reactance.csv"]
    if dump_regression is not None:
        outputs.append(_dump_regression(d, inputs, cfg, res.state.s_u, dump_regression))
    _manifest(d, "estimate", cfg, inputs, outputs)
    summary = f"AM TVE {rep['tve']:.6g}  ZI TVE {rep['tve_zi']:.6g}" if truth is not None else "no truth"
    print(f"{summary}  iterations {rep['iterations']}")
    return d


def cmd_cv(cfg, out=None, threads=1, bundle=None, **_):
    inputs = Inputs(cfg, bundle)
    d = _outdir(cfg, out)
    cvc = cfg["cv"]
    res = cross_validate(inputs.dataset(), inputs.feeder, cfg["mode"], cvc["lambda_grid"],
                         cvc["alpha_grid"], K=int(cvc.get("K", 5)), seed=cfg["seed"],
                         hp=_hyper(cfg), z=inputs.z, threads=threads)
    _dump(d / "cv.json", {"lambda": res.lam, "alpha": res.alpha, "K": len(res.folds),
                          "fold_sizes": [len(f) for f in res.folds], "table": res.table})
    _manifest(d, "cv", cfg, inputs, ["cv.json"])
    print(f"selected lambda {res.lam:g}  alpha {res.alpha:g}")
    return d


def cmd_validate(cfg, out=None, report=None, holdout=None, **_):
    if report is None or holdout is None:
        raise ConfigError("validate needs --report and --holdout")
    inputs = Inputs(cfg, bundle=holdout)
    inputs.hashes["report.json"] = _sha256(report)
    rep = json.loads(Path(report).read_text())
    d = _outdir(cfg, out)
    mode = rep.get("mode", cfg["mode"])
    errs = {name: validate_voltage(np.asarray(rep[key], dtype=float), inputs.feeder, inputs.loads,
                                   mode, inputs.z)
            for name, key in (("am", "theta"), ("zi", "theta_zi"))}
    times = inputs.loads.times[1:] if inputs.loads.times is not None else np.arange(1, len(errs["am"]) + 1)
    with open(d / "voltage_error.csv", "w") as fh:
        fh.write("t,am,zi\n")
        for t, a, z in zip(times, errs["am"], errs["zi"]):
            fh.write(f"{t},{a:.17g},{z:.17g}\n")
    _manifest(d, "validate", cfg, inputs, ["voltage_error.csv"],
              {"mean_error": {k: float(v.mean()) for k, v in errs.items()}})
    print(f"mean voltage error  AM {errs['am'].mean():.6g}  ZI {errs['zi'].mean():.6g}")
    return d


def cmd_powerflow(cfg, out=None, bundle=None, **_):
    inputs = Inputs(cfg, bundle)
    d = _outdir(cfg, out)
    f = inputs.feeder
    inj = InjectionState(inputs.loads.p, inputs.loads.q, max_abs=np.inf)
    V, sweeps = ac_sweep(f, inj)
    resid = float(np.abs(power_mismatch(f, V, inj.p + 1j * inj.q)).max())
    times = np.arange(inj.p.shape[0])
    write_series_csv(d / "v_ac.csv", f, np.abs(V), times)
    write_series_csv(d / "v_ldf.csv", f, ldf_voltage(f, None, inj).v, times)
    _manifest(d, "powerflow", cfg, inputs, ["v_ac.csv", "v_ldf.csv"],
              {"sweeps": sweeps, "max_mismatch": resid})
    print(f"AC sweep converged in {sweeps} sweeps, max mismatch {resid:.3g}")
    return d


def cmd_defaults(**_):
    print(json.dumps(DEFAULT_CONFIG, indent=1, sort_keys=True))


COMMANDS = {"generate": cmd_generate, "estimate": cmd_estimate, "cv": cmd_cv,
            "validate": cmd_validate, "powerflow": cmd_powerflow, "defaults": cmd_defaults}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="feederid", description="Line parameter estimation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "defaults":
            continue
        p.add_argument("--config", help="JSON configuration (defaults: see 'defaults')")
        p.add_argument("--out", help="output directory (default: config 'out')")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for per-step solves")
        p.add_argument("--bundle", help="dataset bundle directory, overriding the configured data")
        if name == "estimate":
            p.add_argument("--dump-regression", type=int, metavar="T",
                           help="also write A(s_t) for step T (1-based) as regression_tT.csv")
        if name == "validate":
            p.add_argument("--report", required=True, help="report.json written by 'estimate'")
            p.add_argument("--holdout", required=True, help="holdout dataset bundle directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "defaults":
            cmd_defaults()
            return EXIT_OK
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config, args.seed)
        kw = {k: v for k, v in vars(args).items() if k not in ("command", "config", "seed")}
        COMMANDS[args.command](cfg, **kw)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataFormatError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (FeederIdError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
