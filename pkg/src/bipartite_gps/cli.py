"""Command-line front end.

    bipartite-gps <subcommand> --config run.json [--jobs N] [--seed S] [--out DIR]

Subcommands: simulate, derive, balance, fit, bootstrap, report.  Exit status
is 0 on success, 1 on validation errors and 2 on estimation failures; on
failure an ``error.json`` record is written to the output directory and to
stderr.  Log level comes from the ``BIPARTITE_LOG`` environment variable.
"""

import argparse
import csv
import dataclasses
import functools
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import CAVEAT, BootstrapConfig, egocentric_bootstrap
from .data_model import CovariateSchema, fmt, load_dataset, summarize_by_treatment, write_dataset
from .effects import EstimationConfig, pipeline_statistics, run_pipeline, statistics
from .errors import BipartiteError, ConfigError
from .exposure import analysis_frame, derive_exposures, filter_eligible
from .propensity import balance_table, fit_propensity
from .synth import SynthConfig, generate, true_estimands

log = logging.getLogger("bipartite_gps")

SUBCOMMANDS = ("simulate", "derive", "balance", "fit", "bootstrap", "report")


@dataclass
class RunConfig:
    interventional: Path = None
    outcome: Path = None
    interference: Path = None
    schema: CovariateSchema = field(default_factory=CovariateSchema)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    replicates: int = 500
    ci_level: float = 0.95
    max_failure_fraction: float = 0.2
    eligibility_threshold: float = None
    output_dir: Path = Path("out")
    seed: int = 0
    jobs: int = 1
    simulate: SynthConfig = field(default_factory=SynthConfig)
    raw: dict = field(default_factory=dict)

    def bootstrap_config(self):
        return BootstrapConfig(replicates=self.replicates, seed=self.seed,
                               ci_level=self.ci_level, jobs=self.jobs,
                               max_failure_fraction=self.max_failure_fraction)

    def resolved(self):
        """Canonical, fully-defaulted config record (paths as given)."""
        est = self.estimation
        return {
            "data": {k: None if getattr(self, k) is None else str(getattr(self, k))
                     for k in ("interventional", "outcome", "interference")},
            "schema": self.schema.to_dict(),
            "estimation": {
                "K": est.K, "trim_rule": est.trim_rule, "trim_alpha": est.trim_alpha,
                "quantile_reference": est.quantile_reference,
                "gps_include_z": est.gps_include_z, "zg_interaction": est.zg_interaction,
                "g_grid": list(est.g_grid),
            },
            "bootstrap": {"replicates": self.replicates, "ci_level": self.ci_level,
                          "max_failure_fraction": self.max_failure_fraction},
            "eligibility_threshold": self.eligibility_threshold,
            "seed": self.seed,
            "jobs": self.jobs,
            "simulate": self.simulate.to_dict(),
        }


def _grid(spec):
    if spec is None:
        return None
    if isinstance(spec, dict):
        start, stop, step = spec.get("start", 0.0), spec.get("stop", 1.0), spec.get("step", 0.02)
        n = int(round((stop - start) / step))
        return tuple((start + step * np.arange(n + 1)).tolist())
    return tuple(spec)


def parse_config(raw, base=Path(".")):
    """Build a RunConfig from a JSON mapping; relative paths resolve from ``base``."""
    known = {"data", "schema", "estimation", "bootstrap", "eligibility_threshold",
             "output_dir", "seed", "jobs", "simulate"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}", keys=sorted(unknown))
    try:
        data = raw.get("data", {})
        cfg = RunConfig(raw=raw)
        for key in ("interventional", "outcome", "interference"):
            if data.get(key) is not None:
                setattr(cfg, key, base / data[key])
        cfg.schema = CovariateSchema.from_dict(raw.get("schema", {}))
        est = dict(raw.get("estimation", {}))
        if "g_grid" in est:
            est["g_grid"] = _grid(est["g_grid"])
        cfg.estimation = EstimationConfig(**est)
        boot = raw.get("bootstrap", {})
        unknown = set(boot) - {"replicates", "ci_level", "max_failure_fraction"}
        if unknown:
            raise ConfigError(f"unknown bootstrap keys: {sorted(unknown)}")
        cfg.replicates = int(boot.get("replicates", cfg.replicates))
        cfg.ci_level = float(boot.get("ci_level", cfg.ci_level))
        cfg.max_failure_fraction = float(boot.get("max_failure_fraction",
                                                  cfg.max_failure_fraction))
        cfg.eligibility_threshold = raw.get("eligibility_threshold")
        cfg.output_dir = base / raw.get("output_dir", "out")
        cfg.seed = int(raw.get("seed", 0))
        cfg.jobs = int(raw.get("jobs", 1))
        cfg.simulate = SynthConfig.from_dict(raw.get("simulate", {}))
        cfg.bootstrap_config()
    except BipartiteError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return cfg


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return Path(path)


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return Path(path)


class Runner:
    """Runs subcommands against one RunConfig, caching shared stages."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self._cache = {}

    def _emit(self, path):
        self.outputs.append(Path(path))
        return path

    def dataset(self):
        if "dataset" not in self._cache:
            cfg = self.cfg
            for key in ("interventional", "outcome", "interference"):
                if getattr(cfg, key) is None:
                    raise ConfigError(f"config data.{key} is required")
                if not Path(getattr(cfg, key)).exists():
                    raise ConfigError(f"input file not found: {getattr(cfg, key)}")
            ds = load_dataset(cfg.interventional, cfg.outcome, cfg.interference, cfg.schema)
            if cfg.eligibility_threshold is not None:
                ds, keep = filter_eligible(ds, cfg.eligibility_threshold)
                log.info("eligibility filter kept %d of %d outcome units",
                         int(keep.sum()), keep.size)
            self._cache["dataset"] = ds
        return self._cache["dataset"]

    def exposures(self):
        if "exposures" not in self._cache:
            self._cache["exposures"] = derive_exposures(self.dataset())
        return self._cache["exposures"]

    def frame(self):
        if "frame" not in self._cache:
            self._cache["frame"] = analysis_frame(self.dataset(), self.exposures())
        return self._cache["frame"]

    def pipeline(self):
        if "pipeline" not in self._cache:
            self._cache["pipeline"] = run_pipeline(self.frame(), self.cfg.schema,
                                                   self.cfg.estimation)
            for k, fit in enumerate(self._cache["pipeline"].outcome_fits, start=1):
                if not fit.converged:
                    log.warning("outcome model in stratum %d: %s", k, fit.message)
            if self._cache["pipeline"].propensity.phi_fit.separated:
                log.warning("key-associated propensity model shows separation")
        return self._cache["pipeline"]

    # --- subcommands -----------------------------------------------------

    def simulate(self):
        ds, truth = generate(self.cfg.simulate)
        ds = ds.with_schema(self.cfg.schema if self.cfg.raw.get("schema") else ds.schema)
        for path in write_dataset(ds, self.out).values():
            self._emit(path)
        ex = derive_exposures(ds)
        te = true_estimands(truth, ex.g, self.cfg.estimation.grid)
        record = {
            "truth": truth.to_dict(),
            "synth_config": self.cfg.simulate.to_dict(),
            "estimands": {
                "g_grid": te["g_grid"].tolist(), "mu_z0": te["mu"][0].tolist(),
                "mu_z1": te["mu"][1].tolist(), "tau_of_g": te["tau_of_g"].tolist(),
                "tau": te["tau"], "Delta0": te["Delta0"], "Delta1": te["Delta1"],
            },
        }
        self._emit(write_json(self.out / "ground_truth.json", record))

    def derive(self):
        self._emit(self.exposures().write_csv(self.out / "exposures.csv"))

    def balance(self):
        frame = self.frame()
        est = self.cfg.estimation
        strata = (self.pipeline().propensity if "pipeline" in self._cache else
                  fit_propensity(frame, self.cfg.schema, K=est.K, trim_rule=est.trim_rule,
                                 trim_alpha=est.trim_alpha,
                                 quantile_reference=est.quantile_reference,
                                 gps_include_z=est.gps_include_z))
        table = balance_table(frame, self.cfg.schema, strata)
        cols = ["covariate", "smd_unadjusted"] + [f"smd_stratum_{k}"
                                                 for k in range(1, strata.K + 1)]
        cols.append("smd_stratum_avg")
        self._emit(_write_rows(self.out / "balance.csv", cols,
                               table[cols].itertuples(index=False)))
        summary = summarize_by_treatment(self.dataset(), self.exposures())
        self._emit(_write_rows(self.out / "covariate_summary.csv", list(summary.columns),
                               summary.itertuples(index=False)))
        self._emit(write_json(self.out / "stratification.json", strata.summary()))

    def fit(self):
        res = self.pipeline()
        s = res.surface
        self._emit(_write_rows(self.out / "surface.csv", ["z", "g", "stratum", "mu"], s.rows()))
        self._emit(_write_rows(self.out / "pooled_surface.csv", ["z", "g", "mu"],
                               [(z, g, m) for z in (0, 1)
                                for g, m in zip(s.g_grid, s.mu[z])]))
        record = res.effects.to_dict()
        record["scale"] = s.scale
        record["extrapolation_fraction"] = s.extrapolation.tolist()
        record["n_kept"] = int(res.propensity.kept.sum())
        self._emit(write_json(self.out / "estimands.json", record))
        self._emit(write_json(self.out / "fits.json", {
            "propensity": res.propensity.summary(),
            "outcome_fits": [f.to_dict() for f in res.outcome_fits],
        }))

    def bootstrap(self):
        res = self.pipeline()
        stat = functools.partial(pipeline_statistics, schema=self.cfg.schema,
                                 config=self.cfg.estimation)
        boot = egocentric_bootstrap(self.frame(), self.cfg.bootstrap_config(), stat,
                                    point=statistics(res))
        log.warning(CAVEAT)
        self._emit(write_json(self.out / "estimands_ci.json", boot.to_dict()))
        grid = res.surface.g_grid
        rows = []
        for z in (0, 1):
            name = f"mu{z}"
            rows += [(z, g, m, lo, hi) for g, m, lo, hi in
                     zip(grid, boot.point[name], boot.lower[name], boot.upper[name])]
        self._emit(_write_rows(self.out / "curves_ci.csv", ["z", "g", "mu", "lo", "hi"], rows))

    def report(self):
        self.derive()
        self.balance()
        self.fit()
        self.bootstrap()
        self.manifest("report")

    def manifest(self, command):
        cfg = self.cfg
        resolved = cfg.resolved()
        canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
        inputs = {}
        for key in ("interventional", "outcome", "interference"):
            path = getattr(cfg, key)
            if path is not None and Path(path).exists():
                inputs[key] = {"path": str(path), "sha256": sha256_file(path)}
        outputs = {p.name: sha256_file(p) for p in sorted(set(self.outputs))}
        record = {
            "command": command,
            "config": resolved,
            "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
            "inputs": inputs,
            "outputs": outputs,
            "seed": cfg.seed,
            "jobs": cfg.jobs,
            "versions": {"bipartite_gps": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
        }
        return write_json(self.out / "manifest.json", record)


def _configure_logging():
    level = os.environ.get("BIPARTITE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser():
    parser = argparse.ArgumentParser(prog="bipartite-gps", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--jobs", type=int, default=None, help="bootstrap worker processes")
    parser.add_argument("--seed", type=int, default=None, help="overrides config seed")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def run_subcommand(argv=None):
    """Entry point; returns the exit status."""
    _configure_logging()
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out) if args.out else None
    try:
        config_path = Path(args.config)
        try:
            raw = json.loads(config_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        cfg = parse_config(raw, base=config_path.parent)
        if args.seed is not None:
            cfg.seed = args.seed
            if args.subcommand == "simulate":
                cfg.simulate = dataclasses.replace(cfg.simulate, seed=args.seed)
        if args.jobs is not None:
            cfg.jobs = args.jobs
        if out_dir is not None:
            cfg.output_dir = out_dir
        out_dir = cfg.output_dir
        cfg.bootstrap_config()
        runner = Runner(cfg)
        getattr(runner, args.subcommand)()
        if args.subcommand != "report":
            runner.manifest(args.subcommand)
    except BipartiteError as exc:
        return _fail(exc.to_dict(), exc.exit_status, out_dir)
    except ValueError as exc:
        return _fail({"code": "cli.config", "message": str(exc)}, 1, out_dir)
    return 0


def _fail(record, status, out_dir):
    text = json.dumps(record, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return status


def main():
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
