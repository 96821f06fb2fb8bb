"""Command-line interface: ``pannplast {generate,simulate,train,evaluate,stats,check}``.

Every command reads an optional TOML or JSON experiment file, applies
command-line overrides, writes the fully resolved configuration to
``config.resolved.json`` in its output directory and exits non-zero with a
JSON diagnostic on stderr if anything fails.
"""
from __future__ import annotations

import copy
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import dataio, driver
from . import potentials as P
from . import training as T
from .checks import run_invariant_suite
from .constitutive import SolverSettings
from .errors import InvalidParameter, PannPlastError

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

DEFAULTS = {
    "generator": {"framework": "OW", "params": None, "seed": 0},
    "program": {"amplitude_tension": 1.05, "amplitude_compression": 0.95, "cycles": 5,
                "steps_per_branch": 100, "max_increment": driver.MAX_INCREMENT},
    "solver": {"tol": 1e-9, "max_iter": 50, "stress_scale": 1.0, "max_bisections": 8},
    "training": {**T.TrainConfig().to_dict(), "init_params": None},
    "evaluate": {"test_cycles": 7},
}

# keys that commands add to config.resolved.json for the record; ignored on load
_RECORD_ONLY = ("command", "data", "simulate", "check")


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if key not in base:
            raise InvalidParameter(f"unknown configuration key {where}{key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path)
    raw = p.read_bytes()
    doc = tomllib.loads(raw.decode()) if p.suffix == ".toml" else json.loads(raw)
    doc = {k: v for k, v in doc.items() if k not in _RECORD_ONLY}
    return _merge(DEFAULTS, doc)


def _default_params(framework: str) -> dict:
    name = framework if framework in ("AF", "OW", "BC") else "AF"
    return P.load_default_params(name)[0].to_dict()


def _resolve(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    if cfg["generator"]["params"] is None:
        cfg["generator"]["params"] = _default_params(cfg["generator"]["framework"])
    if cfg["training"]["init_params"] is None:
        cfg["training"]["init_params"] = _default_params(cfg["training"]["framework"])
    return cfg


def _settings(cfg) -> SolverSettings:
    return SolverSettings(**cfg["solver"])


def _program(cfg, cycles: int | None = None) -> driver.LoadingProgram:
    pr = cfg["program"]
    return driver.build_cycles(pr["amplitude_tension"], pr["amplitude_compression"],
                               pr["cycles"] if cycles is None else cycles,
                               pr["steps_per_branch"], pr["max_increment"])


def _train_config(cfg) -> T.TrainConfig:
    d = {k: v for k, v in cfg["training"].items() if k != "init_params"}
    return T.TrainConfig.from_dict(d)


def _write_resolved(cfg: dict, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **cfg}
    (out / "config.resolved.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if "," in text or text.startswith("["):
        return [int(s) for s in text.strip("[]").split(",") if s.strip()]
    n = int(text)
    if n < 1:
        raise click.BadParameter("need at least one seed")
    return list(range(n))


def _fail(exc: Exception, code: int = 2):
    click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc),
                           **({"step": exc.step} if getattr(exc, "step", None) is not None
                              else {})}), err=True)
    sys.exit(code)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (PannPlastError, ValueError, OSError, KeyError) as exc:
            _fail(exc)


# ---------------------------------------------------------------------------
# commands


@click.group(cls=_Group, context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Finite-strain cyclic plasticity with learnable potentials."""


_config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                           help="TOML or JSON experiment file.")
_out_opt = click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
                        help="Output directory.")


@main.command()
@_config_opt
@_out_opt
@click.option("--framework", type=click.Choice(["AF", "OW", "BC"]), help="Generator model.")
@click.option("--cycles", type=int, help="Number of loading cycles.")
@click.option("--seed", type=int, help="Recorded creation seed.")
def generate(config_path, out_dir, framework, cycles, seed):
    """Synthesize a stress-stretch dataset (series.csv + manifest.json)."""
    cfg = load_config(config_path)
    if framework:
        cfg["generator"]["framework"] = framework
        cfg["generator"]["params"] = None
    if cycles is not None:
        cfg["program"]["cycles"] = cycles
    if seed is not None:
        cfg["generator"]["seed"] = seed
    cfg = _resolve(cfg)
    out = Path(out_dir)
    _write_resolved(cfg, out, "generate")
    g = cfg["generator"]
    pots = P.build(g["framework"], P.PhenomenologicalParams.from_dict(g["params"]))
    ts, manifest = dataio.generate_synthetic(pots, _program(cfg), _settings(cfg), g["seed"])
    dataio.write_dataset(out, ts, manifest)
    click.echo(f"wrote {len(ts)} points to {out / 'series.csv'}")


@main.command()
@_config_opt
@_out_opt
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False),
              help="Potential-set snapshot (JSON); defaults to the configured generator.")
@click.option("--cycles", type=int, help="Number of loading cycles.")
def simulate(config_path, out_dir, params_path, cycles):
    """Run a loading program with a parameter snapshot and write series.csv."""
    cfg = load_config(config_path)
    if cycles is not None:
        cfg["program"]["cycles"] = cycles
    cfg = _resolve(cfg)
    out = Path(out_dir)
    if params_path:
        pots = P.load(params_path)
        cfg["simulate"] = {"params": P.to_dict(pots)}
    else:
        g = cfg["generator"]
        pots = P.build(g["framework"], P.PhenomenologicalParams.from_dict(g["params"]))
    _write_resolved(cfg, out, "simulate")
    ts = driver.run_program(_program(cfg), pots, _settings(cfg))
    dataio.write_series(out / "series.csv", ts)
    click.echo(f"wrote {len(ts)} points to {out / 'series.csv'}")


@main.command()
@_config_opt
@_out_opt
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Dataset directory (series.csv, optional manifest.json).")
@click.option("--framework", type=click.Choice(list(P.FRAMEWORKS)))
@click.option("--seeds", help="Seed count N (seeds 0..N-1) or comma-separated list.")
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel seed workers.")
def train(config_path, out_dir, data_dir, framework, seeds, epochs, lr, jobs):
    """Train one framework over several seeds; writes stats.json and loss_history.csv."""
    cfg = load_config(config_path)
    tr = cfg["training"]
    if framework:
        tr["framework"] = framework
        tr["init_params"] = None
    if seeds:
        tr["seeds"] = _parse_seeds(seeds)
    if epochs is not None:
        tr["epochs"] = epochs
    if lr is not None:
        tr["lr"] = lr
    ts, manifest = dataio.read_dataset(data_dir)
    if manifest is not None:
        cfg["program"] = {**cfg["program"], **{k: v for k, v in manifest.program.items()
                                               if k in DEFAULTS["program"]}}
        prog = manifest.loading_program()
    else:
        prog = driver.from_stretches(ts.lam)
    cfg = _resolve(cfg)
    cfg["data"] = str(Path(data_dir).resolve())
    out = Path(out_dir)
    _write_resolved(cfg, out, "train")
    tc = _train_config(cfg)
    init = P.PhenomenologicalParams.from_dict(cfg["training"]["init_params"])
    stats = T.multi_seed(tc, ts, prog, init, jobs=jobs, run_dir=out)
    with open(out / "loss_history.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("seed,epoch,loss\n")
        for r in stats.runs:
            for i, v in enumerate(r.loss_history):
                fh.write(f"{r.seed},{i},{float(v)!r}\n")
    click.echo(json.dumps({"lowest_loss": stats.lowest, "mean_loss": stats.mean,
                           "std_dev": stats.std}))


@main.command()
@_config_opt
@_out_opt
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Trained snapshot (best_params.json).")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Training dataset directory; its manifest is used to build the test data.")
@click.option("--test-cycles", type=int, help="Cycles in the extended test program.")
def evaluate(config_path, out_dir, params_path, data_dir, test_cycles):
    """Extrapolation check: score training and additional held-out cycles."""
    cfg = load_config(config_path)
    if test_cycles is not None:
        cfg["evaluate"]["test_cycles"] = test_cycles
    _, manifest = dataio.read_dataset(data_dir)
    if manifest is None:
        raise InvalidParameter("evaluate needs a synthetic dataset with manifest.json")
    cfg = _resolve(cfg)
    cfg["data"] = str(Path(data_dir).resolve())
    out = Path(out_dir)
    _write_resolved(cfg, out, "evaluate")
    train_prog = manifest.loading_program()
    test_prog = driver.LoadingProgram.from_description(
        {**manifest.program, "cycles": cfg["evaluate"]["test_cycles"]})
    settings = manifest.solver_settings()
    target = driver.run_program(test_prog, manifest.potentials(), settings)
    rep = T.evaluate_extrapolation(P.load(params_path), train_prog, test_prog, target, settings)
    dataio.write_series(out / "series.csv", rep.prediction)
    doc = {"per_cycle_mse": rep.per_cycle_mse, "train_mse": rep.train_mse,
           "heldout_mse": rep.heldout_mse, "train_nrmse": rep.train_nrmse,
           "heldout_nrmse": rep.heldout_nrmse}
    (out / "evaluation.json").write_text(json.dumps(doc, indent=1) + "\n")
    click.echo(json.dumps(doc))


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def stats(run_dir):
    """Recompute lowest/mean/std from the per-seed summaries of a training run."""
    finals = []
    for summary in sorted(Path(run_dir).glob("seed_*/summary.json")):
        finals.append(json.loads(summary.read_text())["final_loss"])
    if not finals:
        raise InvalidParameter(f"no seed_*/summary.json under {run_dir}")
    lowest, mean, std = T.seed_statistics(finals)
    doc = {"lowest_loss": lowest, "mean_loss": mean, "std_dev": std, "n_seeds": len(finals)}
    (Path(run_dir) / "stats.json").write_text(json.dumps(doc, indent=1) + "\n")
    click.echo(json.dumps(doc))


@main.command()
@_config_opt
@_out_opt
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False),
              help="Snapshot to check; defaults to a fresh network initialization.")
@click.option("--framework", type=click.Choice(list(P.FRAMEWORKS)), default="4NN",
              show_default=True, help="Framework of the fresh snapshot.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cycles", type=int, default=2, show_default=True)
@click.option("--gradients/--no-gradients", default=True, show_default=True,
              help="Include the finite-difference gradient check.")
def check(config_path, out_dir, params_path, framework, seed, cycles, gradients):
    """Run the invariant suite against a snapshot; exit 1 if any invariant fails."""
    cfg = _resolve(load_config(config_path))
    if params_path:
        pots = P.load(params_path)
    else:
        init = P.PhenomenologicalParams.from_dict(_default_params(framework))
        pots = P.build(framework, init, seed=seed)
    cfg["check"] = {"params": P.to_dict(pots), "cycles": cycles, "gradients": gradients}
    out = Path(out_dir)
    _write_resolved(cfg, out, "check")
    report = run_invariant_suite(pots, _program(cfg, cycles), _settings(cfg),
                                 gradients=gradients, seed=seed)
    (out / "check.json").write_text(json.dumps(report, indent=1) + "\n")
    for name, item in report["checks"].items():
        click.echo(f"{'PASS' if item['pass'] else 'FAIL'}  {name}  {item['detail']}")
    sys.exit(0 if report["pass"] else 1)


if __name__ == "__main__":
    main()
