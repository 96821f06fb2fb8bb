"""Fitting potential parameters to uniaxial stress histories.

The optimizer works on raw parameters: network weights are stored raw (the
constraints are applied inside the forward pass) and positive scalar
constants are stored as logarithms (``delta`` as a logit), so every point the
optimizer visits is an admissible model.
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import json
import logging
import multiprocessing as mp
import os
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from . import potentials as P
from .constitutive import SolverSettings, virgin_state
from .driver import LoadingProgram, TimeSeries, run_program, scan_program
from .errors import InvalidParameter, LengthMismatch

jax.config.update("jax_enable_x64", True)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# loss and optimizer


def mse_loss(predicted, target) -> float:
    """Mean squared error between two equally long stress series."""
    a = np.asarray(getattr(predicted, "sigma11", predicted), dtype=np.float64)
    b = np.asarray(getattr(target, "sigma11", target), dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"series lengths differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


class AdamHyper(NamedTuple):
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamMoments(NamedTuple):
    m: object
    v: object
    t: int


def adam_init(params) -> AdamMoments:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamMoments(zeros, zeros, 0)


def adam_step(params, grads, moments: AdamMoments, hyper: AdamHyper = AdamHyper()):
    """One bias-corrected Adam update; returns ``(params, moments)``."""
    t = moments.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    m = jax.tree_util.tree_map(lambda m, g: b1 * m + (1 - b1) * g, moments.m, grads)
    v = jax.tree_util.tree_map(lambda v, g: b2 * v + (1 - b2) * g * g, moments.v, grads)
    c1, c2 = 1 - b1**t, 1 - b2**t

    def update(p, m, v):
        return p - hyper.lr * (m / c1) / (jnp.sqrt(v / c2) + hyper.eps)

    return jax.tree_util.tree_map(update, params, m, v), AdamMoments(m, v, t)


# ---------------------------------------------------------------------------
# raw parameterization


def _transform(name, x):
    kind = P.SCALAR_TRANSFORMS[name]
    if kind == "log":
        return jnp.log(x)
    x = jnp.clip(x, 1e-12, 1 - 1e-12)
    return jnp.log(x) - jnp.log1p(-x)


def _untransform(name, r):
    return jnp.exp(r) if P.SCALAR_TRANSFORMS[name] == "log" else jax.nn.sigmoid(r)


def _map_scalars(params: dict, fn) -> dict:
    out = {}
    for key, val in params.items():
        if isinstance(val, dict):
            out[key] = {k: (v if k == "net" else fn(k, v)) for k, v in val.items()}
        else:
            out[key] = fn(key, val)
    return out


def to_raw(pots: P.PotentialSet) -> dict:
    """Unconstrained parameters seen by the optimizer."""
    return _map_scalars(pots.params, _transform)


def from_raw(spec: P.FrameworkSpec, raw: dict) -> P.PotentialSet:
    return P.PotentialSet(spec, _map_scalars(raw, _untransform))


def trainable_mask(spec: P.FrameworkSpec, raw: dict) -> dict:
    """1.0 where a raw leaf is trained, 0.0 where it is held fixed."""
    def flag(key):
        if key in ("G", "K"):
            return spec.train_elastic
        if key == "Y0":
            return spec.train_Y0
        return True
    return {key: (jax.tree_util.tree_map(lambda _: 1.0, val) if isinstance(val, dict)
                  else float(flag(key)))
            for key, val in raw.items()}


# ---------------------------------------------------------------------------
# differentiable forward pass


def simulate_stress(raw, spec: P.FrameworkSpec, stretches, settings: SolverSettings):
    """Axial stress history and all-converged flag; differentiable in ``raw``."""
    pots = from_raw(spec, raw)
    _, _, recs, _ = scan_program(stretches, virgin_state(spec.n_back), 1.0, pots, settings,
                                 differentiable=True)
    return recs.sigma11, jnp.all(recs.converged)


def _loss_and_ok(raw, spec, stretches, target, settings):
    sig, ok = simulate_stress(raw, spec, stretches, settings)
    return jnp.mean((sig - target) ** 2), ok


@partial(jax.jit, static_argnames=("spec", "settings"))
def loss_value_and_grad(raw, spec, stretches, target, settings):
    """``((loss, all_converged), d loss / d raw)``."""
    return jax.value_and_grad(_loss_and_ok, has_aux=True)(raw, spec, stretches, target,
                                                          settings)


@partial(jax.jit, static_argnames=("spec", "settings"))
def loss_value(raw, spec, stretches, target, settings):
    return _loss_and_ok(raw, spec, stretches, target, settings)


def flat_loss(pots: P.PotentialSet, stretches, target, settings: SolverSettings):
    """``(f, x0, grad_f)`` over the flattened raw parameter vector."""
    raw = to_raw(pots)
    x0, unravel = ravel_pytree(raw)
    stretches = jnp.asarray(stretches)
    target = jnp.asarray(target)

    def f(x):
        return float(loss_value(unravel(jnp.asarray(x)), pots.spec, stretches, target,
                                settings)[0])

    def g(x):
        _, gr = loss_value_and_grad(unravel(jnp.asarray(x)), pots.spec, stretches, target,
                                    settings)
        return np.asarray(ravel_pytree(gr)[0])

    return f, np.asarray(x0), g


# ---------------------------------------------------------------------------
# training runs


@dataclass(frozen=True)
class TrainConfig:
    framework: str = "4NN"
    epochs: int = 2000
    lr: float = 1e-3
    lr_final_ratio: float = 1.0  # learning rate decays geometrically to lr * ratio
    batch: str = "full"
    seeds: tuple = tuple(range(10))
    train_Y0: bool = True
    train_elastic: bool = False
    stress_scale: float = 1.0
    energy_scale: float = 1.0
    n_back: int = 1
    hidden: tuple = (20, 20)
    init_std: float = 0.5
    init_perturbation: float = 0.0  # relative spread of initial scalar constants
    tol: float = 1e-9
    max_iter: int = 50
    penalty_factor: float = 1e3
    log_every: int = 0

    def __post_init__(self):
        if self.framework not in P.FRAMEWORKS:
            raise InvalidParameter(f"unknown framework {self.framework!r}")
        if not self.lr > 0:
            raise InvalidParameter("learning rate must be positive")
        if not self.lr_final_ratio > 0:
            raise InvalidParameter("lr_final_ratio must be positive")
        if len(self.seeds) < 1:
            raise InvalidParameter("at least one seed is required")
        if self.batch != "full":
            raise InvalidParameter("only full-history batches are supported")
        if int(self.epochs) < 0:
            raise InvalidParameter("epochs must be >= 0")

    def framework_spec(self) -> P.FrameworkSpec:
        return P.FrameworkSpec(self.framework, self.n_back, self.stress_scale,
                               self.energy_scale, tuple(self.hidden), self.init_std,
                               self.train_elastic, self.train_Y0)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(tol=self.tol, max_iter=self.max_iter,
                              stress_scale=self.stress_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("seeds", "hidden"):
            if key in d:
                d[key] = tuple(d[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidParameter(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunResult:
    seed: int
    final_loss: float          # loss of the returned (best-epoch) snapshot
    loss_history: list         # loss at every evaluated epoch
    best_epoch: int
    params: P.PotentialSet
    failed_epochs: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"seed": self.seed, "final_loss": self.final_loss, "best_epoch": self.best_epoch,
                "epochs": len(self.loss_history), "failed_epochs": self.failed_epochs}


def initial_potentials(config: TrainConfig, init: P.PhenomenologicalParams,
                       seed: int) -> P.PotentialSet:
    """Seeded starting point: perturbed constants and freshly initialized nets."""
    rng = np.random.default_rng(seed)
    p = init
    if config.init_perturbation > 0:
        d = p.to_dict()
        keys = ["H_iso", "H_kin", "R_sat", "gamma", "M_inf", "m", "delta"]
        if config.train_Y0:
            keys.append("Y0")
        if config.train_elastic:
            keys += ["G", "K"]
        for key in keys:
            if key in d and d[key] > 0:
                d[key] *= 1.0 + config.init_perturbation * rng.uniform(-1.0, 1.0)
        d["delta"] = min(d["delta"], 1.0)
        p = P.PhenomenologicalParams.from_dict(d)
    return P.build(config.framework_spec(), p, seed=seed)


def train(config: TrainConfig, dataset: TimeSeries, program: LoadingProgram,
          init: P.PhenomenologicalParams, seed: int | None = None,
          start: P.PotentialSet | None = None, run_dir: str | os.PathLike | None = None
          ) -> RunResult:
    """Full-batch Adam on the axial-stress MSE; returns the best-epoch snapshot.

    A forward pass with any non-converged step scores
    ``penalty_factor * initial_loss``; the optimizer then returns to the last
    successful parameters with fresh moments and continues.
    """
    if len(dataset) != len(program):
        raise LengthMismatch("dataset and program differ in length")
    if not np.allclose(dataset.lam, program.array, rtol=0, atol=1e-12):
        raise InvalidParameter("dataset stretches do not follow the loading program")
    seed = config.seeds[0] if seed is None else seed
    spec = config.framework_spec()
    settings = config.solver_settings()
    pots = initial_potentials(config, init, seed) if start is None else start
    raw = to_raw(pots)
    mask = trainable_mask(spec, raw)
    stretches = jnp.asarray(program.array)
    target = jnp.asarray(dataset.sigma11)
    hyper = AdamHyper(lr=config.lr)
    decay = config.lr_final_ratio ** (1.0 / max(config.epochs, 1))
    moments = adam_init(raw)

    history, failed = [], []
    best = (np.inf, 0, raw)
    good = raw
    penalty = None
    for epoch in range(config.epochs + 1):
        (loss, ok), grads = loss_value_and_grad(raw, spec, stretches, target, settings)
        loss = float(loss)
        ok = bool(ok) and np.isfinite(loss)
        if ok and not all(np.all(np.isfinite(np.asarray(g)))
                          for g in jax.tree_util.tree_leaves(grads)):
            ok = False
        if penalty is None:
            penalty = config.penalty_factor * (loss if ok else 1.0)
        if not ok:
            failed.append(epoch)
            history.append(penalty)
            log.info("seed %d epoch %d: forward pass failed, penalty %.3g", seed, epoch, penalty)
            raw, moments = good, adam_init(good)
            hyper = hyper._replace(lr=hyper.lr * 0.5)
            continue
        history.append(loss)
        good = raw
        if loss < best[0]:
            best = (loss, epoch, raw)
        if config.log_every and epoch % config.log_every == 0:
            log.info("seed %d epoch %d loss %.6e", seed, epoch, loss)
        if epoch == config.epochs:
            break
        grads = jax.tree_util.tree_map(lambda g, m: g * m, grads, mask)
        raw, moments = adam_step(raw, grads, moments, hyper)
        hyper = hyper._replace(lr=hyper.lr * decay)

    result = RunResult(seed, float(best[0]), history, int(best[1]), from_raw(spec, best[2]),
                       failed)
    if run_dir is not None:
        write_run(result, config, run_dir)
    return result


def write_run(result: RunResult, config: TrainConfig, run_dir) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "loss_history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(result.loss_history):
            w.writerow([i, repr(float(v))])
    P.save(result.params, run_dir / "best_params.json")
    with open(run_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(result.summary(), fh, indent=1)


# ---------------------------------------------------------------------------
# multi-seed protocol


class SeedStats(NamedTuple):
    lowest: float
    mean: float
    std: float
    runs: list


def seed_statistics(losses) -> tuple[float, float, float]:
    """Lowest, mean and population standard deviation (order independent)."""
    x = np.sort(np.asarray(losses, dtype=np.float64))
    return float(x[0]), float(np.mean(x)), float(np.std(x))


def _train_one(args):
    config, dataset, program, init, seed, run_dir = args
    return train(config, dataset, program, init, seed=seed, run_dir=run_dir)


def multi_seed(config: TrainConfig, dataset: TimeSeries, program: LoadingProgram,
               init: P.PhenomenologicalParams, jobs: int = 1,
               run_dir: str | os.PathLike | None = None) -> SeedStats:
    """Train once per seed; statistics are over each run's returned loss."""
    tasks = [(config, dataset, program, init, s,
              None if run_dir is None else Path(run_dir) / f"seed_{s}")
             for s in config.seeds]
    if jobs > 1:
        ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as ex:
            runs = list(ex.map(_train_one, tasks))
    else:
        runs = [_train_one(t) for t in tasks]
    lowest, mean, std = seed_statistics([r.final_loss for r in runs])
    stats = SeedStats(lowest, mean, std, runs)
    if run_dir is not None:
        write_stats(stats, run_dir)
    return stats


def write_stats(stats: SeedStats, run_dir) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    best = min(stats.runs, key=lambda r: r.final_loss)
    doc = {"lowest_loss": stats.lowest, "mean_loss": stats.mean, "std_dev": stats.std,
           "best_seed": best.seed, "per_seed": [r.summary() for r in stats.runs]}
    with open(run_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    P.save(best.params, run_dir / "best_params.json")


# ---------------------------------------------------------------------------
# extrapolation


class ExtrapolationReport(NamedTuple):
    per_cycle_mse: list
    train_mse: float
    heldout_mse: float
    train_nrmse: float
    heldout_nrmse: float
    prediction: TimeSeries


def evaluate_extrapolation(trained: P.PotentialSet, train_program: LoadingProgram,
                           test_program: LoadingProgram, target: TimeSeries,
                           settings: SolverSettings = SolverSettings()) -> ExtrapolationReport:
    """Simulate the longer program and score training and held-out cycles apart.

    Normalized RMSE divides by the largest absolute target stress.
    """
    if len(test_program) < len(train_program) or len(target) != len(test_program):
        raise LengthMismatch("test program must extend the training program and match the target")
    if not np.array_equal(test_program.array[: len(train_program)], train_program.array):
        raise InvalidParameter("test program does not extend the training program")
    pred = run_program(test_program, trained, settings)
    err2 = (pred.sigma11 - target.sigma11) ** 2
    cyc = test_program.cycle_of_point()
    per_cycle = [float(np.mean(err2[cyc == c])) for c in range(test_program.cycles)]
    n_train = len(train_program)
    train_mse = float(np.mean(err2[:n_train]))
    heldout = err2[n_train:]
    heldout_mse = float(np.mean(heldout)) if heldout.size else 0.0
    amp = float(np.max(np.abs(target.sigma11))) or 1.0
    return ExtrapolationReport(per_cycle, train_mse, heldout_mse, np.sqrt(train_mse) / amp,
                               np.sqrt(heldout_mse) / amp, pred)


def normalized_rmse(predicted, target) -> float:
    b = np.asarray(getattr(target, "sigma11", target))
    return float(np.sqrt(mse_loss(predicted, target)) / np.max(np.abs(b)))
