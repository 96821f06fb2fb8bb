import json
import statistics

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pannplast import icnn
from pannplast import potentials as P
from pannplast import training as T
from pannplast.constitutive import SolverSettings
from pannplast.diffengine import central_difference_grad
from pannplast.driver import build_cycles, run_program
from pannplast.errors import InvalidParameter, LengthMismatch

PROG = build_cycles(1.01, 0.99, 1, 10)


@pytest.fixture(scope="module")
def af_data(af_params):
    return run_program(PROG, P.build("AF", af_params))


def test_mse_examples():
    assert T.mse_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    x = np.linspace(0, 1, 17)
    assert T.mse_loss(x + 0.3, x) == pytest.approx(0.09, rel=1e-12)
    assert T.mse_loss([1.0, 2.0], [0.0, 0.0]) == 2.5
    with pytest.raises(LengthMismatch):
        T.mse_loss([1.0], [1.0, 2.0])


def test_adam_examples():
    p = {"w": jnp.array(1.0)}
    m = T.adam_init(p)
    same, _ = T.adam_step(p, {"w": jnp.array(0.0)}, m, T.AdamHyper(lr=0.1))
    assert float(same["w"]) == 1.0
    new, m1 = T.adam_step(p, {"w": jnp.array(1.0)}, m, T.AdamHyper(lr=0.1))
    assert float(new["w"]) - 1.0 == pytest.approx(-0.1, rel=1e-6)
    assert m1.t == 1


def test_adam_deterministic():
    def run():
        p, m = {"w": jnp.array([1.0, -2.0])}, None
        m = T.adam_init(p)
        for i in range(20):
            g = {"w": jnp.sin(p["w"] * (i + 1))}
            p, m = T.adam_step(p, g, m, T.AdamHyper(lr=0.05))
        return np.asarray(p["w"])
    np.testing.assert_array_equal(run(), run())


def test_config_validation():
    with pytest.raises(InvalidParameter):
        T.TrainConfig(lr=0.0)
    with pytest.raises(InvalidParameter):
        T.TrainConfig(seeds=())
    with pytest.raises(InvalidParameter):
        T.TrainConfig(framework="XX")
    with pytest.raises(InvalidParameter):
        T.TrainConfig.from_dict({"epochs": 3, "bogus": 1})
    cfg = T.TrainConfig(framework="AF", epochs=7, seeds=(3, 4))
    assert T.TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert len(T.TrainConfig().seeds) == 10


def test_raw_roundtrip(af_params):
    pots = P.build("BC", P.PhenomenologicalParams(**{**af_params.to_dict(), "delta": 0.3}))
    back = T.from_raw(pots.spec, T.to_raw(pots))
    for a, b in zip(jax.tree_util.tree_leaves(pots.params), jax.tree_util.tree_leaves(back.params)):
        assert float(a) == pytest.approx(float(b), rel=1e-14)


def test_mask_follows_flags():
    spec = P.FrameworkSpec("AF", train_elastic=False, train_Y0=False)
    raw = T.to_raw(P.build(spec, P.PhenomenologicalParams(G=1, K=1, Y0=1)))
    mask = T.trainable_mask(spec, raw)
    assert mask["G"] == 0.0 and mask["K"] == 0.0 and mask["Y0"] == 0.0
    assert mask["kin_diss"]["M_inf"] == 1.0


def test_true_parameters_give_zero_loss(af_params, af_data):
    cfg = T.TrainConfig(framework="AF", epochs=0, seeds=(0,))
    res = T.train(cfg, af_data, PROG, af_params)
    assert res.final_loss <= 1e-10
    assert res.best_epoch == 0 and len(res.loss_history) == 1


def test_train_reduces_loss_and_writes_run(af_params, af_data, tmp_path):
    cfg = T.TrainConfig(framework="AF", epochs=5, lr=0.05, seeds=(1,), init_perturbation=0.3)
    res = T.train(cfg, af_data, PROG, af_params, run_dir=tmp_path)
    assert len(res.loss_history) == 6
    assert np.all(np.isfinite(res.loss_history))
    assert res.final_loss == min(res.loss_history) < res.loss_history[0]
    assert {p.name for p in tmp_path.iterdir()} >= {"loss_history.csv", "best_params.json",
                                                     "summary.json"}
    assert json.loads((tmp_path / "summary.json").read_text())["seed"] == 1


def test_failed_forward_pass_is_penalized(af_params, af_data):
    cfg = T.TrainConfig(framework="AF", epochs=2, seeds=(0,), max_iter=1)
    res = T.train(cfg, af_data, PROG, af_params)
    assert res.failed_epochs == [0, 1, 2]
    assert np.all(np.isfinite(res.loss_history))


def test_dataset_alignment_checked(af_params, af_data):
    cfg = T.TrainConfig(framework="AF", epochs=0)
    with pytest.raises(LengthMismatch):
        T.train(cfg, af_data.slice(0, 5), PROG, af_params)


def test_loss_gradient_matches_finite_differences(af_params, af_data):
    pots = P.build("AF", P.PhenomenologicalParams(**{**af_params.to_dict(), "Y0": 0.22,
                                                     "H_kin": 2.5}))
    f, x0, g = T.flat_loss(pots, PROG.array, af_data.sigma11, SolverSettings())
    gx = np.asarray(g(x0))
    for i in np.random.default_rng(0).choice(x0.size, 5, replace=False):
        def fi(xi, i=i):
            x = x0.copy()
            x[i] = xi[0]
            return f(x)
        fd = central_difference_grad(fi, x0[i:i + 1], rel_step=1e-5)[0]
        assert abs(fd - gx[i]) <= 1e-3 * max(abs(fd), abs(gx[i]), 1e-12)


def test_network_constraints_hold_during_training(af_params, af_data):
    cfg = T.TrainConfig(framework="2NN", epochs=3, lr=0.05, seeds=(2,), hidden=(4, 4))
    pots = T.initial_potentials(cfg, af_params, 2)
    raw = T.to_raw(pots)
    moments = T.adam_init(raw)
    stretches, target = jnp.asarray(PROG.array), jnp.asarray(af_data.sigma11)
    for _ in range(3):
        (loss, ok), grads = T.loss_value_and_grad(raw, pots.spec, stretches, target,
                                                  cfg.solver_settings())
        raw, moments = T.adam_step(raw, grads, moments, T.AdamHyper(lr=0.05))
        now = T.from_raw(pots.spec, raw)
        for slot in ("iso_diss", "kin_diss"):
            net = now.params[slot]["net"]
            assert all(bool(jnp.all(w >= 0)) for w in icnn.effective_weights(net))
            assert all(bool(jnp.all(a["beta1"] > 0) & jnp.all(a["beta2"] > 0))
                       for a in icnn.activation_params(net) if "beta1" in a)
        ts = run_program(PROG, now)
        terms = np.stack([ts.internals[k] for k in ("d_plastic", "d_kinematic", "d_isotropic")])
        assert terms.min() >= -1e-10


def test_single_seed_statistics(af_params, af_data):
    cfg = T.TrainConfig(framework="AF", epochs=1, seeds=(5,), init_perturbation=0.2)
    stats = T.multi_seed(cfg, af_data, PROG, af_params)
    assert stats.lowest == stats.mean and stats.std == 0.0


def test_multi_seed_artifacts(af_params, af_data, tmp_path):
    cfg = T.TrainConfig(framework="AF", epochs=1, seeds=(0, 1, 2), init_perturbation=0.2)
    stats = T.multi_seed(cfg, af_data, PROG, af_params, run_dir=tmp_path)
    finals = [r.final_loss for r in stats.runs]
    assert stats.std == pytest.approx(statistics.pstdev(finals), abs=1e-12)
    doc = json.loads((tmp_path / "stats.json").read_text())
    assert {"lowest_loss", "mean_loss", "std_dev"} <= set(doc)
    assert all((tmp_path / f"seed_{s}" / "summary.json").exists() for s in (0, 1, 2))


@given(st.lists(st.floats(0.0, 1e3), min_size=1, max_size=12), st.randoms())
def test_statistics_permutation_invariant(losses, rnd):
    shuffled = list(losses)
    rnd.shuffle(shuffled)
    a, b = T.seed_statistics(losses), T.seed_statistics(shuffled)
    assert a == b
    assert a[2] == pytest.approx(statistics.pstdev(losses), abs=1e-12 * max(1.0, max(losses)))


def test_extrapolation_on_generator_is_exact(af_params):
    gen = P.build("AF", af_params)
    train_prog, test_prog = build_cycles(1.01, 0.99, 2, 10), build_cycles(1.01, 0.99, 3, 10)
    target = run_program(test_prog, gen)
    rep = T.evaluate_extrapolation(gen, train_prog, test_prog, target)
    assert rep.heldout_mse == 0.0 and rep.train_mse == 0.0
    assert len(rep.per_cycle_mse) == 3
    with pytest.raises(LengthMismatch):
        T.evaluate_extrapolation(gen, test_prog, train_prog, target.slice(0, len(train_prog)))
