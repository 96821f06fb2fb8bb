"""Invariant suite run by ``pannplast check`` against a parameter snapshot."""
from __future__ import annotations

import jax
import jax.numpy as jnp
import numpy as np
from scipy.spatial.transform import Rotation

from . import icnn
from . import potentials as P
from .constitutive import SolverSettings, _cauchy, return_map
from .diffengine import central_difference_grad
from .driver import LoadingProgram, run_program, uniaxial_F
from .training import flat_loss

DISSIPATION_SLACK = 1e-10
KKT_TOL = 1e-9
DET_TOL = 1e-8
SYM_TOL = 1e-10
OBJECTIVITY_TOL = 1e-9
CONVEXITY_SLACK = 1e-10
GRAD_RTOL = 1e-3
# central differences at h=1e-5 cannot resolve components much smaller than this
# fraction of the largest one in double precision; those are compared on this scale
GRAD_FLOOR = 1e-5


def _item(ok: bool, detail: str) -> dict:
    return {"pass": bool(ok), "detail": detail}


def network_checks(pots: P.PotentialSet, n_pairs: int = 1000, seed: int = 0) -> dict:
    """Structural constraints and sampled convexity/monotonicity of every network."""
    rng = np.random.default_rng(seed)
    out = {}
    for slot in P.SLOTS:
        if "net" not in pots.params[slot]:
            continue
        spec, params = pots.spec.net_spec(slot), pots.params[slot]["net"]
        w_ok = all(bool(jnp.all(w >= 0)) for w in icnn.effective_weights(params))
        b_ok = all(bool(jnp.all(a["beta1"] > 0) and jnp.all(a["beta2"] > 0))
                   for a in icnn.activation_params(params) if "beta1" in a)
        f = jax.jit(jax.vmap(lambda x: icnn.apply(spec, params, x)))
        x = rng.uniform(-3.0, 3.0, (n_pairs, spec.in_dim))
        y = rng.uniform(-3.0, 3.0, (n_pairs, spec.in_dim))
        d = rng.uniform(0.0, 1.0, (n_pairs, spec.in_dim))
        mono = float(np.min(np.asarray(f(x + d) - f(x))))
        detail = f"weights>=0 {w_ok}, beta>0 {b_ok}, min monotone gap {mono:.2e}"
        ok = w_ok and b_ok and mono >= -CONVEXITY_SLACK
        if spec.convex:
            conv = float(np.min(np.asarray(0.5 * (f(x) + f(y)) - f(0.5 * (x + y)))))
            detail += f", min convexity gap {conv:.2e}"
            ok = ok and conv >= -CONVEXITY_SLACK
        out[f"network_{slot}"] = _item(ok, detail)
    return out


def objectivity_error(pots: P.PotentialSet, F, state, settings: SolverSettings,
                      rotation) -> float:
    """Max deviation of ``sigma(QF)`` from ``Q sigma(F) Q^t`` after a return map."""
    Q = jnp.asarray(rotation)
    a = return_map(F, state, pots, settings)
    b = return_map(Q @ F, state, pots, settings)
    s_a = _cauchy(F, a.new_state, pots)
    s_b = _cauchy(Q @ F, b.new_state, pots)
    stress = float(jnp.max(jnp.abs(s_b - Q @ s_a @ Q.T)))
    internal = float(jnp.max(jnp.abs(a.new_state.Fp - b.new_state.Fp)))
    return max(stress, internal)


def run_invariant_suite(pots: P.PotentialSet, program: LoadingProgram,
                        settings: SolverSettings = SolverSettings(), gradients: bool = True,
                        seed: int = 0, n_grad: int = 5) -> dict:
    ts, state = run_program(program, pots, settings, return_state=True)
    it = ts.internals
    checks = {}
    terms = np.stack([it["d_plastic"], it["d_kinematic"], it["d_isotropic"]])
    dmin = float(terms.min())
    checks["dissipation"] = _item(dmin >= -DISSIPATION_SLACK, f"min term {dmin:.3e} GPa")
    dl, phi = it["delta_lambda"], it["phi"]
    kkt = max(float(-dl.min()), float(phi.max()), float(np.max(np.abs(dl * phi))))
    checks["kkt"] = _item(dl.min() >= 0 and phi.max() <= KKT_TOL
                          and np.max(np.abs(dl * phi)) <= KKT_TOL, f"worst {kkt:.3e}")
    det_err = float(np.max(np.abs(it["det_fp"] - 1.0)))
    checks["plastic_incompressibility"] = _item(det_err <= DET_TOL, f"max |det Fp - 1| {det_err:.3e}")
    asym = float(np.max(it["mandel_asym"]))
    checks["mandel_symmetry"] = _item(asym <= SYM_TOL, f"max asymmetry {asym:.3e}")
    lat = np.abs(it["sigma22"]) / np.maximum(1.0, np.abs(ts.sigma11))
    checks["uniaxial_stress"] = _item(lat.max() <= 1e-8, f"max |s22|/max(1,|s11|) {lat.max():.3e}")
    k_ok = bool(np.all(np.diff(it["k"]) >= -1e-14))
    checks["k_nondecreasing"] = _item(k_ok, "")

    Q = Rotation.random(random_state=seed).as_matrix()
    F = uniaxial_F(jnp.float64(ts.lam[-1] * 1.001), jnp.float64(it["lambda_lat"][-1]))
    obj = objectivity_error(pots, F, state, settings, Q)
    checks["objectivity"] = _item(obj <= OBJECTIVITY_TOL, f"max deviation {obj:.3e}")

    checks.update(network_checks(pots, seed=seed))

    if gradients:
        target = 1.05 * ts.sigma11
        f, x0, g = flat_loss(pots, program.array, target, settings)
        rng = np.random.default_rng(seed)
        idx = rng.choice(x0.size, size=min(n_grad, x0.size), replace=False)
        gx = g(x0)
        worst = 0.0
        for i in idx:
            def fi(xi, i=i):
                x = x0.copy()
                x[i] = xi[0]
                return f(x)
            fd = central_difference_grad(fi, x0[i:i + 1], rel_step=1e-5)[0]
            scale = max(abs(fd), abs(gx[i]), GRAD_FLOOR * float(np.abs(gx).max()))
            worst = max(worst, abs(fd - gx[i]) / scale)
        checks["gradient"] = _item(worst <= GRAD_RTOL, f"max rel err {worst:.3e} on {len(idx)} params")

    return {"pass": all(c["pass"] for c in checks.values()), "checks": checks,
            "n_steps": len(ts), "n_plastic": int(np.sum(it["delta_lambda"] > 0))}

