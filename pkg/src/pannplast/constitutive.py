"""Material-point update for finite-strain plasticity with mixed hardening.

The deformation gradient splits as ``F = Fe Fp``. Internal variables are the
plastic deformation gradient ``Fp``, one kinematic deformation gradient per
back-stress and the scalar isotropic variable ``k``. A step is an elastic
predictor followed, when the yield function is positive, by a Newton solve of
the coupled system

    Fp     - expm(dlam * nu) Fp_n                         = 0
    Fkin_i - expm(dlam * (-nu + dPhi_kin/dMkin_i)) Fkin_n_i  = 0
    k      - k_n - dlam * dPhi_iso/dkappa                 = 0
    Phi / stress_scale                                    = 0

with all stresses evaluated at the new state (``nu = dPhi/dM``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import tensor3 as t3
from .diffengine import implicit_solution, newton_solve
from .errors import NoConvergence, SingularTensor
from .potentials import PotentialSet, flow_direction, fy_vonmises

jax.config.update("jax_enable_x64", True)


class PlasticState(NamedTuple):
    Fp: jnp.ndarray     # (3, 3)
    Fkin: jnp.ndarray   # (n_back, 3, 3)
    k: jnp.ndarray      # scalar


class MandelSet(NamedTuple):
    M: jnp.ndarray      # (3, 3)
    Mkin: jnp.ndarray   # (n_back, 3, 3)
    kappa: jnp.ndarray  # scalar

    @property
    def Mkin_total(self):
        return jnp.sum(self.Mkin, axis=0)


class ReturnMapResult(NamedTuple):
    new_state: PlasticState
    delta_lambda: float
    nu: jnp.ndarray
    iterations: int
    converged: bool
    yield_value: float


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-9            # on nondimensional residual rows
    max_iter: int = 50
    stress_scale: float = 1.0    # GPa
    max_bisections: int = 8

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def virgin_state(n_back: int = 1) -> PlasticState:
    return PlasticState(t3.I, jnp.broadcast_to(t3.I, (n_back, 3, 3)), jnp.float64(0.0))


def n_unknowns(n_back: int) -> int:
    """Size of the return-map unknown vector ``[Fp, Fkin_1..n, k, dlam]``."""
    return 9 * (1 + n_back) + 2


def pack(state: PlasticState, dlam) -> jnp.ndarray:
    return jnp.concatenate([state.Fp.ravel(), state.Fkin.ravel(),
                            jnp.atleast_1d(state.k), jnp.atleast_1d(dlam)])


def unpack(x, n_back: int) -> tuple[PlasticState, jnp.ndarray]:
    Fp = x[:9].reshape(3, 3)
    Fkin = x[9:9 + 9 * n_back].reshape(n_back, 3, 3)
    k = x[9 + 9 * n_back]
    return PlasticState(Fp, Fkin, k), x[10 + 9 * n_back]


# ---------------------------------------------------------------------------
# stresses


@jax.jit
def _mandel(F, state: PlasticState, pots: PotentialSet) -> MandelSet:
    Fe = F @ t3.inv_unchecked(state.Fp)
    Ce = Fe.T @ Fe
    M = 2.0 * Ce @ pots.d_psi_el_dCe(Ce)

    def back_stress(Fkin):
        Fi = t3.inv_unchecked(Fkin)
        return pots.mandel_kin(Fi.T @ Fi)

    Mkin = jax.vmap(back_stress)(state.Fkin)
    kappa = pots.kappa_of_k(state.k)
    return MandelSet(M, Mkin, kappa)


def compute_mandel(F, state: PlasticState, pots: PotentialSet) -> MandelSet:
    """Mandel stress ``M``, back-stresses ``Mkin_i`` and isotropic stress ``kappa``."""
    F = t3.as_tensor(F)
    _check_positive_det(F, "F")
    _check_positive_det(state.Fp, "Fp")
    return _mandel(F, state, pots)


def _yield(ms: MandelSet, pots: PotentialSet):
    Mred = ms.M - ms.Mkin_total
    return fy_vonmises(Mred) - (pots.params["Y0"] + pots.phi_iso(ms.kappa))


def yield_value(ms: MandelSet, pots: PotentialSet):
    """``Phi = fy(M - sum_i Mkin_i) - (Y0 + Phi_iso_hat(kappa))``."""
    return _yield(ms, pots)


@jax.jit
def _kirchhoff(F, state: PlasticState, pots: PotentialSet):
    Fe = F @ t3.inv_unchecked(state.Fp)
    Ce = Fe.T @ Fe
    return 2.0 * Fe @ pots.d_psi_el_dCe(Ce) @ Fe.T


def _cauchy(F, state, pots):
    return _kirchhoff(F, state, pots) / t3.det(F)


def cauchy_stress(F, state: PlasticState, pots: PotentialSet):
    """Cauchy stress ``tau / det(F)`` with ``tau = 2 Fe dPsi/dCe Fe^t``."""
    F = t3.as_tensor(F)
    _check_positive_det(F, "F")
    return _cauchy(F, state, pots)


def _check_positive_det(A, name):
    if not isinstance(A, jax.core.Tracer) and float(t3.det(A)) <= t3.SINGULAR_DET:
        raise SingularTensor(f"det({name}) must be positive")


# ---------------------------------------------------------------------------
# residuals


@jax.jit
def _flows(ms: MandelSet, pots: PotentialSet):
    Mred = ms.M - ms.Mkin_total
    fy = fy_vonmises(Mred)
    nu = flow_direction(Mred)
    kin = jax.vmap(lambda Mk: pots.kin_flow(Mk, nu, fy))(ms.Mkin)
    return nu, fy, kin


@partial(jax.jit, static_argnames=("stress_scale",))
def plastic_residual(x, F, state_n: PlasticState, pots: PotentialSet, stress_scale: float):
    st, dlam = unpack(x, pots.n_back)
    ms = _mandel(F, st, pots)
    nu, fy, kin = _flows(ms, pots)
    phi = fy - (pots.params["Y0"] + pots.phi_iso(ms.kappa))
    r_p = st.Fp - t3._expm_unchecked(dlam * nu) @ state_n.Fp
    r_kin = jax.vmap(lambda Fk, Fk_n, g: Fk - t3._expm_unchecked(dlam * (g - nu)) @ Fk_n)(
        st.Fkin, state_n.Fkin, kin)
    dphi_iso = jax.grad(pots.phi_iso)(ms.kappa)
    r_k = st.k - state_n.k - dlam * dphi_iso
    return jnp.concatenate([r_p.ravel(), r_kin.ravel(), jnp.atleast_1d(r_k),
                            jnp.atleast_1d(phi / stress_scale)])


@partial(jax.jit, static_argnames=("n_back",))
def elastic_residual(x, state_n: PlasticState, n_back: int):
    st, dlam = unpack(x, n_back)
    return jnp.concatenate([(st.Fp - state_n.Fp).ravel(), (st.Fkin - state_n.Fkin).ravel(),
                            jnp.atleast_1d(st.k - state_n.k), jnp.atleast_1d(dlam)])


def step_residual(x, F, state_n, pots, stress_scale, plastic):
    """Plastic residual where ``plastic`` is set, frozen-state residual otherwise."""
    return jax.lax.cond(plastic,
                        lambda: plastic_residual(x, F, state_n, pots, stress_scale),
                        lambda: elastic_residual(x, state_n, pots.n_back))


def trial_yield(F, state_n: PlasticState, pots: PotentialSet):
    return _yield(_mandel(F, state_n, pots), pots)


# ---------------------------------------------------------------------------
# return map


def return_map_traced(F, state_n: PlasticState, pots: PotentialSet, settings: SolverSettings,
                      differentiable: bool = False):
    """Traceable return map. Returns ``(state, dlam, nu, iterations, converged, phi)``."""
    sg = jax.lax.stop_gradient
    s = settings.stress_scale
    phi_trial = trial_yield(sg(F), sg(state_n), sg(pots))
    plastic = phi_trial > settings.tol * s
    x0 = pack(sg(state_n), 0.0)
    res = partial(step_residual, stress_scale=s, plastic=plastic)
    x, conv, it, _, _ = newton_solve(lambda z: res(z, sg(F), sg(state_n), sg(pots)), x0,
                                     settings.tol, settings.max_iter,
                                     nonneg_index=n_unknowns(pots.n_back) - 1)
    if differentiable:
        x = jnp.where(conv, x, x0)
        x = implicit_solution(res, x, F, state_n, pots)
    st, dlam = unpack(x, pots.n_back)
    ms = _mandel(F, st, pots)
    Mred = ms.M - ms.Mkin_total
    phi = fy_vonmises(Mred) - (pots.params["Y0"] + pots.phi_iso(ms.kappa))
    return st, dlam, flow_direction(Mred), it, conv, phi


@partial(jax.jit, static_argnums=(3,))
def _return_map_jit(F, state_n, pots, settings):
    return return_map_traced(F, state_n, pots, settings)


def return_map(F_next, state_n: PlasticState, pots: PotentialSet,
               settings: SolverSettings = SolverSettings()) -> ReturnMapResult:
    """Elastic predictor / Newton corrector for a prescribed ``F_next``.

    Raises
    ------
    NoConvergence
        If Newton exhausts ``settings.max_iter`` iterations.
    """
    F_next = t3.as_tensor(F_next)
    _check_positive_det(F_next, "F")
    st, dlam, nu, it, conv, phi = _return_map_jit(F_next, state_n, pots, settings)
    if not bool(conv):
        raise NoConvergence(f"return map did not converge in {int(it)} iterations",
                            iterations=int(it))
    return ReturnMapResult(st, float(dlam), nu, int(it), True, float(phi))


# ---------------------------------------------------------------------------
# dissipation


class DissipationTerms(NamedTuple):
    plastic: jnp.ndarray     # dlam (M - Mkin) : nu
    kinematic: jnp.ndarray   # dlam sum_i Mkin_i : dPhi_kin/dMkin_i
    isotropic: jnp.ndarray   # dlam kappa dPhi_iso/dkappa

    @property
    def total(self):
        return self.plastic + self.kinematic + self.isotropic


def dissipation_rate(ms: MandelSet, nu, delta_lambda, pots: PotentialSet) -> DissipationTerms:
    """Reduced dissipation per step, split into its three non-negative terms."""
    Mred = ms.M - ms.Mkin_total
    fy = fy_vonmises(Mred)
    kin = jax.vmap(lambda Mk: pots.kin_flow(Mk, nu, fy))(ms.Mkin)
    t_pl = delta_lambda * t3.ddot(Mred, nu)
    t_kin = delta_lambda * jnp.sum(jax.vmap(t3.ddot)(ms.Mkin, kin))
    t_iso = delta_lambda * ms.kappa * jax.grad(pots.phi_iso)(ms.kappa)
    return DissipationTerms(t_pl, t_kin, t_iso)


def state_is_valid(state: PlasticState) -> bool:
    return bool(np.all(np.asarray(t3.det(state.Fkin)) > 0) and float(t3.det(state.Fp)) > 0)
