"""Uniaxial-stress cyclic loading of a single material point.

The axial stretch is prescribed; the lateral stretch is an unknown chosen so
that the lateral Cauchy stress vanishes. A step first solves the lateral
condition with the internal state frozen (elastic predictor). If the trial
yield function is positive, it then solves the return-map unknowns and the
lateral stretch together in one Newton system. At convergence this is the
same point a nested lateral/return-map iteration would reach.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import tensor3 as t3
from .constitutive import (PlasticState, SolverSettings, _cauchy, _flows, _mandel, _yield,
                           dissipation_rate, elastic_residual, n_unknowns, pack,
                           plastic_residual, unpack, virgin_state)
from .diffengine import implicit_solution, newton_solve
from .errors import (InvalidAmplitude, InvalidParameter, LateralNoConvergence,
                     NoConvergence)
from .potentials import PotentialSet

jax.config.update("jax_enable_x64", True)

MAX_INCREMENT = 0.002
# a stale carried Jacobian is refreshed once a step cuts the residual by less
REFRESH_RATIO = 0.1


# ---------------------------------------------------------------------------
# loading programs


@dataclass(frozen=True)
class LoadingProgram:
    """Prescribed axial stretches, one per pseudo-time point (first is 1)."""

    stretches: tuple
    steps_per_branch: int = 0
    amplitude_tension: float = 1.0
    amplitude_compression: float = 1.0
    cycles: int = 0
    max_increment: float = MAX_INCREMENT

    def __post_init__(self):
        lam = np.asarray(self.stretches, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise InvalidAmplitude("a program needs at least one stretch")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
            raise InvalidAmplitude("stretches must be finite and positive")
        if lam.size > 1 and np.max(np.abs(np.diff(lam))) > self.max_increment * (1 + 1e-12):
            raise InvalidAmplitude(
                f"stretch increment {np.max(np.abs(np.diff(lam))):.3g} exceeds "
                f"{self.max_increment}; use more steps per branch")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.stretches, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.stretches)

    def points_per_cycle(self) -> int:
        return 3 * self.steps_per_branch

    def cycle_of_point(self) -> np.ndarray:
        """Cycle index (0-based) of every point; the initial point belongs to cycle 0."""
        n = self.points_per_cycle()
        idx = np.arange(len(self))
        return np.maximum(idx - 1, 0) // n if n else np.zeros(len(self), dtype=int)

    def describe(self) -> dict:
        return {
            "amplitude_tension": self.amplitude_tension,
            "amplitude_compression": self.amplitude_compression,
            "cycles": self.cycles,
            "steps_per_branch": self.steps_per_branch,
            "max_increment": self.max_increment,
            "n_points": len(self),
        }

    @classmethod
    def from_description(cls, d: dict) -> "LoadingProgram":
        return build_cycles(d["amplitude_tension"], d["amplitude_compression"], d["cycles"],
                            d["steps_per_branch"], d.get("max_increment", MAX_INCREMENT))


def build_cycles(amplitude_tension: float, amplitude_compression: float, cycles: int,
                 steps_per_branch: int, max_increment: float = MAX_INCREMENT) -> LoadingProgram:
    """Triangle wave ``1 -> max -> min -> 1`` repeated ``cycles`` times.

    Each branch has ``steps_per_branch`` equal increments, so a program has
    ``1 + 3 * cycles * steps_per_branch`` points and a longer program starts
    with exactly the points of a shorter one.
    """
    hi, lo = float(amplitude_tension), float(amplitude_compression)
    if not (np.isfinite(hi) and np.isfinite(lo)) or lo <= 0.0 or hi < 1.0 or lo > 1.0:
        raise InvalidAmplitude("need 0 < compression stretch <= 1 <= tension stretch")
    if int(cycles) < 0:
        raise InvalidParameter("cycles must be >= 0")
    if int(steps_per_branch) < 1:
        raise InvalidParameter("steps_per_branch must be >= 1")
    n = int(steps_per_branch)
    frac = np.arange(1, n + 1) / n
    one_cycle = np.concatenate([1.0 + (hi - 1.0) * frac,
                                hi + (lo - hi) * frac,
                                lo + (1.0 - lo) * frac])
    one_cycle[[n - 1, 2 * n - 1, 3 * n - 1]] = hi, lo, 1.0
    lam = np.concatenate([[1.0], np.tile(one_cycle, int(cycles))])
    return LoadingProgram(tuple(lam.tolist()), n, hi, lo, int(cycles), max_increment)


def from_stretches(stretches, max_increment: float = np.inf) -> LoadingProgram:
    """Program following an arbitrary stretch path (e.g. digitized test data)."""
    return LoadingProgram(tuple(np.asarray(stretches, dtype=np.float64).tolist()),
                          max_increment=max_increment)


# ---------------------------------------------------------------------------
# time series


@dataclass
class TimeSeries:
    """Per-point stretch and axial Cauchy stress plus optional internals."""

    lam: np.ndarray
    sigma11: np.ndarray
    internals: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.sigma11 = np.asarray(self.sigma11, dtype=np.float64)
        if self.lam.shape != self.sigma11.shape:
            raise InvalidParameter("lam and sigma11 must have the same length")

    def __len__(self) -> int:
        return self.lam.size

    @property
    def step(self) -> np.ndarray:
        return np.arange(len(self))

    def slice(self, start: int, stop: int | None = None) -> "TimeSeries":
        return TimeSeries(self.lam[start:stop], self.sigma11[start:stop],
                          {k: np.asarray(v)[start:stop] for k, v in self.internals.items()})


# ---------------------------------------------------------------------------
# traced single step


def uniaxial_F(lam_axial, lam_lat):
    return jnp.diag(jnp.stack([lam_axial, lam_lat, lam_lat]))


@jax.jit
def _lateral_row(F, state, pots):
    sig = _cauchy(F, state, pots)
    scale = jax.lax.stop_gradient(jnp.maximum(1.0, jnp.abs(sig[0, 0])))
    return sig[1, 1] / scale


@partial(jax.jit, static_argnames=("stress_scale",))
def _coupled_residual(z, lam, state_n, pots, stress_scale, plastic):
    x, lat = z[:-1], z[-1]
    F = uniaxial_F(lam, lat)
    rm = jax.lax.cond(plastic,
                      lambda: plastic_residual(x, F, state_n, pots, stress_scale),
                      lambda: elastic_residual(x, state_n, pots.n_back))
    st, _ = unpack(x, pots.n_back)
    return jnp.concatenate([rm, jnp.atleast_1d(_lateral_row(F, st, pots))])


class StepOutput(NamedTuple):
    state: PlasticState
    lam_lat: jnp.ndarray
    delta_lambda: jnp.ndarray
    converged: jnp.ndarray
    lateral_converged: jnp.ndarray
    iterations: jnp.ndarray
    J: jnp.ndarray


def uniaxial_step_traced(lam, state_n: PlasticState, lat_n, J_n, pots: PotentialSet,
                         settings: SolverSettings, differentiable: bool = False) -> StepOutput:
    """One prescribed-stretch step. ``J_n`` seeds the coupled Newton solve."""
    sg = jax.lax.stop_gradient
    s = settings.stress_scale
    lam_c, st_c, pots_c = sg(lam), sg(state_n), sg(pots)

    def lateral(z):
        return jnp.atleast_1d(_lateral_row(uniaxial_F(lam_c, z[0]), st_c, pots_c))

    zl, conv_l, _, _, _ = newton_solve(lateral, jnp.atleast_1d(sg(lat_n)), settings.tol,
                                       settings.max_iter)
    lat_tr = zl[0]
    phi_tr = _yield(_mandel(uniaxial_F(lam_c, lat_tr), st_c, pots_c), pots_c)
    plastic = phi_tr > settings.tol * s

    res = partial(_coupled_residual, stress_scale=s, plastic=plastic)
    z0 = jnp.concatenate([pack(st_c, 0.0), zl])
    z, conv, it, _, J = newton_solve(lambda z: res(z, lam_c, st_c, pots_c), z0, settings.tol,
                                     settings.max_iter, nonneg_index=z0.size - 2, J0=J_n,
                                     refresh_ratio=REFRESH_RATIO)
    conv = conv & conv_l
    r_lat_ok = jnp.abs(res(z, lam_c, st_c, pots_c)[-1]) <= settings.tol
    if differentiable:
        z = jnp.where(conv, z, z0)
        J = jax.jacfwd(res)(z, lam_c, st_c, pots_c)
        J = jnp.where(jnp.all(jnp.isfinite(J)), J, jnp.eye(z.size))
        # one exact-Jacobian correction takes the residual from tol to roundoff,
        # so the loss is a smooth function of the parameters at FD resolution
        dz = jnp.linalg.solve(J, -res(z, lam_c, st_c, pots_c))
        z = jnp.where(conv & jnp.all(jnp.isfinite(dz)), z + dz, z)
        z = z.at[-2].set(jnp.maximum(z[-2], 0.0))
        z = implicit_solution(res, z, lam, state_n, pots, J=J)
    st, dlam = unpack(z[:-1], pots.n_back)
    return StepOutput(st, z[-1], dlam, conv, conv_l & r_lat_ok, it, J)


class StepRecord(NamedTuple):
    sigma11: jnp.ndarray
    sigma22: jnp.ndarray
    lam_lat: jnp.ndarray
    delta_lambda: jnp.ndarray
    k: jnp.ndarray
    fy: jnp.ndarray
    phi: jnp.ndarray
    d_plastic: jnp.ndarray
    d_kinematic: jnp.ndarray
    d_isotropic: jnp.ndarray
    det_fp: jnp.ndarray
    mandel_asym: jnp.ndarray
    converged: jnp.ndarray
    iterations: jnp.ndarray


def _record(lam, out: StepOutput, pots: PotentialSet, diagnostics: bool) -> StepRecord:
    F = uniaxial_F(lam, out.lam_lat)
    sig = _cauchy(F, out.state, pots)
    zero = jnp.zeros(())
    if not diagnostics:
        return StepRecord(sig[0, 0], sig[1, 1], out.lam_lat, out.delta_lambda, out.state.k,
                          zero, zero, zero, zero, zero, zero, zero, out.converged,
                          out.iterations)
    ms = _mandel(F, out.state, pots)
    nu, fy, _ = _flows(ms, pots)
    phi = fy - (pots.params["Y0"] + pots.phi_iso(ms.kappa))
    d = dissipation_rate(ms, nu, out.delta_lambda, pots)
    asym = jnp.maximum(jnp.max(jnp.abs(ms.M - ms.M.T)),
                       jnp.max(jnp.abs(ms.Mkin - jnp.swapaxes(ms.Mkin, -1, -2))))
    return StepRecord(sig[0, 0], sig[1, 1], out.lam_lat, out.delta_lambda, out.state.k, fy,
                      phi, d.plastic, d.kinematic, d.isotropic, t3.det(out.state.Fp), asym,
                      out.converged, out.iterations)


def initial_jacobian(n_back: int):
    return jnp.eye(n_unknowns(n_back) + 1)


def scan_program(stretches, state0: PlasticState, lat0, pots: PotentialSet,
                 settings: SolverSettings, differentiable: bool = False,
                 diagnostics: bool = False, keep_states: bool = False):
    """Propagate the state through ``stretches`` with ``lax.scan`` (traceable).

    Failed steps leave the state unchanged and are flagged in the returned
    records; no substepping happens here.
    Returns ``(final_state, final_lat, records, trajectory)`` where
    ``trajectory`` is the per-step ``(state, lat)`` if ``keep_states`` else None.
    """
    def body(carry, lam):
        st, lat, J = carry
        out = uniaxial_step_traced(lam, st, lat, J, pots, settings, differentiable)
        st1 = jax.tree_util.tree_map(lambda a, b: jnp.where(out.converged, a, b), out.state, st)
        lat1 = jnp.where(out.converged, out.lam_lat, lat)
        J1 = jnp.where(jnp.all(jnp.isfinite(out.J)), out.J, J)
        out = out._replace(state=st1, lam_lat=lat1)
        rec = _record(lam, out, pots, diagnostics)
        return (st1, lat1, J1), (rec, (st1, lat1) if keep_states else None)

    carry0 = (state0, jnp.asarray(lat0, dtype=jnp.float64), initial_jacobian(pots.n_back))
    (st, lat, _), (recs, traj) = jax.lax.scan(body, carry0, jnp.asarray(stretches))
    return st, lat, recs, traj


@partial(jax.jit, static_argnames=("settings", "diagnostics"))
def _scan_jit(stretches, state0, lat0, pots, settings, diagnostics):
    return scan_program(stretches, state0, lat0, pots, settings, False, diagnostics,
                        keep_states=True)


@partial(jax.jit, static_argnames=("settings",))
def _step_jit(lam, state_n, lat_n, pots, settings):
    return uniaxial_step_traced(lam, state_n, lat_n, initial_jacobian(pots.n_back), pots,
                                settings)


# ---------------------------------------------------------------------------
# public API


def step_uniaxial(lam_axial: float, state: PlasticState, pots: PotentialSet,
                  settings: SolverSettings = SolverSettings(), lam_lat_guess: float = 1.0):
    """Advance one step to axial stretch ``lam_axial`` under uniaxial stress.

    Returns ``(F, new_state, sigma11)``.

    Raises
    ------
    LateralNoConvergence
        If the lateral-stress condition cannot be met.
    NoConvergence
        If the return map fails while the lateral condition is satisfied.
    """
    if not float(lam_axial) > 0.0:
        raise InvalidParameter("axial stretch must be positive")
    out = _step_jit(jnp.float64(lam_axial), state, jnp.float64(lam_lat_guess), pots, settings)
    if not bool(out.converged):
        cls = NoConvergence if bool(out.lateral_converged) else LateralNoConvergence
        raise cls(f"uniaxial step to stretch {lam_axial} did not converge",
                  iterations=int(out.iterations))
    F = uniaxial_F(jnp.float64(lam_axial), out.lam_lat)
    sigma = _cauchy(F, out.state, pots)
    return F, out.state, float(sigma[0, 0])


def _substep(lam_from, lam_to, state, lat, pots, settings, index):
    """Retry one failed increment with 2, 4, ... equal substeps."""
    for level in range(1, settings.max_bisections + 1):
        n = 2**level
        st, lt, ok = state, lat, True
        for lam in np.linspace(lam_from, lam_to, n + 1)[1:]:
            out = _step_jit(jnp.float64(lam), st, lt, pots, settings)
            if not bool(out.converged):
                ok = False
                break
            st, lt = out.state, out.lam_lat
        if ok:
            return st, lt
    raise NoConvergence(f"step {index} failed after {settings.max_bisections} bisections",
                        step=index)


_RECORD_NAMES = {"sigma22": "sigma22", "lam_lat": "lambda_lat", "delta_lambda": "delta_lambda",
                 "k": "k", "fy": "fy", "phi": "phi", "d_plastic": "d_plastic",
                 "d_kinematic": "d_kinematic", "d_isotropic": "d_isotropic",
                 "det_fp": "det_fp", "mandel_asym": "mandel_asym",
                 "iterations": "iterations"}


def run_program(prog: LoadingProgram, pots: PotentialSet,
                settings: SolverSettings = SolverSettings(),
                state0: PlasticState | None = None, diagnostics: bool = True,
                return_state: bool = False):
    """Simulate ``prog`` from the virgin state; returns a :class:`TimeSeries`.

    Runs as one compiled scan. A step that fails to converge is redone with
    recursive substepping and the scan resumes after it.

    Raises
    ------
    NoConvergence
        With ``step`` set to the failing point index if substepping fails.
    """
    lam = prog.array
    n = lam.size
    state = virgin_state(pots.n_back) if state0 is None else state0
    lat = 1.0
    rows = [None] * n
    start = 0
    while start < n:
        # pad with the last stretch so every scan call has the same shape
        xs = np.concatenate([lam[start:], np.full(start, lam[-1])])
        st_end, lat_end, recs, traj = _scan_jit(xs, state, lat, pots, settings, diagnostics)
        recs = jax.tree_util.tree_map(np.asarray, recs)
        bad = np.flatnonzero(~recs.converged[: n - start])
        stop = n - start if bad.size == 0 else int(bad[0])
        for j in range(stop):
            rows[start + j] = StepRecord(*(f[j] for f in recs))
        if bad.size == 0:
            # padded steps hold the stretch fixed and leave the state unchanged
            state, lat = st_end, lat_end
            break
        i = start + stop
        if stop > 0:
            state = jax.tree_util.tree_map(lambda a: a[stop - 1], traj[0])
            lat = traj[1][stop - 1]
        prev = lam[i - 1] if i > 0 else 1.0
        state, lat = _substep(prev, lam[i], state, lat, pots, settings, i)
        # record point i from the substepped state (a zero increment)
        xs = np.full(n, lam[i])
        one = _scan_jit(xs, state, lat, pots, settings, diagnostics)[2]
        rows[i] = StepRecord(*(np.asarray(f)[0] for f in one))
        start = i + 1
    recs = StepRecord(*(np.array(col) for col in zip(*rows)))
    internals = {name: getattr(recs, f) for f, name in _RECORD_NAMES.items()}
    ts = TimeSeries(lam, recs.sigma11, internals)
    return (ts, state) if return_state else ts

