"""Differentiation primitives shared by potentials, the return map and training.

JAX does the actual differentiation: forward mode (``jacfwd``) for the small
Newton systems of the material update, reverse mode for loss gradients.
Gradients through converged Newton solves use the implicit function theorem
(see :func:`implicit_solution`) instead of unrolling the iterations.
"""
from __future__ import annotations

from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .errors import SingularJacobian, UnsupportedPrimitive

jax.config.update("jax_enable_x64", True)


def _wrap_trace_errors(fn):
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (TypeError, jax.errors.ConcretizationTypeError,
                jax.errors.TracerArrayConversionError) as exc:
            raise UnsupportedPrimitive(str(exc)) from exc
    wrapped.__doc__ = fn.__doc__
    wrapped.__name__ = fn.__name__
    return wrapped


@_wrap_trace_errors
def grad(f: Callable, x):
    """Gradient of scalar ``f`` at ``x`` (reverse mode)."""
    x = jnp.asarray(x, dtype=jnp.float64)
    return jax.grad(f)(x)


@_wrap_trace_errors
def jacobian(r: Callable, x):
    """Jacobian ``dr/dx`` at ``x`` (forward mode)."""
    x = jnp.asarray(x, dtype=jnp.float64)
    return jax.jacfwd(r)(x)


def macaulay(x):
    """``max(x, 0)`` with derivative 0 at the kink."""
    return jnp.where(x > 0.0, x, 0.0)


def safe_sqrt(x):
    """``sqrt(max(x,0))`` whose derivative at 0 is 0 instead of inf/NaN."""
    pos = x > 0.0
    return jnp.where(pos, jnp.sqrt(jnp.where(pos, x, 1.0)), 0.0)


def safe_div(a, b):
    """``a / b`` with the ``b == 0`` branch returning 0 and NaN-free gradients."""
    nz = b != 0.0
    return jnp.where(nz, a / jnp.where(nz, b, 1.0), 0.0)


def newton_solve(residual: Callable, z0, tol: float, max_iter: int,
                 nonneg_index: int | None = None, J0=None, refresh_ratio: float = 0.0):
    """Newton iteration on ``residual(z) = 0`` inside ``lax.while_loop``.

    Convergence is ``max|r| <= tol``. ``nonneg_index`` marks one unknown that
    is floored at zero after every update (the plastic multiplier).

    With ``J0`` given, iteration starts from that (possibly stale) Jacobian
    and only re-evaluates it when a step fails to cut the residual norm by
    ``refresh_ratio``; a step taken with a stale Jacobian that increases the
    residual is discarded. ``refresh_ratio=0`` is plain Newton.

    Returns ``(z, converged, iterations, final_residual_norm, J)`` where ``J``
    is the last Jacobian used. Not differentiable; wrap with
    :func:`implicit_solution` for gradients.
    """
    jac = jax.jacfwd(residual)
    z0 = jnp.asarray(z0)
    r0 = residual(z0)
    fresh0 = J0 is None
    J0 = jac(z0) if J0 is None else jnp.asarray(J0)

    def cond(carry):
        z, r, J, fresh, it = carry
        rn = jnp.max(jnp.abs(r))
        return (rn > tol) & (it < max_iter) & jnp.isfinite(rn)

    def body(carry):
        z, r, J, fresh, it = carry
        z1 = z + jnp.linalg.solve(J, -r)
        if nonneg_index is not None:
            z1 = z1.at[nonneg_index].set(jnp.maximum(z1[nonneg_index], 0.0))
        r1 = residual(z1)
        rn, rn1 = jnp.max(jnp.abs(r)), jnp.max(jnp.abs(r1))
        accept = fresh | (rn1 < rn)
        z1 = jnp.where(accept, z1, z)
        r1 = jnp.where(accept, r1, r)
        rn1 = jnp.where(accept, rn1, rn)
        refresh = (rn1 > tol) & (~accept | (rn1 > refresh_ratio * rn))
        J1 = jax.lax.cond(refresh, jac, lambda _: J, z1)
        return z1, r1, J1, refresh, it + 1

    z, r, J, _, it = jax.lax.while_loop(cond, body, (z0, r0, J0, jnp.asarray(fresh0), 0))
    rn = jnp.max(jnp.abs(r))
    converged = (rn <= tol) & jnp.all(jnp.isfinite(z))
    return z, converged, it, rn, J


def implicit_solution(residual: Callable, z_star, *params, J=None):
    """Attach implicit-function-theorem derivatives to a converged root.

    ``residual(z, *params)`` must vanish at ``z_star``. The returned value is
    numerically ``z_star``; its derivative with respect to ``params`` is
    ``-J^{-1} dR/dparams`` with ``J = dR/dz`` frozen at the root, so reverse
    mode costs one adjoint solve with ``J^T`` per call and nothing is stored
    about the Newton history. Pass ``J`` to reuse an already computed
    Jacobian at the root.
    """
    z_star = jax.lax.stop_gradient(z_star)
    if J is None:
        J = jax.jacfwd(residual)(z_star, *params)
    J = jax.lax.stop_gradient(J)
    r = residual(z_star, *params)
    correction = jnp.linalg.solve(J, r)
    return z_star - (correction - jax.lax.stop_gradient(correction))


def check_jacobian(J) -> None:
    """Raise :class:`SingularJacobian` for a concrete, numerically singular J."""
    J = np.asarray(J)
    if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e15:
        raise SingularJacobian("return-map Jacobian is singular")


def central_difference_grad(f: Callable, x, rel_step: float = 1e-6):
    """Central-difference gradient oracle, step ``h_i = rel_step*max(1,|x_i|)``.

    Pure numpy on float64; independent of JAX's differentiation.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        h = rel_step * max(1.0, abs(flat[i]))
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        gf[i] = (float(f(xp.reshape(x.shape))) - float(f(xm.reshape(x.shape)))) / (2 * h)
    return g


def central_difference_jacobian(r: Callable, x, rel_step: float = 1e-6):
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(r(xp)) - np.asarray(r(xm))) / (2 * h))
    return np.stack(cols, axis=-1)
