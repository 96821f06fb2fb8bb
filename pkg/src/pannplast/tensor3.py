"""Dense 3x3 tensor algebra on ``jax.numpy`` arrays.

Every function is traceable (usable under ``jit``/``grad``/``vmap``).  Checks
that need concrete values (singularity, overflow) only fire when the input is
concrete; inside traced code the caller is responsible for flagging failures.
"""
from __future__ import annotations

import math
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from .errors import NonFinite, SingularTensor

jax.config.update("jax_enable_x64", True)

I = jnp.eye(3)
ZERO = jnp.zeros((3, 3))

SINGULAR_DET = 1e-14
# scaling-and-squaring parameters
EXPM_NORM_THRESHOLD = 0.5
EXPM_TRUNCATION = 1e-16
EXPM_MAX_SQUARINGS = 24


def _is_concrete(x) -> bool:
    return not isinstance(x, jax.core.Tracer)


def as_tensor(a) -> jnp.ndarray:
    a = jnp.asarray(a, dtype=jnp.float64)
    if a.shape == (9,):
        a = a.reshape(3, 3)
    return a


def diag(a, b, c) -> jnp.ndarray:
    return jnp.diag(jnp.array([a, b, c], dtype=jnp.float64))


def trace(A):
    return jnp.trace(A, axis1=-2, axis2=-1)


def transpose(A):
    return jnp.swapaxes(A, -1, -2)


def dev(A):
    """Deviatoric part ``A - tr(A)/3 I``."""
    return A - trace(A)[..., None, None] / 3.0 * I


def sym(A):
    return 0.5 * (A + transpose(A))


def ddot(A, B):
    """Double contraction ``sum_ij A_ij B_ij``."""
    return jnp.sum(A * B, axis=(-2, -1))


def norm(A):
    return jnp.sqrt(ddot(A, A))


def det(A):
    a = A
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def cofactor(A):
    a = A
    c00 = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    c01 = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    c02 = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    c10 = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    c11 = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    c12 = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    c20 = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    c21 = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    c22 = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return jnp.stack(
        [
            jnp.stack([c00, c01, c02], axis=-1),
            jnp.stack([c10, c11, c12], axis=-1),
            jnp.stack([c20, c21, c22], axis=-1),
        ],
        axis=-2,
    )


def inv(A):
    """Closed-form inverse via the adjugate.

    Raises
    ------
    SingularTensor
        If ``|det(A)| <= 1e-14`` (checked only for concrete input).
    """
    d = det(A)
    if _is_concrete(d) and np.any(np.abs(np.asarray(d)) <= SINGULAR_DET):
        raise SingularTensor(f"det = {np.asarray(d)!r} below {SINGULAR_DET}")
    return inv_unchecked(A)


def inv_unchecked(A):
    return transpose(cofactor(A)) / det(A)[..., None, None]


def _taylor(X, n_terms: int):
    # Horner form of sum_{j<=n} X^j / j!
    E = I
    for j in range(n_terms, 0, -1):
        E = I + (X @ E) / j
    return E


def _terms_needed(radius: float) -> int:
    """Smallest n with radius**(n+1)/(n+1)! < EXPM_TRUNCATION."""
    n = 0
    while radius ** (n + 1) / math.factorial(n + 1) >= EXPM_TRUNCATION:
        n += 1
    return n


# the first omitted term is below EXPM_TRUNCATION once |A| <= threshold
_TERMS = _terms_needed(EXPM_NORM_THRESHOLD)


@jax.jit
def _expm_unchecked(A):
    nrm = jax.lax.stop_gradient(norm(A))

    def scaled(A):
        s = jnp.clip(jnp.ceil(jnp.log2(nrm / EXPM_NORM_THRESHOLD)), 0, EXPM_MAX_SQUARINGS)
        E = _taylor(A / 2.0**s, _TERMS)
        return jax.lax.fori_loop(0, EXPM_MAX_SQUARINGS,
                                 lambda i, E: jnp.where(i < s, E @ E, E), E)

    return jax.lax.cond(nrm <= EXPM_NORM_THRESHOLD, partial(_taylor, n_terms=_TERMS), scaled, A)


def expm(A):
    """Matrix exponential by scaling and squaring of a truncated Taylor series.

    The argument is scaled by ``2**-s`` until its Frobenius norm is at most
    0.5, the Taylor series is truncated once the next term's norm bound
    ``|A|^n/n!`` drops below 1e-16, and the result is squared ``s`` times.
    Works for non-symmetric arguments.
    """
    E = _expm_unchecked(A)
    if _is_concrete(E) and not np.all(np.isfinite(np.asarray(E))):
        raise NonFinite("matrix exponential overflowed")
    return E


def is_finite(A) -> bool:
    return bool(np.all(np.isfinite(np.asarray(A))))
