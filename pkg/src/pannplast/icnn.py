"""Constraint-satisfying feedforward networks.

Three structural classes are supported:

``convex_monotone``
    non-negative weights everywhere, parametric softplus activations.
``positive_convex_monotone``
    as above plus a non-negative output bias.
``positive_monotone``
    non-negative weights, parametric logistic activations, non-negative
    output bias.

Non-negativity is structural: the optimizer only ever sees raw parameters and
the effective weight is ``softplus(raw)``. Logistic amplitude and steepness
are ``exp(raw)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DimensionMismatch, InvalidParameter

jax.config.update("jax_enable_x64", True)

CONVEX_MONOTONE = "convex_monotone"
POSITIVE_CONVEX_MONOTONE = "positive_convex_monotone"
POSITIVE_MONOTONE = "positive_monotone"
CLASSES = (CONVEX_MONOTONE, POSITIVE_CONVEX_MONOTONE, POSITIVE_MONOTONE)


def act_c(x, alpha):
    """Parametric softplus ``log(1 + e^alpha e^x)``, overflow-safe."""
    return jnp.logaddexp(0.0, alpha + x)


def act_m(x, beta1, beta2, beta3):
    """Parametric logistic ``beta1 / (1 + exp(-beta2 (x - beta3)))``."""
    return beta1 * jax.nn.sigmoid(beta2 * (x - beta3))


def softplus(x):
    return jnp.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class NetSpec:
    """Static architecture of a constrained network."""

    constraint: str
    in_dim: int
    hidden: tuple = (20, 20)
    init_std: float = 0.5

    def __post_init__(self):
        if self.constraint not in CLASSES:
            raise InvalidParameter(f"unknown constraint class {self.constraint!r}")
        if self.in_dim not in (1, 2):
            raise InvalidParameter("input dimension must be 1 or 2")

    @property
    def convex(self) -> bool:
        return self.constraint != POSITIVE_MONOTONE

    @property
    def positive(self) -> bool:
        return self.constraint != CONVEX_MONOTONE

    @property
    def sizes(self) -> tuple:
        return (self.in_dim, *self.hidden, 1)


class ConstrainedNet(NamedTuple):
    spec: NetSpec
    params: dict


def init(seed: int, constraint: str, in_dim: int, hidden: tuple = (20, 20),
         init_std: float = 0.5) -> ConstrainedNet:
    spec = NetSpec(constraint, in_dim, tuple(hidden), init_std)
    return ConstrainedNet(spec, init_params(seed, spec))


def init_params(seed: int, spec: NetSpec) -> dict:
    """Deterministic initialization of raw parameters.

    Raw weights are drawn around ``inverse_softplus(1/fan_in)`` with standard
    deviation ``spec.init_std`` so effective weights start near ``1/fan_in``.
    """
    rng = np.random.default_rng(seed)
    layers = []
    sizes = spec.sizes
    n_layers = len(sizes) - 1
    for li in range(n_layers):
        fan_in, fan_out = sizes[li], sizes[li + 1]
        centre = inverse_softplus(1.0 / fan_in)
        layer = {
            "W": jnp.asarray(centre + spec.init_std * rng.standard_normal((fan_out, fan_in))),
            "b": jnp.asarray(0.1 * rng.standard_normal(fan_out)),
        }
        if li < n_layers - 1:
            if spec.convex:
                layer["alpha"] = jnp.asarray(0.1 * rng.standard_normal(fan_out))
            else:
                layer["beta1"] = jnp.asarray(0.1 * rng.standard_normal(fan_out))
                layer["beta2"] = jnp.asarray(0.1 * rng.standard_normal(fan_out))
                layer["beta3"] = jnp.asarray(0.1 * rng.standard_normal(fan_out))
        layers.append(layer)
    return {"layers": layers}


def effective_weights(params: dict) -> list:
    return [softplus(layer["W"]) for layer in params["layers"]]


def effective_output_bias(spec: NetSpec, params: dict):
    b = params["layers"][-1]["b"]
    return softplus(b) if spec.positive else b


def activation_params(params: dict) -> list:
    """Effective per-neuron activation parameters of each hidden layer."""
    out = []
    for layer in params["layers"][:-1]:
        if "alpha" in layer:
            out.append({"alpha": layer["alpha"]})
        else:
            out.append({
                "beta1": jnp.exp(layer["beta1"]),
                "beta2": jnp.exp(layer["beta2"]),
                "beta3": layer["beta3"],
            })
    return out


def forward(net: ConstrainedNet, x):
    """Scalar network output for input vector ``x`` of length ``in_dim``."""
    return apply(net.spec, net.params, x)


def apply(spec: NetSpec, params: dict, x):
    x = jnp.atleast_1d(jnp.asarray(x, dtype=jnp.float64))
    if x.shape != (spec.in_dim,):
        raise DimensionMismatch(f"expected input of shape ({spec.in_dim},), got {x.shape}")
    h = x
    layers = params["layers"]
    for layer in layers[:-1]:
        z = softplus(layer["W"]) @ h + layer["b"]
        if spec.convex:
            h = act_c(z, layer["alpha"])
        else:
            h = act_m(z, jnp.exp(layer["beta1"]), jnp.exp(layer["beta2"]), layer["beta3"])
    last = layers[-1]
    return (softplus(last["W"]) @ h)[0] + effective_output_bias(spec, params)[0]


def flatten(params: dict) -> np.ndarray:
    leaves = jax.tree_util.tree_leaves(params)
    return np.concatenate([np.ravel(np.asarray(x)) for x in leaves])


def to_json(spec: NetSpec, params: dict, normalization: dict | None = None) -> str:
    doc = {
        "constraint": spec.constraint,
        "in_dim": spec.in_dim,
        "hidden": list(spec.hidden),
        "init_std": spec.init_std,
        "layers": [{k: np.asarray(v).tolist() for k, v in layer.items()}
                   for layer in params["layers"]],
        "normalization": normalization or {},
    }
    return json.dumps(doc)


def from_json(text: str) -> tuple[NetSpec, dict]:
    doc = json.loads(text)
    spec = NetSpec(doc["constraint"], int(doc["in_dim"]), tuple(doc["hidden"]),
                   float(doc.get("init_std", 0.5)))
    params = {"layers": [{k: jnp.asarray(v, dtype=jnp.float64) for k, v in layer.items()}
                         for layer in doc["layers"]]}
    return spec, params
