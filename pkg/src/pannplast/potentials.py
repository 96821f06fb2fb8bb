"""Energy and dissipation potentials.

Phenomenological forms (Neo-Hookean energies, Voce isotropic saturation,
Armstrong-Frederick / Burlet-Cailletaud / Ohno-Wang kinematic hardening) and
network-backed forms share one interface, :class:`PotentialSet`, selected by a
framework name:

=====  ==============  ==============  ==============  ===============
name   iso energy      kin energy      iso dissipation kin dissipation
=====  ==============  ==============  ==============  ===============
AF     quadratic       Neo-Hookean     Voce            Armstrong-Fred.
OW     quadratic       Neo-Hookean     Voce            Ohno-Wang
BC     quadratic       Neo-Hookean     Voce            Burlet-Caill.
2NN    quadratic       Neo-Hookean     network         network
4NN    network         network         network         network
=====  ==============  ==============  ==============  ===============

Stresses are in GPa throughout.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import jax
import jax.numpy as jnp
import numpy as np

from . import icnn
from . import tensor3 as t3
from .diffengine import macaulay, safe_div, safe_sqrt
from .errors import (DivisionByZero, InvalidParameter, SingularTensor,
                     ZeroFlowDirection)

jax.config.update("jax_enable_x64", True)

FRAMEWORKS = ("AF", "OW", "BC", "2NN", "4NN")

_KINDS = {
    "AF": ("quadratic", "neohooke", "voce", "af"),
    "OW": ("quadratic", "neohooke", "voce", "ow"),
    "BC": ("quadratic", "neohooke", "voce", "bc"),
    "2NN": ("quadratic", "neohooke", "net", "net"),
    "4NN": ("net", "net", "net", "net"),
}

# raw-parameter transform used by the optimizer for each named scalar
SCALAR_TRANSFORMS = {
    "G": "log", "K": "log", "Y0": "log", "H_iso": "log", "H_kin": "log",
    "R_sat": "log", "gamma": "log", "M_inf": "log", "m": "log", "delta": "logit",
}


def _concrete(*xs) -> bool:
    return not any(isinstance(x, jax.core.Tracer) for x in xs)


# ---------------------------------------------------------------------------
# parameter records


@dataclass(frozen=True)
class PhenomenologicalParams:
    """Material constants of the phenomenological forms (GPa unless noted)."""

    G: float
    K: float
    Y0: float
    H_iso: float = 0.0
    H_kin: float = 0.0
    R_sat: float = 0.0
    gamma: float = 0.0  # 1/GPa
    M_inf: float = 1.0
    m: float = 0.0
    delta: float = 1.0
    n_back: int = 1

    def __post_init__(self):
        if not (self.G > 0 and self.K > 0 and self.Y0 > 0):
            raise InvalidParameter("G, K and Y0 must be positive")
        for name in ("H_iso", "H_kin", "R_sat", "gamma", "M_inf", "m"):
            if getattr(self, name) < 0:
                raise InvalidParameter(f"{name} must be non-negative")
        if not 0.0 <= self.delta <= 1.0:
            raise InvalidParameter("delta must lie in [0, 1]")
        if int(self.n_back) < 1:
            raise InvalidParameter("n_back must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhenomenologicalParams":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def load_default_params(name: str = "AF") -> tuple[PhenomenologicalParams, str]:
    """Generator constants shipped with the package; returns (params, version)."""
    text = resources.files("pannplast").joinpath("data/default_params.json").read_text()
    doc = json.loads(text)
    return PhenomenologicalParams.from_dict(doc["models"][name]), doc["version"]


# ---------------------------------------------------------------------------
# elementary phenomenological forms


def neo_hooke_energy(C, G, K):
    J2 = t3.det(C)
    isochoric = 0.5 * G * (t3.trace(C) / jnp.cbrt(J2) - 3.0)
    volumetric = 0.5 * K * (jnp.sqrt(J2) - 1.0) ** 2
    return isochoric + volumetric


def psi_el(Ce, p):
    """Compressible Neo-Hookean elastic energy of ``Ce``."""
    Ce = t3.as_tensor(Ce)
    if _concrete(Ce) and float(t3.det(Ce)) <= 0.0:
        raise SingularTensor("det(Ce) must be positive")
    return neo_hooke_energy(Ce, p.G, p.K)


def psi_iso_quadratic(k, p):
    return 0.5 * p.H_iso * k**2


def isochoric_neo_hooke(c, H):
    return 0.5 * H * (t3.trace(c) / jnp.cbrt(t3.det(c)) - 3.0)


def psi_kin_neohooke(ckin, p):
    ckin = t3.as_tensor(ckin)
    if _concrete(ckin) and float(t3.det(ckin)) <= 0.0:
        raise SingularTensor("det(ckin) must be positive")
    return isochoric_neo_hooke(ckin, p.H_kin)


def voce(kappa, R_sat, gamma):
    return R_sat * (-jnp.expm1(-gamma * kappa))


def phi_iso_voce(kappa, p):
    """Saturating isotropic dissipation ``R (1 - exp(-gamma kappa))``."""
    return voce(kappa, p.R_sat, p.gamma)


def af_potential(Mkin, M_inf):
    Md = t3.dev(Mkin)
    return 0.75 * t3.ddot(Md, t3.transpose(Md)) / M_inf


def phi_kin_af(Mkin, p):
    """Armstrong-Frederick kinematic dissipation potential."""
    if _concrete(p.M_inf) and not float(p.M_inf) > 0.0:
        raise InvalidParameter("M_inf must be positive")
    return af_potential(t3.as_tensor(Mkin), p.M_inf)


def flow_unit(nu):
    return nu / jnp.maximum(t3.norm(nu), 1e-300)


def bc_potential(Mkin, eta, M_inf, delta):
    Md = t3.dev(Mkin)
    radial = t3.ddot(Mkin, eta) ** 2
    return 0.75 / M_inf * (delta * t3.ddot(Md, Md) + (1.0 - delta) * radial)


def phi_kin_bc(Mkin, nu, p):
    """Burlet-Cailletaud-type potential mixing the AF term and radial evanescence.

    ``3/(4 M_inf) [delta Mkin_dev:Mkin_dev + (1 - delta) (Mkin:eta)^2]`` with
    ``eta = nu/|nu|``; ``eta`` is a fixed direction, not differentiated.
    """
    nu = t3.as_tensor(nu)
    if _concrete(nu) and float(t3.norm(nu)) == 0.0:
        raise ZeroFlowDirection("flow direction has zero norm")
    return bc_potential(t3.as_tensor(Mkin), flow_unit(nu), p.M_inf, p.delta)


def ow_rate(Mkin, fy, nu, M_inf, m):
    Md = t3.dev(Mkin)
    bracket = macaulay(safe_div(t3.ddot(nu, Md), fy))
    ratio = jnp.where(fy > 0.0, fy, 1.0) / M_inf
    return 1.5 * Md / M_inf * ratio**m * bracket


def ow_flow(Mkin, Mred, nu, p):
    """Ohno-Wang kinematic flow contribution (derivative of the dissipation)."""
    Mkin, Mred, nu = (t3.as_tensor(a) for a in (Mkin, Mred, nu))
    fy = fy_vonmises(Mred)
    if _concrete(fy, Mkin, nu):
        if float(fy) == 0.0 and float(t3.ddot(nu, t3.dev(Mkin))) > 0.0:
            raise DivisionByZero("zero effective stress with active back-stress flow")
    return ow_rate(Mkin, fy, nu, p.M_inf, p.m)


def fy_vonmises(Mred):
    """Von Mises effective stress ``sqrt(3/2 dev(M):dev(M)^t)``."""
    Md = t3.dev(Mred)
    return safe_sqrt(1.5 * t3.ddot(Md, t3.transpose(Md)))


def flow_direction(Mred):
    """``nu = d fy / d M`` evaluated at the reduced Mandel stress."""
    return jax.grad(fy_vonmises)(Mred)


def invariants_kin_energy(ckin):
    ckin = t3.as_tensor(ckin)
    return jnp.array([t3.trace(ckin), t3.trace(ckin @ ckin)])


def invariants_kin_dissipation(Mkin, nu):
    Mkin, nu = t3.as_tensor(Mkin), t3.as_tensor(nu)
    if _concrete(nu) and float(t3.norm(nu)) == 0.0:
        raise ZeroFlowDirection("flow direction has zero norm")
    eta = flow_unit(nu)
    return jnp.array([t3.ddot(Mkin, Mkin), t3.ddot(Mkin, eta) ** 2])


# ---------------------------------------------------------------------------
# framework-level container


@dataclass(frozen=True)
class FrameworkSpec:
    """Static description of a potential set (hashable; used as jit static)."""

    framework: str
    n_back: int = 1
    stress_scale: float = 1.0  # GPa; nondimensionalizes network inputs/outputs
    energy_scale: float = 1.0  # GPa; output scale of the energy networks
    hidden: tuple = (20, 20)
    init_std: float = 0.5
    train_elastic: bool = False
    train_Y0: bool = True

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise InvalidParameter(f"unknown framework {self.framework!r}")
        if self.n_back < 1:
            raise InvalidParameter("n_back must be >= 1")

    @property
    def kinds(self) -> tuple:
        return _KINDS[self.framework]

    def net_spec(self, slot: str) -> icnn.NetSpec:
        constraint, dim = {
            "iso_energy": (icnn.CONVEX_MONOTONE, 1),
            "kin_energy": (icnn.CONVEX_MONOTONE, 2),
            "iso_diss": (icnn.POSITIVE_MONOTONE, 1),
            "kin_diss": (icnn.POSITIVE_CONVEX_MONOTONE, 2),
        }[slot]
        return icnn.NetSpec(constraint, dim, tuple(self.hidden), self.init_std)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameworkSpec":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


SLOTS = ("iso_energy", "kin_energy", "iso_diss", "kin_diss")


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class PotentialSet:
    """Elastic constants, ``Y0`` and the four hardening potentials.

    ``params`` is a nested dict (a JAX pytree) holding physical values of the
    phenomenological constants and raw parameters of any networks::

        {"G", "K", "Y0",
         "iso_energy": {"H_iso"} | {"net"},
         "kin_energy": {"H_kin"} | {"net"},
         "iso_diss":   {"R_sat", "gamma"} | {"net"},
         "kin_diss":   {"M_inf"[, "m" | "delta"]} | {"net"}}
    """

    spec: FrameworkSpec
    params: dict = field(default_factory=dict)

    def tree_flatten(self):
        return (self.params,), self.spec

    @classmethod
    def tree_unflatten(cls, spec, children):
        return cls(spec, children[0])

    @property
    def framework(self) -> str:
        return self.spec.framework

    @property
    def n_back(self) -> int:
        return self.spec.n_back

    def with_params(self, params: dict) -> "PotentialSet":
        return replace(self, params=params)

    # energies -----------------------------------------------------------

    def psi_el(self, Ce):
        return neo_hooke_energy(Ce, self.params["G"], self.params["K"])

    def psi_iso(self, k):
        p = self.params["iso_energy"]
        if self.spec.kinds[0] == "quadratic":
            return 0.5 * p["H_iso"] * k**2
        spec = self.spec.net_spec("iso_energy")

        def nn(x):
            return icnn.apply(spec, p["net"], x)
        zero = jnp.zeros(1)
        slope0 = jax.grad(nn)(zero)[0]
        return self.spec.energy_scale * (nn(jnp.atleast_1d(k)) - nn(zero) - slope0 * k)

    def psi_kin(self, c):
        p = self.params["kin_energy"]
        if self.spec.kinds[1] == "neohooke":
            return isochoric_neo_hooke(c, p["H_kin"])
        spec = self.spec.net_spec("kin_energy")

        def nn(x):
            return icnn.apply(spec, p["net"], x)
        ref = jnp.zeros(2)
        a = jax.grad(nn)(ref)
        shifted = jnp.array([t3.trace(c), t3.trace(c @ c)]) - 3.0
        return self.spec.energy_scale * (nn(shifted) - nn(ref) - (a[0] + 2.0 * a[1]) * shifted[0])

    # dissipation potentials -------------------------------------------------

    def phi_iso(self, kappa):
        p = self.params["iso_diss"]
        if self.spec.kinds[2] == "voce":
            return voce(kappa, p["R_sat"], p["gamma"])
        spec = self.spec.net_spec("iso_diss")
        s = self.spec.stress_scale
        return s * (icnn.apply(spec, p["net"], jnp.atleast_1d(kappa / s))
                    - icnn.apply(spec, p["net"], jnp.zeros(1)))

    def phi_kin(self, Mkin, nu):
        """Scalar kinematic dissipation potential; ``None`` for Ohno-Wang."""
        kind = self.spec.kinds[3]
        p = self.params["kin_diss"]
        if kind == "af":
            return af_potential(Mkin, p["M_inf"])
        eta = flow_unit(nu)
        if kind == "bc":
            return bc_potential(Mkin, eta, p["M_inf"], p["delta"])
        if kind == "ow":
            return None
        spec = self.spec.net_spec("kin_diss")
        s = self.spec.stress_scale
        inv = jnp.array([t3.ddot(Mkin, Mkin), t3.ddot(Mkin, eta) ** 2]) / s**2
        return s * (icnn.apply(spec, p["net"], inv) - icnn.apply(spec, p["net"], jnp.zeros(2)))

    def has_scalar_kin_potential(self) -> bool:
        return self.spec.kinds[3] != "ow"

    def kin_flow(self, Mkin, nu, fy):
        """``d Phi_kin_hat / d Mkin`` for one back-stress.

        ``nu`` (and through it ``eta``) is held fixed. ``fy`` is the effective
        stress of the total reduced Mandel stress (used by Ohno-Wang only).
        """
        if self.spec.kinds[3] == "ow":
            p = self.params["kin_diss"]
            return ow_rate(Mkin, fy, nu, p["M_inf"], p["m"])
        return jax.grad(lambda M: self.phi_kin(M, nu))(Mkin)

    # derivative accessors ---------------------------------------------------

    def d_psi_el_dCe(self, Ce):
        return jax.grad(self.psi_el)(Ce)

    def d_psi_kin_dckin(self, c):
        return jax.grad(self.psi_kin)(c)

    def kappa_of_k(self, k):
        return jax.grad(self.psi_iso)(jnp.asarray(k, dtype=jnp.float64))

    def d_phi_iso_dkappa(self, kappa):
        return jax.grad(self.phi_iso)(jnp.asarray(kappa, dtype=jnp.float64))

    def d_phi_kin_dMkin(self, Mkin, nu, Mred=None):
        fy = fy_vonmises(Mred) if Mred is not None else jnp.asarray(1.0)
        return self.kin_flow(Mkin, nu, fy)

    def mandel_kin(self, c):
        """Back-stress ``2 c dPsi_kin/dc``."""
        return 2.0 * c @ self.d_psi_kin_dckin(c)


def d_psi_el_dCe(Ce, pots: PotentialSet):
    return pots.d_psi_el_dCe(t3.as_tensor(Ce))


def d_psi_kin_dckin(ckin, pots: PotentialSet):
    return pots.d_psi_kin_dckin(t3.as_tensor(ckin))


def d_phi_kin_dMkin(Mkin, nu, pots: PotentialSet, Mred=None):
    return pots.d_phi_kin_dMkin(t3.as_tensor(Mkin), t3.as_tensor(nu),
                                None if Mred is None else t3.as_tensor(Mred))


def kappa_of_k(k, pots: PotentialSet):
    return pots.kappa_of_k(k)


def d_phi_iso_dkappa(kappa, pots: PotentialSet):
    return pots.d_phi_iso_dkappa(kappa)


# ---------------------------------------------------------------------------
# construction


def _scalar_params(spec: FrameworkSpec, p: PhenomenologicalParams) -> dict:
    f = jnp.float64
    kinds = spec.kinds
    params = {"G": f(p.G), "K": f(p.K), "Y0": f(p.Y0)}
    params["iso_energy"] = {"H_iso": f(p.H_iso)} if kinds[0] == "quadratic" else {}
    params["kin_energy"] = {"H_kin": f(p.H_kin)} if kinds[1] == "neohooke" else {}
    params["iso_diss"] = {"R_sat": f(p.R_sat), "gamma": f(p.gamma)} if kinds[2] == "voce" else {}
    kd = {"M_inf": f(p.M_inf)}
    if kinds[3] == "ow":
        kd["m"] = f(p.m)
    elif kinds[3] == "bc":
        kd["delta"] = f(p.delta)
    params["kin_diss"] = kd if kinds[3] != "net" else {}
    return params


def build(spec: FrameworkSpec | str, p: PhenomenologicalParams, seed: int = 0) -> PotentialSet:
    """Potential set for ``spec`` with constants from ``p`` and nets seeded by ``seed``.

    Phenomenological slots take their constants from ``p``; network slots are
    initialized deterministically from ``seed`` (one sub-seed per slot).
    """
    if isinstance(spec, str):
        spec = FrameworkSpec(spec, n_back=p.n_back)
    params = _scalar_params(spec, p)
    for i, slot in enumerate(SLOTS):
        if spec.kinds[i] == "net":
            params[slot] = {"net": icnn.init_params(seed * 10 + i, spec.net_spec(slot))}
    return PotentialSet(spec, params)


def phenomenological_of(pots: PotentialSet) -> PhenomenologicalParams:
    """Recover the constants of a phenomenological set (nets are ignored)."""
    flat = {"G": pots.params["G"], "K": pots.params["K"], "Y0": pots.params["Y0"]}
    for slot in SLOTS:
        for k, v in pots.params[slot].items():
            if k != "net":
                flat[k] = v
    return PhenomenologicalParams.from_dict(
        {**{k: float(v) for k, v in flat.items()}, "n_back": pots.n_back})


# ---------------------------------------------------------------------------
# serialization


def _to_lists(tree):
    return jax.tree_util.tree_map(lambda x: np.asarray(x).tolist(), tree)


def _to_arrays(tree):
    if isinstance(tree, dict):
        return {k: _to_arrays(v) for k, v in tree.items()}
    if isinstance(tree, list):
        if tree and isinstance(tree[0], dict):
            return [_to_arrays(v) for v in tree]
        return jnp.asarray(tree, dtype=jnp.float64)
    return jnp.asarray(tree, dtype=jnp.float64)


def to_dict(pots: PotentialSet) -> dict:
    return {"spec": pots.spec.to_dict(), "params": _to_lists(pots.params)}


def from_dict(d: dict) -> PotentialSet:
    return PotentialSet(FrameworkSpec.from_dict(d["spec"]), _to_arrays(d["params"]))


def save(pots: PotentialSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(pots), fh, indent=1)


def load(path) -> PotentialSet:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))
