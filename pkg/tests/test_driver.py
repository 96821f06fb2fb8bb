import numpy as np
import pytest
from scipy.optimize import brentq

from pannplast import potentials as P
from pannplast.constitutive import SolverSettings, virgin_state
from pannplast.driver import (LoadingProgram, build_cycles, from_stretches, run_program,
                              step_uniaxial)
from pannplast.errors import InvalidAmplitude, InvalidParameter, NoConvergence

S = SolverSettings()


def steel(**kw):
    base = dict(G=80.0, K=175.0, Y0=0.2, H_iso=5.0, H_kin=2.0, R_sat=0.1, gamma=5.0,
                M_inf=0.15)
    base.update(kw)
    return P.PhenomenologicalParams(**base)


def neo_hooke_uniaxial(lam, G, K):
    """Closed-form Cauchy stress of the compressible Neo-Hookean solid under uniaxial stress."""
    def stresses(mu):
        J = lam * mu * mu
        I1 = lam * lam + 2 * mu * mu
        s11 = G * J ** (-5 / 3) * (lam * lam - I1 / 3) + K * (J - 1)
        s22 = G * J ** (-5 / 3) * (mu * mu - I1 / 3) + K * (J - 1)
        return s11, s22
    mu = brentq(lambda m: stresses(m)[1], 0.5, 1.5, xtol=1e-15, rtol=1e-15)
    return stresses(mu)[0], mu


def test_build_cycles_counts():
    p0 = build_cycles(1.05, 0.95, 0, 10)
    assert p0.stretches == (1.0,)
    p1 = build_cycles(1.01, 0.99, 1, 10)
    assert len(p1) == 31
    lam = p1.array
    assert lam[0] == 1.0 and lam[10] == 1.01 and lam[20] == 0.99 and lam[30] == 1.0
    assert lam.max() == 1.01 and lam.min() == 0.99


def test_build_cycles_prefix():
    short = build_cycles(1.02, 0.98, 5, 20)
    long = build_cycles(1.02, 0.98, 7, 20)
    assert long.stretches[: len(short)] == short.stretches


def test_build_cycles_invalid():
    with pytest.raises(InvalidAmplitude):
        build_cycles(1.05, -0.1, 1, 10)
    with pytest.raises(InvalidAmplitude):
        build_cycles(0.9, 0.95, 1, 10)
    with pytest.raises(InvalidAmplitude):
        build_cycles(1.05, 0.95, 1, 10)  # increment 0.01 > 0.002
    with pytest.raises(InvalidParameter):
        build_cycles(1.01, 0.99, 1, 0)


def test_program_description_roundtrip():
    p = build_cycles(1.02, 0.98, 3, 20)
    assert LoadingProgram.from_description(p.describe()) == p
    assert np.all(np.bincount(p.cycle_of_point()) >= 60)


def test_step_reference():
    pots = P.build("AF", steel())
    F, st, s11 = step_uniaxial(1.0, virgin_state(), pots, S)
    assert float(F[1, 1]) == 1.0 and s11 == 0.0


def test_step_small_tension_matches_neo_hooke():
    pots = P.build("AF", steel())
    F, st, s11 = step_uniaxial(1.0005, virgin_state(), pots, S)
    ref, mu = neo_hooke_uniaxial(1.0005, 80.0, 175.0)
    assert float(F[1, 1]) < 1.0 and s11 > 0.0
    assert s11 == pytest.approx(ref, rel=1e-8)
    assert float(F[1, 1]) == pytest.approx(mu, rel=1e-10)


def test_step_rejects_nonpositive_stretch():
    with pytest.raises(InvalidParameter):
        step_uniaxial(0.0, virgin_state(), P.build("AF", steel()), S)


def test_nearly_incompressible_plastic_flow():
    pots = P.build("AF", steel(K=1e5))
    prog = build_cycles(1.03, 0.97, 1, 30)
    ts = run_program(prog, pots, S)
    J = ts.lam * ts.internals["lambda_lat"] ** 2
    assert np.max(np.abs(J - 1.0)) <= 1e-3
    assert np.sum(ts.internals["delta_lambda"] > 0) > 0


def test_elastic_program_matches_neo_hooke():
    pots = P.build("AF", steel(Y0=50.0))
    prog = build_cycles(1.004, 0.996, 1, 10)
    ts = run_program(prog, pots, S)
    ref = np.array([neo_hooke_uniaxial(lam, 80.0, 175.0)[0] for lam in ts.lam])
    assert np.all(ts.internals["delta_lambda"] == 0.0)
    np.testing.assert_allclose(ts.sigma11, ref, rtol=1e-8, atol=1e-12)


def test_lateral_tolerance_and_determinism():
    pots = P.build("OW", steel(m=2.0))
    prog = build_cycles(1.02, 0.98, 2, 20)
    a = run_program(prog, pots, S)
    b = run_program(prog, pots, S)
    np.testing.assert_array_equal(a.sigma11, b.sigma11)
    assert np.all(np.abs(a.internals["sigma22"]) <= 1e-8 * np.maximum(1.0, np.abs(a.sigma11)))
    assert len(a) == len(prog)


def test_hysteresis_loop_stabilizes():
    pots = P.build("AF", steel(gamma=50.0))
    prog = build_cycles(1.02, 0.98, 6, 20)
    ts = run_program(prog, pots, S)
    n = prog.points_per_cycle()
    last = ts.sigma11[1 + 4 * n: 1 + 5 * n]
    final = ts.sigma11[1 + 5 * n: 1 + 6 * n]
    assert np.max(np.abs(final - last)) <= 0.01 * np.max(np.abs(final))


def test_step_halving_converges():
    pots = P.build("AF", steel())
    coarse = run_program(build_cycles(1.02, 0.98, 2, 20), pots, S)
    fine = run_program(build_cycles(1.02, 0.98, 2, 40), pots, S)
    n = 60
    a = coarse.sigma11[-n:]
    b = fine.sigma11[-2 * n:][1::2]
    assert np.max(np.abs(a - b)) <= 0.005 * np.max(np.abs(b))


def test_tension_compression_mirror():
    pots = P.build("AF", steel())
    lam = np.linspace(1.0, 1.02, 21)
    t = run_program(from_stretches(lam), pots, S)
    c = run_program(from_stretches(1.0 / lam), pots, S)
    assert np.max(np.abs(t.sigma11 + c.sigma11)) <= 0.01 * np.max(np.abs(t.sigma11))


def test_substepping_recovers():
    pots = P.build("AF", steel())
    prog = build_cycles(1.02, 0.98, 1, 20)
    ts = run_program(prog, pots, SolverSettings(max_iter=3))
    # substeps integrate failed increments more finely, so compare with a finer run
    fine = run_program(build_cycles(1.02, 0.98, 1, 80), pots, S).sigma11[::4]
    assert np.max(np.abs(ts.sigma11 - fine)) <= 0.005 * np.abs(fine).max()


def test_failure_reports_step():
    pots = P.build("AF", steel())
    prog = build_cycles(1.02, 0.98, 1, 20)
    with pytest.raises(NoConvergence) as err:
        run_program(prog, pots, SolverSettings(max_iter=1, max_bisections=1))
    assert err.value.step is not None and 0 < err.value.step < len(prog)
