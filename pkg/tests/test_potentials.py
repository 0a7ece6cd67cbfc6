import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq, minimize_scalar

from qnlchain.potentials import (
    DomainError,
    PotentialSpec,
    RootNotBracketed,
    check_assumptions,
    compute_constants,
    eval_j,
    eval_j0,
    eval_j0_star_star,
    eval_r,
    j0_inner,
    lj_closed_forms,
    report_to_dict,
    r_tail_bound,
)


def j0_oracle(spec, z, lo, points=400001):
    """Brute grid over the split, then a local bounded refinement."""
    z1 = np.linspace(lo, z, points)
    vals = spec.j1(z1) + spec.j1(2 * z - z1)
    i = int(np.argmin(vals))
    a, b = z1[max(i - 1, 0)], z1[min(i + 1, points - 1)]
    res = minimize_scalar(lambda x: float(spec.j1(x) + spec.j1(2 * z - x)), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-14})
    return float(spec.j2(z)) + 0.5 * min(float(vals[i]), res.fun)


def test_lj_values():
    spec = PotentialSpec.lennard_jones()
    assert eval_j(spec, "J1", 1.0) == 0.0
    assert eval_j(spec, "J1", 2 ** (1 / 6)) == pytest.approx(-0.25, abs=1e-15)
    assert eval_j(spec, "J1", -1.0) == math.inf
    assert eval_j(spec, "J1", 0.0) == math.inf
    assert eval_j(spec, "J2", 1.0) == pytest.approx(-63 / 4096, abs=1e-16)
    assert eval_j(spec, "JCB", 1.0) == pytest.approx(-63 / 4096, abs=1e-16)


def test_derivative_outside_domain_raises():
    spec = PotentialSpec.lennard_jones()
    with pytest.raises(DomainError):
        eval_j(spec, "J1", -0.5, 1)
    with pytest.raises(DomainError):
        eval_j(spec, "J2", 0.0, 2)
    with pytest.raises(ValueError):
        eval_j(spec, "J3", 1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        PotentialSpec.lennard_jones(0.0, 1.0)
    with pytest.raises(ValueError):
        PotentialSpec("Morse", 1.0, 1.0, None)
    with pytest.raises(ValueError):
        PotentialSpec("Buckingham", 1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(z=st.floats(0.6, 6.0), which=st.sampled_from(["J1", "J2", "JCB"]),
       kind=st.sampled_from(["lj", "morse"]))
def test_derivative_consistency(z, which, kind):
    spec = PotentialSpec.lennard_jones() if kind == "lj" else PotentialSpec.morse(1.0, 1.0, 1.0)
    h = 1e-5 * max(1.0, abs(z))
    d1 = eval_j(spec, which, z, 1)
    fd1 = (eval_j(spec, which, z + h) - eval_j(spec, which, z - h)) / (2 * h)
    assert abs(d1 - fd1) <= 1e-6 * (1 + abs(d1))
    d2 = eval_j(spec, which, z, 2)
    fd2 = (eval_j(spec, which, z + h, 1) - eval_j(spec, which, z - h, 1)) / (2 * h)
    assert abs(d2 - fd2) <= 1e-6 * (1 + abs(d2))


def test_lj_closed_forms_against_root_finding(lj):
    spec, a = lj
    d1 = minimize_scalar(lambda z: float(spec.j1(z)), bounds=(1.0, 1.3), method="bounded",
                         options={"xatol": 1e-14}).x
    g = brentq(lambda z: float(spec.jcb(z, 1)), 1.0, 1.2, xtol=1e-15)
    z0 = brentq(lambda z: float(spec.j1(z)), 0.9, 1.1, xtol=1e-15)
    # convexity threshold of J1 + 2 J2
    zc = brentq(lambda z: float(spec.j1(z, 2) + 2 * spec.j2(z, 2)), 1.1, 1.4, xtol=1e-15)
    assert a.delta1 == pytest.approx(d1, rel=1e-7)
    assert a.gamma == pytest.approx(g, rel=1e-13)
    assert a.z0 == pytest.approx(z0, rel=1e-14)
    assert a.zc == pytest.approx(zc, rel=1e-13)
    assert a.delta2 == a.delta1 / 2


def test_lj_constants_values(lj):
    _, a = lj
    assert a.delta1 == pytest.approx(2 ** (1 / 6), rel=1e-15)
    assert a.z0 == 1.0
    assert a.gamma == pytest.approx(1.1196108663112256, rel=1e-14)
    assert a.zc == pytest.approx(1.2381898096066015, rel=1e-14)
    assert 0 < a.z0 < a.gamma < a.delta1
    assert a.J0gamma < a.J0infinity
    assert a.J0infinity == pytest.approx(-0.125, abs=1e-12)


@pytest.mark.parametrize("c", [0.5, 2.0, 7.0])
def test_lj_scaling(c):
    base = compute_constants(PotentialSpec.lennard_jones(1.0, 1.0))
    scaled = compute_constants(PotentialSpec.lennard_jones(c, 1.0))
    for name in ("delta1", "gamma", "z0", "zc"):
        assert getattr(scaled, name) == pytest.approx(c ** (1 / 6) * getattr(base, name), rel=1e-14)
    forms = lj_closed_forms(c, 1.0)
    assert forms["gamma"] == scaled.gamma


def test_morse_constants(morse):
    spec, a = morse
    assert 0.5 < a.gamma < 1.0
    assert abs(float(spec.jcb(a.gamma, 1))) <= 1e-12
    assert a.z0 == pytest.approx(1 - math.log(2), rel=1e-15)
    assert float(spec.j1(a.z0)) == pytest.approx(0.0, abs=1e-15)
    assert a.delta2 == 0.5


def test_morse_without_decay_is_rejected():
    with pytest.raises(RootNotBracketed):
        compute_constants(PotentialSpec.morse(1.0, 0.0, 1.0))


def test_j0_at_one_is_cauchy_born(lj):
    spec, a = lj
    assert eval_j0(spec, 1.0) == pytest.approx(-63 / 4096, abs=1e-14)


def test_j0_far_field(lj):
    spec, a = lj
    assert eval_j0(spec, 1e3) == pytest.approx(0.5 * float(spec.j1(a.delta1)), abs=1e-12)


def test_j0_at_gamma_matches_oracle(lj):
    spec, a = lj
    v = eval_j0(spec, a.gamma)
    assert v == pytest.approx(j0_oracle(spec, a.gamma, 0.8), abs=1e-12)
    assert v == pytest.approx(-0.25781, abs=1e-5)


@pytest.mark.parametrize("z", [1.2, 1.5, 2.0, 4.0])
def test_j0_fracture_branch_matches_oracle(lj, z):
    spec, _ = lj
    assert eval_j0(spec, z) == pytest.approx(j0_oracle(spec, z, 0.9), abs=1e-11)


def test_j0_star_star(lj):
    spec, a = lj
    assert eval_j0_star_star(a, spec, a.gamma)[0] == pytest.approx(eval_j0(spec, a.gamma), abs=1e-12)
    v, d = eval_j0_star_star(a, spec, 5.0)
    assert v == a.J0gamma and d == 0.0
    assert eval_j0_star_star(a, spec, 1.0)[0] == pytest.approx(-63 / 4096, abs=1e-16)
    with pytest.raises(DomainError):
        eval_j0_star_star(a, spec, -1.0)


@pytest.mark.parametrize("fixture", ["lj", "morse"])
def test_envelope_sandwich_and_monotone_branch(fixture, request):
    spec, a = request.getfixturevalue(fixture)
    lo = 0.9 if fixture == "lj" else 0.5
    for z in np.linspace(lo, 3.0 * a.delta1, 40):
        ss, dss = eval_j0_star_star(a, spec, z)
        j0 = eval_j0(spec, z)
        assert ss <= j0 + 1e-12
        assert j0 <= float(spec.jcb(z)) + 1e-12
        if z <= a.gamma:
            assert dss <= 1e-12
        else:
            assert dss == 0.0


@pytest.mark.parametrize("fixture", ["lj", "morse"])
def test_inner_minimizer_symmetric_below_gamma(fixture, request):
    spec, a = request.getfixturevalue(fixture)
    for z in np.linspace(a.z0, a.gamma, 15):
        _, z1 = j0_inner(spec, z)
        assert abs(z1 - z) <= 1e-6


@pytest.mark.parametrize("fixture", ["lj", "morse"])
def test_tangency(fixture, request):
    spec, a = request.getfixturevalue(fixture)
    zs = np.linspace(a.z0 * 0.95, 3 * a.delta1, 30)
    j0 = np.array([eval_j0(spec, z) for z in zs])
    for ell in (0.9 * a.gamma, a.gamma, 1.5 * a.gamma):
        v, d = eval_j0_star_star(a, spec, ell)
        assert np.all(j0 - v - d * (zs - ell) >= -1e-12)


def test_r_function(lj):
    spec, a = lj
    assert abs(eval_r(a, spec, a.gamma)) <= 1e-15
    assert np.max(eval_r(a, spec, np.linspace(0.3, 10, 200001))) <= 1e-10
    assert eval_r(a, spec, a.zc) == pytest.approx(-0.052689, abs=1e-6)
    assert r_tail_bound(a, spec) == pytest.approx(-0.0469, abs=1e-3)
    # the tail bound dominates R beyond zc
    t = np.linspace(a.zc, 50, 5000)
    assert np.all(eval_r(a, spec, t) <= r_tail_bound(a, spec) + 1e-12)
    with pytest.raises(DomainError):
        eval_r(a, spec, 0.0)


@pytest.mark.parametrize("fixture", ["lj", "morse"])
def test_all_checks_pass(fixture, request):
    spec, a = request.getfixturevalue(fixture)
    rep = check_assumptions(spec, a)
    failed = [k for k, v in rep.items() if not v.passed]
    assert not failed
    d = report_to_dict(rep)
    assert set(d["R_nonpositive"]) == {"pass", "worst_value", "witness_z"}


def test_repulsive_spec_fails_checks():
    spec = PotentialSpec.lennard_jones(1.0, 0.0)
    rep = check_assumptions(spec)
    assert not rep["J2_gamma_negative"].passed
    assert not any(v.passed for v in rep.values())


def test_check_values_lj(lj):
    spec, a = lj
    assert float(spec.j1(a.gamma)) == pytest.approx(-0.24994089, abs=1e-8)
    assert float(spec.j2(a.gamma)) < 0
    assert float(spec.j2(a.delta1)) < 0
    mid = 0.5 * (a.gamma + a.delta1)
    assert float(spec.j2(a.gamma)) - 2 * float(spec.j2(mid)) > 0
