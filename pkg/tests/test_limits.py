import json
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from qnlchain.chain import ChainConfig
from qnlchain.limits import (
    B_B,
    B_GAMMA,
    B_IF,
    ELASTIC_B,
    INTERIOR,
    BLQuery,
    InfeasibleJumpSet,
    JumpLocation,
    JumpSpec,
    MeshLimits,
    _solve_fixed,
    at_one,
    at_zero,
    lemma_checks,
    limit_energy_atomistic,
    limit_energy_elastic,
    limit_energy_qc,
    min_limit,
    solve_boundary_layer,
)
from qnlchain.minimize import ChainModel, global_minimize

INF = math.inf


def layer_oracle(spec, fixed_first, fixed_last, free, A, B, ell, pen=0.0, j0g=0.0):
    """Independent truncated energy minimised with BFGS.

    ``free`` strains sit between an optional fixed first and last strain.
    """

    def energy(x):
        d = list(x)
        if fixed_first is not None:
            d = [fixed_first] + d
        if fixed_last is not None:
            d = d + [fixed_last]
        if min(d) <= 0.3:
            return 1e6
        total = 0.5 * float(spec.j1(d[0]))
        for i in range(len(d) - 1):
            avg = 0.5 * (d[i] + d[i + 1])
            total += float(spec.j2(avg)) + 0.5 * float(spec.j1(d[i])) + 0.5 * float(spec.j1(d[i + 1]))
            total += -A - B * (avg - ell)
        if pen:
            total += pen * (float(spec.jcb(d[-1])) - j0g)
        return total

    best = INF
    for first in (ell, 1.12):
        x0 = np.full(free, ell)
        x0[0] = first
        res = minimize(energy, x0, method="BFGS", options={"gtol": 1e-11})
        best = min(best, res.fun)
    return best


def test_query_validation():
    with pytest.raises(ValueError):
        BLQuery("Other")
    with pytest.raises(ValueError):
        BLQuery(ELASTIC_B, theta=1.0, ell=None)
    with pytest.raises(ValueError):
        BLQuery(B_B, theta=-1.0)
    with pytest.raises(ValueError):
        BLQuery(B_IF, m=-1)
    with pytest.raises(ValueError):
        BLQuery(B_GAMMA, N=2)


def test_elastic_above_gamma_rejected(lj):
    spec, a = lj
    with pytest.raises(ValueError):
        solve_boundary_layer(BLQuery(ELASTIC_B, theta=1.0, ell=1.1 * a.gamma), a, spec)


def test_exact_values(lj):
    spec, a = lj
    tol = 1e-10
    bb = solve_boundary_layer(BLQuery(B_B, theta=a.delta1), a, spec)
    assert bb.value == pytest.approx(-0.125, abs=10 * tol)
    be = solve_boundary_layer(BLQuery(ELASTIC_B, theta=a.gamma, ell=a.gamma), a, spec)
    assert be.value == pytest.approx(0.5 * float(spec.j1(a.gamma)), abs=10 * tol)
    bg = solve_boundary_layer(BLQuery(B_GAMMA), a, spec)
    assert -0.125 - 10 * tol <= bg.value <= 0.5 * float(spec.j1(a.gamma)) + 10 * tol
    for m in (1, 2, 5):
        r = solve_boundary_layer(BLQuery(B_IF, m=m), a, spec)
        assert r.value == pytest.approx(bg.value, abs=10 * tol)
    for r in (bb, be, bg):
        assert r.converged and r.truncation_estimate <= tol


def test_b_gamma_against_bfgs_oracle(lj):
    spec, a = lj
    N = 12
    ours, _ = _solve_fixed(spec, a, BLQuery(B_GAMMA), N)
    ref = layer_oracle(spec, None, a.gamma, N, a.J0gamma, 0.0, a.gamma)
    assert ours <= ref + 1e-10
    assert ours == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("theta", [1.0, 1.3])
def test_elastic_against_bfgs_oracle(lj, theta):
    spec, a = lj
    N = 12
    ours, _ = _solve_fixed(spec, a, BLQuery(ELASTIC_B, theta=theta, ell=a.gamma), N)
    ref = layer_oracle(spec, theta, a.gamma, N - 1, a.J0gamma, 0.0, a.gamma)
    assert ours == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("m", [0, 1])
def test_interface_layer_against_bfgs_oracle(lj, m):
    spec, a = lj
    N = 8
    ours, _ = _solve_fixed(spec, a, BLQuery(B_IF, m=m), N)
    # sweep of the free length k as in the definition
    refs = [layer_oracle(spec, None, None, k + 1, a.J0gamma, 0.0, a.gamma, pen=(2 * m + 1) / 2, j0g=a.J0gamma)
            for k in range(0, N + 1)]
    assert ours == pytest.approx(min(refs), abs=1e-9)


def test_truncation_is_monotone(lj):
    spec, a = lj
    for q in (BLQuery(B_GAMMA), BLQuery(B_B, theta=1.0), BLQuery(ELASTIC_B, theta=1.3, ell=a.gamma),
              BLQuery(B_IF, m=0)):
        vals = [_solve_fixed(spec, a, q, N)[0] for N in (4, 8, 16)]
        assert vals[1] <= vals[0] + 1e-15
        assert vals[2] <= vals[1] + 1e-15


def test_elastic_limit_matches_large_chains(lj):
    spec, a = lj
    ell = 0.9 * a.gamma
    lim = limit_energy_elastic(spec, a, a.delta1, a.gamma, ell)
    errs = []
    for n in (64, 256):
        cfg = ChainConfig(n, ell, a.delta1, a.gamma)
        errs.append(abs(global_minimize(ChainModel(spec, a, cfg)).first_order - lim))
    # first-order energies converge like 1/n
    assert errs[1] < 0.3 * errs[0]
    assert errs[1] < 0.02


@pytest.mark.parametrize("name", ["lj_table", "morse_table"])
def test_lemma_suite(name, request):
    tab = request.getfixturevalue(name)
    spec = request.getfixturevalue("lj" if name == "lj_table" else "morse")[0]
    checks = lemma_checks(tab, spec)
    failed = {k: v for k, v in checks.items() if not v[0]}
    assert not failed
    assert tab.B_IJ > 0
    strict = [k for k in checks if k.endswith("strictly")]
    assert len(strict) == len(tab.thetas)


def test_composite_identities(lj, lj_table):
    spec, a = lj
    t = lj_table
    for n in (1, 2, 3, 6, INF):
        assert t.b_ifj_tilde(n, 1) == pytest.approx(-a.J0gamma, abs=1e-9)
    for k in (2, 3, INF):
        assert t.b_ifj_tilde(1, k) == pytest.approx(t.B_gamma.value - 1.5 * a.J0gamma, abs=1e-9)
    for n in (2, 3, 6, INF):
        for k in (2, 5, INF):
            assert t.b_ifj_tilde(n, k) == pytest.approx(t.b_aif(n), abs=1e-9)
    assert t.b_aif(INF) == t.B_IJ
    assert t.b_if(INF) == t.B_gamma.value
    # B_BJ(gamma) splits into the elastic layer and an interior jump
    assert t.b_bj(a.gamma, spec) == pytest.approx(t.b_elastic(a.gamma) + t.B_IJ, abs=1e-9)


def test_b_aif_needs_positive_n(lj_table):
    with pytest.raises(ValueError):
        lj_table.b_aif(0)


def test_limit_energy_atomistic(lj, lj_table):
    spec, a = lj
    t = lj_table
    th0, th1 = a.delta1, a.gamma
    with pytest.raises(InfeasibleJumpSet):
        limit_energy_atomistic(JumpSpec(), th0, th1, t, spec)
    v = limit_energy_atomistic(JumpSpec((at_zero(),)), th0, th1, t, spec)
    assert v == pytest.approx(t.b_bj(th0, spec) + t.b_elastic(th1) - a.J0gamma, abs=1e-15)
    one = limit_energy_atomistic(JumpSpec((JumpLocation(0.3, INTERIOR),)), th0, th1, t, spec)
    two = limit_energy_atomistic(JumpSpec((JumpLocation(0.3, INTERIOR), JumpLocation(0.6, INTERIOR))),
                                 th0, th1, t, spec)
    assert two - one == pytest.approx(t.B_IJ, abs=1e-14)
    with pytest.raises(ValueError):
        JumpSpec((JumpLocation(0.3, INTERIOR), JumpLocation(0.3, INTERIOR)))


def test_limit_energy_qc_relation(lj, lj_table):
    spec, a = lj
    t = lj_table
    th0, th1 = a.delta1, a.gamma
    ml = MeshLimits(2, 3, 2, 2)
    for locs in ([at_zero()], [at_one()], [JumpLocation(0.4, INTERIOR, 3)],
                 [at_zero(), JumpLocation(0.5, INTERIOR, 2)]):
        js = JumpSpec(tuple(locs), ml)
        interior = [l for l in locs if l.kind == INTERIOR]
        expect = limit_energy_atomistic(js, th0, th1, t, spec) - sum(l.b * a.J0gamma + t.B_IJ for l in interior)
        assert limit_energy_qc(js, th0, th1, t, spec) == pytest.approx(expect, abs=1e-12)


def test_unit_spacing_interior_jump(lj, lj_table):
    spec, a = lj
    t = lj_table
    js = JumpSpec((JumpLocation(0.5, INTERIOR, 1),), MeshLimits(2, 2, 2, 2, (1,)))
    v = limit_energy_qc(js, a.delta1, a.gamma, t, spec)
    assert v == pytest.approx(t.b_elastic(a.delta1) + t.b_elastic(a.gamma) - 2 * a.J0gamma, abs=1e-12)


def test_min_limit(lj, lj_table):
    spec, a = lj
    t = lj_table
    va, ja = min_limit("Atomistic", a.delta1, a.gamma, t, spec)
    assert va == pytest.approx(t.b_bj(a.delta1, spec) + t.b_elastic(a.gamma) - a.J0gamma, abs=1e-15)
    assert [l.kind for l in ja.locations] == ["Boundary0"]
    vq, jq = min_limit("QC", a.delta1, a.gamma, t, spec, MeshLimits(2, 2, 2, 2, (2, 3)))
    assert vq == pytest.approx(va, abs=1e-9)
    assert {l.x for l in jq.locations} <= {0.0, 1.0}
    v1, j1 = min_limit("QC", a.delta1, a.gamma, t, spec, MeshLimits(2, 2, 2, 2, (1, 2)))
    assert v1 < va - 1e-3
    assert j1.locations[0].kind == INTERIOR
    # infinite descriptors are allowed
    vi, _ = min_limit("QC", a.delta1, a.gamma, t, spec, MeshLimits(INF, INF, INF, INF, (INF,)))
    assert math.isfinite(vi)
    with pytest.raises(ValueError):
        min_limit("QC", a.delta1, a.gamma, t, spec)
    with pytest.raises(ValueError):
        min_limit("Other", a.delta1, a.gamma, t, spec)


def test_mesh_limits_validation():
    with pytest.raises(ValueError):
        MeshLimits(0, 2, 2, 2)


def test_table_serialisation(lj, lj_table):
    spec, _ = lj
    d = json.loads(json.dumps(lj_table.to_dict(spec)))
    assert d["schema"] == 1
    names = {e["name"] for e in d["entries"]}
    assert {"B_gamma", "B_IJ", "J0gamma", "B_IF[0]", "B_AIF[1]"} <= names
    assert all(math.isfinite(e["value"]) for e in d["entries"])
    text = lj_table.to_csv(spec)
    assert text.splitlines()[0] == "name,value,N_used,truncation_estimate"
