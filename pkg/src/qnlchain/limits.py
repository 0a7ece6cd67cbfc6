"""Boundary-layer and jump energies of semi-infinite chains, and the
first-order limit functionals built from them."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky_banded, cho_solve_banded

from .potentials import PotentialAnalysis, PotentialSpec, eval_j0_star_star

ELASTIC_B = "ElasticB"
B_GAMMA = "BGamma"
B_B = "Bb"
B_IF = "BIF"

N_CAP = 2 ** 14
INF = math.inf


@dataclass(frozen=True)
class BLQuery:
    kind: str
    theta: float | None = None
    ell: float | None = None
    m: int | None = None
    N: int = 8
    tol: float = 1.0e-10

    def __post_init__(self):
        if self.kind not in (ELASTIC_B, B_GAMMA, B_B, B_IF):
            raise ValueError(f"unknown boundary layer kind {self.kind!r}")
        if self.N < 4:
            raise ValueError("N must be at least 4")
        if self.kind in (ELASTIC_B, B_B) and not (self.theta is not None and self.theta > 0):
            raise ValueError("theta must be positive")
        if self.kind == ELASTIC_B and not (self.ell is not None and self.ell > 0):
            raise ValueError("ell must be positive")
        if self.kind == B_IF and not (self.m is not None and self.m >= 0):
            raise ValueError("m must be a non-negative integer")


@dataclass
class BLResult:
    value: float
    N_used: int
    truncation_estimate: float
    converged: bool
    strains: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"value": self.value, "N_used": self.N_used,
                "truncation_estimate": self.truncation_estimate, "converged": self.converged}


class _Layer:
    """Truncated chain in strain variables ``d_0..d_K``.

    Objective: ``J1(d_0)/2 + sum_{i<K} cell_i + pen * (JCB(d_K) - J0(gamma))``
    with ``cell_i = J2(avg) + (J1(d_i) + J1(d_{i+1}))/2 - A - B (avg - ell)``.
    """

    def __init__(self, spec, K, fixed: dict, A, B, ell, pen, j0g, floor):
        self.spec, self.K, self.fixed = spec, K, fixed
        self.A, self.B, self.ell, self.pen, self.j0g = A, B, ell, pen, j0g
        self.free = np.array([i for i in range(K + 1) if i not in fixed], dtype=int)
        self.floor = floor

    def full(self, x):
        d = np.empty(self.K + 1)
        for i, v in self.fixed.items():
            d[i] = v
        d[self.free] = x
        return d

    def value(self, x) -> float:
        d = self.full(x)
        if np.any(d <= self.floor):
            return INF
        s = self.spec
        avg = 0.5 * (d[:-1] + d[1:])
        j1 = s.j1(d)
        cells = s.j2(avg) + 0.5 * (j1[:-1] + j1[1:]) - self.A - self.B * (avg - self.ell)
        terms = [0.5 * float(j1[0])] + cells.tolist()
        if self.pen:
            terms.append(self.pen * (float(s.jcb(d[-1])) - self.j0g))
        v = math.fsum(terms)
        return v if math.isfinite(v) else INF

    def grad_hess(self, x):
        d = self.full(x)
        s = self.spec
        m = self.K + 1
        avg = 0.5 * (d[:-1] + d[1:])
        j1p, j1pp = s.j1(d, 1), s.j1(d, 2)
        j2p, j2pp = s.j2(avg, 1), s.j2(avg, 2)
        g = np.zeros(m)
        g[0] += 0.5 * j1p[0]
        cg = 0.5 * j2p - 0.5 * self.B
        g[:-1] += cg + 0.5 * j1p[:-1]
        g[1:] += cg + 0.5 * j1p[1:]
        diag = np.zeros(m)
        off = np.zeros(m)
        diag[0] += 0.5 * j1pp[0]
        q = 0.25 * j2pp
        diag[:-1] += q + 0.5 * j1pp[:-1]
        diag[1:] += q + 0.5 * j1pp[1:]
        off[1:] = q
        if self.pen:
            g[-1] += self.pen * s.jcb(d[-1], 1)
            diag[-1] += self.pen * s.jcb(d[-1], 2)
        f = self.free
        gf = g[f]
        ab = np.zeros((2, len(f)))
        ab[1] = diag[f]
        # free indices are contiguous except for fixed endpoints
        ab[0, 1:] = np.where(np.diff(f) == 1, off[f[1:]], 0.0)
        return gf, ab


def _newton(layer: _Layer, x0, gtol=1e-13, max_iter=500):
    x = np.array(x0, dtype=float)
    if x.size == 0:
        return x, layer.value(x)
    e = layer.value(x)
    if not math.isfinite(e):
        return x, INF
    for _ in range(max_iter):
        g, ab = layer.grad_hess(x)
        gn = float(np.max(np.abs(g)))
        if gn <= gtol:
            break
        p = None
        tau = 0.0
        scale = float(np.max(np.abs(ab[1]))) + 1.0
        for _ in range(80):
            trial = ab.copy()
            trial[1] += tau
            try:
                c = cholesky_banded(trial, lower=False)
                p = -cho_solve_banded((c, False), g)
                break
            except LinAlgError:
                tau = max(2 * tau, 1e-10 * scale)
        if p is None:
            p = -g
        slope = float(g @ p)
        # stay inside the domain
        alpha = 1.0
        if math.isfinite(layer.floor):
            neg = p < 0
            if np.any(neg):
                alpha = min(1.0, 0.99 * float(np.min((x[neg] - layer.floor) / (-p[neg]))))
        ok = False
        while alpha > 1e-16:
            xt = x + alpha * p
            et = layer.value(xt)
            if et <= e + 1e-4 * alpha * slope:
                ok = True
                break
            if et <= e + 8 * np.finfo(float).eps * (abs(e) + 1):
                gt, _ = layer.grad_hess(xt)
                if np.max(np.abs(gt)) < gn:
                    ok = True
                    break
            alpha *= 0.5
        if not ok:
            break
        x, e = xt, et
    return x, e


def _setup(q: BLQuery, analysis: PotentialAnalysis, spec: PotentialSpec):
    floor = spec.domain_low + 1e-3 * analysis.delta1 if math.isfinite(spec.domain_low) else -INF
    if q.kind == ELASTIC_B:
        if q.ell > analysis.gamma * (1 + 1e-14):
            raise ValueError("elastic boundary layer needs ell <= gamma")
        A, B = eval_j0_star_star(analysis, spec, q.ell)
        return A, B, q.ell, floor
    return analysis.J0gamma, 0.0, analysis.gamma, floor


def _solve_fixed(spec, analysis, q, N, warm=None):
    """Value of the truncated problem with ``N`` cells (or sweep bound ``N``)."""
    A, B, ell, floor = _setup(q, analysis, spec)
    j0g, g, d1 = analysis.J0gamma, analysis.gamma, analysis.delta1

    def starts(nfree, target, first):
        out = [np.full(nfree, target)]
        if nfree:
            s = np.full(nfree, target)
            s[0] = first
            out.append(s)
        return out

    def best_of(layer, cands):
        best = (INF, None)
        for c in cands:
            x, e = _newton(layer, c)
            if e < best[0]:
                best = (e, layer.full(x))
        return best

    if q.kind == ELASTIC_B:
        layer = _Layer(spec, N, {0: q.theta, N: ell}, A, B, ell, 0.0, j0g, floor)
        cands = starts(N - 1, ell, d1)
        if warm is not None:
            cands.append(_pad(warm[1:-1], N - 1, ell))
        return best_of(layer, cands)
    if q.kind == B_GAMMA:
        layer = _Layer(spec, N, {N: g}, A, B, ell, 0.0, j0g, floor)
        cands = starts(N, g, d1)
        if warm is not None:
            cands.append(_pad(warm[:-1], N, g))
        return best_of(layer, cands)

    # free length k swept over 0..N
    best = (INF, None)
    prev = None
    for k in range(0, N + 1):
        if q.kind == B_B:
            layer = _Layer(spec, k, {k: q.theta}, A, B, ell, 0.0, j0g, floor)
            cands = starts(k, g, d1)
            if prev is not None and k:
                cands.append(_pad(prev[:-1], k, g))
        else:
            layer = _Layer(spec, k, {}, A, B, ell, 0.5 * (2 * q.m + 1), j0g, floor)
            cands = starts(k + 1, g, d1)
            if prev is not None:
                cands.append(_pad(prev, k + 1, g))
        e, d = best_of(layer, cands)
        prev = d
        if e < best[0]:
            best = (e, d)
    return best


def _pad(x, length, fill):
    x = np.asarray(x, dtype=float)
    out = np.full(length, fill)
    m = min(len(x), length)
    out[:m] = x[:m]
    return out


def solve_boundary_layer(q: BLQuery, analysis: PotentialAnalysis, spec: PotentialSpec) -> BLResult:
    """Minimise the truncated problem, doubling ``N`` until the value settles."""
    N = q.N
    prev_val, prev_d = _solve_fixed(spec, analysis, q, N)
    while True:
        N2 = 2 * N
        if N2 > N_CAP:
            return BLResult(prev_val, N, INF, False, prev_d)
        val, d = _solve_fixed(spec, analysis, q, N2, warm=prev_d)
        if val > prev_val:  # larger feasible set: keep the better value
            val, d = prev_val, prev_d
        est = abs(prev_val - val)
        if est <= q.tol:
            return BLResult(val, N2, est, True, d)
        prev_val, prev_d, N = val, d, N2


# --------------------------------------------------------------------------
# table of limit quantities


def _key(theta: float) -> str:
    return f"{theta:.15g}"


@dataclass
class LimitTable:
    J0gamma: float
    gamma: float
    delta1: float
    J1_delta1: float
    B_gamma: BLResult
    B_elastic: dict  # theta key -> BLResult of B(theta, gamma)
    Bb: dict  # theta key -> BLResult
    B_IF_results: dict  # m -> BLResult
    tol: float = 1.0e-10
    thetas: dict = field(default_factory=dict)  # theta key -> theta

    # basic quantities ------------------------------------------------------

    def b_elastic(self, theta: float) -> float:
        return self.B_elastic[_key(theta)].value

    def b_b(self, theta: float) -> float:
        return self.Bb[_key(theta)].value

    def b_if(self, m) -> float:
        if m == INF:
            return self.B_gamma.value
        if int(m) not in self.B_IF_results:
            raise ValueError(f"B_IF({int(m)}) was not tabulated")
        return self.B_IF_results[int(m)].value

    # composites ------------------------------------------------------------

    def b_bj(self, theta: float, spec: PotentialSpec) -> float:
        return 0.5 * float(spec.j1(theta)) + self.b_b(theta) + self.B_gamma.value - 2 * self.J0gamma

    @property
    def B_IJ(self) -> float:
        return 2 * self.B_gamma.value - 2 * self.J0gamma

    def b_aif(self, n) -> float:
        if n == INF:
            return self.B_IJ
        if n < 1:
            raise ValueError("B_AIF needs n >= 1")
        return self.b_if(n - 1) + self.B_gamma.value - 2 * self.J0gamma

    def b_ifj_tilde(self, n, k) -> float:
        opts = [self.b_aif(n)]
        if n != INF:
            opts.append(self.B_gamma.value - (0.5 + n) * self.J0gamma)
        if k != INF:
            opts.append(-k * self.J0gamma)
        return min(opts)

    def b_ifj(self, n, k, theta: float, spec: PotentialSpec) -> float:
        return min(self.b_ifj_tilde(n, k) + self.b_elastic(theta), self.b_bj(theta, spec))

    # serialisation ---------------------------------------------------------

    def rows(self, spec: PotentialSpec, n_values=(1, 2, INF), k_values=(1, 2, INF)) -> list[tuple]:
        out = [("J0gamma", self.J0gamma, 0, 0.0)]
        r = self.B_gamma
        out.append(("B_gamma", r.value, r.N_used, r.truncation_estimate))
        for key, res in self.B_elastic.items():
            out.append((f"B_elastic[{key}]", res.value, res.N_used, res.truncation_estimate))
        for key, res in self.Bb.items():
            out.append((f"Bb[{key}]", res.value, res.N_used, res.truncation_estimate))
        for key, th in self.thetas.items():
            if key in self.Bb:
                est = self.Bb[key].truncation_estimate + r.truncation_estimate
                out.append((f"B_BJ[{key}]", self.b_bj(th, spec), 0, est))
        out.append(("B_IJ", self.B_IJ, 0, 2 * r.truncation_estimate))
        for m, res in sorted(self.B_IF_results.items()):
            out.append((f"B_IF[{m}]", res.value, res.N_used, res.truncation_estimate))
        for n in sorted(self.B_IF_results):
            out.append((f"B_AIF[{n + 1}]", self.b_aif(n + 1), 0, 0.0))
        for key, th in self.thetas.items():
            if key not in self.B_elastic or key not in self.Bb:
                continue
            for n in n_values:
                if n != INF and (n - 1) not in self.B_IF_results:
                    continue
                for k in k_values:
                    out.append((f"B_IFJ[{_fmt(n)},{_fmt(k)},{key}]", self.b_ifj(n, k, th, spec), 0, 0.0))
        return out

    def to_dict(self, spec: PotentialSpec) -> dict:
        return {"schema": 1,
                "entries": [{"name": a, "value": b, "N_used": c, "truncation_estimate": d}
                            for a, b, c, d in self.rows(spec)]}

    def to_csv(self, spec: PotentialSpec) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "N_used", "truncation_estimate"])
        for a, b, c, d in self.rows(spec):
            w.writerow([a, repr(float(b)), c, repr(float(d))])
        return buf.getvalue()


def _fmt(x):
    return "inf" if x == INF else str(int(x))


def build_limit_table(spec: PotentialSpec, analysis: PotentialAnalysis, thetas=(), m_values=(0, 1, 2, 5),
                      tol: float = 1.0e-10, N0: int = 8) -> LimitTable:
    g = analysis.gamma
    thetas = tuple(dict.fromkeys([float(t) for t in thetas]))
    bg = solve_boundary_layer(BLQuery(B_GAMMA, N=N0, tol=tol), analysis, spec)
    el, bb = {}, {}
    for th in thetas:
        el[_key(th)] = solve_boundary_layer(BLQuery(ELASTIC_B, theta=th, ell=g, N=N0, tol=tol), analysis, spec)
        bb[_key(th)] = solve_boundary_layer(BLQuery(B_B, theta=th, N=N0, tol=tol), analysis, spec)
    bif = {int(m): solve_boundary_layer(BLQuery(B_IF, m=int(m), N=N0, tol=tol), analysis, spec)
           for m in sorted(set(int(m) for m in m_values))}
    return LimitTable(analysis.J0gamma, g, analysis.delta1, float(spec.j1(analysis.delta1)), bg, el, bb, bif,
                      tol, {_key(t): t for t in thetas})


# --------------------------------------------------------------------------
# limit functionals

BOUNDARY0 = "Boundary0"
BOUNDARY1 = "Boundary1"
INTERIOR = "Interior"


@dataclass(frozen=True)
class MeshLimits:
    """Limit mesh descriptors; ``inf`` is allowed for every entry."""

    r_hat: float
    l_hat: float
    b0: float
    b1: float
    interior: tuple = ()

    def __post_init__(self):
        for v in (self.r_hat, self.l_hat, self.b0, self.b1, *self.interior):
            if not v >= 1:
                raise ValueError("mesh descriptors must be >= 1")

    def to_dict(self) -> dict:
        return {k: _fmt(v) if v == INF else v for k, v in
                (("r_hat", self.r_hat), ("l_hat", self.l_hat), ("b0", self.b0), ("b1", self.b1))} | {
            "interior": [_fmt(v) if v == INF else v for v in self.interior]}


@dataclass(frozen=True)
class JumpLocation:
    x: float
    kind: str
    b: float | None = None


@dataclass(frozen=True)
class JumpSpec:
    locations: tuple = ()
    mesh: MeshLimits | None = None

    def __post_init__(self):
        xs = [loc.x for loc in self.locations]
        if len(set(xs)) != len(xs):
            raise ValueError("jump locations must be distinct")

    def count(self, kind: str) -> int:
        return sum(1 for loc in self.locations if loc.kind == kind)

    @property
    def jump_set(self) -> list[float]:
        return sorted(loc.x for loc in self.locations)

    def to_dict(self) -> dict:
        return {"locations": [{"x": loc.x, "kind": loc.kind, "b": None if loc.b is None else _fmt(loc.b)
                               if loc.b == INF else loc.b} for loc in self.locations]}


class InfeasibleJumpSet(ValueError):
    pass


def at_zero() -> JumpLocation:
    return JumpLocation(0.0, BOUNDARY0)


def at_one() -> JumpLocation:
    return JumpLocation(1.0, BOUNDARY1)


def limit_energy_atomistic(jump: JumpSpec, theta0: float, theta1: float, table: LimitTable,
                           spec: PotentialSpec) -> float:
    if not jump.locations:
        raise InfeasibleJumpSet("ell > gamma needs at least one jump")
    n0, n1, ni = jump.count(BOUNDARY0), jump.count(BOUNDARY1), jump.count(INTERIOR)
    return (table.b_elastic(theta0) * (1 - n0) + table.b_elastic(theta1) * (1 - n1) - table.J0gamma
            + table.b_bj(theta0, spec) * n0 + table.b_bj(theta1, spec) * n1 + table.B_IJ * ni)


def limit_energy_qc(jump: JumpSpec, theta0: float, theta1: float, table: LimitTable,
                    spec: PotentialSpec) -> float:
    if not jump.locations:
        raise InfeasibleJumpSet("ell > gamma needs at least one jump")
    mesh = jump.mesh
    if mesh is None:
        raise ValueError("QC limit energy needs mesh descriptors")
    n0, n1 = jump.count(BOUNDARY0), jump.count(BOUNDARY1)
    val = table.b_elastic(theta0) * (1 - n0) + table.b_elastic(theta1) * (1 - n1) - table.J0gamma
    if n0:
        val += table.b_ifj(mesh.r_hat, mesh.b0, theta0, spec)
    if n1:
        val += table.b_ifj(mesh.l_hat, mesh.b1, theta1, spec)
    for loc in jump.locations:
        if loc.kind == INTERIOR:
            if loc.b is None:
                raise ValueError("interior jump needs its mesh spacing b")
            val -= loc.b * table.J0gamma
    return val


def limit_energy_elastic(spec: PotentialSpec, analysis: PotentialAnalysis, theta0: float, theta1: float,
                         ell: float, tol: float = 1.0e-10) -> float:
    """First-order limit for ``ell <= gamma``: both boundary layers plus the
    affine terms of the decomposition."""
    b0 = solve_boundary_layer(BLQuery(ELASTIC_B, theta=theta0, ell=ell, tol=tol), analysis, spec)
    b1 = solve_boundary_layer(BLQuery(ELASTIC_B, theta=theta1, ell=ell, tol=tol), analysis, spec)
    v, d = eval_j0_star_star(analysis, spec, ell)
    return b0.value + b1.value - v - d * (0.5 * (theta0 + theta1) - ell)


def min_limit(model: str, theta0: float, theta1: float, table: LimitTable, spec: PotentialSpec,
              mesh: MeshLimits | None = None) -> tuple[float, JumpSpec]:
    """Minimal first-order limit energy and a minimising jump set.

    ``model`` is ``"Atomistic"`` or ``"QC"``. Single-jump states suffice
    because every jump energy is positive.
    """
    if model == "Atomistic":
        a = table.b_bj(theta0, spec) + table.b_elastic(theta1)
        b = table.b_bj(theta1, spec) + table.b_elastic(theta0)
        if a <= b:
            return a - table.J0gamma, JumpSpec((at_zero(),))
        return b - table.J0gamma, JumpSpec((at_one(),))
    if model != "QC":
        raise ValueError(f"unknown model {model!r}")
    if mesh is None:
        raise ValueError("QC model needs mesh descriptors")
    catalogue = [JumpSpec((at_zero(),), mesh), JumpSpec((at_one(),), mesh)]
    for b in sorted(set(mesh.interior)):
        if b != INF:
            catalogue.append(JumpSpec((JumpLocation(0.5, INTERIOR, b),), mesh))
    vals = [limit_energy_qc(j, theta0, theta1, table, spec) for j in catalogue]
    i = int(np.argmin(vals))
    return vals[i], catalogue[i]


def lemma_checks(table: LimitTable, spec: PotentialSpec, thetas=None, slack: float | None = None) -> dict:
    """Inequalities relating the boundary-layer energies; name -> (passed, margin)."""
    if slack is None:
        slack = 10 * table.tol
    g = table.gamma
    half_j1d = 0.5 * table.J1_delta1
    half_j1g = 0.5 * float(spec.j1(g))
    bg = table.B_gamma.value
    out = {}

    def le(name, a, b):
        out[name] = (bool(a <= b + slack), b - a)

    le("half_J1_delta1 <= B_gamma", half_j1d, bg)
    le("B_gamma <= half_J1_gamma", bg, half_j1g)
    if thetas is None:
        thetas = list(table.thetas.values())
    for th in thetas:
        k = _key(th)
        if k in table.B_elastic:
            le(f"B({k},gamma) >= half_J1(theta)", 0.5 * float(spec.j1(th)), table.b_elastic(th))
        if k in table.Bb:
            le(f"Bb({k}) >= half_J1_delta1", half_j1d, table.b_b(th))
            le(f"Bb({k}) <= half_J1(theta)", table.b_b(th), 0.5 * float(spec.j1(th)))
        if k in table.B_elastic and k in table.Bb:
            bbj = table.b_bj(th, spec)
            le(f"B({k},gamma) <= B_BJ", table.b_elastic(th), bbj)
            out[f"B({k},gamma) < B_BJ strictly"] = (bool(bbj - table.b_elastic(th) > slack),
                                                    bbj - table.b_elastic(th))
            le(f"B_BJ({k}) <= B({k},gamma) + B_IJ", bbj, table.b_elastic(th) + table.B_IJ)
    dk = _key(table.delta1)
    if dk in table.Bb:
        v = table.b_b(table.delta1)
        out["Bb(delta1) = half_J1_delta1"] = (bool(abs(v - half_j1d) <= slack), abs(v - half_j1d))
    for m, res in table.B_IF_results.items():
        le(f"half_J1_delta1 <= B_IF({m})", half_j1d, res.value)
        le(f"B_IF({m}) <= half_J1_gamma", res.value, half_j1g)
        if m >= 1:
            out[f"B_IF({m}) = B_gamma"] = (bool(abs(res.value - bg) <= slack), abs(res.value - bg))
    out["B_IJ > 0"] = (bool(table.B_IJ > 0), table.B_IJ)
    ms = sorted(table.B_IF_results)
    for a, b in zip(ms, ms[1:]):
        le(f"B_IF({a}) <= B_IF({b})", table.b_if(a), table.b_if(b))
    # B_IFJ tilde identities
    ns = [m + 1 for m in ms]
    for n in ns + [INF]:
        v = table.b_ifj_tilde(n, 1)
        out[f"tildeB_IFJ({_fmt(n)},1) = -J0gamma"] = (bool(abs(v + table.J0gamma) <= slack),
                                                       abs(v + table.J0gamma))
    if 1 in ns:
        for k in (2, 3, INF):
            v = table.b_ifj_tilde(1, k)
            ref = bg - 1.5 * table.J0gamma
            out[f"tildeB_IFJ(1,{_fmt(k)}) = B_gamma - 1.5 J0gamma"] = (bool(abs(v - ref) <= slack), abs(v - ref))
    for n in [x for x in ns if x >= 2] + [INF]:
        for k in (2, 3, INF):
            v = table.b_ifj_tilde(n, k)
            ref = table.b_aif(n)
            out[f"tildeB_IFJ({_fmt(n)},{_fmt(k)}) = B_AIF"] = (bool(abs(v - ref) <= slack), abs(v - ref))
    return out


def table_json(table: LimitTable, spec: PotentialSpec) -> str:
    return json.dumps(table.to_dict(spec), indent=1)
