"""Pair potentials of Lennard-Jones and Morse type for a chain with first and
second neighbour interactions.

``J2(z) = J1(2z)`` in both families. The module also provides the effective
potential ``J0``, its convex envelope ``J0**``, the characteristic constants
and a battery of numerical assumption checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

LENNARD_JONES = "LennardJones"
MORSE = "Morse"

# J0(+inf) is approximated by J0 at this multiple of delta1
Z_MAX_FACTOR = 1.0e3
INNER_TOL = 1.0e-12


class DomainError(ValueError):
    """Derivative requested at a point outside the domain of the potential."""


class NonConvergence(RuntimeError):
    pass


class RootNotBracketed(ValueError):
    pass


@dataclass(frozen=True)
class PotentialSpec:
    kind: str
    k1: float
    k2: float
    delta1: float | None = None

    def __post_init__(self):
        if self.kind not in (LENNARD_JONES, MORSE):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not self.k1 > 0:
            raise ValueError("k1 must be positive")
        # k2 == 0 is tolerated so that degenerate (purely repulsive) cases can
        # be run through the assumption checks; compute_constants flags it.
        if not self.k2 >= 0:
            raise ValueError("k2 must be non-negative")
        if self.kind == MORSE and not (self.delta1 is not None and self.delta1 > 0):
            raise ValueError("Morse potential needs a positive delta1")

    @classmethod
    def lennard_jones(cls, k1: float = 1.0, k2: float = 1.0) -> "PotentialSpec":
        return cls(LENNARD_JONES, float(k1), float(k2))

    @classmethod
    def morse(cls, k1: float = 1.0, k2: float = 1.0, delta1: float = 1.0) -> "PotentialSpec":
        return cls(MORSE, float(k1), float(k2), float(delta1))

    @property
    def domain_low(self) -> float:
        return 0.0 if self.kind == LENNARD_JONES else -math.inf

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "k1": self.k1, "k2": self.k2}
        if self.kind == MORSE:
            d["delta1"] = self.delta1
        return d

    # vectorised evaluation -------------------------------------------------

    def j1(self, z, order: int = 0):
        z = np.asarray(z, dtype=float)
        if self.kind == LENNARD_JONES:
            return _lj(self.k1, self.k2, z, order)
        return _morse(self.k1, self.k2, self.delta1, z, order)

    def j2(self, z, order: int = 0):
        z = np.asarray(z, dtype=float)
        return self.j1(2.0 * z, order) * (2.0 ** order)

    def jcb(self, z, order: int = 0):
        return self.j1(z, order) + self.j2(z, order)


def _lj(k1, k2, z, order):
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    bad = z <= 0.0
    if order == 0:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            zz = np.where(bad, 1.0, z)
            inv6 = zz ** -6
            out = k1 * inv6 * inv6 - k2 * inv6
        return np.where(bad, np.inf, out)[()]
    if np.any(bad):
        raise DomainError("Lennard-Jones derivative requested at z <= 0")
    inv = 1.0 / z
    inv6 = inv ** 6
    if order == 1:
        return (-12.0 * k1 * inv6 * inv6 * inv + 6.0 * k2 * inv6 * inv)[()]
    return (156.0 * k1 * inv6 * inv6 * inv * inv - 42.0 * k2 * inv6 * inv * inv)[()]


def _morse(k1, k2, d1, z, order):
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(-k2 * (z - d1))
        if order == 0:
            out = k1 * (e * e - 2.0 * e)
        elif order == 1:
            out = 2.0 * k1 * k2 * e * (1.0 - e)
        else:
            out = 2.0 * k1 * k2 * k2 * e * (2.0 * e - 1.0)
    if order > 0 and not np.all(np.isfinite(out)):
        raise DomainError("Morse derivative overflowed")
    return np.where(np.isnan(out), np.inf, out)[()]


def eval_j(spec: PotentialSpec, which: str, z, order: int = 0):
    """Evaluate ``J1``, ``J2`` or ``JCB`` (or a derivative) at ``z``."""
    fn = {"J1": spec.j1, "J2": spec.j2, "JCB": spec.jcb}.get(which)
    if fn is None:
        raise ValueError(f"unknown potential {which!r}")
    out = fn(z, order)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class PotentialAnalysis:
    delta1: float
    delta2: float
    gamma: float
    z0: float
    zc: float
    zstar: float
    J0gamma: float
    J0infinity: float
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "delta1": self.delta1,
            "delta2": self.delta2,
            "gamma": self.gamma,
            "z0": self.z0,
            "zc": self.zc,
            "zstar": self.zstar,
            "J0gamma": self.J0gamma,
            "J0infinity": self.J0infinity,
            "checks": dict(self.checks),
        }


def lj_closed_forms(k1: float, k2: float) -> dict:
    d1 = (2.0 * k1 / k2) ** (1.0 / 6.0)
    return {
        "delta1": d1,
        "gamma": ((1.0 + 2.0**-12) / (1.0 + 2.0**-6)) ** (1.0 / 6.0) * d1,
        "z0": (k1 / k2) ** (1.0 / 6.0),
        "zc": d1 * (13.0 / 7.0 * (1.0 + 2.0**-11) / (1.0 + 2.0**-5)) ** (1.0 / 6.0),
        "zstar": d1 * (13.0 / 7.0 * (1.0 + 2.0**-12) / (1.0 + 2.0**-6)) ** (1.0 / 6.0),
    }


def compute_constants(spec: PotentialSpec) -> PotentialAnalysis:
    if spec.kind == LENNARD_JONES:
        if spec.k2 == 0.0:
            inf = math.inf
            return PotentialAnalysis(inf, inf, inf, inf, inf, inf, 0.0, 0.0,
                                     {"degenerate": True})
        c = lj_closed_forms(spec.k1, spec.k2)
        d1, gamma, z0, zc, zstar = c["delta1"], c["gamma"], c["z0"], c["zc"], c["zstar"]
    else:
        if spec.k2 == 0.0:
            raise RootNotBracketed("Morse potential with k2 = 0 has no minimiser")
        d1 = spec.delta1
        z0 = d1 - math.log(2.0) / spec.k2
        lo, hi = 0.5 * d1, d1
        f_lo, f_hi = spec.jcb(lo, 1), spec.jcb(hi, 1)
        if not (f_lo < 0.0 < f_hi):
            raise RootNotBracketed("J_CB' does not change sign on (delta1/2, delta1)")
        gamma = brentq(lambda z: float(spec.jcb(z, 1)), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                       maxiter=500)
        zc = zstar = math.nan
    j0g = float(spec.jcb(gamma))
    j0inf = eval_j0(spec, Z_MAX_FACTOR * d1)
    resid = abs(float(spec.jcb(gamma, 1)))
    checks = {
        "domain_order": bool(spec.domain_low < z0 < gamma < d1),
        "jcb_prime_at_gamma": resid,
        "J0gamma_below_J0infinity": bool(j0g < j0inf),
    }
    return PotentialAnalysis(d1, 0.5 * d1, gamma, z0, zc, zstar, j0g, j0inf, checks)


# --------------------------------------------------------------------------
# effective potential


def _delta1_of(spec: PotentialSpec) -> float:
    if spec.kind == MORSE:
        return spec.delta1
    return (2.0 * spec.k1 / spec.k2) ** (1.0 / 6.0)


def j0_inner(spec: PotentialSpec, z: float) -> tuple[float, float]:
    """Solve ``min_{z1} J1(z1) + J1(2z - z1)``.

    Returns the minimal value and the minimiser with ``z1 <= z`` (the problem
    is symmetric about ``z``).
    """
    z = float(z)
    if not z > spec.domain_low:
        raise DomainError(f"J0 requested outside dom J2 (z = {z})")
    d1 = _delta1_of(spec)
    j1d1 = float(spec.j1(d1))

    def g(z1):
        return spec.j1(z1) + spec.j1(2.0 * z - z1)

    g_sym = float(g(z))
    target = g_sym - j1d1
    if z <= d1 and target <= j1d1:
        return g_sym, z
    # below L the first bond alone already costs more than the symmetric split
    if spec.kind == LENNARD_JONES:
        lo = min(z, d1) * 1e-3
        while float(spec.j1(lo)) < target:
            lo *= 0.5
    else:
        step = 1.0 / spec.k2
        lo = d1 - step
        while float(spec.j1(lo)) < target:
            step *= 2.0
            lo = d1 - step
    hi = min(z, d1)
    if float(spec.j1(hi)) >= target:
        low_cut = hi
    else:
        low_cut = brentq(lambda x: float(spec.j1(x)) - target, lo, hi, xtol=1e-14)
    if low_cut >= z:
        return g_sym, z
    span = z - low_cut
    grid = np.unique(np.concatenate([
        np.linspace(low_cut, z, 2001),
        low_cut + span * np.geomspace(1e-7, 1.0, 1001),
        z - span * np.geomspace(1e-7, 1.0, 1001),
    ]))
    vals = g(grid)
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best_x, best_v = z, g_sym
    if float(vals[i]) < best_v:
        best_x, best_v = float(grid[i]), float(vals[i])
    if b > a:
        res = minimize_scalar(lambda x: float(g(x)), bounds=(a, b), method="bounded",
                              options={"xatol": INNER_TOL, "maxiter": 500})
        if not res.success:
            raise NonConvergence(f"inner J0 minimisation failed at z = {z}")
        if res.fun < best_v:
            best_x, best_v = float(res.x), float(res.fun)
    return best_v, best_x


def eval_j0(spec: PotentialSpec, z: float, analysis: PotentialAnalysis | None = None) -> float:
    """Effective potential ``J0(z) = J2(z) + min/2 (J1(z1) + J1(2z - z1))``."""
    if not z > spec.domain_low:
        raise DomainError(f"J0 requested outside dom J2 (z = {z})")
    val, _ = j0_inner(spec, z)
    return float(spec.j2(z)) + 0.5 * val


def eval_j0_star_star(analysis: PotentialAnalysis, spec: PotentialSpec, z: float) -> tuple[float, float]:
    """Convex envelope of ``J0`` and its derivative at ``z``."""
    if not z > spec.domain_low:
        raise DomainError(f"J0** requested below the domain (z = {z})")
    if z >= analysis.gamma:
        return analysis.J0gamma, 0.0
    return float(spec.jcb(z)), float(spec.jcb(z, 1))


def eval_r(analysis: PotentialAnalysis, spec: PotentialSpec, t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= spec.domain_low):
        raise DomainError("R requested outside dom J1")
    g = analysis.gamma
    j0g = analysis.J0gamma
    out = (spec.j2(0.5 * (g + t)) + 0.5 * (spec.j1(g) + spec.j1(t))
           - j0g - 1.5 * (spec.jcb(t) - j0g))
    return float(out) if out.ndim == 0 else out


def eval_r_prime(analysis: PotentialAnalysis, spec: PotentialSpec, t):
    t = np.asarray(t, dtype=float)
    g = analysis.gamma
    return 0.5 * spec.j2(0.5 * (g + t), 1) + 0.5 * spec.j1(t, 1) - 1.5 * spec.jcb(t, 1)


def r_tail_bound(analysis: PotentialAnalysis, spec: PotentialSpec) -> float:
    """Upper bound for ``R`` on ``[zc, inf)`` (Lennard-Jones only)."""
    zc = analysis.zc
    return float(-0.5 * spec.j2(zc) - spec.jcb(zc)
                 + 0.5 * (spec.j1(analysis.gamma) + analysis.J0gamma))


# --------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class CheckEntry:
    passed: bool
    worst_value: float
    witness_z: float

    def to_dict(self) -> dict:
        return {"pass": bool(self.passed), "worst_value": _json_float(self.worst_value),
                "witness_z": _json_float(self.witness_z)}


def _json_float(x):
    x = float(x)
    if math.isfinite(x):
        return x
    return None if math.isnan(x) else ("inf" if x > 0 else "-inf")


def default_grid(spec: PotentialSpec, analysis: PotentialAnalysis, points: int = 20000) -> np.ndarray:
    d1 = analysis.delta1
    if spec.kind == LENNARD_JONES:
        return np.geomspace(1e-3 * d1, 10.0 * d1, points)
    # no finite lower end: start where J1 exceeds 1e6 |J1(delta1)|
    lo = d1 - math.log(1e3) / spec.k2
    return np.linspace(lo, 10.0 * d1, points)


def check_assumptions(spec: PotentialSpec, analysis: PotentialAnalysis | None = None,
                      grid=None, thetas=None, eta: float | None = None,
                      r_tol: float = 1e-12, j0_samples: int = 120) -> dict[str, CheckEntry]:
    if analysis is None:
        analysis = compute_constants(spec)
    g, d1 = analysis.gamma, analysis.delta1
    report: dict[str, CheckEntry] = {}

    j1g = float(spec.j1(g)) if math.isfinite(g) else 0.0
    j2g = float(spec.j2(g)) if math.isfinite(g) else 0.0
    j2d = float(spec.j2(d1)) if math.isfinite(d1) else 0.0
    report["J1_gamma_negative"] = CheckEntry(j1g < 0.0, j1g, g)
    report["J2_gamma_negative"] = CheckEntry(j2g < 0.0, j2g, g)
    report["J2_delta1_negative"] = CheckEntry(j2d < 0.0, j2d, d1)

    grid_names = ["J2_gamma_above_twice_J2_mid", "R_nonpositive", "R_unique_critical_point",
                  "J0_equals_JCB_below_gamma", "J0gamma_below_J0infinity"]
    if not (math.isfinite(g) and math.isfinite(d1)):
        for name in grid_names:
            report[name] = CheckEntry(False, math.nan, math.nan)
        return report

    mid = 0.5 * (d1 + g)
    gap = j2g - 2.0 * float(spec.j2(mid))
    report["J2_gamma_above_twice_J2_mid"] = CheckEntry(gap > 0.0, gap, mid)

    z = np.asarray(default_grid(spec, analysis) if grid is None else grid, dtype=float)
    z = z[z > spec.domain_low]
    r = eval_r(analysis, spec, z)
    k = int(np.argmax(r))
    report["R_nonpositive"] = CheckEntry(bool(r[k] <= r_tol), float(r[k]), float(z[k]))

    rp = eval_r_prime(analysis, spec, z)
    scale = np.abs(spec.j1(z, 1)) + np.abs(spec.j1(2 * z, 1)) + 1.0
    sig = np.sign(np.where(np.abs(rp) <= 1e-9 * scale, 0.0, rp))
    sig = sig[sig != 0]
    changes = int(np.count_nonzero(np.diff(sig)))
    report["R_unique_critical_point"] = CheckEntry(changes == 1, float(changes), g)

    below = z[z <= g]
    if below.size:
        sel = below[np.linspace(0, below.size - 1, min(j0_samples, below.size)).astype(int)]
        diffs = np.array([abs(eval_j0(spec, x) - float(spec.jcb(x))) for x in sel])
        k = int(np.argmax(diffs))
        report["J0_equals_JCB_below_gamma"] = CheckEntry(bool(diffs[k] <= 1e-10), float(diffs[k]),
                                                         float(sel[k]))
    diff = analysis.J0gamma - analysis.J0infinity
    report["J0gamma_below_J0infinity"] = CheckEntry(diff < 0.0, diff, Z_MAX_FACTOR * d1)

    if thetas is None:
        thetas = (d1, g)
    if eta is None:
        eta = 0.5 * abs(float(spec.j1(d1)))
    for th in thetas:
        level = float(spec.j1(th)) + 2.0 * eta
        sub = z[spec.j1(z) < level]
        name = f"negative_J2_near_gamma[theta={th:.10g}]"
        if sub.size == 0:
            report[name] = CheckEntry(True, -math.inf, th)
            continue
        vals = 0.5 * j1g + spec.j2(0.5 * (sub + g))
        k = int(np.argmax(vals))
        report[name] = CheckEntry(bool(vals[k] <= 0.0), float(vals[k]), float(sub[k]))
    return report


def report_to_dict(report: dict[str, CheckEntry]) -> dict:
    return {name: entry.to_dict() for name, entry in report.items()}
