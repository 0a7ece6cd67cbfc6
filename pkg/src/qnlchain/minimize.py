"""Global minimisation of finite chain energies by crack-branch enumeration.

Local descent is a damped Newton method on the free atoms (or free repatoms)
with a Levenberg shift whenever the Hessian is not positive definite, and an
Armijo backtracking line search guarded against leaving the potential domain.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cholesky_banded, cho_solve_banded
from scipy.optimize import minimize as sp_minimize

from .chain import (
    ChainConfig,
    MeshConfig,
    _full_gradient,
    _full_hessian_bands,
    _weights,
    default_k1,
    energy_atomistic,
    energy_qnl,
    first_order_energy,
    free_repatoms,
    interpolation_matrix,
)
from .potentials import PotentialAnalysis, PotentialSpec

ELASTIC_ONLY = "ElasticOnly"
ALL_BONDS = "AllBonds"
REPATOM_INTERVALS = "RepatomIntervals"

REGIONS = ("LeftAtomistic", "Interface", "Continuum", "RightAtomistic", "Boundary")


class TooLarge(ValueError):
    pass


@dataclass
class MinimizeOptions:
    grad_tol: float = 1.0e-10
    max_iter: int = 100_000
    crack_strain_factor: float = 2.0
    branch_set: str | None = None  # None: AllBonds (atomistic), RepatomIntervals (QNL)
    tie_tol: float = 1.0e-13
    threads: int = 1
    guard_factor: float = 1.0e-3

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not self.crack_strain_factor > 1:
            raise ValueError("crack_strain_factor must exceed 1")
        if self.branch_set not in (None, ELASTIC_ONLY, ALL_BONDS, REPATOM_INTERVALS):
            raise ValueError(f"unknown branch set {self.branch_set!r}")


class ChainModel:
    """Energy of a chain restricted to its free variables.

    ``mesh=None`` is the atomistic model on all atoms; otherwise the QNL model
    on the repatoms of ``mesh``.
    """

    def __init__(self, spec: PotentialSpec, analysis: PotentialAnalysis, cfg: ChainConfig,
                 mesh: MeshConfig | None = None):
        self.spec, self.analysis, self.cfg, self.mesh = spec, analysis, cfg, mesh
        n = cfg.n
        if mesh is not None and mesh.n != n:
            raise ValueError("mesh and chain disagree on n")
        self.kind = "atomistic" if mesh is None else "qnl"
        self.reps = np.arange(n + 1) if mesh is None else np.asarray(mesh.repatoms)
        if mesh is None or mesh.is_full:
            self.P = None
            self.free = np.arange(2, n - 1)
        else:
            self.P = interpolation_matrix(mesh).tocsc()
            self.free = free_repatoms(mesh)
        self._fixed = cfg.boundary_values()

    # coordinates -----------------------------------------------------------

    def lift(self, x: np.ndarray) -> np.ndarray:
        r = self.full_reduced(x)
        if self.P is None:
            return r
        return np.interp(np.arange(self.cfg.n + 1), self.reps, r)

    def full_reduced(self, x: np.ndarray) -> np.ndarray:
        r = np.empty(len(self.reps))
        r[self.free] = x
        r[0], r[1] = self._fixed[0], self._fixed[1]
        r[-2], r[-1] = self._fixed[self.cfg.n - 1], self._fixed[self.cfg.n]
        return r

    def restrict(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float)[self.reps[self.free]].copy()

    # energy ----------------------------------------------------------------

    def energy_u(self, u) -> float:
        if self.mesh is None:
            return energy_atomistic(self.spec, self.cfg, u, enforce_bc=True)
        return energy_qnl(self.spec, self.cfg, self.mesh, u, enforce_bc=True)

    def first_order(self, u) -> float:
        return first_order_energy(self.spec, self.analysis, self.cfg, u, self.mesh)

    def energy(self, x) -> float:
        return self.energy_u(self.lift(x))

    def gradient(self, x) -> np.ndarray:
        u = self.lift(x)
        g = _full_gradient(self.spec, self.cfg, u, self.mesh)
        if self.P is not None:
            g = self.P.T @ g
        return g[self.free]

    def hessian_bands(self, x) -> np.ndarray:
        u = self.lift(x)
        ab = _full_hessian_bands(self.spec, self.cfg, u, self.mesh)
        if self.P is None:
            return ab[:, self.free[0]:self.free[-1] + 1].copy()
        m = self.cfg.n + 1
        H = sp.diags([ab[0, 2:], ab[1, 1:], ab[2], ab[1, 1:], ab[0, 2:]], [-2, -1, 0, 1, 2],
                     shape=(m, m), format="csc")
        Hr = (self.P.T @ H @ self.P).tocsc()
        lo, hi = self.free[0], self.free[-1] + 1
        sub = Hr[lo:hi, lo:hi].todia()
        k = hi - lo
        out = np.zeros((3, k))
        out[2] = sub.diagonal(0)
        out[1, 1:] = sub.diagonal(1)
        out[0, 2:] = sub.diagonal(2)
        return out

    def gap_limits(self, x, p):
        """Largest step along ``p`` keeping every gap above the domain guard."""
        if not math.isfinite(self.spec.domain_low):
            return math.inf
        u = self.lift(x)
        du = self.lift(x + p) - u
        gaps, dgaps = np.diff(u), np.diff(du)
        floor = self.spec.domain_low * self.cfg.lam + self._guard
        shrink = dgaps < 0
        if not np.any(shrink):
            return math.inf
        return float(np.min((gaps[shrink] - floor) / (-dgaps[shrink])))

    _guard = 0.0

    def set_guard(self, factor: float):
        self._guard = factor * self.analysis.delta1 * self.cfg.lam


# --------------------------------------------------------------------------
# local descent


@dataclass
class LocalResult:
    u: np.ndarray
    energy: float
    iterations: int
    converged: bool
    grad_norm: float
    history: list = field(default_factory=list)
    message: str = ""


def local_minimize(model: ChainModel, start, opts: MinimizeOptions | None = None) -> LocalResult:
    opts = opts or MinimizeOptions()
    model.set_guard(opts.guard_factor)
    x = model.restrict(start)
    e = model.energy(x)
    if not math.isfinite(e):
        raise ValueError("start deformation has infinite energy")
    g = model.gradient(x)
    history = [e]
    it = 0
    msg = ""
    while True:
        gn = float(np.max(np.abs(g))) if g.size else 0.0
        if gn <= opts.grad_tol:
            return LocalResult(model.lift(x), e, it, True, gn, history, "converged")
        if it >= opts.max_iter:
            msg = "max_iter"
            break
        p = _newton_direction(model.hessian_bands(x), g)
        slope = float(g @ p)
        if not slope < 0:
            p, slope = -g, -float(g @ g)
        alpha = min(1.0, 0.99 * model.gap_limits(x, p))
        accepted = False
        while alpha >= 1e-16:
            xt = x + alpha * p
            et = model.energy(xt)
            if math.isfinite(et):
                if et <= e + 1e-4 * alpha * slope:
                    accepted = True
                elif et <= e + 8 * np.finfo(float).eps * abs(e):
                    # energy stalls at round-off: accept if the residual shrinks
                    gt = model.gradient(xt)
                    if np.max(np.abs(gt)) < gn:
                        accepted = True
                if accepted:
                    break
            alpha *= 0.5
        if not accepted:
            msg = "line search stall"
            break
        x, e = xt, et
        g = model.gradient(x)
        history.append(e)
        it += 1
    gn = float(np.max(np.abs(g))) if g.size else 0.0
    return LocalResult(model.lift(x), e, it, False, gn, history, msg)


def _newton_direction(ab: np.ndarray, g: np.ndarray) -> np.ndarray:
    diag = ab[2]
    scale = float(np.max(np.abs(diag))) if diag.size else 1.0
    tau = 0.0
    for _ in range(80):
        trial = ab.copy()
        trial[2] = diag + tau
        try:
            c = cholesky_banded(trial, lower=False)
            return -cho_solve_banded((c, False), g)
        except LinAlgError:
            tau = max(2.0 * tau, 1e-10 * scale)
    return -g


# --------------------------------------------------------------------------
# branches


def _snap_bond(cfg: ChainConfig, j: int) -> int:
    # bonds 0 and n-1 are fixed by the boundary conditions
    return min(max(j, 1), cfg.n - 2)


def crack_start(cfg: ChainConfig, analysis: PotentialAnalysis, bond_index: int,
                mesh: MeshConfig | None = None) -> np.ndarray:
    """Strain ``gamma`` everywhere except one crack absorbing the rest of ``ell``.

    With a coarse mesh the whole repatom interval containing ``bond_index``
    opens uniformly.
    """
    n, lam = cfg.n, cfg.lam
    j = _snap_bond(cfg, int(bond_index))
    lo, hi = j, j + 1
    if mesh is not None and not mesh.is_full:
        for a, b in mesh.intervals():
            if a <= j < b:
                lo, hi = a, b
                break
        if lo < 1 or hi > n - 1:
            raise ValueError("crack interval touches a pinned bond")
    s = np.full(n, analysis.gamma)
    s[0], s[-1] = cfg.u0_1, cfg.u1_1
    rest = n * cfg.ell - (s.sum() - s[lo:hi].sum())
    s[lo:hi] = rest / (hi - lo)
    if not s[lo] > analysis.gamma:
        raise ValueError("ell too small for a crack start")
    u = np.empty(n + 1)
    u[0] = 0.0
    u[1:hi + 1] = np.cumsum(s[:hi]) * lam
    u[hi:] = cfg.ell - np.concatenate([np.cumsum(s[hi:][::-1])[::-1], [0.0]]) * lam
    return u


def crack_sites(model: ChainModel, branch_set: str) -> list[int]:
    n = model.cfg.n
    if branch_set == ELASTIC_ONLY:
        return []
    if branch_set == ALL_BONDS or model.mesh is None or model.mesh.is_full:
        return list(range(1, n - 1))
    return [a for a, b in model.mesh.intervals() if a >= 1 and b <= n - 1]


@dataclass
class CrackBond:
    index: int
    strain: float
    location: float
    region: str

    def to_dict(self) -> dict:
        return {"index": self.index, "strain": self.strain, "location": self.location,
                "region": self.region}


@dataclass
class CrackReport:
    bonds: list
    jump_sizes: list

    @property
    def indices(self) -> list[int]:
        return [b.index for b in self.bonds]

    @property
    def regions(self) -> list[str]:
        return [b.region for b in self.bonds]

    def to_dict(self) -> dict:
        return {"bonds": [b.to_dict() for b in self.bonds], "jump_sizes": list(self.jump_sizes)}


def classify_bond(i: int, n: int, mesh: MeshConfig | None) -> str:
    if mesh is None:
        mesh = MeshConfig.full(n)
    if i <= 1 or i >= n - 2:
        return "Boundary"
    if i < mesh.k1:
        return "LeftAtomistic"
    if i >= mesh.k2:
        return "RightAtomistic"
    if i < mesh.r_index or i >= mesh.l_index:
        return "Interface"
    return "Continuum"


def detect_cracks(cfg: ChainConfig, analysis: PotentialAnalysis, u, opts: MinimizeOptions | None = None,
                  mesh: MeshConfig | None = None) -> CrackReport:
    opts = opts or MinimizeOptions()
    b = np.diff(np.asarray(u, dtype=float)) / cfg.lam
    thr = opts.crack_strain_factor * analysis.gamma
    bonds, jumps = [], []
    for i in np.flatnonzero(b > thr):
        i = int(i)
        bonds.append(CrackBond(i, float(b[i]), i / cfg.n, classify_bond(i, cfg.n, mesh)))
        jumps.append(float((b[i] - analysis.gamma) * cfg.lam))
    return CrackReport(bonds, jumps)


@dataclass
class MinimizeResult:
    u: np.ndarray
    energy: float
    first_order: float
    cracks: CrackReport
    iterations: int
    converged: bool
    branch: str
    branch_log: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "energy": self.energy,
            "first_order": self.first_order,
            "iterations": self.iterations,
            "converged": self.converged,
            "branch": self.branch,
            "cracks": self.cracks.to_dict(),
            "u": [float(x) for x in self.u],
            "branch_log": self.branch_log,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def global_minimize(model: ChainModel, opts: MinimizeOptions | None = None) -> MinimizeResult:
    opts = opts or MinimizeOptions()
    cfg, analysis = model.cfg, model.analysis
    branch_set = opts.branch_set or (ALL_BONDS if model.mesh is None else REPATOM_INTERVALS)
    starts: list[tuple[str, np.ndarray]] = [("elastic", cfg.pinned_affine())]
    skipped = []
    for j in crack_sites(model, branch_set):
        try:
            starts.append((f"crack@{j}", crack_start(cfg, analysis, j, model.mesh)))
        except ValueError as exc:
            skipped.append({"start": f"crack@{j}", "skipped": str(exc)})

    def run(item):
        name, u0 = item
        m = ChainModel(model.spec, analysis, cfg, model.mesh)
        try:
            return name, local_minimize(m, u0, opts)
        except (ValueError, ArithmeticError) as exc:
            return name, exc

    if opts.threads > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    log, ok = list(skipped), []
    for order, (name, res) in enumerate(results):
        if isinstance(res, Exception):
            log.append({"start": name, "error": str(res)})
            continue
        cr = detect_cracks(cfg, analysis, res.u, opts, model.mesh)
        log.append({"start": name, "energy": res.energy, "iterations": res.iterations,
                    "converged": res.converged, "cracks": cr.indices})
        ok.append((order, name, res, cr))
    if not ok:
        raise RuntimeError("every branch failed")
    best_e = min(r.energy for _, _, r, _ in ok)
    tied = [t for t in ok if t[2].energy <= best_e + opts.tie_tol]

    def key(t):
        order, name, res, cr = t
        first = min(cr.indices) if cr.indices else -1
        return (first, 0 if name == "elastic" else 1, order)

    _, name, res, cr = min(tied, key=key)
    return MinimizeResult(res.u, res.energy, model.first_order(res.u), cr, res.iterations,
                          res.converged, name, log)


# --------------------------------------------------------------------------
# brute force oracle


def brute_force_oracle(spec: PotentialSpec, analysis: PotentialAnalysis, cfg: ChainConfig,
                       mesh: MeshConfig | None = None, grid_points: int = 41, max_free: int = 16,
                       crack_factor: float = 2.0, box_factor: float = 0.75):
    """Exhaustive grid search over the free coordinates, then local polish.

    The energy is a sum of terms coupling at most three consecutive
    (rep)atoms, so the exhaustive search over the product grid is carried out
    exactly by dynamic programming. The best grid node of every crack pattern
    (none, one per interval, several) is polished with BFGS.
    """
    n, lam, ell = cfg.n, cfg.lam, cfg.ell
    reps = np.arange(n + 1) if mesh is None else np.asarray(mesh.repatoms)
    R = len(reps)
    nfree = R - 4
    if nfree > max_free:
        raise TooLarge(f"{nfree} free variables exceed the cap of {max_free}")
    if grid_points > 41:
        raise TooLarge("at most 41 grid points per variable")
    fixed = cfg.boundary_values()
    a = box_factor * min(ell, analysis.gamma)
    grids = []
    for j, t in enumerate(reps):
        if t in fixed:
            grids.append(np.array([fixed[int(t)]]))
        else:
            grids.append(np.linspace(t * lam * a, ell - (n - t) * lam * a, grid_points))

    w_cell, w_bond = _weights(n, mesh)
    thr = crack_factor * analysis.gamma
    n_int = R - 1
    multi = n_int + 1
    ntag = n_int + 2

    def interval_terms(j, xa, xb):
        # bonds of interval (j, j+1) and cells centred strictly inside it
        ta, tb = reps[j], reps[j + 1]
        m = tb - ta
        s = (xb - xa) / (m * lam)
        out = m * (spec.j1(s) + 0.0)
        wb = w_bond[ta:tb].sum()
        if wb:
            out = out + wb * spec.j2(s)
        wc = w_cell[ta:tb - 1].sum()  # cells i with centre i+1 in (ta, tb)
        if wc:
            out = out + wc * spec.j2(s)
        return lam * out, s > thr

    def centre_terms(j, xa, xb, xc):
        ta, tb, tc = reps[j - 1], reps[j], reps[j + 1]
        i = tb - 1
        left = xb - (xb - xa) / (tb - ta)
        right = xb + (xc - xb) / (tc - tb)
        c = (right - left) / (2 * lam)
        return lam * w_cell[i] * spec.j2(c)

    def tag_update(tag, crack, k):
        new = tag.copy()
        hit = crack & (tag == 0)
        new[hit] = 1 + k
        new[crack & (tag != 0)] = multi
        return new

    with np.errstate(invalid="ignore", over="ignore"):
        # state: values of (x_{j}, x_{j+1}), tag
        g0, g1 = grids[0], grids[1]
        e01, c01 = interval_terms(0, g0[:, None], g1[None, :])
        V = np.full((len(g0), len(g1), ntag), np.inf)
        tags0 = np.where(c01, 1, 0)
        for t in range(ntag):
            V[:, :, t] = np.where(tags0 == t, e01, np.inf)
        back = []
        for j in range(1, R - 1):
            ga, gb, gc = grids[j - 1], grids[j], grids[j + 1]
            T = centre_terms(j, ga[:, None, None], gb[None, :, None], gc[None, None, :])
            eint, cint = interval_terms(j, gb[:, None], gc[None, :])
            T = T + eint[None, :, :]
            T = np.where(np.isnan(T), np.inf, T)
            newV = np.full((len(gb), len(gc), ntag), np.inf)
            arg_a = np.zeros((len(gb), len(gc), ntag), dtype=int)
            arg_t = np.zeros((len(gb), len(gc), ntag), dtype=int)
            for t in range(ntag):
                base = V[:, :, t][:, :, None] + T  # (a, b, c)
                # interval (j, j+1) crack status depends on (b, c)
                tnew = tag_update(np.full(cint.shape, t), cint, j)
                k = np.argmin(base, axis=0)
                val = np.take_along_axis(base, k[None], axis=0)[0]
                for tn in np.unique(tnew):
                    mask = (tnew == tn) & (val < newV[:, :, tn])
                    newV[:, :, tn] = np.where(mask, val, newV[:, :, tn])
                    arg_a[:, :, tn] = np.where(mask, k, arg_a[:, :, tn])
                    arg_t[:, :, tn] = np.where(mask, t, arg_t[:, :, tn])
            back.append((arg_a, arg_t))
            V = newV

    candidates = []
    for t in range(ntag):
        if not math.isfinite(V[0, 0, t]):
            continue
        idx = [0] * R
        idx[R - 1], idx[R - 2] = 0, 0
        tag = t
        for j in range(R - 2, 0, -1):
            arg_a, arg_t = back[j - 1]
            b_i, c_i = idx[j], idx[j + 1]
            a_i = int(arg_a[b_i, c_i, tag])
            tag = int(arg_t[b_i, c_i, tag])
            idx[j - 1] = a_i
        x = np.array([grids[j][idx[j]] for j in range(R)])
        candidates.append((float(V[0, 0, t]), t, x))

    model = ChainModel(spec, analysis, cfg, mesh)
    best = (math.inf, None)
    for _, _, x in candidates:
        xf = x[model.free]
        xf = _polish(model, xf)
        e = model.energy(xf)
        if e < best[0]:
            best = (e, model.lift(xf))
    return best


def _polish(model: ChainModel, x0: np.ndarray) -> np.ndarray:
    def fun(x):
        e = model.energy(x)
        if not math.isfinite(e):
            return 1e10, np.zeros_like(x)
        return e, model.gradient(x)

    x = x0
    for _ in range(3):
        res = sp_minimize(fun, x, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 20000})
        x = res.x
        if res.success:
            break
    return x
