"""Finite chains: atomistic and quasinonlocal (QNL) energies, repatom meshes,
and the first-order sigma/mu decomposition."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .potentials import DomainError, PotentialAnalysis, PotentialSpec, eval_j0_star_star

BC_TOL = 1.0e-12


@dataclass(frozen=True)
class ChainConfig:
    """Chain with ``n`` bonds (atoms ``0..n``) and boundary data."""

    n: int
    ell: float
    u0_1: float
    u1_1: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ValueError("n must be an integer >= 4")
        if not (self.ell > 0 and self.u0_1 > 0 and self.u1_1 > 0):
            raise ValueError("ell, u0_1 and u1_1 must be positive")

    @property
    def lam(self) -> float:
        return 1.0 / self.n

    def boundary_values(self) -> dict[int, float]:
        n, lam = self.n, self.lam
        return {0: 0.0, 1: lam * self.u0_1, n - 1: self.ell - lam * self.u1_1, n: self.ell}

    def affine(self, slope: float | None = None) -> np.ndarray:
        """Affine chain ``u^i = i*lam*slope`` (slope defaults to ell)."""
        s = self.ell if slope is None else slope
        return np.arange(self.n + 1) * (self.lam * s)

    def pinned_affine(self) -> np.ndarray:
        u = self.affine()
        for i, v in self.boundary_values().items():
            u[i] = v
        return u

    def satisfies_bc(self, u) -> bool:
        return all(abs(u[i] - v) <= BC_TOL for i, v in self.boundary_values().items())

    def to_dict(self) -> dict:
        return {"n": self.n, "ell": self.ell, "u0_1": self.u0_1, "u1_1": self.u1_1,
                "lambda": self.lam}


@dataclass(frozen=True)
class MeshConfig:
    """Atomistic window ``(k1, k2)`` and repatom set."""

    n: int
    k1: int
    k2: int
    repatoms: tuple

    def __post_init__(self):
        n, k1, k2 = self.n, self.k1, self.k2
        if not (0 < k1 < k2 < n - 2):
            raise ValueError(f"need 0 < k1 < k2 < n-2, got k1={k1}, k2={k2}, n={n}")
        reps = tuple(sorted(set(int(t) for t in self.repatoms) | {1, n - 1}))
        if reps[0] != 0 or reps[-1] != n:
            raise ValueError("repatoms must contain 0 and n")
        required = set(range(0, k1 + 1)) | set(range(k2, n + 1))
        if not required.issubset(reps):
            raise ValueError("repatoms must contain {0..k1} and {k2..n}")
        object.__setattr__(self, "repatoms", reps)

    @classmethod
    def full(cls, n: int, k1: int | None = None, k2: int | None = None) -> "MeshConfig":
        if k1 is None:
            k1 = default_k1(n)
        if k2 is None:
            k2 = n - k1
        return cls(n, k1, k2, tuple(range(n + 1)))

    @property
    def is_full(self) -> bool:
        return len(self.repatoms) == self.n + 1

    @property
    def r_index(self) -> int:
        return min(t for t in self.repatoms if t > self.k1)

    @property
    def l_index(self) -> int:
        return max(t for t in self.repatoms if t < self.k2)

    def intervals(self) -> list[tuple[int, int]]:
        r = self.repatoms
        return [(r[j], r[j + 1]) for j in range(len(r) - 1)]

    def to_dict(self) -> dict:
        return {"n": self.n, "k1": self.k1, "k2": self.k2, "repatoms": list(self.repatoms)}


def default_k1(n: int, scale: float = 1.0) -> int:
    return max(1, int(round(scale * math.sqrt(n))))


class RuleInfeasible(ValueError):
    pass


def window_mesh(n: int, spacing: int = 1, k1: int | None = None, k1_scale: float = 1.0,
                avoid_unit_gap: bool = True) -> MeshConfig:
    """Atomistic windows ``{0..k1}`` and ``{k2..n}`` with ``k2 = n - k1``, and
    repatoms every ``spacing`` atoms in between.

    With ``spacing >= 2`` and ``avoid_unit_gap``, a last continuum gap of one
    atom is merged into the previous gap so that every gap is at least 2.
    """
    if int(spacing) != spacing or spacing < 1:
        raise RuleInfeasible("spacing must be an integer >= 1")
    if k1 is None:
        k1 = default_k1(n, k1_scale)
    k2 = n - k1
    if not (0 < k1 < k2 < n - 2):
        raise RuleInfeasible(f"atomistic windows do not fit: n={n}, k1={k1}, k2={k2}")
    inner = list(range(k1, k2, int(spacing)))
    if avoid_unit_gap and spacing >= 2 and k2 - inner[-1] == 1 and len(inner) > 1:
        inner.pop()
    reps = set(range(k1 + 1)) | set(range(k2, n + 1)) | set(inner)
    return MeshConfig(n, k1, k2, tuple(sorted(reps)))


@dataclass(frozen=True)
class MeshDescriptor:
    """Finite-n stand-ins for the mesh limits ``b(x)``, ``r_hat`` and ``l_hat``."""

    n: int
    k1: int
    k2: int
    r_hat: int
    l_hat: int
    gaps: tuple  # (left, right) of every repatom interval strictly inside (k1, k2)

    def spacing_at(self, x: float, window: int | None = None) -> float:
        """Minimal repatom gap among interior continuum intervals near ``x*n``.

        Returns ``inf`` when no such interval exists.
        """
        if window is None:
            window = max(4, int(math.ceil(math.sqrt(self.n))))
        target = min(max(x * self.n, self.k1), self.k2)
        best = math.inf
        for a, b in self.gaps:
            dist = 0.0 if a <= target <= b else min(abs(a - target), abs(b - target))
            if dist <= window:
                best = min(best, b - a)
        return best

    def interior_spacings(self) -> list[int]:
        return sorted({b - a for a, b in self.gaps})

    def to_dict(self) -> dict:
        return {"r_hat": self.r_hat, "l_hat": self.l_hat,
                "b0": _finite_or_str(self.spacing_at(0.0)),
                "b1": _finite_or_str(self.spacing_at(1.0)),
                "interior_spacings": self.interior_spacings()}


def _finite_or_str(x):
    return x if math.isfinite(x) else "inf"


def describe_mesh(mesh: MeshConfig) -> MeshDescriptor:
    gaps = tuple((a, b) for a, b in mesh.intervals() if a > mesh.k1 and b < mesh.k2)
    return MeshDescriptor(mesh.n, mesh.k1, mesh.k2, mesh.r_index - mesh.k1,
                          mesh.k2 - mesh.l_index, gaps)


# --------------------------------------------------------------------------
# energies


def _weights(n: int, mesh: MeshConfig | None):
    """Per-cell J2 weights and per-bond J2(bond strain) weights."""
    w_cell = np.ones(n - 1)
    w_bond = np.zeros(n)
    if mesh is not None:
        k1, k2 = mesh.k1, mesh.k2
        w_cell[k1:k2 - 1] = 0.0
        for i in range(k1, k2 - 1):
            w_bond[i] += 0.5
            w_bond[i + 1] += 0.5
    return w_cell, w_bond


def _strains(u, lam):
    u = np.asarray(u, dtype=float)
    gaps = np.diff(u)
    b = gaps / lam
    c = (u[2:] - u[:-2]) / (2.0 * lam)
    return b, c


def _check_len(cfg, u):
    if len(u) != cfg.n + 1:
        raise ValueError(f"deformation must have {cfg.n + 1} entries")


def _energy(spec, cfg, u, mesh, enforce_bc):
    _check_len(cfg, u)
    if enforce_bc and not cfg.satisfies_bc(u):
        return math.inf
    b, c = _strains(u, cfg.lam)
    if np.any(b <= spec.domain_low) or np.any(c <= spec.domain_low):
        return math.inf
    w_cell, w_bond = _weights(cfg.n, mesh)
    terms = np.concatenate([spec.j1(b), w_cell * spec.j2(c), (w_bond * spec.j2(b))[w_bond > 0]])
    if not np.all(np.isfinite(terms)):
        return math.inf
    return cfg.lam * math.fsum(terms.tolist())


def energy_atomistic(spec: PotentialSpec, cfg: ChainConfig, u, enforce_bc: bool = True) -> float:
    return _energy(spec, cfg, u, None, enforce_bc)


def energy_qnl(spec: PotentialSpec, cfg: ChainConfig, mesh: MeshConfig, u,
               enforce_bc: bool = True) -> float:
    return _energy(spec, cfg, u, mesh, enforce_bc)


def _full_gradient(spec, cfg, u, mesh):
    b, c = _strains(u, cfg.lam)
    if np.any(b <= spec.domain_low) or np.any(c <= spec.domain_low):
        raise DomainError("gradient requested at a deformation outside the domain")
    w_cell, w_bond = _weights(cfg.n, mesh)
    fb = spec.j1(b, 1) + w_bond * spec.j2(b, 1)
    fc = 0.5 * w_cell * spec.j2(c, 1)
    g = np.zeros(cfg.n + 1)
    g[1:] += fb
    g[:-1] -= fb
    g[2:] += fc
    g[:-2] -= fc
    return g


def _full_hessian_bands(spec, cfg, u, mesh):
    """Hessian in upper banded storage ``ab[2 + i - j, j]``."""
    b, c = _strains(u, cfg.lam)
    w_cell, w_bond = _weights(cfg.n, mesh)
    kb = (spec.j1(b, 2) + w_bond * spec.j2(b, 2)) / cfg.lam
    kc = 0.25 * w_cell * spec.j2(c, 2) / cfg.lam
    m = cfg.n + 1
    ab = np.zeros((3, m))
    diag = np.zeros(m)
    diag[1:] += kb
    diag[:-1] += kb
    diag[2:] += kc
    diag[:-2] += kc
    ab[2] = diag
    ab[1, 1:] = -kb
    ab[0, 2:] = -kc
    return ab


def grad_atomistic(spec: PotentialSpec, cfg: ChainConfig, u) -> np.ndarray:
    """Partial derivatives with respect to the free atoms ``2..n-2``."""
    return _full_gradient(spec, cfg, u, None)[2:cfg.n - 1]


def grad_qnl(spec: PotentialSpec, cfg: ChainConfig, mesh: MeshConfig, u) -> np.ndarray:
    return _full_gradient(spec, cfg, u, mesh)[2:cfg.n - 1]


# --------------------------------------------------------------------------
# repatom reduction


def lift(mesh: MeshConfig, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if len(r) != len(mesh.repatoms):
        raise ValueError("one value per repatom expected")
    return np.interp(np.arange(mesh.n + 1), np.asarray(mesh.repatoms), r)


def restrict(mesh: MeshConfig, u) -> np.ndarray:
    return np.asarray(u, dtype=float)[list(mesh.repatoms)].copy()


def interpolation_matrix(mesh: MeshConfig) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    reps = mesh.repatoms
    for j in range(len(reps) - 1):
        a, b = reps[j], reps[j + 1]
        for i in range(a, b):
            t = (i - a) / (b - a)
            rows.append(i); cols.append(j); vals.append(1.0 - t)
            if t > 0:
                rows.append(i); cols.append(j + 1); vals.append(t)
    rows.append(mesh.n); cols.append(len(reps) - 1); vals.append(1.0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n + 1, len(reps)))


def free_repatoms(mesh: MeshConfig) -> np.ndarray:
    """Positions (indices into ``mesh.repatoms``) of unconstrained repatoms."""
    pinned = {0, 1, mesh.n - 1, mesh.n}
    return np.array([j for j, t in enumerate(mesh.repatoms) if t not in pinned], dtype=int)


def reduced_energy_and_grad(spec: PotentialSpec, cfg: ChainConfig, mesh: MeshConfig, r):
    """QNL energy of ``lift(r)`` and its gradient over the free repatoms."""
    u = lift(mesh, r)
    e = energy_qnl(spec, cfg, mesh, u, enforce_bc=True)
    if not math.isfinite(e):
        return e, None
    g = interpolation_matrix(mesh).T @ _full_gradient(spec, cfg, u, mesh)
    return e, g[free_repatoms(mesh)]


# --------------------------------------------------------------------------
# first order


def first_order_energy(spec: PotentialSpec, analysis: PotentialAnalysis, cfg: ChainConfig, u,
                       mesh: MeshConfig | None = None) -> float:
    """``(E(u) - J0**(ell)) / lambda`` for the atomistic (mesh None) or QNL model."""
    _check_len(cfg, u)
    if not cfg.satisfies_bc(u):
        return math.inf
    b, c = _strains(u, cfg.lam)
    if np.any(b <= spec.domain_low) or np.any(c <= spec.domain_low):
        return math.inf
    j0ss, _ = eval_j0_star_star(analysis, spec, cfg.ell)
    w_cell, w_bond = _weights(cfg.n, mesh)
    terms = np.concatenate([spec.j1(b) - j0ss, w_cell * spec.j2(c), (w_bond * spec.j2(b))[w_bond > 0]])
    if not np.all(np.isfinite(terms)):
        return math.inf
    return math.fsum(terms.tolist())


@dataclass
class EnergyBreakdown:
    sigma: np.ndarray
    sigma_index: np.ndarray
    mu: np.ndarray
    mu_index: np.ndarray
    mu_weight: np.ndarray
    boundary_terms: dict
    first_order: float
    cell_energies: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "sigma": self.sigma.tolist(),
            "sigma_index": self.sigma_index.tolist(),
            "mu": self.mu.tolist(),
            "mu_index": self.mu_index.tolist(),
            "mu_weight": self.mu_weight.tolist(),
            "boundary_terms": dict(self.boundary_terms),
            "first_order": self.first_order,
            "cell_energies": self.cell_energies.tolist(),
        }


def cell_energies(spec: PotentialSpec, cfg: ChainConfig, u) -> np.ndarray:
    b, c = _strains(u, cfg.lam)
    return spec.j2(c) + 0.5 * (spec.j1(b[1:]) + spec.j1(b[:-1]))


def sigma_mu_breakdown(spec: PotentialSpec, analysis: PotentialAnalysis, cfg: ChainConfig,
                       u, mesh: MeshConfig | None = None) -> EnergyBreakdown:
    _check_len(cfg, u)
    n = cfg.n
    b, c = _strains(u, cfg.lam)
    if np.any(b <= spec.domain_low) or np.any(c <= spec.domain_low):
        raise DomainError("breakdown requested at a deformation outside the domain")
    ell = cfg.ell
    j0ss, dj0ss = eval_j0_star_star(analysis, spec, ell)
    cells = cell_energies(spec, cfg, u)
    sigma_all = cells - j0ss - dj0ss * (c - ell)
    if mesh is None:
        s_idx = np.arange(n - 1)
        m_idx = np.zeros(0, dtype=int)
    else:
        k1, k2 = mesh.k1, mesh.k2
        s_idx = np.concatenate([np.arange(0, k1), np.arange(k2 - 1, n - 1)])
        m_idx = np.arange(k1, k2)
    mu_w = np.ones(len(m_idx))
    if len(m_idx):
        mu_w[0] = mu_w[-1] = 0.5
    mu = spec.jcb(b[m_idx]) - j0ss - dj0ss * (b[m_idx] - ell)
    sigma = sigma_all[s_idx]
    bt = {
        "half_J1_u0": 0.5 * float(spec.j1(cfg.u0_1)),
        "half_J1_u1": 0.5 * float(spec.j1(cfg.u1_1)),
        "minus_J0ss": -j0ss,
        "tangent_correction": -dj0ss * (0.5 * (cfg.u0_1 + cfg.u1_1) - ell),
    }
    total = math.fsum(list(bt.values()) + sigma.tolist() + (mu_w * mu).tolist())
    return EnergyBreakdown(sigma, s_idx, mu, m_idx, mu_w, bt, total, cells)


# --------------------------------------------------------------------------
# serialisation


def deformation_to_csv(u, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "position"])
        for i, x in enumerate(np.asarray(u, dtype=float)):
            w.writerow([i, repr(float(x))])


def deformation_from_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["position"]) for r in rows])


def deformation_to_json(u, cfg: ChainConfig | None = None) -> str:
    payload = {"schema": 1, "u": [float(x) for x in u]}
    if cfg is not None:
        payload["chain"] = cfg.to_dict()
    return json.dumps(payload)


def deformation_from_json(text: str) -> np.ndarray:
    return np.array(json.loads(text)["u"], dtype=float)
