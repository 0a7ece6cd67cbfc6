"""Extended-precision polishing of chain minimisers.

The atomistic/QNL energy gap decays roughly like ``exp(-c k1)`` and drops
below double precision already for moderate atomistic windows. Starting from
a double-precision minimiser, a few Newton steps in ``mpmath`` arithmetic
recover the minimum energy to as many digits as requested.
"""

from __future__ import annotations

import mpmath

from .minimize import ChainModel
from .potentials import LENNARD_JONES


def default_digits(model: ChainModel) -> int:
    k1 = model.mesh.k1 if model.mesh is not None else int(round(model.cfg.n ** 0.5))
    return 40 + 8 * k1


def _pot(spec):
    k1, k2 = mpmath.mpf(spec.k1), mpmath.mpf(spec.k2)
    if spec.kind == LENNARD_JONES:
        def j1(z):
            i6 = z ** -6
            return (k1 * i6 * i6 - k2 * i6,
                    (-12 * k1 * i6 * i6 + 6 * k2 * i6) / z,
                    (156 * k1 * i6 * i6 - 42 * k2 * i6) / (z * z))
    else:
        d1 = mpmath.mpf(spec.delta1)

        def j1(z):
            e = mpmath.exp(-k2 * (z - d1))
            return k1 * (e * e - 2 * e), 2 * k1 * k2 * e * (1 - e), 2 * k1 * k2 * k2 * e * (2 * e - 1)

    def j2(z):
        a, b, c = j1(2 * z)
        return a, 2 * b, 4 * c

    return j1, j2


class _MPModel:
    def __init__(self, model: ChainModel):
        cfg, mesh = model.cfg, model.mesh
        n = cfg.n
        self.n = n
        self.lam = mpmath.mpf(1) / n
        self.j1, self.j2 = _pot(model.spec)
        self.w_cell = [1] * (n - 1)
        self.w_bond = [0] * n
        if mesh is not None:
            half = mpmath.mpf(1) / 2
            for i in range(mesh.k1, mesh.k2 - 1):
                self.w_cell[i] = 0
                self.w_bond[i] += half
                self.w_bond[i + 1] += half
        reps = [int(t) for t in model.reps]
        self.reps = reps
        # interpolation weights: atom -> [(repatom position, weight)]
        self.P = [None] * (n + 1)
        for j in range(len(reps) - 1):
            a, b = reps[j], reps[j + 1]
            for i in range(a, b):
                t = mpmath.mpf(i - a) / (b - a)
                self.P[i] = [(j, 1 - t)] + ([(j + 1, t)] if i > a else [])
        self.P[n] = [(len(reps) - 1, mpmath.mpf(1))]
        self.free = [int(j) for j in model.free]
        self.pos = {j: k for k, j in enumerate(self.free)}
        ell = mpmath.mpf(cfg.ell)
        self.fixed = {0: mpmath.mpf(0), 1: self.lam * mpmath.mpf(cfg.u0_1),
                      len(reps) - 2: ell - self.lam * mpmath.mpf(cfg.u1_1), len(reps) - 1: ell}

    def lift(self, x):
        r = [None] * len(self.reps)
        for j, v in self.fixed.items():
            r[j] = v
        for k, j in enumerate(self.free):
            r[j] = x[k]
        return [mpmath.fsum(w * r[j] for j, w in self.P[i]) for i in range(self.n + 1)]

    def energy(self, u):
        lam = self.lam
        terms = []
        for i in range(self.n):
            b = (u[i + 1] - u[i]) / lam
            terms.append(self.j1(b)[0])
            if self.w_bond[i]:
                terms.append(self.w_bond[i] * self.j2(b)[0])
        for i in range(self.n - 1):
            if self.w_cell[i]:
                terms.append(self.j2((u[i + 2] - u[i]) / (2 * lam))[0])
        return lam * mpmath.fsum(terms)

    def grad_hess(self, u):
        n, lam = self.n, self.lam
        g = [mpmath.mpf(0)] * (n + 1)
        H = {}

        def add(i, k, v):
            H[(i, k)] = H.get((i, k), 0) + v

        for i in range(n):
            b = (u[i + 1] - u[i]) / lam
            _, f1, k1 = self.j1(b)
            if self.w_bond[i]:
                _, f2, k2 = self.j2(b)
                f1, k1 = f1 + self.w_bond[i] * f2, k1 + self.w_bond[i] * k2
            g[i + 1] += f1
            g[i] -= f1
            kk = k1 / lam
            add(i, i, kk); add(i + 1, i + 1, kk); add(i, i + 1, -kk); add(i + 1, i, -kk)
        for i in range(n - 1):
            if not self.w_cell[i]:
                continue
            _, f, k = self.j2((u[i + 2] - u[i]) / (2 * lam))
            g[i + 2] += f / 2
            g[i] -= f / 2
            kk = k / (4 * lam)
            add(i, i, kk); add(i + 2, i + 2, kk); add(i, i + 2, -kk); add(i + 2, i, -kk)
        # reduce to free repatoms
        m = len(self.free)
        gr = [mpmath.mpf(0)] * m
        for i in range(n + 1):
            for j, w in self.P[i]:
                if j in self.pos:
                    gr[self.pos[j]] += w * g[i]
        Hr = {}
        for (i, k), v in H.items():
            for j, w in self.P[i]:
                if j not in self.pos:
                    continue
                for jj, ww in self.P[k]:
                    if jj in self.pos:
                        key = (self.pos[j], self.pos[jj])
                        Hr[key] = Hr.get(key, 0) + w * ww * v
        return gr, Hr


def _banded_solve(H: dict, g: list):
    """Solve ``H x = g`` for symmetric positive definite banded ``H`` (LDL^T)."""
    m = len(g)
    p = max(abs(a - b) for a, b in H) if H else 0
    L = [dict() for _ in range(m)]
    D = [mpmath.mpf(0)] * m
    for i in range(m):
        for j in range(max(0, i - p), i):
            s = H.get((i, j), 0) - mpmath.fsum(L[i].get(k, 0) * L[j].get(k, 0) * D[k]
                                              for k in range(max(0, i - p), j))
            L[i][j] = s / D[j]
        D[i] = H.get((i, i), 0) - mpmath.fsum(L[i][k] ** 2 * D[k] for k in L[i])
        if D[i] <= 0:
            raise ArithmeticError("Hessian is not positive definite at the refined point")
    y = [mpmath.mpf(0)] * m
    for i in range(m):
        y[i] = g[i] - mpmath.fsum(L[i][k] * y[k] for k in L[i])
    x = [mpmath.mpf(0)] * m
    for i in reversed(range(m)):
        s = y[i] / D[i]
        for k in range(i + 1, min(m, i + p + 1)):
            s -= L[k].get(i, 0) * x[k]
        x[i] = s
    return x


def refine_energy(model: ChainModel, u, digits: int | None = None, max_iter: int = 40):
    """Minimum energy near the double-precision minimiser ``u``.

    Returns ``(energy, converged)`` with ``energy`` an ``mpmath.mpf``.
    """
    digits = digits or default_digits(model)
    with mpmath.workdps(digits + 10):
        mm = _MPModel(model)
        x = [mpmath.mpf(float(v)) for v in model.restrict(u)]
        tol = mpmath.mpf(10) ** (-digits)
        ok = False
        for _ in range(max_iter):
            uu = mm.lift(x)
            g, H = mm.grad_hess(uu)
            if max(abs(v) for v in g) <= tol:
                ok = True
                break
            step = _banded_solve(H, g)
            x = [a - b for a, b in zip(x, step)]
        e = mm.energy(mm.lift(x))
    return e, ok


def precise_gap(atomistic: ChainModel, u_atomistic, qnl: ChainModel, u_qnl, digits: int | None = None):
    """``min atomistic - min QNL`` from refined minimisers, as ``mpmath.mpf``."""
    digits = digits or max(default_digits(atomistic), default_digits(qnl))
    ea, oka = refine_energy(atomistic, u_atomistic, digits)
    eq, okq = refine_energy(qnl, u_qnl, digits)
    with mpmath.workdps(digits):
        return ea - eq, ea, eq, oka and okq
