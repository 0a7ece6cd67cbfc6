"""Scenario runner: ``qnlchain <task> --config FILE [--out DIR] [--force] [--threads K]``.

Configs are INI files (sections ``scenario``, ``potential``, ``chain``,
``mesh``, ``limits``, ``options``) or JSON objects with the same nesting.
Numeric fields accept expressions in ``gamma``, ``delta1``, ``z0``, ``zc``
and ``inf``, e.g. ``ell = 1.5*gamma``.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import io
import json
import math
import operator
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import ChainConfig, MeshConfig, RuleInfeasible, describe_mesh, window_mesh
from .limits import MeshLimits, build_limit_table, lemma_checks, min_limit
from .minimize import ChainModel, MinimizeOptions, brute_force_oracle, global_minimize
from .potentials import PotentialSpec, check_assumptions, compute_constants, report_to_dict

TASKS = ("potential-check", "minimize", "converge", "boundary-layer", "fracture-map", "limit-compare")
CONVERGE_COLUMNS = ("n", "minAtomistic", "minQNL", "gap", "gapOverLambda", "firstOrderAtomistic",
                    "firstOrderQNL", "crackLocationAtomistic", "crackLocationQNL")
EXIT_CONFIG = 2
EXIT_TASK = 3


class ConfigError(ValueError):
    pass


class TaskError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# expressions

_BIN = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow}
_UN = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def eval_expr(text, names: dict) -> float:
    """Evaluate a numeric expression with ``+ - * / **`` and the given names."""
    if isinstance(text, (int, float)):
        return float(text)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ConfigError(f"unknown name {node.id!r} in {text!r}")
            return float(names[node.id])
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
            return _BIN[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UN:
            return _UN[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression {text!r}")

    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse {text!r}") from exc
    return ev(tree)


def _as_list(v) -> list:
    if isinstance(v, (list, tuple)):
        return list(v)
    if isinstance(v, str):
        return [p.strip() for p in v.replace(";", ",").split(",") if p.strip()]
    return [v]


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


# --------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    name: str
    potential: PotentialSpec
    ns: list
    ell: str
    u0_1: str
    u1_1: str
    mesh_rule: str = "window"
    spacings: list = field(default_factory=lambda: [2])
    k1: int | None = None
    k1_scale: float = 1.0
    limits: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    return {s: dict(cp[s]) for s in cp.sections()}


def parse_scenario(data: dict) -> Scenario:
    sc = data.get("scenario", {})
    pot = data.get("potential", {})
    ch = data.get("chain", {})
    me = data.get("mesh", {})
    try:
        kind = str(pot.get("kind", "LennardJones"))
        k1, k2 = float(pot.get("k1", 1.0)), float(pot.get("k2", 1.0))
        if kind.lower() in ("lennardjones", "lj", "lennard-jones"):
            spec = PotentialSpec.lennard_jones(k1, k2)
        elif kind.lower() == "morse":
            spec = PotentialSpec.morse(k1, k2, float(pot.get("delta1", 1.0)))
        else:
            raise ConfigError(f"unknown potential kind {kind!r}")
        ns = [int(x) for x in _as_list(ch.get("n", "64"))]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("chain.n must be strictly increasing")
        rule = str(me.get("rule", "window")).lower()
        if rule not in ("window", "full"):
            raise ConfigError(f"unknown mesh rule {rule!r}")
        spacings = [int(x) for x in _as_list(me.get("spacing", "2"))]
        if any(s < 1 for s in spacings):
            raise ConfigError("mesh spacing must be >= 1")
        k1 = me.get("k1")
        return Scenario(
            name=str(sc.get("name", "scenario")),
            potential=spec,
            ns=ns,
            ell=str(ch.get("ell", "1.5*gamma")),
            u0_1=str(ch.get("u0_1", "delta1")),
            u1_1=str(ch.get("u1_1", "gamma")),
            mesh_rule=rule,
            spacings=spacings,
            k1=None if k1 in (None, "", "auto") else int(k1),
            k1_scale=float(me.get("k1_scale", 1.0)),
            limits=dict(data.get("limits", {})),
            options=dict(data.get("options", {})),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def mesh_from_rule(sc: Scenario, n: int, spacing: int) -> MeshConfig:
    if sc.mesh_rule == "full":
        return MeshConfig.full(n, sc.k1) if sc.k1 else MeshConfig.full(n)
    return window_mesh(n, spacing, sc.k1, sc.k1_scale)


# --------------------------------------------------------------------------
# output helpers


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


class Outputs:
    def __init__(self, out_dir: Path, force: bool):
        self.dir, self.force = Path(out_dir), force
        self.written = []

    def claim(self, names):
        """Refuse to run when an output already exists and ``--force`` is off."""
        clash = [n for n in names if (self.dir / n).exists()]
        if clash and not self.force:
            raise ConfigError(f"refusing to overwrite {', '.join(clash)} in {self.dir} (use --force)")

    def write(self, name: str, text: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        if p.exists() and not self.force and p not in self.written:
            raise ConfigError(f"refusing to overwrite {p} (use --force)")
        p.write_text(text)
        self.written.append(p)

    def json(self, name: str, obj: dict):
        obj = {"schema": 1, **obj}
        self.write(name, json.dumps(_clean(obj), indent=1, sort_keys=False) + "\n")

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt_cell(v) for v in r])
        self.write(name, buf.getvalue())


def _fmt_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _summary(msg: str):
    print(msg, flush=True)


# --------------------------------------------------------------------------
# tasks


class Context:
    def __init__(self, sc: Scenario, threads: int):
        self.sc = sc
        self.spec = sc.potential
        self.analysis = compute_constants(self.spec)
        a = self.analysis
        self.names = {"gamma": a.gamma, "delta1": a.delta1, "z0": a.z0, "zc": a.zc, "inf": math.inf}
        opts = sc.options
        try:
            self.opts = MinimizeOptions(grad_tol=float(opts.get("grad_tol", 1e-10)),
                                        max_iter=int(opts.get("max_iter", 100000)),
                                        crack_strain_factor=float(opts.get("crack_strain_factor", 2.0)),
                                        threads=threads)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def value(self, text) -> float:
        return eval_expr(text, self.names)

    def chain(self, n: int) -> ChainConfig:
        try:
            return ChainConfig(n, self.value(self.sc.ell), self.value(self.sc.u0_1), self.value(self.sc.u1_1))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def mesh(self, n: int, spacing: int) -> MeshConfig:
        try:
            return mesh_from_rule(self.sc, n, spacing)
        except RuleInfeasible as exc:
            raise ConfigError(str(exc)) from exc


def task_potential_check(ctx: Context, out: Outputs) -> int:
    out.claim(["potential_check.json"])
    rep = check_assumptions(ctx.spec, ctx.analysis)
    rd = report_to_dict(rep)
    ok = all(v["pass"] for v in rd.values())
    out.json("potential_check.json", {"task": "potential-check", "name": ctx.sc.name,
                                      "potential": ctx.spec.to_dict(), "constants": ctx.analysis.to_dict(),
                                      "checks": rd, "all_pass": ok})
    failed = [k for k, v in rd.items() if not v["pass"]]
    _summary(f"potential-check {ctx.spec.kind}(k1={ctx.spec.k1:g},k2={ctx.spec.k2:g}): "
             f"{'PASS' if ok else 'FAIL'} ({len(rd) - len(failed)}/{len(rd)} checks)"
             + (f" failed: {', '.join(failed)}" if failed else ""))
    return 0 if ok else EXIT_TASK


def _solve_pair(ctx: Context, n: int, spacing: int):
    cfg = ctx.chain(n)
    mesh = ctx.mesh(n, spacing)
    ma, mq = ChainModel(ctx.spec, ctx.analysis, cfg), ChainModel(ctx.spec, ctx.analysis, cfg, mesh)
    ra = global_minimize(ma, ctx.opts)
    rq = global_minimize(mq, ctx.opts)
    return cfg, mesh, ma, mq, ra, rq


def task_minimize(ctx: Context, out: Outputs) -> int:
    models = [m.strip().lower() for m in _as_list(ctx.sc.options.get("models", "atomistic,qnl"))]
    oracle = _as_bool(ctx.sc.options.get("oracle", False))
    spacing = ctx.sc.spacings[0]
    names = [f"minimize_n{n}_{m}.json" for n in ctx.sc.ns for m in models]
    out.claim(names + [f"deformation_n{n}_{m}.csv" for n in ctx.sc.ns for m in models])
    status = 0
    for n in ctx.sc.ns:
        cfg = ctx.chain(n)
        for m in models:
            if m not in ("atomistic", "qnl"):
                raise ConfigError(f"unknown model {m!r}")
            mesh = ctx.mesh(n, spacing) if m == "qnl" else None
            model = ChainModel(ctx.spec, ctx.analysis, cfg, mesh)
            res = global_minimize(model, ctx.opts)
            d = res.to_dict()
            d.pop("schema")
            d.update(task="minimize", name=ctx.sc.name, model=m, chain=cfg.to_dict(),
                     mesh=None if mesh is None else {**mesh.to_dict(), "descriptor": describe_mesh(mesh).to_dict()})
            if oracle:
                eo, _ = brute_force_oracle(ctx.spec, ctx.analysis, cfg, mesh)
                d["oracle_energy"] = eo
                d["oracle_difference"] = res.energy - eo
            out.json(f"minimize_n{n}_{m}.json", d)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["index", "position"])
            for i, x in enumerate(res.u):
                w.writerow([i, repr(float(x))])
            out.write(f"deformation_n{n}_{m}.csv", buf.getvalue())
            cracks = ",".join(f"{b.index}:{b.region}" for b in res.cracks.bonds) or "none"
            _summary(f"minimize n={n} model={m}: energy={res.energy:.15g} first_order={res.first_order:.12g} "
                     f"cracks={cracks} converged={res.converged}")
            if not res.converged:
                status = EXIT_TASK
    return status


def _loc(res, n):
    return res.cracks.bonds[0].index / n if res.cracks.bonds else math.nan


def _gap_digits(ctx: Context):
    v = str(ctx.sc.options.get("precise_gap", "auto")).strip().lower()
    if v in ("off", "false", "no", "0"):
        return None
    if v in ("auto", "on", "true", "yes"):
        return 0
    return int(v)


def task_converge(ctx: Context, out: Outputs) -> int:
    out.claim(["converge.csv", "converge.json"])
    spacing = ctx.sc.spacings[0]
    digits = _gap_digits(ctx)
    rows, details, status = [], [], 0
    for n in ctx.sc.ns:
        cfg, mesh, ma, mq, ra, rq = _solve_pair(ctx, n, spacing)
        gap = ra.energy - rq.energy
        extra = {}
        if digits is not None:
            from .refine import precise_gap
            import mpmath
            pg, ea, eq, ok = precise_gap(ma, ra.u, mq, rq.u, digits or None)
            gap = float(pg)
            extra = {"gap_extended": mpmath.nstr(pg, 20), "refined": ok, "gap_double": ra.energy - rq.energy}
        row = [n, ra.energy, rq.energy, gap, n * gap, ra.first_order, rq.first_order, _loc(ra, n), _loc(rq, n)]
        rows.append(row)
        details.append({**dict(zip(CONVERGE_COLUMNS, row)), **extra, "spacing": spacing,
                        "k1": mesh.k1, "k2": mesh.k2,
                        "crackRegionAtomistic": ra.cracks.regions, "crackRegionQNL": rq.cracks.regions,
                        "converged": ra.converged and rq.converged})
        _summary(f"converge n={n} s={spacing}: minAtomistic={ra.energy:.15g} minQNL={rq.energy:.15g} "
                 f"gapOverLambda={n * gap:.6g} crack(A)={','.join(ra.cracks.regions) or 'none'} "
                 f"crack(QNL)={','.join(rq.cracks.regions) or 'none'}")
        if not (ra.converged and rq.converged):
            status = EXIT_TASK
    fa = [r[5] for r in rows]
    fq = [r[6] for r in rows]

    def cauchy(v):
        d = [abs(b - a) for a, b in zip(v, v[1:])]
        return d, all(y <= x for x, y in zip(d, d[1:]))

    da, ca = cauchy(fa)
    dq, cq = cauchy(fq)
    out.csv("converge.csv", CONVERGE_COLUMNS, rows)
    out.json("converge.json", {"task": "converge", "name": ctx.sc.name, "potential": ctx.spec.to_dict(),
                               "rows": details,
                               "cauchy": {"atomistic_differences": da, "atomistic_shrinking": ca,
                                          "qnl_differences": dq, "qnl_shrinking": cq}})
    return status


def task_fracture_map(ctx: Context, out: Outputs) -> int:
    out.claim(["fracture_map.csv", "fracture_map.json"])
    header = ("spacing", "n", "crackIndexAtomistic", "crackRegionAtomistic", "crackIndexQNL", "crackRegionQNL",
              "minAtomistic", "minQNL", "gapOverLambda")
    rows, status = [], 0
    atom_cache = {}
    for s in ctx.sc.spacings:
        for n in ctx.sc.ns:
            cfg = ctx.chain(n)
            if n not in atom_cache:
                atom_cache[n] = global_minimize(ChainModel(ctx.spec, ctx.analysis, cfg), ctx.opts)
            ra = atom_cache[n]
            rq = global_minimize(ChainModel(ctx.spec, ctx.analysis, cfg, ctx.mesh(n, s)), ctx.opts)
            ia = ra.cracks.indices[0] if ra.cracks.bonds else -1
            iq = rq.cracks.indices[0] if rq.cracks.bonds else -1
            ga = ra.cracks.regions[0] if ra.cracks.bonds else "none"
            gq = rq.cracks.regions[0] if rq.cracks.bonds else "none"
            rows.append([s, n, ia, ga, iq, gq, ra.energy, rq.energy, n * (ra.energy - rq.energy)])
            _summary(f"fracture-map s={s} n={n}: atomistic crack {ia} ({ga}), QNL crack {iq} ({gq}), "
                     f"gapOverLambda={n * (ra.energy - rq.energy):.6g}")
            if not (ra.converged and rq.converged):
                status = EXIT_TASK
    out.csv("fracture_map.csv", header, rows)
    out.json("fracture_map.json", {"task": "fracture-map", "name": ctx.sc.name,
                                   "rows": [dict(zip(header, r)) for r in rows]})
    return status


def _table(ctx: Context):
    lim = ctx.sc.limits
    thetas = [ctx.value(t) for t in _as_list(lim.get("thetas", f"{ctx.sc.u0_1},{ctx.sc.u1_1}"))]
    ms = {int(m) for m in _as_list(lim.get("m", "0,1,2,5"))}
    # interface gaps r_hat, l_hat need B_IF(gap - 1)
    for _, ml in _mesh_limit_sets(ctx):
        ms.update(int(g) - 1 for g in (ml.r_hat, ml.l_hat) if math.isfinite(g))
    ms = sorted(ms)
    tol = float(lim.get("tol", 1e-10))
    tab = build_limit_table(ctx.spec, ctx.analysis, thetas, ms, tol)
    return tab, thetas


def task_boundary_layer(ctx: Context, out: Outputs) -> int:
    out.claim(["boundary_layers.json", "boundary_layers.csv"])
    tab, thetas = _table(ctx)
    checks = lemma_checks(tab, ctx.spec)
    d = tab.to_dict(ctx.spec)
    d.pop("schema")
    results = [tab.B_gamma, *tab.B_elastic.values(), *tab.Bb.values(), *tab.B_IF_results.values()]
    conv = all(r.converged for r in results)
    out.json("boundary_layers.json", {"task": "boundary-layer", "name": ctx.sc.name,
                                      "potential": ctx.spec.to_dict(), **d, "all_converged": conv,
                                      "checks": {k: {"pass": p, "margin": m} for k, (p, m) in checks.items()}})
    out.write("boundary_layers.csv", tab.to_csv(ctx.spec))
    nfail = sum(not p for p, _ in checks.values())
    _summary(f"boundary-layer {ctx.spec.kind}: B_gamma={tab.B_gamma.value:.12g} B_IJ={tab.B_IJ:.12g} "
             f"converged={conv} checks {len(checks) - nfail}/{len(checks)} pass")
    return 0 if conv and nfail == 0 else EXIT_TASK


def _mesh_limit_sets(ctx: Context) -> list[tuple[str, MeshLimits]]:
    lim = ctx.sc.limits
    if any(k in lim for k in ("r_hat", "l_hat", "b0", "b1", "interior")):
        v = ctx.value
        ml = MeshLimits(v(lim.get("r_hat", 2)), v(lim.get("l_hat", 2)), v(lim.get("b0", 2)), v(lim.get("b1", 2)),
                        tuple(v(x) for x in _as_list(lim.get("interior", "2"))))
        return [("custom", ml)]
    out = []
    for s in ctx.sc.spacings:
        out.append((f"spacing={s}", MeshLimits(s, s, s, s, (s,))))
    return out


def task_limit_compare(ctx: Context, out: Outputs) -> int:
    out.claim(["limit_compare.json", "limit_compare.csv"])
    tab, _ = _table(ctx)
    th0, th1 = ctx.value(ctx.sc.u0_1), ctx.value(ctx.sc.u1_1)
    va, ja = min_limit("Atomistic", th0, th1, tab, ctx.spec)
    records = []
    rows = [("Atomistic", "", va, ",".join(l.kind for l in ja.locations), "", "")]
    finite = _as_bool(ctx.sc.limits.get("finite_n", False))
    for label, ml in _mesh_limit_sets(ctx):
        vq, jq = min_limit("QC", th0, th1, tab, ctx.spec, ml)
        rec = {"mesh": label, "mesh_limits": ml.to_dict(), "minQC": vq, "argmin": jq.to_dict(),
               "difference_to_atomistic": va - vq}
        fo = ""
        if finite and label.startswith("spacing="):
            s = int(label.split("=")[1])
            n = ctx.sc.ns[-1]
            _, _, _, _, ra, rq = _solve_pair(ctx, n, s)
            rec["finite_n"] = {"n": n, "firstOrderAtomistic": ra.first_order, "firstOrderQNL": rq.first_order}
            fo = rq.first_order
        records.append(rec)
        rows.append(("QC", label, vq, ",".join(l.kind for l in jq.locations), va - vq, fo))
        _summary(f"limit-compare {label}: minAtomistic={va:.12g} minQC={vq:.12g} "
                 f"argmin={','.join(l.kind for l in jq.locations)} difference={va - vq:.6g}")
    out.json("limit_compare.json", {"task": "limit-compare", "name": ctx.sc.name, "theta0": th0, "theta1": th1,
                                    "minAtomistic": va, "argminAtomistic": ja.to_dict(), "qc": records})
    out.csv("limit_compare.csv", ("model", "mesh", "minimum", "argmin", "differenceToAtomistic",
                                  "finiteFirstOrderQNL"), rows)
    return 0


RUNNERS = {
    "potential-check": task_potential_check,
    "minimize": task_minimize,
    "converge": task_converge,
    "boundary-layer": task_boundary_layer,
    "fracture-map": task_fracture_map,
    "limit-compare": task_limit_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnlchain", description="Atomistic/QNL chain experiments")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", required=True, help="INI or JSON scenario file")
    p.add_argument("--out", default="qnlchain_out", help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--threads", type=int, default=1, help="worker threads for branch solves")
    return p


def run(task: str, config, out_dir, force: bool = False, threads: int = 1) -> int:
    try:
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        sc = parse_scenario(load_config(config))
        ctx = Context(sc, threads)
        return RUNNERS[task](ctx, Outputs(Path(out_dir), force))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"task error: {exc}", file=sys.stderr)
        return EXIT_TASK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.task, args.config, args.out, args.force, args.threads)


if __name__ == "__main__":
    sys.exit(main())
