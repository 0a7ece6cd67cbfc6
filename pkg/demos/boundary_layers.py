"""Tabulate the boundary-layer and jump energies for LJ and Morse chains,
then compare the limiting minimum of the atomistic and QC functionals for a
few mesh descriptors."""
import math

from qnlchain import MeshLimits, PotentialSpec, build_limit_table, compute_constants, min_limit


def show(spec):
    a = compute_constants(spec)
    tab = build_limit_table(spec, a, thetas=(a.delta1, a.gamma), m_values=(0, 1, 2))
    print(f"\n{spec.kind}  gamma={a.gamma:.12f}  J0(gamma)={a.J0gamma:.12f}")
    for name, value, n_used, trunc in tab.rows(spec):
        print(f"  {name:<28} {value: .12f}  N={n_used}")
    va, ja = min_limit("Atomistic", a.delta1, a.gamma, tab, spec)
    print(f"  atomistic limit minimum {va:.12f} jumps at {sorted(ja.jump_set)}")
    for label, ml in (("all gaps 2", MeshLimits(2, 2, 2, 2, (2,))),
                      ("interior gap 1", MeshLimits(2, 2, 2, 2, (1,))),
                      ("right interface gap 1", MeshLimits(2, 1, 2, 2, (2,))),
                      ("coarse everywhere", MeshLimits(math.inf, math.inf, math.inf, math.inf, (math.inf,)))):
        vq, jq = min_limit("QC", a.delta1, a.gamma, tab, spec, ml)
        print(f"  QC {label:<22} {vq:.12f} jumps at {sorted(jq.jump_set)}  difference {va - vq: .3e}")


if __name__ == "__main__":
    show(PotentialSpec.lennard_jones())
    show(PotentialSpec.morse(1.0, 1.0, 1.0))
