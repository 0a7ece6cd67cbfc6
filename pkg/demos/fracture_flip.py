"""Where does the crack go? Atomistic vs QNL chains under 50% overstretch.

With a continuum spacing of 2 the coupled model breaks at the boundary, like
the atomistic chain. With spacing 1 it prefers a crack in the continuum region
and its energy drops by a fixed amount per bond length.

    python3 demos/fracture_flip.py [n ...]
"""
import sys

from qnlchain import ChainConfig, ChainModel, PotentialSpec, compute_constants, global_minimize
from qnlchain.chain import window_mesh


def main(ns):
    spec = PotentialSpec.lennard_jones()
    a = compute_constants(spec)
    print(f"{'n':>5} {'s':>2} {'atomistic crack':>18} {'QNL crack':>18} {'n*(E_a - E_qnl)':>16}")
    for n in ns:
        cfg = ChainConfig(n, 1.5 * a.gamma, a.delta1, a.gamma)
        ra = global_minimize(ChainModel(spec, a, cfg))
        for s in (1, 2, 3):
            rq = global_minimize(ChainModel(spec, a, cfg, window_mesh(n, s)))
            ca = f"{ra.cracks.indices[0]} {ra.cracks.regions[0]}"
            cq = f"{rq.cracks.indices[0]} {rq.cracks.regions[0]}"
            print(f"{n:5d} {s:2d} {ca:>18} {cq:>18} {n * (ra.energy - rq.energy):16.10f}")


if __name__ == "__main__":
    main([int(x) for x in sys.argv[1:]] or [64, 128, 256])
