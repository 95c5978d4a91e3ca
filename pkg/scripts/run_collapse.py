"""Collapse a near-special hexagon family and watch the divergence line form.

H(delta) flattens onto the unit square as delta -> 0; the top edge
(0,1)-(1,1) is the divergence segment.  Prints the per-member flux
saturation and gradient growth along the candidate, the bounded probe
at the square center, and the rhombus decomposition of the limit.
"""

import argparse

import numpy as np

from towerlab.limits import (NotSpecial, detect_divergence, normalized_limit,
                             rhombus_decomposition, solve_sequence)
from towerlab.polygon import near_special_hexagon


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--deltas", type=float, nargs="+",
                    default=[0.4, 0.2, 0.1, 0.05])
    ap.add_argument("--h", type=float, default=0.05)
    ap.add_argument("--g", type=float, default=0.25)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    polys = [near_special_hexagon(d) for d in args.deltas]
    e = solve_sequence(polys, h=args.h, g=args.g, cauchy_tol=2e-2,
                       probes=[(0.5, 0.5)], workers=args.workers)
    print(f"limit: kind {e.limit.kind}, special {e.limit.special}")

    rep = detect_divergence(e)
    for tr in rep.candidates:
        seg = np.asarray(tr.segment)
        print(f"candidate ({seg[0, 0]:.3g},{seg[0, 1]:.3g})-"
              f"({seg[1, 0]:.3g},{seg[1, 1]:.3g}): verdict {tr.verdict}")
        for i, d in enumerate(args.deltas):
            print(f"  delta {d:<5g} |flux|/length {abs(tr.flux_ratio[i]):.4f}  "
                  f"sup|grad| {tr.sup_grad[i]:.2f}")
    print("probe (0.5, 0.5) sup|grad| per member: "
          + ", ".join(f"{x:.3f}" for x in rep.probe_gradients[:, 0]))

    try:
        dec = rhombus_decomposition(e.limit)
        print(f"limit decomposes into {len(dec.rhombi)} unit rhombi")
    except NotSpecial as exc:
        print(f"no rhombus decomposition: {exc}")

    nl = normalized_limit(e, (0.5, 0.5), 0.6)
    print(f"normalized window at (0.5, 0.5): tag {nl.tag}, "
          f"value range [{nl.values.min():.3f}, {nl.values.max():.3f}]")


if __name__ == "__main__":
    main()
