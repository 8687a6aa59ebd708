"""Render the Mathieu stability chart and print the first-zone edge on the q_M axis."""
import argparse
from pathlib import Path

from paultrap.hill import HillParameters, bisect_stability_edge, stability_scan
from paultrap.records import stability_csv, stability_pgm, write_output


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-a", type=int, default=100)
    ap.add_argument("--n-q", type=int, default=200)
    ap.add_argument("--omega", type=float, default=2.0)
    ap.add_argument("--out", type=Path, default=Path("stability"))
    args = ap.parse_args()

    grid = stability_scan(0.0, 0.5, 0.0, 1.0, args.n_a, args.n_q, HillParameters(Omega=args.omega))
    write_output(args.out.with_suffix(".csv"), stability_csv(grid))
    write_output(args.out.with_suffix(".pgm"), stability_pgm(grid))
    edge = bisect_stability_edge(0.0, 0.5, 1.0, args.omega)
    print(f"first-zone edge at a = 0: q_M = {edge:.8f}")
    print(f"wrote {args.out.with_suffix('.csv')} and {args.out.with_suffix('.pgm')}")


if __name__ == "__main__":
    main()
