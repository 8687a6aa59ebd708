"""Compare quasienergy states with split-step evolution and fit the ground coefficient E0."""
import argparse
import json

from paultrap import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--qm", type=float, default=0.3)
    ap.add_argument("--a", type=float, default=0.0)
    ap.add_argument("--steps", type=int, default=4096)
    args = ap.parse_args()
    out = "quasienergy_check.jsonl"
    code = cli.main(["oracle-check", "--a", str(args.a), "--qm", str(args.qm),
                     "--steps", str(args.steps), "--out", out])
    if code:
        raise SystemExit(code)
    with open(out) as fh:
        records = [json.loads(line) for line in fh]
    for r in records:
        print(r)


if __name__ == "__main__":
    main()
