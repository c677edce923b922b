"""Optimise the seeded synthetic suite and report EPE-all per map.

    python3 scripts/run_suite.py --seeds 0-9 [--config configs/default.cfg]
"""
import argparse
import json

from cyclecorr import io
from cyclecorr.cycle import key_name
from cyclecorr.suite import e2e_errors, run_full


def seed_list(text):
    if "-" in text:
        lo, hi = map(int, text.split("-"))
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=seed_list, default=list(range(10)))
    ap.add_argument("--config", help="key = value file with loss and optimiser settings")
    ap.add_argument("--out", help="optional JSON report")
    args = ap.parse_args()
    weights, config = io.build_configs(io.read_config(args.config) if args.config else {})
    report = {}
    for seed in args.seeds:
        cycle, res, secs = run_full(seed, weights, config)
        errs = {key_name(k): round(v, 4) for k, v in e2e_errors(res.maps, cycle).items()}
        worst = max(errs.values())
        report[seed] = {"epe_all": errs, "seconds": secs}
        print(f"seed {seed}: max EPE-all {worst:.3f} px, {secs:.0f}s  {errs}", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)


if __name__ == "__main__":
    main()
