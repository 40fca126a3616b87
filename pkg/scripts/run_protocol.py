"""Run the default protocol phase by phase and print the report, gates and timings.

    python3 scripts/run_protocol.py runs/default [--config scripts/smoke.cfg] [--set jobs=4]
"""
import argparse
import sys

from rls import experiment as E
from rls.config import parse_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run_dir")
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    cfg, overrides = parse_config(args.config, dict(kv.split("=", 1) for kv in args.set))
    report, timings = E.run_protocol(args.run_dir, cfg, overrides)
    print(report.summary())
    gates = E.gate_results(report)
    for name, ok, detail in gates:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print("timings: " + ", ".join(f"{k} {v:.0f}s" for k, v in timings.items()) + f", total {sum(timings.values()):.0f}s")
    sys.exit(0 if all(ok for _, ok, _ in gates) else 5)


if __name__ == "__main__":
    main()
