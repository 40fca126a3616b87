"""``rls-run`` command line: generate, train-rls, train-classifier, evaluate, roll-demo, check.

Exit codes: 0 ok, 2 config error, 3 missing or unreadable artifact,
4 non-finite loss, 5 acceptance gate failure (``check``).
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import experiment as E
from .config import ConfigError, describe_defaults, parse_config
from .data import ChipFileError
from .networks import CheckpointError
from .training import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL, EXIT_GATE = 0, 2, 3, 4, 5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rls-run", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--run-dir", default="runs/default", help="artifact directory (default: %(default)s)")
        sp.add_argument("--config", help="key-value config file, or a RunManifest .json to rerun exactly")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seeds", help="comma-separated classifier seeds (same as --set seeds=...)")
        return sp

    common(sub.add_parser("generate", help="write the rls-train, cls-train and cls-test chip files"))
    common(sub.add_parser("train-rls", help="train the rollable-latent autoencoder"))
    tc = common(sub.add_parser("train-classifier", help="train one classifier mode for every seed"))
    tc.add_argument("--mode", choices=E.MODES, required=True)
    ev = common(sub.add_parser("evaluate", help="back-shot accuracy, confusion matrices, consistency"))
    ev.add_argument("--modes", default=",".join(E.MODES))
    rd = common(sub.add_parser("roll-demo", help="decode one chip at evenly spaced latent rolls"))
    rd.add_argument("--steps", type=int, default=12)
    rd.add_argument("--role", default="cls-test", choices=("rls-train", "cls-train", "cls-test"))
    rd.add_argument("--index", type=int, default=0)
    rd.add_argument("--out")
    common(sub.add_parser("check", help="run the whole protocol and apply the acceptance gates"))
    sub.add_parser("defaults", help="print every config key with its default")
    return p


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError("syntax", None, f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seeds:
        out["seeds"] = args.seeds
    return out


def _load_config(args):
    overrides = _overrides(args)
    if args.config and args.config.endswith(".json"):
        snap = E.read_manifest_config(_must_exist(args.config))
        cfg, _ = parse_config(None, {**snap, **overrides})
        return cfg, overrides
    return parse_config(args.config, overrides)


def _must_exist(path):
    if not Path(path).exists():
        raise E.MissingArtifact(f"file not found: {path}")
    return path


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "defaults":
        print(describe_defaults())
        return EXIT_OK
    try:
        cfg, overrides = _load_config(args)
        run_dir = Path(args.run_dir)
        if args.command == "generate":
            man = E.generate(run_dir, cfg, overrides)
            for path, digest in man.datasets.items():
                print(f"{path}  {digest}")
        elif args.command == "train-rls":
            man = E.train_rls_phase(run_dir, cfg, overrides)
            for path, digest in man.checkpoints.items():
                print(f"{path}  {digest}")
        elif args.command == "train-classifier":
            man = E.train_classifier_phase(run_dir, cfg, args.mode, overrides)
            for path, digest in sorted(man.checkpoints.items()):
                print(f"{path}  {digest}")
        elif args.command == "evaluate":
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            bad = [m for m in modes if m not in E.MODES]
            if bad:
                raise ConfigError("range_error", "modes", f"unknown mode(s) {bad}")
            report, _ = E.evaluate(run_dir, cfg, modes, overrides)
            print(report.summary(), end="")
        elif args.command == "roll-demo":
            print(E.roll_demo(run_dir, cfg, args.steps, args.role, args.index, args.out))
        elif args.command == "check":
            t0 = time.perf_counter()
            report, timings = E.run_protocol(run_dir, cfg, overrides)
            print(report.summary())
            gates = E.gate_results(report)
            for name, ok, detail in gates:
                print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            print("timings: " + ", ".join(f"{k} {v:.0f}s" for k, v in timings.items()) + f", total {time.perf_counter() - t0:.0f}s")
            return EXIT_OK if all(ok for _, ok, _ in gates) else EXIT_GATE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ChipFileError, CheckpointError) as exc:
        print(f"missing or unreadable artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
