"""subpop-mix <gen-data|weights|train|eval|theory|compare> --config PATH [options]

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import pipeline

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
COMMANDS = ("gen-data", "weights", "train", "eval", "theory", "compare")

log = logging.getLogger("subpop_mix")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subpop-mix", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--seed-override", type=int, default=None, help="run this single seed only")
    p.add_argument("--out", default=None, help="output directory (beats config and $%s)" % cfgmod.OUT_ENV)
    p.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    p.add_argument("--checkpoint", default=None, help="eval: model checkpoint (overrides config)")
    p.add_argument("--data", default=None, help="eval: dataset CSV (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def output_dir(cfg: cfgmod.ExperimentConfig, flag: str | None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(cfgmod.OUT_ENV)
    if env:
        return Path(env)
    return cfg.resolve(cfg["output_dir"])


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        if args.seed_override is not None:
            if args.seed_override < 0:
                raise cfgmod.ConfigError(["--seed-override must be >= 0"])
            cfg.data["seeds"] = [args.seed_override]
        problems = []
        if args.command == "eval":
            ckpt = args.checkpoint or cfg["eval"].get("checkpoint")
            data = args.data or cfg["eval"].get("data")
            for name, val in (("eval.checkpoint", ckpt), ("eval.data", data)):
                if not val:
                    problems.append(f"{name}: required for the eval command")
                elif not cfg.resolve(val).exists():
                    problems.append(f"{name}: file not found: {cfg.resolve(val)}")
        if problems:
            raise cfgmod.ConfigError(problems)
    except cfgmod.ConfigError as exc:
        print(f"subpop-mix: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = output_dir(cfg, args.out)
    if args.dry_run:
        print(f"config OK: {args.command} with seeds {cfg['seeds']} -> {out}")
        return EXIT_OK

    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
        if args.command == "gen-data":
            files = pipeline.run_gen_data(cfg, out)
            print(f"wrote {len(files)} CSV files under {out / 'data'}")
        elif args.command == "weights":
            files = pipeline.run_weights(cfg, out)
            print(f"wrote {len(files)} files under {out}")
        elif args.command == "train":
            summary = pipeline.run_train(cfg, out)
            for seed, per in summary.items():
                for crit, info in per.items():
                    t = info["test"]
                    print(f"seed {seed} [{crit}] epoch {info['epoch']}: average "
                          f"{100 * t['average_accuracy']:.1f} worst {100 * t['worst_accuracy']:.1f} "
                          f"gap {100 * t['gap']:.1f}")
        elif args.command == "eval":
            m = pipeline.run_eval(cfg.resolve(args.checkpoint or cfg["eval"]["checkpoint"]),
                                  cfg.resolve(args.data or cfg["eval"]["data"]), out)
            print(f"average {100 * m.average_accuracy:.1f} worst {100 * m.worst_accuracy:.1f} "
                  f"gap {100 * m.gap:.1f}")
        elif args.command == "theory":
            report = pipeline.run_theory(cfg, out)
            print(report.table())
        elif args.command == "compare":
            pipeline.run_compare(cfg, out)
            print((out / "comparison.md").read_text())
    except (OSError, ValueError, ArithmeticError, KeyError) as exc:
        print(f"subpop-mix: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
