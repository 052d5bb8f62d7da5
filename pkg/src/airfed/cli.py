"""Command-line front end: run one experiment, write one metrics CSV."""

from __future__ import annotations

import argparse
import sys

from .experiment import load_config, run_experiment, write_metrics_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airfed",
        description="Federated training simulator with an analog over-the-air uplink.",
    )
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the metrics CSV path")
    parser.add_argument("--algo", choices=("fed_sophia", "fedavg", "fedprox"))
    parser.add_argument("--link", choices=("ota", "digital", "ideal"))
    parser.add_argument("--rounds", type=int, help="override the round count")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            with open(args.config) as fh:
                cfg = load_config(fh.read())
        else:
            cfg = load_config("")
        for name in ("seed", "out", "algo", "link", "rounds"):
            value = getattr(args, name)
            if value is not None:
                setattr(cfg, name, value)
        if cfg.rounds < 0:
            raise ValueError("rounds must be >= 0")
        rows = run_experiment(cfg)
        write_metrics_csv(rows, cfg.out)
    except (OSError, ValueError) as exc:
        print(f"airfed: {exc}", file=sys.stderr)
        return 1
    last = rows[-1].test_accuracy if rows else float("nan")
    print(
        f"{cfg.algo}/{cfg.link}: {len(rows)} rounds -> {cfg.out} "
        f"(final test accuracy {last:.4f})"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
