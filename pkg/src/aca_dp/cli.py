"""Command-line entry point: ``aca-dp <subcommand> [options]``."""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments
from .config import ConfigError, load_config


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aca-dp", description="Collective action under differentially private training.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="experiment config (INI)")
        p.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
        p.add_argument("--workers", type=_positive_int, help="parallel workers (overrides [run] workers)")
        p.add_argument("--seed", type=_u64, help="master seed (overrides [run] seed)")
        return p

    with_common(sub.add_parser("sweep", help="critical-mass sweep over alpha and privacy settings"))
    with_common(sub.add_parser("bound", help="compute and verify the success lower bound"))
    with_common(sub.add_parser("mia", help="likelihood-ratio membership inference"))
    p = with_common(sub.add_parser("export-signals", help="write original/signal image pairs"))
    p.add_argument("--count", type=int, default=8)

    p = sub.add_parser("accountant", help="epsilon of a subsampled Gaussian mechanism")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--q", type=float, required=True, help="sampling rate")
    p.add_argument("--steps", type=_positive_int, required=True)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--rdp-csv", type=Path, help="also write the composed RDP curve")

    p = sub.add_parser("plot", help="SVG plot of a sweep results.csv")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output .svg path or directory")
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "accountant":
            eps, order = experiments.accountant_query(args.sigma, args.q, args.steps, args.delta, args.rdp_csv)
            print(f"epsilon={eps!r} order={order if order is not None else ''} delta={args.delta!r}")
            return 0
        if args.command == "plot":
            out = args.out / "sweep.svg" if args.out.suffix != ".svg" else args.out
            print(experiments.plot_sweep(args.input, out))
            return 0
        cfg = _load(args)
        if args.command == "sweep":
            res = experiments.run_sweep(cfg)
            for row in res.critical:
                a = row["alpha_star"]
                print(f"sigma={row['sigma']:g} clip={row['clip']:g} replicate={row['replicate']} "
                      f"alpha*={'none' if a is None else f'{a:g}'}")
            bad = sum(r["status"] != "ok" for r in res.rows)
            print(f"{len(res.rows)} cells, {bad} failed; results in {cfg.out}")
            return 0 if res.all_ok else 1
        if args.command == "bound":
            rows = experiments.run_bound(cfg)
            for r in rows:
                print(f"alpha={r['alpha']:g} sigma={r['sigma']:g} clip={r['clip']:g} status={r['status']}")
            return 0 if experiments.bound_rows_ok(rows) else 1
        if args.command == "mia":
            rows = experiments.run_mia(cfg)
            for r in rows:
                auc = "nan" if r["auc"] is None else f"{r['auc']:.4f}"
                eps = r["epsilon"]
                print(f"alpha={r['alpha']:g} epsilon={'inf' if eps is not None and math.isinf(eps) else eps} "
                      f"clip={r['clip']:g} auc={auc} status={r['status']}")
            return 0 if all(r["status"] == "ok" for r in rows) else 1
        if args.command == "export-signals":
            written = experiments.export_signals(cfg, args.count)
            print(f"wrote {len(written)} files to {cfg.out}")
            return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"aca-dp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
