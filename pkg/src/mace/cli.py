"""Command line entry point: ``mace <command> --config <path> [options]``.

Exit status is 0 on success, 2 for invalid input or configuration, 3 for
numerical failures (for example a diverging training run) and 1 when a
theory check fails.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import DataError, MaceError, NumericalError

COMMANDS = ("preprocess", "train", "detect", "eval", "theory", "synth", "run")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mace", description="Multi-pattern frequency-domain anomaly detection.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="config file, or the name of a bundled config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--output-dir", help="override the config output directory")
    p.add_argument("--point-adjust", action="store_true", help="score with point-adjusted predictions")
    p.add_argument("--no-patex", action="store_true", help="use the full spectrum instead of per-service bases")
    p.add_argument("--no-dualconv-t", action="store_true", help="skip time-domain amplification")
    p.add_argument("--no-dualconv-f", action="store_true", help="use linear pooling in the autoencoder")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args: argparse.Namespace) -> dict:
    out = {"seed": args.seed, "output_dir": args.output_dir}
    if args.point_adjust:
        out["point_adjust"] = True
    if args.no_patex:
        out["patex"] = False
    if args.no_dualconv_t:
        out["dualconv_t"] = False
    if args.no_dualconv_f:
        out["dualconv_f"] = False
    return out


def _theory(cfg) -> int:
    from .theory import run_suite, write_verdicts

    verdicts = run_suite(cfg.theory_configs, cfg.theory_trials, cfg.theory_spectra, cfg.theory_seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_verdicts(out / "theory.csv", verdicts)
    for v in verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} {v.check}: {v.statistic:.6g} (threshold {v.threshold:g})")
    return 0 if all(v.passed for v in verdicts) else 1


def _report(report) -> None:
    for o in report.outcomes:
        for row in o.rows:
            print(f"{row[1]}: precision {float(row[2]):.3f} recall {float(row[3]):.3f} f1 {float(row[4]):.3f}")
        if o.error is not None:
            print(f"error: {o.error}", file=sys.stderr)
    if report.metrics_path is not None:
        print(f"macro f1 {report.macro_f1:.4f}")
        print(f"metrics: {report.metrics_path}")
    print(f"manifest: {report.manifest_path}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .bench.config import load_config
    from .bench.experiment import STAGES, exit_code, run_stages, write_synth

    try:
        cfg = load_config(args.config, **_overrides(args))
        if args.command == "theory":
            return _theory(cfg)
        if args.command == "synth":
            print(f"wrote fixture to {write_synth(cfg)}")
            return 0
        stages = STAGES if args.command == "run" else (args.command,)
        report = run_stages(cfg, stages)
        _report(report)
        return exit_code(report)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
