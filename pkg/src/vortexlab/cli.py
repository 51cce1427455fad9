"""Command-line entry point.

Subcommands: pde, simulate, chaos, regularity, ldp, fluct, report.
Flags: --config <path>, --seed <u64>, --out <dir>, --threads <n>.
Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentConfig, parse_pairs
from .errors import ConfigError, VortexLabError

_SUBCOMMAND_EXPERIMENT = {
    "pde": "pde_validation",
    "simulate": "simulate",
    "chaos": "chaos_rate",
    "regularity": "regularity_suite",
    "ldp": "large_deviation",
    "fluct": "fluctuation",
}


def _read_pairs(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = raw.strip()
    return pairs


def _build_config(args, experiment: str) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    if args.config is not None:
        pairs = _read_pairs(Path(args.config))
    if "experiment" in pairs and pairs["experiment"].strip() != experiment:
        raise ConfigError(
            f"config requests experiment {pairs['experiment'].strip()!r} but the "
            f"subcommand runs {experiment!r}"
        )
    pairs["experiment"] = experiment
    if args.seed is not None:
        pairs["ensemble.base_seed"] = str(args.seed)
    if args.out is not None:
        pairs["output_dir"] = args.out
    if args.threads is not None:
        pairs["threads"] = str(args.threads)
    return parse_pairs(pairs)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=str, default=None, help="key = value config file")
    sub.add_argument("--seed", type=int, default=None, help="base seed override")
    sub.add_argument("--out", type=str, default=None, help="output directory override")
    sub.add_argument("--threads", type=int, default=None, help="worker threads")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="vortexlab",
        description="Viscous point-vortex laboratory: simulation, mean-field "
        "solver, and estimate verification.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("pde", "solve the vorticity equation and validate against the closed form"),
        ("simulate", "run particle-system ensembles and write snapshots"),
        ("chaos", "measure the propagation-of-chaos rate over an N ladder"),
        ("regularity", "fit and stability-check the pointwise estimates"),
        ("ldp", "evaluate the pair functional, cancellations, and gamma"),
        ("fluct", "compare particle fluctuations against the limiting SPDE"),
    ]:
        sub = subs.add_parser(name, help=helptext)
        _add_common(sub)
    rep = subs.add_parser("report", help="render figures for an experiment directory")
    rep.add_argument("--out", type=str, required=True, help="experiment output directory")
    args = parser.parse_args(argv)

    try:
        if args.command == "report":
            from .figures import render

            made = render(args.out)
            for p in made:
                print(p)
            return 0
        cfg = _build_config(args, _SUBCOMMAND_EXPERIMENT[args.command])
        from .experiments import run

        status = run(cfg)
        if status == 0:
            print(f"ok: artifacts in {cfg.output_dir}")
        else:
            print(f"checks failed: see {cfg.output_dir}/manifest.json", file=sys.stderr)
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (VortexLabError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
