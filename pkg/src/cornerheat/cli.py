"""Command line front end: `cornerheat <study> [--config file.toml] [flags]`.

Configuration precedence: built-in defaults, then the flat [study] table of
the TOML file, then explicit flags. Exit codes: 0 on success, 2 when --check
finds an acceptance-band violation, 1 on any error.
"""

from __future__ import annotations

import sys

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .harness import STUDIES, StudyConfig, run_study

_FIELDS = ("levels", "dt0", "t_end", "alpha", "gamma", "out", "seed", "check")

_HELP = {
    "table1": "parabolic convergence table on the L-shape",
    "elliptic_pollution": "standard vs corrected Ritz projection rates",
    "gamma": "correction-weight search, JSON report",
    "advection_qoi": "advection QoI convergence on the notched rectangle",
    "cfl_probe": "explicit-stepping stability boundary probe",
}


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(
        prog="cornerheat",
        description="Convergence studies for corner-corrected finite "
                    "elements.")
    sub = parser.add_subparsers(dest="study", required=True, metavar="study")
    for study in STUDIES:
        p = sub.add_parser(study, help=_HELP[study])
        p.add_argument("--config", metavar="FILE",
                       help="TOML file with a [study] table")
        p.add_argument("--levels", type=int, help="refinement levels")
        p.add_argument("--dt0", type=float, help="level-1 time step")
        p.add_argument("--t-end", type=float, dest="t_end",
                       help="final time (default 1.0)")
        p.add_argument("--alpha", type=float,
                       help="error weight exponent (default 1 - pi/theta)")
        p.add_argument("--gamma", metavar="auto|VALUE",
                       help="correction weight (default auto: searched)")
        p.add_argument("--out", metavar="PATH",
                       help="report path (.csv tables get _standard/"
                            "_corrected suffixes)")
        p.add_argument("--seed", type=int, help="recorded RNG seed")
        p.add_argument("--check", action="store_true", default=None,
                       help="exit 2 when a result leaves its expected band")
    return parser


def load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    table = data.get("study", {})
    if not isinstance(table, dict):
        raise ValueError("[study] must be a table")
    fields = {key.replace("-", "_"): value for key, value in table.items()}
    fields.pop("study", None)  # the subcommand names the study
    unknown = set(fields) - set(_FIELDS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return fields


def _print_summary(cfg: StudyConfig, result) -> None:
    if cfg.study == "gamma":
        print(result.to_json())
        return
    if cfg.study == "cfl_probe":
        import json

        print(json.dumps(result, indent=2))
        return
    for label in ("standard", "corrected"):
        print(f"# {label}")
        print(result["records"][label].to_csv(), end="")
    if cfg.study == "advection_qoi":
        print(f"# qoi_limit {result['qoi_limit']:.12e} "
              f"order {result['qoi_order']:.3f}")
        print(f"# eoc standard {result['eoc']['standard']:.4f} "
              f"corrected {result['eoc']['corrected']:.4f}")
    elif result.get("gamma") is not None:
        print(f"# gamma {result['gamma']:.12e}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        fields = {}
        if args.config:
            fields.update(load_config_file(args.config))
        for name in _FIELDS:
            value = getattr(args, name)
            if value is not None:
                fields[name] = value
        cfg = StudyConfig(study=args.study, **fields)
        result, violations = run_study(cfg)
        _print_summary(cfg, result)
        if violations:
            for line in violations:
                print(f"check failed: {line}", file=sys.stderr)
            return 2
        return 0
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
