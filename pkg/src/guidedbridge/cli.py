"""Command-line front end: ``guidedbridge run`` and ``guidedbridge compare``.

Exit codes: 0 ok, 2 config or schema error, 3 numeric failure, 4 comparison failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_COMPARE = 0, 2, 3, 4


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _Config(f"cannot read {path}: {exc}") from exc


class _Config(Exception):
    pass


def _reference_path(name):
    """Bundled reference file for ``name`` (``ref:<experiment>``) or a plain path."""
    if name.startswith("ref:"):
        from importlib.resources import files

        return files("guidedbridge") / "references" / f"{name[4:]}.json"
    return name


def build_parser():
    ap = argparse.ArgumentParser(prog="guidedbridge", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--threads", type=int, help="cap on worker threads")
    cmp_ = sub.add_parser("compare", help="compare a result with another result or a reference")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True, help="result file, reference file or ref:<experiment>")
    cmp_.add_argument("--rel-tol", type=float, default=1e-12)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .errors import ConfigError, GuidedBridgeError, SchemaError
    from .experiments import compare_results, run_experiment

    try:
        if args.command == "run":
            doc = run_experiment(_load_json(args.config), args.out, args.seed)
            print(json.dumps({"experiment": doc["experiment"], "seed": doc["seed"]}))
            return EXIT_OK
        a = _load_json(args.a)
        b = _load_json(_reference_path(args.b))
        report = compare_results(a, b, args.rel_tol)
        for name, r in report["fields"].items():
            print(f"{'PASS' if r['passed'] else 'FAIL'} {name}: {r['value']} vs {r['reference']}")
        return EXIT_OK if report["passed"] else EXIT_COMPARE
    except (_Config, ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GuidedBridgeError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
