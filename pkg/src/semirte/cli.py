"""Command-line front end: ``semirte <command> --spec file.json --out dir``.

Every run writes under ``<out>/<kind>-<hash>`` where the hash is taken over
the resolved spec, so the same spec always lands in the same directory and
reproduces the same CSV bytes. Exit codes: 0 success, 2 invalid input,
3 iteration failure (or a converged state violating a guaranteed bound).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import config
from .errors import IterationError, NumericalIntegrityError, SemirteError, ValidationError

log = logging.getLogger("semirte")

EXIT_OK, EXIT_INVALID, EXIT_ITERATION = 0, 2, 3

def _parser():
    p = argparse.ArgumentParser(prog="semirte", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in config.KINDS + ("validate",):
        s = sub.add_parser(name)
        s.add_argument("--spec", required=True, help="JSON experiment spec")
        if name != "validate":
            s.add_argument("--out", default="runs", help="parent of the run directory")
        s.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads")
        s.add_argument("--quiet", action="store_true", help="warnings only, no summary")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads is None:
        return _main(args)
    with threadpool_limits(limits=max(1, args.threads)):
        return _main(args)


def _main(args):
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    base_dir = os.path.dirname(os.path.abspath(args.spec))
    try:
        spec = config.load_spec(args.spec)
    except ValidationError as exc:
        _report(exc.diagnostics, sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        diags = config.diagnose(spec, None, base_dir) if isinstance(spec, dict) else \
            ["<root>: spec must be a JSON object"]
        if not args.quiet or diags:
            _report(diags or ["ok"], sys.stdout if not diags else sys.stderr)
        return EXIT_INVALID if diags else EXIT_OK
    try:
        manifest = run(spec, args.command, args.out, base_dir)
    except ValidationError as exc:
        _report(exc.diagnostics, sys.stderr)
        return EXIT_INVALID
    except (IterationError, NumericalIntegrityError) as exc:
        print(f"error in stage {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_ITERATION
    except (SemirteError, ValueError) as exc:
        print(f"error in stage {getattr(exc, 'stage', None)}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not args.quiet:
        print(manifest["run_dir"])
        print(json.dumps(manifest["results"], indent=2, sort_keys=True))
    return EXIT_OK


def _report(lines, stream):
    for line in lines:
        print(line, file=stream)


def run(spec, kind, out="runs", base_dir="."):
    """Validate, execute and record one experiment; returns the manifest dict."""
    if not isinstance(spec, dict):
        raise ValidationError("<root>: spec must be a JSON object")
    config.validate(spec, kind, base_dir)
    resolved = config.resolve(spec, kind)
    digest = config.spec_hash(resolved)
    run_dir = os.path.join(out, f"{kind}-{digest[:12]}")
    os.makedirs(run_dir, exist_ok=True)
    from .runner import RUNNERS, Recorder

    rec = Recorder(run_dir, resolved, base_dir)
    manifest = {"tool": "semirte", "version": _version(), "kind": kind, "spec_hash": digest,
                "config": resolved, "run_dir": run_dir}
    try:
        RUNNERS[kind](rec)
    except (SemirteError, ValueError) as exc:
        exc.stage = rec.stage
        manifest["error"] = {"stage": rec.stage, "type": type(exc).__name__, "message": str(exc)}
        raise
    finally:
        manifest.update(rec.manifest_part())
        with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return manifest


def _version():
    from . import __version__
    return __version__


if __name__ == "__main__":
    sys.exit(main())
