"""``opt-manifold`` command line.

    opt-manifold <experiment> [--config FILE] [--seed N] [--out DIR]
                 [--threads N] [--set key=value ...]

Aliases: ``ridge-run`` (ridge), ``grid-run`` (cylinder), ``baseline-run``
(plain RWMH), ``chaos-run --mode {additive,multiplicative} --transform
{none,semicircle}``.  ``--config`` also accepts a manifest written by an
earlier run, which re-runs it with the recorded settings.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 convergence or
degeneracy abort.
"""
import argparse
import json
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_DEGENERATE = 0, 2, 3, 4

NAMES = ("fig1-density", "swissroll", "ridge", "grid-linear2d", "cylinder",
         "chaos-additive", "chaos-multiplicative")
ALIASES = {"ridge-run": "ridge", "grid-run": "cylinder", "baseline-run": "baseline"}
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opt-manifold",
                                description="Run one of the burst/diffusion-map experiments.")
    p.add_argument("experiment", choices=NAMES + tuple(ALIASES) + ("chaos-run",))
    p.add_argument("--config", metavar="FILE", help="INI file or a previous manifest.json")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", metavar="DIR",
                   help="output directory (default $OPT_MANIFOLD_OUT/<experiment> or runs/<experiment>)")
    p.add_argument("--threads", type=int, metavar="N", help="BLAS thread budget")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--mode", choices=("additive", "multiplicative"), help="chaos-run only")
    p.add_argument("--transform", choices=("none", "semicircle"), help="chaos-run only")
    return p


def _experiment(args) -> str:
    if args.experiment == "chaos-run":
        return f"chaos-{args.mode or 'additive'}"
    if args.mode or args.transform:
        raise ValueError("--mode/--transform only apply to chaos-run")
    return ALIASES.get(args.experiment, args.experiment)


def _file_layer(path, experiment, config):
    if path is None:
        return None
    if str(path).endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                man = json.load(fh)
        except (OSError, ValueError) as exc:
            raise config.ConfigError(f"cannot read manifest {path}: {exc}") from exc
        if man.get("experiment") != experiment:
            raise config.ConfigError(f"manifest {path} is for {man.get('experiment')!r}, "
                                     f"not {experiment!r}")
        return {k: v for k, v in man["config"].items()}
    return config.read_ini(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("opt-manifold: error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        # only effective when the BLAS has not been loaded yet, i.e. from the console script
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    import numpy as np

    from . import config
    from .errors import ContractError, DegeneracyError, NumericalError
    from .experiments import run_experiment

    try:
        name = _experiment(args)
    except ValueError as exc:
        print(f"opt-manifold: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        flags = {}
        if args.seed is not None:
            flags["seed"] = args.seed
        if args.transform is not None:
            flags["chaos.transform"] = args.transform
        cfg = config.resolve(name, _file_layer(args.config, name, config),
                             config.parse_set(args.set), flags)
        manifest = run_experiment(name, cfg, args.out, args.threads)
    except (ContractError, config.ConfigError) as exc:
        print(f"opt-manifold {name}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"opt-manifold {name}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DegeneracyError as exc:
        print(f"opt-manifold {name}: aborted: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    out = args.out or os.path.join(os.environ.get("OPT_MANIFOLD_OUT") or "runs", name)
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True))
    print(f"wrote {len(manifest['outputs'])} files and manifest.json to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
