"""Command-line entry point: ``rangecp <command> [--config FILE] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .errors import ConfigError
from .harness import (EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, CONFIG_TYPES, config_hash, execute,
                      load_config, run_config)


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rangecp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in CONFIG_TYPES:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        if name in ("bounds", "rmse"):
            s.add_argument("--sigma-grid", type=_floats)
            s.add_argument("--trials", type=int)
            s.add_argument("--geometries", type=int)
        if name == "bounds":
            s.add_argument("--anchors", type=int)
            s.add_argument("--friends", type=int)
        if name == "roc":
            s.add_argument("--duration", type=float)
    r = sub.add_parser("run", help="run a config file whose 'command' field picks the experiment")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    return p


# flag-only runs fill the fields a config file must name explicitly
_FLAG_DEFAULTS = {
    "bounds": {"sigma_grid": [0.05, 0.1, 0.2, 0.4]},
    "rmse": {"sigma_grid": [0.05, 0.1, 0.2, 0.4]},
    "simulate": {"kind": "random"},
    "protocol-trace": {"n_nodes": 6},
    "roc": {"duration": 600.0},
}
_FLAG_FIELDS = ("sigma_grid", "trials", "geometries", "anchors", "friends", "duration")


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return run_config(args.config, args.out, args.seed)
    try:
        params, out = {}, args.out
        if args.config:
            doc = load_config(args.config)
            if doc.get("command", args.command) != args.command:
                raise ConfigError(f"config is for {doc['command']!r}, not {args.command!r}")
            params = dict(doc.get("params", {}))
            if "seed" in doc:
                params["seed"] = doc["seed"]
            out = out or doc.get("out")
        for f in _FLAG_FIELDS:
            val = getattr(args, f, None)
            if val is not None:
                params[f] = val
        if not args.config:
            for k, v in _FLAG_DEFAULTS[args.command].items():
                params.setdefault(k, v)
        out = out or f"runs/{args.command}-{config_hash({'command': args.command, **params})[:8]}"
        files = execute(args.command, params, out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("\n".join(f"{out}/{f}" for f in files + ["manifest.json"]))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
