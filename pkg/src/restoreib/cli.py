"""``restoreib <command> [--config file.json] [--key value ...] --out dir --seed n``.

Any ``--key value`` pair not listed below overrides a config field; dotted
keys reach nested fields (``--train.epochs 5``). Values are parsed as JSON
when possible, ``a..b`` as an inclusive integer range and ``a,b`` as a list.

Exit codes: 0 success, 1 a shape/assertion check failed (see
``verdict.json``), 2 bad configuration or input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .degrade import SpecError
from .experiments import COMMANDS, parse_value, resolve_config, run_command
from .fitting import FitError
from .info import SizeCapError
from .nn import ConfigError

# option names that map onto differently named config fields
ALIASES = {"spec": "task"}


def _parse(argv: list[str]) -> tuple[argparse.Namespace, dict]:
    ap = argparse.ArgumentParser(prog="restoreib", description=__doc__.splitlines()[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog="commands: " + ", ".join(COMMANDS))
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON config file (a config.resolved.json works too)")
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--seed", type=int, help="base seed")
    ap.add_argument("--quiet", action="store_true")
    args, rest = ap.parse_known_args(argv)
    overrides = {}
    i = 0
    while i < len(rest):
        key = rest[i]
        if not key.startswith("--") or i + 1 >= len(rest):
            ap.error(f"expected --key value pairs, got {' '.join(rest[i:])!r}")
        name = ALIASES.get(key[2:], key[2:].replace("-", "_"))
        overrides[name] = parse_value(rest[i + 1])
        i += 2
    if args.command == "sweep-depth" and "task" in overrides:
        task = overrides.pop("task")
        overrides["tasks"] = task if isinstance(task, list) else [task]
    if args.seed is not None:
        overrides["seed"] = args.seed
    return args, overrides


def main(argv: list[str] | None = None) -> int:
    args, overrides = _parse(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        file_cfg = json.loads(args.config.read_text()) if args.config else None
        if file_cfg is not None:
            file_cfg.pop("command", None)
        cfg = resolve_config(args.command, file_cfg, overrides)
        res = run_command(args.command, cfg, args.out)
    except (ConfigError, SpecError, FitError, SizeCapError, FileNotFoundError, ValueError) as exc:
        print(f"restoreib {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if res.command == "synth":
        print(json.dumps(res.extras["stats"], indent=1, sort_keys=True))
    if res.command == "info-analysis":
        s = res.extras["stats"]
        print(f"I(Y;X)={s['I(Y;X)']:.6f}  I(Y;Xt)={s['I(Y;Xt)']:.6f}  I(Y;Yt)={s['I(Y;Yt)']:.6f} bits")
    if res.verdict is not None:
        for c in res.verdict.checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}")
        if not res.verdict.passed:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
