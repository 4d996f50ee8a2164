"""Child processes that speak the flag-in / metric-line-out protocol."""

from __future__ import annotations

import json
import sys


def parse_flags(argv: list[str] | None = None) -> dict[str, str]:
    """``--name=value`` arguments as a dict of strings."""
    out = {}
    for arg in sys.argv[1:] if argv is None else argv:
        if not arg.startswith("--") or "=" not in arg:
            raise SystemExit(f"unexpected argument {arg!r}; expected --name=value")
        name, value = arg[2:].split("=", 1)
        out[name] = value
    return out


def emit(metrics: dict) -> None:
    print(json.dumps(metrics), flush=True)
