# utils.py
import os
import sys
import hashlib
from typing import List

QUIET = os.environ.get("EIV_QUIET", "0").lower() in ("1", "true", "yes")


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def ensure_dir(path: str):
    if path:
        os.makedirs(path, exist_ok=True)


def log(tag: str, *parts):
    """Print a `[tag] ...` line to stderr unless EIV_QUIET is set."""
    if QUIET:
        return
    print(f"[{tag}]", *parts, file=sys.stderr)


def parse_float_list(text: str) -> List[float]:
    if not text:
        return []
    return [float(p.strip()) for p in str(text).split(",") if p.strip()]


def parse_assignments(items) -> dict:
    """
    Parse `index=value` pairs (CLI hypothesis flags) into {int: float}.
    Accepts a list of strings, each possibly comma separated.
    """
    out = {}
    for item in items or []:
        for chunk in str(item).split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            if "=" not in chunk:
                raise ValueError(f"expected index=value, got {chunk!r}")
            key, value = chunk.split("=", 1)
            idx = int(key)
            if idx in out:
                raise ValueError(f"index {idx} given twice")
            out[idx] = float(value)
    return out
