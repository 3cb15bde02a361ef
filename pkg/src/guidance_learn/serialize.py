"""Canonical JSON helpers.

Every artifact this package writes (checkpoints, reports, caches,
manifests) goes through `canonical_json` so that rerunning a job with
the same seed produces byte-identical files.
"""
from __future__ import annotations

import json
from typing import Any


def canonical_json(obj: Any) -> str:
    """Serialize `obj` deterministically: sorted keys, fixed separators."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_canonical_json(path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(obj))
