"""Helpers for the acceptance suite: a result cache keyed by the numerical
source code, and the per-criterion report lines."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

import epichange

PKG_DIR = Path(epichange.__file__).resolve().parent
CORE_FILES = ("_kernels.py", "models.py", "qmle.py", "scan.py", "critvals.py",
              "montecarlo.py", "data/critical_values.txt")
CACHE_DIR = Path(os.environ.get(
    "EPICHANGE_ACCEPTANCE_CACHE",
    Path(__file__).resolve().parents[1] / "results" / "acceptance"))

REPORT: list[str] = []


def source_digest() -> str:
    h = hashlib.sha256()
    for name in CORE_FILES:
        h.update(name.encode())
        h.update((PKG_DIR / name).read_bytes())
    return h.hexdigest()[:16]


def cached(key: str, params: dict, compute):
    """Return ``compute()``'s JSON-able result, reusing a stored run made
    with the same parameters and the same numerical source code."""
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    path = CACHE_DIR / f"{key}.json"
    digest = source_digest()
    if path.exists():
        blob = json.loads(path.read_text())
        if blob.get("digest") == digest and blob.get("params") == params:
            return blob["result"]
    result = compute()
    path.write_text(json.dumps({"digest": digest, "params": params,
                                "result": result}, indent=1, default=_jsonable))
    return json.loads(json.dumps(result, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def report(criterion: int | str, passed: bool | None, detail: str) -> None:
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    line = f"criterion {criterion}: {status} | {detail}"
    REPORT.append(line)
    print(line, flush=True)
