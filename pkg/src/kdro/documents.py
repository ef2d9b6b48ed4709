"""Line-oriented result documents.

Each line is ``name = <json value>``; a leading ``# kind`` line names the
document type. Floats are written with ``repr`` precision, so a document read
back reproduces every number exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SOLUTION_FIELDS = ("theta", "f0", "alpha", "points", "objective")
CERTIFICATE_FIELDS = ("worst_case_support", "worst_case_probs", "gap")


class DocumentError(ValueError):
    pass


def _plain(v):
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        # JSON has no inf/nan literals; keep them readable and parseable
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _restore(v):
    if isinstance(v, list):
        return [_restore(x) for x in v]
    if v in ("nan", "inf", "-inf"):
        return float(v)
    return v


def dumps(kind: str, fields: dict) -> str:
    lines = [f"# {kind}"]
    for name, value in fields.items():
        if "=" in name or not name.strip():
            raise DocumentError(f"bad field name {name!r}")
        lines.append(f"{name} = {json.dumps(_plain(value))}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[str | None, dict]:
    kind, out = None, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            if kind is None and lineno == 1:
                kind = s[1:].strip()
            continue
        name, sep, raw = s.partition("=")
        if not sep:
            raise DocumentError(f"line {lineno}: expected 'name = value'")
        try:
            out[name.strip()] = _restore(json.loads(raw))
        except json.JSONDecodeError as exc:
            raise DocumentError(f"line {lineno}: {exc.msg}") from None
    return kind, out


def write(path, kind: str, fields: dict) -> Path:
    path = Path(path)
    path.write_text(dumps(kind, fields))
    return path


def read(path) -> tuple[str | None, dict]:
    return loads(Path(path).read_text())


def solution_fields(sol) -> dict:
    """Fields of a DualSolution (theta may be None for fixed-loss solves)."""
    theta = [] if sol.theta is None else np.asarray(sol.theta, float)
    return {
        "theta": theta,
        "f0": sol.f0,
        "alpha": sol.f.coeffs,
        "points": sol.f.points,
        "objective": sol.objective,
        "converged": bool(sol.converged),
        "max_violation": sol.max_violation,
    }


def certificate_fields(cert) -> dict:
    dist = cert.worst_case_dist
    return {
        "dual_value": cert.dual_value,
        "worst_case_support": dist.support,
        "worst_case_probs": dist.probs,
        "gap": cert.gap_estimate,
        "feasibility_slack": cert.feasibility_slack,
        "oracle_value": cert.oracle_value,
        "source": cert.source,
    }
