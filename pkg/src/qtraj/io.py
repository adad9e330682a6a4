"""Serialization: instrument JSON, trajectory JSON Lines, moment CSV, report schemas.

Complex numbers are ``[re, im]`` pairs. Floats are written with Python's
shortest round-trip repr, so save -> load -> save is byte-identical.
"""
from __future__ import annotations

import csv
import io as _io
import json

import numpy as np

from .instrument import KrausInstrument, validate


class SchemaError(ValueError):
    """Input does not match the expected JSON layout."""


def matrix_to_json(a) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def matrix_from_json(rows) -> np.ndarray:
    try:
        a = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"matrix entries must be [re, im] number pairs: {exc}") from exc
    if a.ndim != 3 or a.shape[2] != 2 or a.shape[0] != a.shape[1]:
        raise SchemaError(f"expected a square matrix of [re, im] pairs, got shape {a.shape}")
    return a[..., 0] + 1j * a[..., 1]


def instrument_to_dict(ins: KrausInstrument) -> dict:
    out = {"d": ins.d, "k": ins.k, "kraus": [matrix_to_json(a) for a in ins.operators]}
    if ins.name:
        out["name"] = ins.name
    return out


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def instrument_to_json(ins: KrausInstrument) -> str:
    return dumps(instrument_to_dict(ins))


def instrument_from_dict(data, check: bool = True) -> KrausInstrument:
    if not isinstance(data, dict):
        raise SchemaError("instrument JSON must be an object")
    for key in ("d", "k", "kraus"):
        if key not in data:
            raise SchemaError(f"instrument JSON is missing {key!r}")
    d, k, kraus = data["d"], data["k"], data["kraus"]
    if not isinstance(d, int) or not isinstance(k, int) or not isinstance(kraus, list):
        raise SchemaError("'d' and 'k' must be integers and 'kraus' a list")
    if len(kraus) != k:
        raise SchemaError(f"'k' is {k} but {len(kraus)} operators are listed")
    ops = [matrix_from_json(m) for m in kraus]
    for i, a in enumerate(ops):
        if a.shape != (d, d):
            raise SchemaError(f"operator {i} has shape {a.shape}, expected ({d}, {d})")
    return KrausInstrument(np.array(ops), name=data.get("name", ""), check=check)


def save_instrument(ins: KrausInstrument, path) -> None:
    with open(path, "w") as fh:
        fh.write(instrument_to_json(ins))


def load_instrument_unchecked(path) -> KrausInstrument:
    """Parse an instrument file without the completeness check.

    Raises ``SchemaError`` (with line/column for malformed JSON).
    """
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return instrument_from_dict(data, check=False)


def path_rows(path, m_max: int | None = None, include_states: bool = False):
    """JSON Lines objects for steps n = 1..N of a trajectory."""
    moments = path.moment_series(m_max)
    for n in range(1, path.n_steps + 1):
        row = {
            "n": n,
            "outcome": path.word[n - 1],
            "prob": float(path.step_probs[n - 1]),
            "purity": float(path.purities[n]),
            "moments": [float(x) for x in moments[n]],
        }
        if include_states:
            row["state"] = matrix_to_json(path.states[n])
        yield row


def path_to_jsonl(path, m_max: int | None = None, include_states: bool = False) -> str:
    return "".join(
        json.dumps(row, allow_nan=False) + "\n" for row in path_rows(path, m_max, include_states)
    )


def moments_to_csv(series: np.ndarray, columns: list[str] | None = None) -> str:
    """CSV with a leading ``n`` column and one column per moment order."""
    series = np.atleast_2d(np.asarray(series, dtype=float))
    columns = columns or [f"m{m}" for m in range(1, series.shape[1] + 1)]
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", *columns])
    for n, row in enumerate(series):
        writer.writerow([n, *(repr(float(x)) for x in row)])
    return buf.getvalue()


_COMPLEX = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _COMPLEX}}

INSTRUMENT_SCHEMA = {
    "type": "object",
    "required": ["d", "k", "kraus"],
    "properties": {
        "d": {"type": "integer", "minimum": 2},
        "k": {"type": "integer", "minimum": 1},
        "name": {"type": "string"},
        "kraus": {"type": "array", "items": _MATRIX},
    },
}

STEP_SCHEMA = {
    "type": "object",
    "required": ["n", "outcome", "prob", "purity", "moments"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "outcome": {"type": "integer", "minimum": 0},
        "prob": {"type": "number", "minimum": 0, "maximum": 1},
        "purity": {"type": "number"},
        "moments": {"type": "array", "items": {"type": "number"}},
        "state": _MATRIX,
    },
}

TRAJECTORY_SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["seed", "n_steps", "final_purity", "final_moments", "classification"],
    "properties": {
        "seed": {"type": "integer"},
        "n_steps": {"type": "integer"},
        "final_purity": {"type": "number"},
        "final_moments": {"type": "array", "items": {"type": "number"}},
        "classification": {"enum": ["purifies", "non-purifying", "undecided"]},
        "n_reached": {"type": ["integer", "null"]},
    },
}

DARK_PROJECTION_SCHEMA = {
    "type": "object",
    "required": ["p", "rank", "scalars", "verified_depth", "method", "closure"],
    "properties": {
        "p": _MATRIX,
        "rank": {"type": "integer", "minimum": 1},
        "scalars": {"type": "array", "items": {"type": "number"}},
        "verified_depth": {"type": "integer", "minimum": 1},
        "method": {"enum": ["rank-one", "closure", "word-span"]},
        "closure": {"type": "array", "items": _MATRIX},
    },
}

VERIFY_SCHEMA = {
    "type": "object",
    "required": ["status"],
    "properties": {
        "status": {"enum": ["verified", "counterexample", "undecided"]},
        "dark_projection": DARK_PROJECTION_SCHEMA,
        "counterexample": {
            "type": "object",
            "required": ["word", "residual"],
            "properties": {
                "word": {"type": "array", "items": {"type": "integer"}},
                "residual": {"type": "number"},
            },
        },
        "undecided": {"type": "object"},
    },
}

DETECTION_SCHEMA = {
    "type": "object",
    "required": ["found", "n_traj", "n_plateaued", "reason", "dark_projection"],
    "properties": {
        "found": {"type": "boolean"},
        "n_traj": {"type": "integer"},
        "n_plateaued": {"type": "integer"},
        "reason": {"type": "string"},
        "dark_projection": {"oneOf": [{"type": "null"}, DARK_PROJECTION_SCHEMA]},
    },
}

DICHOTOMY_SCHEMA = {
    "type": "object",
    "required": ["alternative", "counts", "n_traj", "n_steps", "seed", "dark_projection"],
    "properties": {
        "alternative": {"enum": ["i", "ii", "undecided"]},
        "counts": {
            "type": "object",
            "required": ["purifies", "non-purifying", "undecided"],
            "additionalProperties": {"type": "integer"},
        },
        "n_traj": {"type": "integer"},
        "n_steps": {"type": "integer"},
        "seed": {"type": "integer"},
        "dark_projection": {"oneOf": [{"type": "null"}, DARK_PROJECTION_SCHEMA]},
    },
}

VALIDATE_SCHEMA = {
    "type": "object",
    "required": ["ok", "residual", "d", "k"],
    "properties": {
        "ok": {"type": "boolean"},
        "residual": {"type": "number"},
        "d": {"type": "integer"},
        "k": {"type": "integer"},
    },
}

SCHEMAS = {
    "instrument": INSTRUMENT_SCHEMA,
    "step": STEP_SCHEMA,
    "trajectory-summary": TRAJECTORY_SUMMARY_SCHEMA,
    "dark-projection": DARK_PROJECTION_SCHEMA,
    "verify": VERIFY_SCHEMA,
    "detection": DETECTION_SCHEMA,
    "dichotomy": DICHOTOMY_SCHEMA,
    "validate": VALIDATE_SCHEMA,
}


def validation_to_dict(ins: KrausInstrument) -> dict:
    report = validate(ins)
    return {"ok": report.ok, "residual": report.residual, "d": ins.d, "k": ins.k}
