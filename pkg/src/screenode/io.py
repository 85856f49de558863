"""File formats: JSON schemas, CSV writers/readers, array checkpoints."""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from .errors import ConfigError

_NUM_LIST = {"type": "array", "items": {"type": "number"}}

GRN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "GrnSpec",
    "type": "object",
    "required": ["interaction", "degradation", "baseline"],
    "properties": {
        "n_genes": {"type": "integer", "minimum": 1},
        "interaction": {"type": "array", "items": _NUM_LIST},
        "basal": {"oneOf": [_NUM_LIST, {"type": "null"}]},
        "degradation": _NUM_LIST,
        "max_rate": _NUM_LIST,
        "baseline": _NUM_LIST,
        "media_input": {"type": "object", "additionalProperties": _NUM_LIST},
        "activation": {
            "type": "object",
            "properties": {"kind": {"enum": ["sigmoid"]}, "gain": {"type": "number"}},
        },
        "interfere_factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "activate_factor": {"type": "number", "exclusiveMinimum": 1},
        "differentiation": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["block", "shift"],
                    "properties": {
                        "block": {"type": "array", "items": {"type": "integer"}},
                        "shift": _NUM_LIST,
                        "rate": {"type": "number"},
                        "driver": {"type": ["integer", "null"]},
                        "jitter": {"type": "number", "minimum": 0},
                    },
                },
            ]
        },
    },
}


def validate_grn_json(rec: Mapping) -> None:
    try:
        jsonschema.validate(dict(rec), GRN_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid network spec: {exc.message}") from None


def fmt(x) -> str:
    """Shortest round-trip text for a number."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """CSV text with ``\\n`` line ends; text fields are quoted only when needed."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def gene_header(n_genes: int) -> list[str]:
    return [f"g{i}" for i in range(n_genes)]


def read_table(path, leading: Sequence[str], integer: bool = False):
    """Read a CSV whose first columns are ``leading`` and the rest ``g0..``.

    Returns ``(leading_columns: dict[str, list[str]], matrix)``. Raises
    ConfigError with a row/column diagnostic on malformed input.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        if header[: len(leading)] != list(leading):
            raise ConfigError(f"{path}: header must start with {','.join(leading)}")
        genes = header[len(leading):]
        if genes != gene_header(len(genes)) or not genes:
            raise ConfigError(f"{path}: gene columns must be g0..g{{n-1}}")
        cols = {k: [] for k in leading}
        values = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ConfigError(f"{path}: row {lineno} has {len(row)} columns, expected {len(header)}")
            for k, v in zip(leading, row):
                cols[k].append(v)
            try:
                vals = [int(v) if integer else float(v) for v in row[len(leading):]]
            except ValueError:
                for j, v in enumerate(row[len(leading):]):
                    try:
                        int(v) if integer else float(v)
                    except ValueError:
                        raise ConfigError(
                            f"{path}: row {lineno}, column {genes[j]}: cannot parse {v!r}"
                        ) from None
                raise
            values.append(vals)
    dtype = np.int64 if integer else float
    return cols, np.array(values, dtype=dtype).reshape(len(values), len(genes))


def save_arrays(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    """Shape-tagged JSON checkpoint; floats round-trip exactly."""
    rec = {
        "format": "screenode-arrays/1",
        "meta": dict(meta or {}),
        "arrays": {
            k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=float).ravel().tolist()}
            for k, v in sorted(arrays.items())
        },
    }
    write_text_atomic(path, dump_json(rec))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    rec = json.loads(Path(path).read_text())
    if rec.get("format") != "screenode-arrays/1":
        raise ConfigError(f"{path}: not a screenode array checkpoint")
    arrays = {
        k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in rec["arrays"].items()
    }
    return arrays, rec.get("meta", {})
