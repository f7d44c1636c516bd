"""On-disk formats: dataset CSVs, map/model/report JSON, grid CSVs.

Every file starts with (CSV) or contains (JSON) a ``format_version`` and the
resolved configuration that produced it. Floats are written with 17
significant digits, so loading a saved file gives back identical values;
``-inf`` and ``nan`` are written as those literal tokens.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION
from .ckm_store import KEY_COLUMNS, CkmError, Dataset, TableCKM, cgm_columns, cpm_columns

MAGIC = "# ckmap "


class FormatError(ValueError):
    """Malformed input file; the message names the line and field."""


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    return "%.17g" % x


def jsonable(obj):
    """Replace non-finite floats (invalid JSON) with string tokens, recursively."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def unjson_float(x) -> float:
    return float(x)  # float("-inf") / float("nan") parse the string tokens


def dumps(doc) -> str:
    return json.dumps(jsonable(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, doc, config=None) -> None:
    body = {"format_version": FORMAT_VERSION}
    if config is not None:
        body["config"] = config
    body.update(doc)
    write_atomic(path, dumps(body))


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


# ------------------------------------------------------------------ datasets

def dataset_to_csv(ds: Dataset, config=None) -> str:
    head = {"format_version": FORMAT_VERSION, "kind": ds.kind, "meta": ds.meta}
    if config is not None:
        head["config"] = config
    lines = [MAGIC + json.dumps(jsonable(head), sort_keys=True, allow_nan=False),
             ",".join(ds.columns)]
    for k, v in zip(ds.keys, ds.values):
        lines.append(",".join(fmt(x) for x in k) + "," + ",".join(fmt(x) for x in v))
    return "\n".join(lines) + "\n"


def save_dataset(path, ds: Dataset, config=None) -> None:
    write_atomic(path, dataset_to_csv(ds, config))
    write_atomic(str(path) + ".meta.json", dumps({"format_version": FORMAT_VERSION,
                                                  "kind": ds.kind, "meta": ds.meta}))


def _kind_from_header(cols, path) -> str:
    for kind, kc in KEY_COLUMNS.items():
        if cols[: len(kc)] == kc:
            return kind
    raise FormatError(f"{path}: unrecognised header {','.join(cols)!r}")


def load_dataset(path) -> Dataset:
    path = str(path)
    meta = None
    header = None
    keys, vals = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.startswith("#"):
                if line.startswith(MAGIC) and meta is None:
                    try:
                        meta = json.loads(line[len(MAGIC):])
                    except json.JSONDecodeError as exc:
                        raise FormatError(f"{path}:{lineno}: bad metadata line: {exc.msg}") from exc
                continue
            if not line.strip():
                continue
            fields = line.split(",")
            if header is None:
                header = [f.strip() for f in fields]
                kind = _kind_from_header(header, path)
                nk = len(KEY_COLUMNS[kind])
                expect = (KEY_COLUMNS[kind] + cpm_columns() if kind == "cpm"
                          else KEY_COLUMNS[kind] + cgm_columns(len(header) - nk))
                if header != expect:
                    raise FormatError(f"{path}:{lineno}: header does not match the {kind} schema")
                continue
            if len(fields) != len(header):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(header)} columns, found {len(fields)}"
                )
            row = []
            for name, f in zip(header, fields):
                try:
                    row.append(float(f))
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: field {name!r}: cannot parse {f!r}") from None
            keys.append(row[:nk])
            vals.append(row[nk:])
    if header is None:
        raise FormatError(f"{path}: no header line")
    if meta is None:
        side = Path(path + ".meta.json")
        meta = read_json(side) if side.exists() else {"meta": {}}
    m = dict(meta.get("meta", {}))
    nv = len(header) - nk
    try:
        return Dataset(kind, np.array(keys, dtype=np.float64).reshape(-1, nk),
                       np.array(vals, dtype=np.float64).reshape(-1, nv), m)
    except CkmError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------- maps

def ckm_to_dict(ckm: TableCKM) -> dict:
    return {
        "kind": ckm.kind,
        "knn_k": ckm.knn_k,
        "idw_power": ckm.idw_power,
        "meta": ckm.meta,
        "n_entries": len(ckm),
        "keys": ckm.keys,
        "values": ckm.values,
    }


def save_ckm(path, ckm: TableCKM, config=None) -> None:
    write_json(path, ckm_to_dict(ckm), config)


def load_ckm(path) -> TableCKM:
    doc = read_json(path)
    try:
        keys = np.array([[unjson_float(x) for x in r] for r in doc["keys"]], dtype=np.float64)
        vals = np.array([[unjson_float(x) for x in r] for r in doc["values"]], dtype=np.float64)
        return TableCKM(doc["kind"], keys.reshape(len(doc["keys"]), -1),
                        vals.reshape(len(doc["values"]), -1),
                        int(doc["knn_k"]), float(doc["idw_power"]), dict(doc.get("meta", {})))
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: malformed map file: {exc!r}") from exc


def grid_to_csv(xs, ys, grid, config=None, extra=None) -> str:
    head = {"format_version": FORMAT_VERSION}
    if extra:
        head.update(extra)
    if config is not None:
        head["config"] = config
    lines = [MAGIC + json.dumps(jsonable(head), sort_keys=True, allow_nan=False), "x,y,value"]
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            lines.append(f"{fmt(x)},{fmt(y)},{fmt(grid[j, i])}")
    return "\n".join(lines) + "\n"


def table_to_csv(header, rows, config=None) -> str:
    head = {"format_version": FORMAT_VERSION}
    if config is not None:
        head["config"] = config
    out = [MAGIC + json.dumps(jsonable(head), sort_keys=True, allow_nan=False), ",".join(header)]
    for r in rows:
        out.append(",".join(fmt(v) if isinstance(v, float) else str(v) for v in r))
    return "\n".join(out) + "\n"
