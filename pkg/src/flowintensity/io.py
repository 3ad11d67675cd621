"""Point/surface CSV files and the model archive.

Model archive (JSON, ``format = "flowintensity-model"``, ``version = 1``):

    dim, n_layers, kind, M, hidden   structure of the transport stack
    bounds                           {"lo": [...], "hi": [...], "padding": p}
    mu_hat                           integrated-intensity estimate
    parameters                       list of {"layer", "dim", "group", "shape", "values"}
    fit                              {"seed", "iterations", "learning_rate", "final_objective"}

Floats are written with ``repr`` so every parameter round-trips exactly.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from importlib import resources

import numpy as np

from .estimate import FittedIntensity
from .flow import SublayerKind, TransportStack, stack_layout
from .diffkit import ParamVector
from .pattern import DomainBounds, GridSurface, PointPattern

FORMAT = "flowintensity-model"
VERSION = 1


class DataError(ValueError):
    """Unreadable or malformed input data."""


class ArchiveError(DataError):
    def __init__(self, field, detail):
        super().__init__(f"model archive field {field!r}: {detail}")
        self.field = field


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    return repr(float(v))


def _rows_to_csv(header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def quakes_path():
    return str(resources.files("flowintensity") / "data" / "quakes.csv")


def parse_points(path, columns=None, bounds=None):
    """Read events from a headered CSV.

    ``columns`` selects columns by name (default: every column). Bounds are
    inferred from the coordinate ranges unless given.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty file")
            header = [h.strip() for h in header]
            if columns is None:
                columns = header
            missing = [c for c in columns if c not in header]
            if missing:
                raise DataError(f"{path}: missing column(s) {missing}; have {header}")
            idx = [header.index(c) for c in columns]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                try:
                    rows.append([float(row[i]) for i in idx])
                except (ValueError, IndexError):
                    raise DataError(f"{path}: non-numeric or missing value on row {lineno}") from None
    except OSError as err:
        raise DataError(f"{path}: {err.strerror}") from err
    pts = np.array(rows, dtype=float).reshape(-1, len(columns))
    if bounds is None:
        if pts.shape[0] == 0:
            raise DataError(f"{path}: empty pattern")
        try:
            return PointPattern.from_points(pts)
        except ValueError as err:
            raise DataError(f"{path}: {err}") from err
    return PointPattern(pts, bounds)


def write_points(path, pattern, names=None):
    names = names or [f"x{k + 1}" for k in range(pattern.dim)]
    atomic_write_text(path, _rows_to_csv(names, pattern.points))


def write_surface(path, surface, value_name="value"):
    names = [f"x{k + 1}" for k in range(surface.bounds.dim)] + [value_name]
    atomic_write_text(path, _rows_to_csv(names, surface.rows()))


def read_surface(path):
    """Inverse of :func:`write_surface`: (coordinates, values) arrays."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]


def model_to_dict(model):
    st = model.stack
    params = []
    for (j, k, group), (sl, shape) in st.params.layout.items():
        params.append({"layer": j, "dim": k, "group": group, "shape": list(shape),
                       "values": [float(v) for v in st.params.values[sl]]})
    return {
        "format": FORMAT,
        "version": VERSION,
        "dim": st.dim,
        "n_layers": st.n_layers,
        "kind": st.kind.name,
        "M": st.kind.M,
        "hidden": st.hidden,
        "bounds": {"lo": list(model.bounds.lo), "hi": list(model.bounds.hi),
                   "padding": model.bounds.padding},
        "mu_hat": model.mu_hat,
        "parameters": params,
        "fit": dict(model.meta),
    }


def _require(doc, field, kind):
    if field not in doc:
        raise ArchiveError(field, "missing")
    value = doc[field]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ArchiveError(field, f"expected an integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ArchiveError(field, f"expected a number, got {value!r}")
    if kind in (str, list, dict) and not isinstance(value, kind):
        raise ArchiveError(field, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise ArchiveError("<root>", "expected an object")
    if doc.get("format") != FORMAT:
        raise ArchiveError("format", f"expected {FORMAT!r}")
    version = _require(doc, "version", int)
    if version != VERSION:
        raise ArchiveError("version", f"unsupported version {version} (expected {VERSION})")
    dim = _require(doc, "dim", int)
    n_layers = _require(doc, "n_layers", int)
    if dim < 1:
        raise ArchiveError("dim", "must be >= 1")
    if n_layers < 1:
        raise ArchiveError("n_layers", "must be >= 1")
    try:
        kind = SublayerKind(_require(doc, "kind", str), _require(doc, "M", int))
    except ValueError as err:
        raise ArchiveError("kind", str(err)) from None
    hidden = _require(doc, "hidden", int)
    b = _require(doc, "bounds", dict)
    try:
        bounds = DomainBounds(tuple(b["lo"]), tuple(b["hi"]), float(b.get("padding", 0.0)))
    except (KeyError, TypeError, ValueError) as err:
        raise ArchiveError("bounds", str(err)) from None
    if bounds.dim != dim:
        raise ArchiveError("bounds", f"dimension {bounds.dim} does not match dim={dim}")
    mu_hat = float(_require(doc, "mu_hat", float))
    if mu_hat < 0:
        raise ArchiveError("mu_hat", "must be non-negative")

    shapes = stack_layout(dim, n_layers, kind, hidden)
    given = {}
    for i, entry in enumerate(_require(doc, "parameters", list)):
        try:
            key = (int(entry["layer"]), int(entry["dim"]), str(entry["group"]))
            values = np.array(entry["values"], dtype=float)
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as err:
            raise ArchiveError(f"parameters[{i}]", str(err)) from None
        if key not in shapes:
            raise ArchiveError(f"parameters[{i}]", f"unexpected block {key}")
        if shape != tuple(shapes[key]) or values.size != int(np.prod(shape)):
            raise ArchiveError(f"parameters[{i}]", f"shape {shape} does not match {shapes[key]}")
        if not np.all(np.isfinite(values)):
            raise ArchiveError(f"parameters[{i}]", "non-finite value")
        given[key] = values.reshape(shape)
    missing = [k for k in shapes if k not in given]
    if missing:
        raise ArchiveError("parameters", f"missing block(s) {missing[:3]}")
    pv = ParamVector.from_blocks({k: given[k] for k in shapes})
    stack = TransportStack(dim, kind, hidden, pv)
    meta = doc.get("fit", {})
    if not isinstance(meta, dict):
        raise ArchiveError("fit", "expected an object")
    return FittedIntensity(stack, mu_hat, bounds, np.zeros(0), dict(meta))


def save_model(path, model):
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise DataError(f"{path}: {err.strerror}") from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ArchiveError("<document>", f"truncated or invalid JSON ({err.msg} at char {err.pos})") from None
    return model_from_dict(doc)
