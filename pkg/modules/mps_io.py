# ============================================================
# mps_io.py
# Fixed-format MPS writer and the matching reader.
#
# Layout written:
#   NAME / ROWS / COLUMNS (MARKER INTORG..INTEND around binary
#   runs) / RHS / BOUNDS (BV for binaries) / ENDATA
#
# Names longer than 8 characters are replaced by _C000001 /
# _R000001 style codes; the original names and the metadata tags
# go to a JSON sidecar so parse(export(x)) rebuilds x exactly.
# Numbers use repr() so no precision is lost.
# ============================================================

import gzip
import io
import logging
import os
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse

from modules.errors import FormulationError
from modules.milp_instance import BINARY, CONTINUOUS, MilpInstance
from modules.utils import read_json, write_json

logger = logging.getLogger(__name__)

NAME_WIDTH = 8
OBJ_ROW = "OBJ"
RHS_SET = "RHS"
BND_SET = "BND"


def _num(value: float) -> str:
    value = float(value)
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _mangle(names, prefix, reserved):
    """Short names unchanged; long ones become prefix + zero-padded position."""
    out = []
    taken = set(n for n in names if len(n) <= NAME_WIDTH and " " not in n) | set(reserved)
    for i, name in enumerate(names):
        if len(name) <= NAME_WIDTH and " " not in name and name not in reserved:
            out.append(name)
            continue
        code = f"{prefix}{i + 1:06d}"
        if code in taken:
            raise FormulationError(f"MPS name code {code} collides with an existing name.")
        taken.add(code)
        out.append(code)
    return out


def _line(*fields):
    """Fixed columns: 2-3 type, 5-12 name, 15-22 name, 25-36 value, 40-47 name, 50-61 value."""
    code, name1, name2, val2, name3, val3 = (list(fields) + [""] * 6)[:6]
    text = f" {code:<2} {name1:<8}  {name2:<8}  {val2:>12}"
    if name3:
        text += f"   {name3:<8}  {val3:>12}"
    return text.rstrip()


def export_mps(instance: MilpInstance) -> Tuple[str, Dict]:
    """
    Render `instance` as fixed-format MPS text.

    Returns (text, name_map) where name_map holds the original names and
    metadata keyed by the names used in the file.
    """
    col_names = _mangle(instance.var_names, "_C", {"MARKER"})
    row_names = _mangle(instance.row_names, "_R", {OBJ_ROW})
    name_map = {
        "instance": instance.name,
        "columns": dict(zip(col_names, instance.var_names)),
        "rows": dict(zip(row_names, instance.row_names)),
        "metadata": dict(instance.metadata),
    }
    prob_name = instance.name if len(instance.name) <= NAME_WIDTH and " " not in instance.name else "PHASEBAL"

    out = io.StringIO()
    out.write(f"NAME          {prob_name}\n")
    out.write("ROWS\n")
    out.write(_line("N", OBJ_ROW) + "\n")
    for sense, name in zip(instance.senses, row_names):
        out.write(_line(sense, name) + "\n")

    out.write("COLUMNS\n")
    A = instance.A.tocsc()
    in_marker = False
    marker_id = 0
    for j, (cname, kind) in enumerate(zip(col_names, instance.var_kinds)):
        if kind == BINARY and not in_marker:
            marker_id += 1
            out.write(_line("", f"M{marker_id:07d}", "'MARKER'", "", "'INTORG'") + "\n")
            in_marker = True
        elif kind != BINARY and in_marker:
            out.write(_line("", f"M{marker_id:07d}", "'MARKER'", "", "'INTEND'") + "\n")
            in_marker = False
        entries = []
        obj = instance.objective[j]
        if obj != 0.0:
            entries.append((OBJ_ROW, obj))
        start, end = A.indptr[j], A.indptr[j + 1]
        for i, v in zip(A.indices[start:end], A.data[start:end]):
            if v != 0.0:
                entries.append((row_names[i], v))
        if not entries:
            entries.append((OBJ_ROW, 0.0))
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            if len(pair) == 2:
                out.write(_line("", cname, pair[0][0], _num(pair[0][1]), pair[1][0], _num(pair[1][1])) + "\n")
            else:
                out.write(_line("", cname, pair[0][0], _num(pair[0][1])) + "\n")
    if in_marker:
        out.write(_line("", f"M{marker_id:07d}", "'MARKER'", "", "'INTEND'") + "\n")

    out.write("RHS\n")
    for name, value in zip(row_names, instance.rhs):
        if value != 0.0:
            out.write(_line("", RHS_SET, name, _num(value)) + "\n")

    out.write("BOUNDS\n")
    for cname, kind in zip(col_names, instance.var_kinds):
        if kind == BINARY:
            out.write(_line("BV", BND_SET, cname) + "\n")
    out.write("ENDATA\n")
    return out.getvalue(), name_map


def write_mps(instance: MilpInstance, path: str) -> Tuple[str, str]:
    """Write the MPS file (gzip when path ends in .gz) and its .names.json sidecar."""
    text, name_map = export_mps(instance)
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    if path.endswith(".gz"):
        # no name, no mtime: the compressed bytes depend on the text only
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as f:
            f.write(text.encode("ascii"))
    else:
        with open(path, "w", encoding="ascii") as f:
            f.write(text)
    sidecar = path + ".names.json"
    write_json(name_map, sidecar)
    logger.info("[MPS] wrote %s (%d rows, %d columns)", path, instance.n_rows, instance.n_vars)
    return path, sidecar


def _read_text(path: str) -> str:
    if path.endswith(".gz"):
        with gzip.open(path, "rt", encoding="ascii") as f:
            return f.read()
    with open(path, "r", encoding="ascii") as f:
        return f.read()


def read_mps(path: str) -> MilpInstance:
    """Read an MPS file written by write_mps, using its sidecar when present."""
    sidecar = path + ".names.json"
    name_map = read_json(sidecar) if os.path.exists(sidecar) else None
    return parse_mps(_read_text(path), name_map)


def parse_mps(text: str, name_map: Optional[Dict] = None) -> MilpInstance:
    """
    Parse MPS text (fields split on whitespace) into a MilpInstance.

    Supports N/L/G/E rows, integer markers and BV / UP / LO / PL bounds that
    keep variables within the continuous>=0 / binary kinds.
    """
    section = None
    prob_name = "PHASEBAL"
    obj_row = None
    row_order, row_sense = [], {}
    col_order, col_entries, col_int = [], {}, {}
    rhs = {}
    binaries = set()
    upper = {}
    in_int = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            parts = raw.split()
            section = parts[0].upper()
            if section == "NAME":
                prob_name = parts[1] if len(parts) > 1 else prob_name
            elif section == "ENDATA":
                break
            elif section not in ("ROWS", "COLUMNS", "RHS", "BOUNDS"):
                raise FormulationError(f"line {lineno}: unsupported MPS section '{section}'")
            continue

        f = raw.split()
        if section == "ROWS":
            sense, name = f[0].upper(), f[1]
            if sense == "N":
                if obj_row is None:
                    obj_row = name
                continue
            if sense not in ("L", "G", "E"):
                raise FormulationError(f"line {lineno}: unknown row type '{sense}'")
            row_order.append(name)
            row_sense[name] = sense
        elif section == "COLUMNS":
            if len(f) >= 3 and f[1].strip("'").upper() == "MARKER":
                in_int = f[2].strip("'").upper() == "INTORG"
                continue
            col = f[0]
            if col not in col_entries:
                col_order.append(col)
                col_entries[col] = {}
                col_int[col] = in_int
            for k in range(1, len(f) - 1, 2):
                col_entries[col][f[k]] = float(f[k + 1])
        elif section == "RHS":
            pairs = f[1:] if len(f) % 2 == 1 else f
            for k in range(0, len(pairs) - 1, 2):
                rhs[pairs[k]] = float(pairs[k + 1])
        elif section == "BOUNDS":
            kind, col = f[0].upper(), f[2]
            if kind == "BV":
                binaries.add(col)
            elif kind == "UP":
                upper[col] = float(f[3])
            elif kind in ("LO",) and float(f[3]) == 0.0:
                continue
            elif kind == "PL":
                continue
            else:
                raise FormulationError(f"line {lineno}: bound type '{kind}' is not supported")

    kinds = []
    for col in col_order:
        is_bin = col in binaries or (col_int[col] and upper.get(col) == 1.0)
        if col_int[col] and not is_bin:
            raise FormulationError(f"column '{col}': general integers are not supported")
        if col in upper and not is_bin:
            raise FormulationError(f"column '{col}': finite upper bounds need an explicit row")
        kinds.append(BINARY if is_bin else CONTINUOUS)

    row_index = {name: i for i, name in enumerate(row_order)}
    data, ri, ci = [], [], []
    objective = np.zeros(len(col_order))
    for j, col in enumerate(col_order):
        for row, value in col_entries[col].items():
            if row == obj_row:
                objective[j] = value
            elif row in row_index:
                if value != 0.0:
                    ri.append(row_index[row])
                    ci.append(j)
                    data.append(value)
            else:
                raise FormulationError(f"column '{col}' references unknown row '{row}'")
    A = scipy.sparse.csr_matrix(
        (np.array(data, dtype=float), (np.array(ri, dtype=np.int64), np.array(ci, dtype=np.int64))),
        shape=(len(row_order), len(col_order)),
    )
    A.sort_indices()
    rhs_vec = np.array([rhs.get(name, 0.0) for name in row_order], dtype=float)

    var_names, row_names, metadata = list(col_order), list(row_order), {}
    if name_map:
        cols = name_map.get("columns", {})
        rows = name_map.get("rows", {})
        var_names = [cols.get(c, c) for c in col_order]
        row_names = [rows.get(r, r) for r in row_order]
        metadata = dict(name_map.get("metadata", {}))
        prob_name = name_map.get("instance", prob_name)

    return MilpInstance(
        name=prob_name,
        var_names=tuple(var_names),
        var_kinds=tuple(kinds),
        objective=objective,
        A=A,
        senses=tuple(row_sense[r] for r in row_order),
        rhs=rhs_vec,
        row_names=tuple(row_names),
        metadata=metadata,
    )
