"""Minimal PLY 1.0 reader/writer for vertex-only point clouds.

Written vertices carry ``x y z nx ny nz red green blue`` in that order
(float32 positions, zero float32 normals, uint8 colors), which is what
common Gaussian-splatting initializers expect. ``include_confidence``
appends a float32 ``confidence`` property after ``blue``.
"""

import numpy as np

from .exceptions import ParseError
from .pointcloud import DEFAULT_COLOR, PointCloud

__all__ = ["export_ply", "import_ply"]

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_VERTEX_PROPS = [
    ("x", "f4"), ("y", "f4"), ("z", "f4"),
    ("nx", "f4"), ("ny", "f4"), ("nz", "f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
]
_PLY_NAMES = {"f4": "float", "u1": "uchar"}


def _vertex_table(pc, include_confidence):
    props = list(_VERTEX_PROPS) + ([("confidence", "f4")] if include_confidence else [])
    table = np.zeros(len(pc), dtype=[(n, t) for n, t in props])
    for i, name in enumerate("xyz"):
        table[name] = pc.points[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        table[name] = pc.colors[:, i]
    if include_confidence:
        table["confidence"] = pc.confidence
    return props, table


def export_ply(pc, sink, encoding="binary_little_endian", include_confidence=False):
    """Write ``pc`` to a binary stream as PLY."""
    if encoding not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY encoding {encoding!r}")
    props, table = _vertex_table(pc, include_confidence)
    header = ["ply", f"format {encoding} 1.0", f"element vertex {len(pc)}"]
    header += [f"property {_PLY_NAMES[t]} {n}" for n, t in props]
    header.append("end_header")
    sink.write(("\n".join(header) + "\n").encode("ascii"))
    if encoding == "binary_little_endian":
        sink.write(table.astype(table.dtype.newbyteorder("<")).tobytes())
        return
    if len(pc) == 0:
        return
    row_fmt = " ".join("%.9g" if t == "f4" else "%d" for _, t in props) + "\n"
    columns = [
        table[n].astype(np.float64) if t == "f4" else table[n].astype(np.int64) for n, t in props
    ]
    flat = np.empty((len(pc), len(props)), dtype=object)
    for j, col in enumerate(columns):
        flat[:, j] = col.tolist()
    sink.write(((row_fmt * len(pc)) % tuple(flat.ravel().tolist())).encode("ascii"))


def _read_header(data):
    if not data.startswith(b"ply\n") and not data.startswith(b"ply\r\n"):
        raise ParseError("missing 'ply' magic string", offset=0)
    end = data.find(b"end_header")
    if end < 0:
        raise ParseError("header has no end_header line", offset=0)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements = []
    offset = 0
    for raw in data[:body_start].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        words = line.split()
        if not words or words[0] in ("ply", "comment", "obj_info", "end_header"):
            pass
        elif words[0] == "format":
            if len(words) != 3 or words[2] != "1.0":
                raise ParseError(f"bad format line {line!r}", offset=offset)
            if words[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"unknown PLY format {words[1]!r}", offset=offset)
            fmt = words[1]
        elif words[0] == "element":
            try:
                elements.append([words[1], int(words[2]), []])
            except (IndexError, ValueError):
                raise ParseError(f"bad element line {line!r}", offset=offset) from None
        elif words[0] == "property":
            if not elements:
                raise ParseError("property before any element", offset=offset)
            if len(words) == 5 and words[1] == "list":
                elements[-1][2].append((words[4], None))
            elif len(words) == 3 and words[1] in _TYPES:
                elements[-1][2].append((words[2], _TYPES[words[1]]))
            else:
                raise ParseError(f"bad property line {line!r}", offset=offset)
        else:
            raise ParseError(f"unexpected header line {line!r}", offset=offset)
        offset += len(raw) + 1
    if fmt is None:
        raise ParseError("header has no format line", offset=0)
    return fmt, elements, body_start


def import_ply(source):
    """Read vertices from a PLY stream.

    Missing colors default to mid-gray and missing confidence to 1.
    Elements other than ``vertex`` are ignored as long as they do not
    precede it with list-valued properties.
    """
    data = source.read()
    fmt, elements, pos = _read_header(data)
    vertex = None
    skip_rows = 0
    for name, count, props in elements:
        if name == "vertex":
            vertex = (count, props)
            break
        if any(t is None for _, t in props):
            raise ParseError(f"cannot skip list-valued element {name!r} before vertex", offset=pos)
        skip_rows += count
        if fmt != "ascii":
            pos += count * np.dtype([(n, t) for n, t in props]).itemsize
    if vertex is None:
        raise ParseError("no vertex element", offset=pos)
    count, props = vertex
    if any(t is None for _, t in props):
        raise ParseError("list properties on vertex are not supported", offset=pos)
    names = [n for n, _ in props]
    if not {"x", "y", "z"} <= set(names):
        raise ParseError("vertex element lacks x, y, z", offset=pos)

    if fmt == "ascii":
        table = _read_ascii(data, pos, skip_rows, count, props)
    else:
        order = "<" if fmt == "binary_little_endian" else ">"
        dtype = np.dtype([(n, order + t) for n, t in props])
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise ParseError(
                f"vertex data truncated: need {need} bytes, have {len(data) - pos}", offset=len(data)
            )
        table = np.frombuffer(data, dtype=dtype, count=count, offset=pos)

    points = np.column_stack([table[c].astype(np.float64) for c in "xyz"]) if count else np.zeros((0, 3))
    if not np.all(np.isfinite(points)):
        raise ParseError("non-finite vertex coordinate", offset=pos)
    if {"red", "green", "blue"} <= set(names):
        colors = np.column_stack([table[c] for c in ("red", "green", "blue")]).astype(np.uint8)
    else:
        colors = np.tile(np.array(DEFAULT_COLOR, dtype=np.uint8), (count, 1))
    conf = table["confidence"].astype(np.float64) if "confidence" in names else np.ones(count)
    return PointCloud(points, colors, conf)


def _read_ascii(data, pos, skip_rows, count, props):
    table = np.zeros(count, dtype=[(n, t) for n, t in props])
    if count == 0:
        return table
    body = data[pos:]
    lines = body.split(b"\n")
    starts = np.concatenate([[0], np.cumsum([len(ln) + 1 for ln in lines])])
    rows = []
    row_offsets = []
    for i, ln in enumerate(lines):
        if ln.strip():
            rows.append(ln)
            row_offsets.append(pos + int(starts[i]))
            if len(rows) == skip_rows + count:
                break
    rows, row_offsets = rows[skip_rows:], row_offsets[skip_rows:]
    if len(rows) < count:
        raise ParseError(f"expected {count} vertex rows, found {len(rows)}", offset=len(data))
    width = len(props)
    try:
        values = np.array(b" ".join(rows).split(), dtype=np.float64)
    except ValueError:
        values = None
    if values is None or values.size != count * width:
        for ln, off in zip(rows, row_offsets):
            toks = ln.split()
            try:
                ok = len(toks) == width and bool([float(t) for t in toks])
            except ValueError:
                ok = False
            if not ok:
                raise ParseError(f"malformed vertex row {ln[:60]!r}", offset=off)
        raise ParseError("malformed vertex data", offset=pos)
    values = values.reshape(count, width)
    for j, (name, t) in enumerate(props):
        table[name] = values[:, j].astype(t)
    return table
