"""File formats used by the command line.

Tensor dump (text, exact round-trip)::

    # cascadeim tensors v1
    meta <key> <value>
    tensor <name> <dtype> <d0,d1,...>
    <values, whitespace separated, one line>

Floats are written with ``repr`` so a dump reloads bit-identically.
"""

from __future__ import annotations

import csv
import json

import numpy as np

__all__ = [
    "save_tensors",
    "load_tensors",
    "save_embeddings",
    "load_embeddings",
    "write_seeds",
    "read_seeds",
    "write_kv",
    "read_kv",
]

_HEADER = "# cascadeim tensors v1"


def save_tensors(path, tensors, meta=None):
    lines = [_HEADER]
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {json.dumps(v)}")
    for name, arr in tensors.items():
        a = np.asarray(arr)
        kind = "int64" if np.issubdtype(a.dtype, np.integer) else "float64"
        a = a.astype(kind)
        shape = ",".join(str(d) for d in a.shape)
        lines.append(f"tensor {name} {kind} {shape}")
        lines.append(" ".join(repr(float(x)) if kind == "float64" else str(int(x))
                              for x in a.ravel()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tensors(path):
    """``(tensors, meta)`` from a dump written by :func:`save_tensors`."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != _HEADER:
        raise ValueError(f"{path}: not a tensor dump")
    tensors, meta = {}, {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = json.loads(value)
        elif line.startswith("tensor "):
            _, name, kind, shape = line.split(" ")
            dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            body = lines[i + 1].split()
            tensors[name] = np.array([float(x) if kind == "float64" else int(x) for x in body],
                                     dtype=kind).reshape(dims)
            i += 1
        elif line.strip():
            raise ValueError(f"{path}:{i + 1}: unexpected line")
        i += 1
    return tensors, meta


def save_embeddings(path, Z, labels):
    Z = np.asarray(Z, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id"] + [f"z{j}" for j in range(Z.shape[1])])
        for lab, row in zip(labels, Z):
            w.writerow([lab] + [repr(float(x)) for x in row])


def load_embeddings(path, g):
    """Embedding rows re-ordered to the graph's node ids (``node_id`` holds labels)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "node_id":
        raise ValueError(f"{path}: missing 'node_id' header")
    Z = np.zeros((g.node_count, len(rows[0]) - 1))
    seen = np.zeros(g.node_count, dtype=bool)
    for r in rows[1:]:
        v = g.node_of(r[0])
        Z[v] = [float(x) for x in r[1:]]
        seen[v] = True
    if not seen.all():
        raise ValueError(f"{path}: no embedding for {int((~seen).sum())} node(s)")
    return Z


def write_seeds(path, seeds, g):
    with open(path, "w", encoding="utf-8") as fh:
        for v in seeds:
            fh.write(f"{g.label_of(v)}\n")


def read_seeds(path, g):
    with open(path, encoding="utf-8") as fh:
        return [g.node_of(t.strip()) for t in fh if t.strip() and not t.startswith("#")]


def write_kv(path, values):
    text = "".join(f"{k}={float(v)!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                   for k, v in values.items())
    if path is None:
        return text
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def read_kv(path):
    """``key=value`` lines; '#' comments and blank lines ignored; values stay strings."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out
