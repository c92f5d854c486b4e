"""File formats.

``CFMX`` matrices: magic ``b"CFMX"``, little-endian u32 rows, u32 cols, then
row-major little-endian float64 values.  Model checkpoints are one JSON header
line followed by the CFMX blobs of every parameter in header order.
"""
import csv
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CFMX"
_HEAD = struct.Struct("<4sII")


def _matrix_bytes(A):
    A = np.atleast_2d(np.asarray(A, dtype="<f8"))
    if A.ndim != 2:
        raise ValueError("only 2-d matrices can be written")
    return _HEAD.pack(MAGIC, A.shape[0], A.shape[1]) + np.ascontiguousarray(A).tobytes()


def _read_matrix_from(buf, offset=0):
    magic, rows, cols = _HEAD.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    start = offset + _HEAD.size
    end = start + 8 * rows * cols
    if end > len(buf):
        raise ValueError("truncated CFMX matrix")
    A = np.frombuffer(buf[start:end], dtype="<f8").reshape(rows, cols).astype(float)
    return A, end


def write_matrix(path, A):
    Path(path).write_bytes(_matrix_bytes(A))


def read_matrix(path):
    return _read_matrix_from(Path(path).read_bytes())[0]


def write_csv_matrix(path, A, header=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    header = header or [f"c{j}" for j in range(A.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in A:
            w.writerow([repr(float(v)) for v in row])


def read_csv_matrix(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r if row]
    return np.array(rows, dtype=float).reshape(len(rows), len(header)), header


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def save_world(path, world, provenance=None):
    d = world.to_dict()
    if provenance:
        d["provenance"] = provenance
    dump_json(path, d)


def load_world(path):
    from .world import World

    return World.from_dict(load_json(path))


def save_dataset(out_dir, dataset, provenance=None):
    """One ``X_e{e}`` matrix per environment as CSV and CFMX, latents as CFMX."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for e, (X, Z) in enumerate(zip(dataset.X, dataset.Z)):
        write_matrix(out / f"X_e{e}.cfmx", X)
        write_csv_matrix(out / f"X_e{e}.csv", X, [f"x{j}" for j in range(X.shape[1])])
        write_matrix(out / f"Z_e{e}.cfmx", Z)
    dump_json(out / "dataset.json", {"m": dataset.m, "rows": [len(x) for x in dataset.X],
                                     "provenance": provenance or {}})


def load_dataset(in_dir):
    from .sampler import Dataset

    src = Path(in_dir)
    meta = load_json(src / "dataset.json")
    X = [read_matrix(src / f"X_e{e}.cfmx") for e in range(meta["m"] + 1)]
    Z = [read_matrix(src / f"Z_e{e}.cfmx") for e in range(meta["m"] + 1)]
    return Dataset(X, Z)


def save_checkpoint(path, model, meta):
    from .learner import ConceptModel  # noqa: F401  (type reference for readers)

    keys = sorted(model.params)
    header = dict(meta)
    header.update({
        "n_layers": model.n_layers,
        "slots": [s.tolist() for s in model.slots],
        "params": [{"name": k, "shape": list(np.shape(model.params[k]))} for k in keys],
    })
    blob = b"".join(_matrix_bytes(np.reshape(model.params[k], (1, -1))) for k in keys)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(blob)


def load_checkpoint(path):
    from .learner import ConceptModel

    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    offset = nl + 1
    params = {}
    for spec in header["params"]:
        A, offset = _read_matrix_from(raw, offset)
        params[spec["name"]] = A.reshape(spec["shape"])
    slots = [np.asarray(s, dtype=int) for s in header["slots"]]
    return ConceptModel(params, slots, header["n_layers"]), header


def save_pairs_csv(path, pairs):
    d_act, d_emb = pairs.h_false.shape[1], pairs.emb.shape[1]
    header = ([f"h_false_{j}" for j in range(d_act)] + [f"h_true_{j}" for j in range(d_act)]
              + [f"emb_{j}" for j in range(d_emb)])
    write_csv_matrix(path, np.hstack([pairs.h_false, pairs.h_true, pairs.emb]), header)


def load_pairs(path):
    """Pairs from CSV (``h_false_*``, ``h_true_*``, ``emb_*`` columns) or CFMX.

    A CFMX file holds ``[h_false | h_true | emb]`` with ``2 * d_act + d_emb``
    columns and needs ``d_act`` in a sidecar ``<path>.json``.
    """
    from .steering import PairSet

    path = Path(path)
    if path.suffix == ".cfmx":
        A = read_matrix(path)
        d_act = load_json(path.with_suffix(path.suffix + ".json"))["d_act"]
    else:
        A, header = read_csv_matrix(path)
        d_act = sum(h.startswith("h_false_") for h in header)
    return PairSet(A[:, :d_act], A[:, d_act:2 * d_act], A[:, 2 * d_act:])
