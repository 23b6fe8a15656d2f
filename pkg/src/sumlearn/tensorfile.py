"""Flat binary tensor files with a JSON header line.

Layout: one UTF-8 JSON line (format tag, free-form meta dict, ordered tensor
descriptors), then the raw C-order bytes of each tensor back to back. Dtypes
are stored with explicit byte order so files are portable.
"""

import json

import numpy as np

FORMAT = "tensorfile/1"


def save_tensors(path, tensors, meta=None):
    """Write an ordered mapping of name -> ndarray plus a meta dict."""
    entries = []
    arrays = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        arrays.append(arr.astype(dt, copy=False))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt.str})
    header = {"format": FORMAT, "meta": meta or {}, "tensors": entries}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for arr in arrays:
            f.write(arr.tobytes())


def load_tensors(path):
    """Read a tensor file; returns (meta, {name: ndarray})."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != FORMAT:
            raise ValueError(f"not a tensor file: {path}")
        tensors = {}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            buf = f.read(nbytes)
            if len(buf) != nbytes:
                raise ValueError(f"truncated tensor {entry['name']!r} in {path}")
            tensors[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return header["meta"], tensors


def peek_meta(path):
    """Read only the header meta dict (cheap resume checks)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
    if header.get("format") != FORMAT:
        raise ValueError(f"not a tensor file: {path}")
    return header["meta"]
