"""On-disk formats: binary embeddings, label files, pair lists and JSON reports.

Embedding file layout (all little-endian)::

    8 bytes   magic  b"MLLEMB\\x00\\x01"
    u32       N
    u32       d
    N*d f32   row-major values

Labels live in a sibling text file (``<stem>.labels``), one integer per line.
A pairs file starts with the fold count, then one ``idx_a idx_b {0|1}`` line
per comparison; folds are contiguous blocks in file order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .metrics import PairProtocol

MAGIC = b"MLLEMB\x00\x01"
_HEADER = struct.Struct("<8sII")


def labels_path_for(path):
    return Path(path).with_suffix(".labels")


def write_embeddings(path, embeddings, labels=None):
    path = Path(path)
    emb = np.asarray(embeddings)
    if emb.ndim != 2:
        raise ValueError(f"embeddings must be N x d, got shape {emb.shape}")
    n, d = emb.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, d))
        fh.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())
    if labels is not None:
        write_labels(labels_path_for(path), labels)
    return path


def read_embeddings(path, with_labels=True):
    """Return (float64 N x d array, labels or None).

    Labels are read from the sibling file when it exists and ``with_labels``.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(path, f"file is {len(raw)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(path, f"bad magic {magic!r}; not an embedding file")
    expected = _HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise FormatError(path, f"header says {n}x{d} float32 ({expected} bytes) but file has {len(raw)} bytes")
    emb = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, d).astype(np.float64)
    labels = None
    lpath = labels_path_for(path)
    if with_labels and lpath.exists():
        labels = read_labels(lpath)
        if len(labels) != n:
            raise FormatError(lpath, f"{len(labels)} labels for {n} embeddings")
    return emb, labels


def write_labels(path, labels):
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(labels).ravel()))


def read_labels(path):
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        try:
            out.append(int(s))
        except ValueError:
            raise FormatError(path, f"expected an integer label, got {s!r}", lineno) from None
    return np.array(out, dtype=np.int64)


def read_pairs(path):
    """Parse a pairs file into a PairProtocol. Blank lines and ``#`` comments are skipped."""
    path = Path(path)
    k = None
    pairs, genuine = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        fields = s.split()
        if k is None:
            if len(fields) != 1:
                raise FormatError(path, "first line must hold the fold count alone", lineno)
            try:
                k = int(fields[0])
            except ValueError:
                raise FormatError(path, f"fold count must be an integer, got {fields[0]!r}", lineno) from None
            if k < 2:
                raise FormatError(path, f"fold count must be >= 2, got {k}", lineno)
            continue
        if len(fields) != 3:
            raise FormatError(path, f"expected 'idx_a idx_b flag', got {len(fields)} fields", lineno)
        try:
            a, b, g = (int(f) for f in fields)
        except ValueError:
            raise FormatError(path, f"non-integer field in {s!r}", lineno) from None
        if a < 0 or b < 0:
            raise FormatError(path, "pair indices must be non-negative", lineno)
        if g not in (0, 1):
            raise FormatError(path, f"genuine flag must be 0 or 1, got {g}", lineno)
        pairs.append((a, b))
        genuine.append(bool(g))
    if k is None:
        raise FormatError(path, "empty pairs file")
    if len(pairs) < k:
        raise FormatError(path, f"{len(pairs)} pairs cannot fill {k} folds")
    return PairProtocol.contiguous(np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(genuine), k)


def write_pairs(path, protocol):
    lines = [str(protocol.k)]
    lines += [f"{a} {b} {int(g)}" for (a, b), g in zip(protocol.pairs.tolist(), protocol.genuine)]
    Path(path).write_text("\n".join(lines) + "\n")


def dumps_json(obj):
    """Stable JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj))
