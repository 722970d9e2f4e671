"""Artifact I/O: atomic writes, feature dumps and sidecar metadata."""
from __future__ import annotations

import contextlib
import datetime as _dt
import json
import os
import tempfile

from .cwlk import SparseVector
from .graph import GraphFormatError, parse_graph
from .harness import StreamSample


@contextlib.contextmanager
def atomic_open(path, mode="w", encoding="utf-8"):
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = os.fspath(path)
    if os.path.exists(path) and not os.path.isfile(path):
        # devices and pipes (/dev/stdout, /dev/null, fifos) cannot be renamed over
        with open(path, mode, **({} if "b" in mode else {"encoding": encoding, "newline": ""})) as fh:
            yield fh
        return
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": encoding, "newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_meta(path, **fields):
    """Sidecar ``<path>.meta.json``; the only place wall-clock time is written."""
    meta = dict(fields)
    meta["created"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with atomic_open(os.fspath(path) + ".meta.json") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def feature_record(graph_id, y, t, family, vec: SparseVector) -> str:
    rec = {"id": graph_id, "y": y, "t": t, "family": family, "features": [list(p) for p in vec.to_pairs()]}
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def parse_feature_record(line, lineno=None) -> StreamSample:
    try:
        rec = json.loads(line)
        feats = rec["features"]
        vec = SparseVector.from_pairs((int(i), float(c)) for i, c in feats)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"bad feature record: {exc}", lineno) from None
    return StreamSample(vec, rec.get("y"), int(rec.get("t", 0)), rec.get("family"), str(rec.get("id", "")))


def read_stream(path) -> list:
    """Read a graph file or a feature dump (detected per record)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if '"features"' in line and '"nodes"' not in line:
                out.append(parse_feature_record(line, lineno))
            else:
                g = parse_graph(line, lineno)
                out.append(StreamSample(g, g.y, g.t, g.family, g.graph_id))
    return out
