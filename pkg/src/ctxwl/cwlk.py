"""Contextual Weisfeiler-Lehman relabeling, bag-of-features vectors and kernels.

Composite labels are rendered as::

    lambda_0(n)  = node label
    lambda_i(n)  = lambda_{i-1}(n) + "{" + "|".join(sorted(lambda_{i-1}(m) for m in succ(n))) + "}"
    gamma_i(n)   = "&".join(sorted(c + "⊕" + lambda_i(n) for c in contexts(n)))

The braces nest, so every composite label parses back uniquely.
"""
from __future__ import annotations

import hashlib
import logging
import threading
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .graph import ContextualGraph

log = logging.getLogger(__name__)

CTX_SEP = "⊕"
OPEN, CLOSE = "{", "}"
NEIGHBOR_SEP = "|"
SET_SEP = "&"

MAX_HEIGHT = 5


@dataclass(frozen=True)
class RelabelParams:
    h: int = 2
    contextual: bool = True
    compress: bool = False
    max_h: int = MAX_HEIGHT

    def __post_init__(self):
        if not isinstance(self.h, int) or self.h < 0:
            raise ValueError(f"height must be a non-negative integer, got {self.h!r}")
        if self.h > self.max_h:
            raise ValueError(f"height {self.h} exceeds the configured maximum {self.max_h}")


class LabelCollisionError(RuntimeError):
    pass


class LabelCompressor:
    """Injective (checked) map from label strings to fixed-width hash tokens.

    One compressor must be shared by every graph whose labels are compared.
    A hash collision between two different strings raises
    :class:`LabelCollisionError`; callers fall back to uncompressed labels.
    """

    def __init__(self, digest_size=8):
        self.digest_size = digest_size
        self._token = {}
        self._source = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._token)

    def __call__(self, label: str) -> str:
        tok = self._token.get(label)
        if tok is not None:
            return tok
        tok = "#" + hashlib.blake2b(label.encode("utf-8"), digest_size=self.digest_size).hexdigest()
        with self._lock:
            prev = self._source.setdefault(tok, label)
            if prev != label:
                raise LabelCollisionError(f"labels {prev!r} and {label!r} share token {tok}")
            self._token[label] = tok
        return tok

    def source(self, token: str) -> str:
        return self._source[token]


@dataclass(frozen=True)
class ContextualLabelSequence:
    """Per-iteration labels of one graph; row ``i`` is aligned with ``node_ids``."""

    node_ids: tuple
    plain: tuple   # plain[i][k] = lambda_i of node k
    gamma: tuple   # gamma[i][k] = contextual label gamma_i of node k

    @property
    def h(self) -> int:
        return len(self.gamma) - 1

    def label(self, i, node_id) -> str:
        return self.gamma[i][self.node_ids.index(node_id)]

    def plain_label(self, i, node_id) -> str:
        return self.plain[i][self.node_ids.index(node_id)]

    def iteration(self, i) -> dict:
        return dict(zip(self.node_ids, self.gamma[i]))

    def all_labels(self):
        for row in self.gamma:
            yield from row


def _contextualize(ctxs, lam):
    if len(ctxs) == 1:
        return ctxs[0] + CTX_SEP + lam
    return SET_SEP.join(c + CTX_SEP + lam for c in ctxs)


def relabel(g: ContextualGraph, p: RelabelParams = RelabelParams(),
            compressor: LabelCompressor | None = None) -> ContextualLabelSequence:
    """Run ``p.h`` rounds of (contextual) WL relabeling over out-neighbourhoods.

    With ``p.compress`` the plain labels are replaced by hash tokens after
    every round, which keeps label length bounded by the out-degree, and the
    contextual labels are compressed as well.
    """
    if p.compress and compressor is None:
        compressor = LabelCompressor()
    succ = g.successor_positions()
    ctxs = [n.sorted_contexts for n in g.nodes]
    lam = [n.label for n in g.nodes]
    if p.compress:
        lam = [compressor(s) for s in lam]
    plain = [tuple(lam)]
    for _ in range(p.h):
        nxt = []
        for k, nb in enumerate(succ):
            if nb:
                ms = sorted([lam[m] for m in nb])
                nxt.append(lam[k] + OPEN + NEIGHBOR_SEP.join(ms) + CLOSE)
            else:
                nxt.append(lam[k] + OPEN + CLOSE)
        lam = [compressor(s) for s in nxt] if p.compress else nxt
        plain.append(tuple(lam))
    if p.contextual:
        gamma = tuple(tuple(_contextualize(c, s) for c, s in zip(ctxs, row)) for row in plain)
    else:
        gamma = tuple(plain)
    seq = ContextualLabelSequence(g.node_ids, tuple(plain), gamma)
    if p.compress and p.contextual:
        seq = compress_labels(seq, compressor)
    return seq


def compress_labels(seq: ContextualLabelSequence,
                    compressor: LabelCompressor | None = None) -> ContextualLabelSequence:
    """Replace every contextual label by its fixed-width token."""
    if compressor is None:
        compressor = LabelCompressor()
    gamma = tuple(tuple(compressor(s) for s in row) for row in seq.gamma)
    return ContextualLabelSequence(seq.node_ids, seq.plain, gamma)


def label_counts(g: ContextualGraph, p: RelabelParams = RelabelParams(),
                 compressor: LabelCompressor | None = None) -> Counter:
    """Occurrence count of every contextual label over iterations 0..h."""
    return Counter(relabel(g, p, compressor).all_labels())


class Vocabulary:
    """Append-only, insertion-ordered map between label strings and indices."""

    def __init__(self, labels=()):
        self._labels = []
        self._index = {}
        self._lock = threading.Lock()
        self.compressor = None
        for s in labels:
            self.add(s)

    def __len__(self):
        return len(self._labels)

    def __contains__(self, label):
        return label in self._index

    def __iter__(self):
        return iter(self._labels)

    def add(self, label: str) -> int:
        """Get-or-insert; indices are stable once issued."""
        idx = self._index.get(label)
        if idx is not None:
            return idx
        with self._lock:
            idx = self._index.get(label)
            if idx is None:
                idx = len(self._labels)
                self._labels.append(label)
                self._index[label] = idx
        return idx

    def get(self, label, default=None):
        return self._index.get(label, default)

    def index(self, label: str) -> int:
        return self._index[label]

    def label(self, index: int) -> str:
        return self._labels[index]

    def labels(self) -> list:
        return list(self._labels)

    def digest(self, n: int | None = None) -> str:
        """SHA-256 over the first ``n`` labels (all by default)."""
        n = len(self._labels) if n is None else n
        if n > len(self._labels):
            raise ValueError(f"vocabulary has only {len(self._labels)} entries, not {n}")
        h = hashlib.sha256()
        for s in self._labels[:n]:
            h.update(s.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def get_compressor(self) -> LabelCompressor:
        if self.compressor is None:
            self.compressor = LabelCompressor()
        return self.compressor

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            self.write(fh)

    def write(self, fh):
        for i, s in enumerate(self._labels):
            fh.write(f"{i}\t{s}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        v = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                idx, _, label = line.partition("\t")
                if not idx.isdigit() or int(idx) != len(v):
                    raise ValueError(f"{path}:{lineno}: expected index {len(v)}, got {idx!r}")
                v.add(label)
        return v


class SparseVector:
    """Sorted (index, value) pairs with no explicit zeros."""

    __slots__ = ("indices", "values")

    def __init__(self, indices=(), values=()):
        idx = np.asarray(indices, dtype=np.int64)
        val = np.asarray(values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size:
            order = np.argsort(idx, kind="stable")
            idx, val = idx[order], val[order]
            if np.any(np.diff(idx) == 0):
                raise ValueError("duplicate feature index")
            if idx[0] < 0:
                raise ValueError("negative feature index")
            keep = val != 0
            idx, val = idx[keep], val[keep]
        self.indices = idx
        self.values = val

    @classmethod
    def from_dict(cls, d) -> "SparseVector":
        items = sorted(d.items())
        return cls([k for k, _ in items], [v for _, v in items])

    @classmethod
    def from_pairs(cls, pairs) -> "SparseVector":
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def dim(self) -> int:
        return int(self.indices[-1]) + 1 if self.indices.size else 0

    def __len__(self):
        return self.nnz

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"SparseVector({self.to_pairs()!r})"

    def to_pairs(self) -> list:
        return [(int(i), _num(v)) for i, v in zip(self.indices, self.values)]

    def to_dict(self) -> dict:
        return dict(self.to_pairs())

    def dot(self, other: "SparseVector") -> float:
        common, a, b = np.intersect1d(self.indices, other.indices, assume_unique=True, return_indices=True)
        if not common.size:
            return 0.0
        return float(np.dot(self.values[a], other.values[b]))

    def squared_norm(self) -> float:
        return float(np.dot(self.values, self.values))

    def binarize(self) -> "SparseVector":
        return SparseVector(self.indices.copy(), np.ones_like(self.values))

    def restrict(self, dim: int) -> "SparseVector":
        keep = self.indices < dim
        return SparseVector(self.indices[keep], self.values[keep])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def _num(v):
    v = float(v)
    return int(v) if v.is_integer() else v


def counts_to_vector(counts, vocab: Vocabulary, frozen=False):
    """Map label counts onto ``vocab``; returns ``(vector, n_dropped_labels)``."""
    pairs = {}
    dropped = 0
    for label, c in counts.items():
        if frozen:
            idx = vocab.get(label)
            if idx is None:
                dropped += 1
                continue
        else:
            idx = vocab.add(label)
        pairs[idx] = c
    return SparseVector.from_dict(pairs), dropped


def vectorize(g: ContextualGraph, p: RelabelParams, vocab: Vocabulary, frozen=False) -> SparseVector:
    """Bag-of-features count vector of ``g`` over ``vocab``.

    With ``frozen=False`` unseen labels are appended to the vocabulary;
    with ``frozen=True`` they are dropped.
    """
    comp = vocab.get_compressor() if p.compress else None
    vec, _ = counts_to_vector(label_counts(g, p, comp), vocab, frozen)
    return vec


def kernel(g1: ContextualGraph, g2: ContextualGraph, p: RelabelParams = RelabelParams()) -> int:
    """Number of matching (contextual) label pairs over iterations 0..h."""
    if p.compress:
        comp = LabelCompressor()
        try:
            c1, c2 = label_counts(g1, p, comp), label_counts(g2, p, comp)
        except LabelCollisionError as exc:
            log.warning("label compression collided (%s); using full labels", exc)
            return kernel(g1, g2, _uncompressed(p))
    else:
        c1, c2 = label_counts(g1, p), label_counts(g2, p)
    if len(c2) < len(c1):
        c1, c2 = c2, c1
    return sum(a * c2[s] for s, a in c1.items() if s in c2)


def _uncompressed(p):
    return RelabelParams(p.h, p.contextual, False, p.max_h)


def feature_matrix(graphs, p: RelabelParams = RelabelParams(), vocab: Vocabulary | None = None):
    """CSR count matrix of ``graphs`` over a shared (grown) vocabulary."""
    vocab = Vocabulary() if vocab is None else vocab
    comp = vocab.get_compressor() if p.compress else None
    rows, cols, vals = [], [], []
    for r, g in enumerate(graphs):
        for label, c in label_counts(g, p, comp).items():
            rows.append(r)
            cols.append(vocab.add(label))
            vals.append(c)
    n = r + 1 if graphs else 0
    X = sparse.csr_matrix((np.asarray(vals, dtype=np.int64), (rows, cols)), shape=(n, len(vocab)))
    return X, vocab


def kernel_matrix(graphs, p: RelabelParams = RelabelParams()) -> np.ndarray:
    """K x K kernel matrix via one vocabulary pass and sparse products."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("kernel_matrix needs at least one graph")
    try:
        X, _ = feature_matrix(graphs, p)
    except LabelCollisionError as exc:
        log.warning("label compression collided (%s); using full labels", exc)
        X, _ = feature_matrix(graphs, _uncompressed(p))
    return (X @ X.T).toarray()


def render_label(label: str) -> str:
    """Readable form ``<context> {<root> + <neighbor-list>}`` of a contextual label."""
    parts = _split_top(label, SET_SEP)
    ctxs, lam = [], None
    for part in parts:
        c, sep, rest = part.partition(CTX_SEP)
        if not sep:
            c, rest = "", part
        ctxs.append(c)
        lam = rest
    root, groups = _split_groups(lam)
    if groups:
        root_txt = root + "".join(OPEN + g + CLOSE for g in groups[:-1])
        body = f"{root_txt} + {', '.join(_split_top(groups[-1], NEIGHBOR_SEP)) or '[]'}"
    else:
        body = root
    ctx_txt = ", ".join(c for c in ctxs if c)
    return f"{ctx_txt} {{{body}}}" if ctx_txt else f"{{{body}}}"


def _split_top(s, sep):
    out, depth, cur = [], 0, []
    for ch in s:
        if ch == OPEN:
            depth += 1
        elif ch == CLOSE:
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur or out:
        out.append("".join(cur))
    return [x for x in out if x] if sep == NEIGHBOR_SEP else out


def _split_groups(lam):
    """Split ``root{g1}{g2}...`` into root and top-level group bodies."""
    i = lam.find(OPEN)
    if i < 0:
        return lam, []
    root, groups, depth, start = lam[:i], [], 0, i
    for j in range(i, len(lam)):
        if lam[j] == OPEN:
            if depth == 0:
                start = j + 1
            depth += 1
        elif lam[j] == CLOSE:
            depth -= 1
            if depth == 0:
                groups.append(lam[start:j])
    return root, groups
