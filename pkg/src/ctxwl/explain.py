"""Per-prediction feature attributions and per-family top-feature reports."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

from .cwlk import SparseVector, Vocabulary, render_label

DEFAULT_NU = 5


@dataclass(frozen=True)
class Contribution:
    index: int
    label: str
    value: float

    def to_dict(self):
        return {"index": self.index, "label": self.label, "value": self.value}


@dataclass(frozen=True)
class Explanation:
    graph_id: str
    y_hat: int
    score: float
    contributions: tuple          # top-nu entries, best first
    nu: int
    family: str | None = None
    all_contributions: dict = field(default_factory=dict, repr=False)  # index -> value

    def total(self) -> float:
        return math.fsum(self.all_contributions.values())

    def to_dict(self):
        return {
            "graph_id": self.graph_id,
            "family": self.family,
            "prediction": self.y_hat,
            "score": self.score,
            "nu": self.nu,
            "contributions": [c.to_dict() for c in self.contributions],
        }


def _decode(vocab, index):
    if vocab is None or index >= len(vocab):
        return f"<feature {index}>"
    label = vocab.label(index)
    return label if label.startswith("#") else render_label(label)


def _rank(items, direction):
    """Sort ``(index, value)`` pairs best-first for the given class direction."""
    return sorted(items, key=lambda kv: (-direction * kv[1], kv[0]))


def explain_prediction(model, x: SparseVector, vocab: Vocabulary | None = None, nu: int = DEFAULT_NU,
                       graph_id: str = "", family: str | None = None) -> Explanation:
    """Rank the non-zero contributions ``w_f * x_f`` towards the predicted class.

    Contributions pointing at the predicted class come first (largest
    positive values when the prediction is malicious, most negative when
    benign); ties go to the lower feature index.
    """
    if not isinstance(nu, int) or nu <= 0:
        raise ValueError(f"nu must be a positive integer, got {nu!r}")
    if vocab is not None and model.dim > len(vocab):
        raise ValueError(f"model has {model.dim} features but the vocabulary only {len(vocab)}")
    pred = model.predict(x)
    contrib = model.contributions(x)
    allc = {int(i): float(c) for i, c in zip(x.indices, contrib) if c != 0}
    bias = getattr(model, "bias", 0.0)
    ranked = _rank(allc.items(), pred.y_hat)[:nu]
    top = tuple(Contribution(i, _decode(vocab, i), v) for i, v in ranked)
    score = math.fsum(allc.values()) + bias
    return Explanation(graph_id, pred.y_hat, score, top, nu, family, allc)


def family_report(explanations, family: str, nu: int = DEFAULT_NU, vocab: Vocabulary | None = None,
                  direction: int = 1) -> list:
    """Mean contribution of each feature over a family's explanations, top ``nu``.

    A feature absent from a sample contributes 0 to that sample, so the mean
    is taken over all family members.
    """
    if not isinstance(nu, int) or nu <= 0:
        raise ValueError(f"nu must be a positive integer, got {nu!r}")
    members = [e for e in explanations if e.family == family]
    if not members:
        raise KeyError(f"no explanation carries family {family!r}")
    sums = defaultdict(list)
    for e in members:
        for i, v in e.all_contributions.items():
            sums[i].append(v)
    means = {i: math.fsum(vs) / len(members) for i, vs in sums.items()}
    ranked = _rank(means.items(), direction)[:nu]
    return [Contribution(i, _decode(vocab, i), v) for i, v in ranked]
