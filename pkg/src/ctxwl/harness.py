"""Prequential stream evaluation: online learners versus sliding-window batch retraining."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field

from .cwlk import RelabelParams, SparseVector, Vocabulary, counts_to_vector, label_counts
from .graph import ContextualGraph
from .learners import BatchConfig, LearnerConfig, batch_train

log = logging.getLogger(__name__)

REGIMENS = ("online", "once", "daily", "multi-once", "multi-daily")


class UnsortedStreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamSample:
    payload: object          # ContextualGraph or SparseVector
    y: int
    t: int
    family: str | None = None
    id: str = ""

    @classmethod
    def from_graph(cls, g: ContextualGraph) -> "StreamSample":
        if g.y is None:
            raise ValueError(f"graph {g.graph_id!r} is unlabeled")
        return cls(g, g.y, g.t, g.family, g.graph_id)


@dataclass
class RegimenConfig:
    kind: str = "online"
    window_days: int = 10

    def __post_init__(self):
        if self.kind not in REGIMENS:
            raise ValueError(f"unknown regimen {self.kind!r}; choose from {REGIMENS}")
        if not isinstance(self.window_days, int) or self.window_days < 1:
            raise ValueError("window_days must be a positive integer")

    @property
    def train_days(self) -> int:
        """Length of the training window in days."""
        return self.window_days if self.kind.startswith("multi") else 1


@dataclass
class RunReport:
    regimen: str
    days: list = field(default_factory=list)
    cum_error: list = field(default_factory=list)
    cum_vocab: list = field(default_factory=list)
    n_scored: list = field(default_factory=list)
    cum_mistakes: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    train_windows: list = field(default_factory=list)
    mistakes: int = 0
    scored: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    score_from: int = 0
    config: dict = field(default_factory=dict)
    train_seconds: list = field(default_factory=list)
    predict_seconds: list = field(default_factory=list)

    @property
    def final_error(self) -> float:
        return self.mistakes / self.scored if self.scored else math.nan

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f_measure(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def error_at(self, day) -> float:
        return self.cum_error[self.days.index(day)]

    def window_error(self, lo, hi) -> float:
        """Error rate over samples scored on days ``lo..hi`` (inclusive)."""
        m0 = n0 = 0
        m1 = n1 = None
        for d, m, n in zip(self.days, self.cum_mistakes, self.n_scored):
            if d < lo:
                m0, n0 = m, n
            elif d <= hi:
                m1, n1 = m, n
        if n1 is None or n1 == n0:
            return math.nan
        return (m1 - m0) / (n1 - n0)

    def to_dict(self, include_timings=True) -> dict:
        d = {
            "regimen": self.regimen,
            "config": self.config,
            "score_from": self.score_from,
            "days": self.days,
            "cum_error": self.cum_error,
            "cum_vocab": self.cum_vocab,
            "n_scored": self.n_scored,
            "cum_mistakes": self.cum_mistakes,
            "weights": self.weights,
            "train_windows": self.train_windows,
            "mistakes": self.mistakes,
            "scored": self.scored,
            "final_error": None if math.isnan(self.final_error) else self.final_error,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
        }
        if include_timings:
            d["timings"] = {"train_seconds": self.train_seconds, "predict_seconds": self.predict_seconds}
        return d

    def to_json(self, include_timings=True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)

    def write_csv(self, fh):
        w = csv.writer(fh)
        w.writerow(["day", "cum_error", "cum_vocab", "n_scored", "train_seconds", "predict_seconds"])
        for row in zip(self.days, self.cum_error, self.cum_vocab, self.n_scored,
                       self.train_seconds or [None] * len(self.days),
                       self.predict_seconds or [None] * len(self.days)):
            w.writerow(["" if v is None else v for v in row])


class _Tally:
    def __init__(self, report):
        self.r = report
        self.day_mistakes = 0

    def record(self, y_hat, y):
        r = self.r
        r.scored += 1
        if y_hat != y:
            r.mistakes += 1
        if y_hat == 1 and y == 1:
            r.tp += 1
        elif y_hat == 1:
            r.fp += 1
        elif y == 1:
            r.fn += 1


def as_samples(stream) -> list:
    out = []
    for s in stream:
        if isinstance(s, StreamSample):
            out.append(s)
        elif isinstance(s, ContextualGraph):
            out.append(StreamSample.from_graph(s))
        else:
            raise TypeError(f"cannot use {type(s).__name__} as a stream sample")
    return out


def check_sorted(samples):
    prev = None
    for i, s in enumerate(samples):
        if prev is not None and s.t < prev:
            raise UnsortedStreamError(
                f"stream not sorted by day: record {i} (id {s.id!r}) has t={s.t} after t={prev}")
        prev = s.t


@dataclass
class PreparedStream:
    """Samples plus their raw feature bags (label -> count, or index -> value)."""

    samples: list
    features: list
    params: RelabelParams

    @property
    def first_day(self) -> int:
        return self.samples[0].t

    @property
    def last_day(self) -> int:
        return self.samples[-1].t


def prepare(stream, p: RelabelParams = RelabelParams()) -> PreparedStream:
    """Validate ordering and relabel every graph once."""
    if isinstance(stream, PreparedStream):
        return stream
    samples = as_samples(stream)
    if not samples:
        raise ValueError("empty stream")
    check_sorted(samples)
    feats = []
    comp = None
    if p.compress:
        from .cwlk import LabelCompressor
        comp = LabelCompressor()
    for s in samples:
        if isinstance(s.payload, SparseVector):
            feats.append(s.payload.to_dict())
        else:
            feats.append(label_counts(s.payload, p, comp))
    return PreparedStream(samples, feats, p)


def _days(ps):
    return range(ps.first_day, ps.last_day + 1)


def _by_day(ps):
    groups = {}
    for k, s in enumerate(ps.samples):
        groups.setdefault(s.t, []).append(k)
    return groups


def run_online(stream, learner: LearnerConfig | object = None, p: RelabelParams = RelabelParams(),
               score_from: int | None = None, watch=(), observer=None,
               vocab: Vocabulary | None = None) -> RunReport:
    """Predict-then-update over the stream with a growing vocabulary.

    Samples with ``t < score_from`` only train the model (seeding); the
    default scores everything. ``watch`` lists feature labels (or indices for
    vector streams) whose weight is recorded at the end of every day.
    ``observer(k, prediction)`` is called when sample ``k``'s prediction is
    recorded, before its label reaches the learner. Pass a model instance and
    ``vocab`` to inspect them after the run.
    """
    ps = prepare(stream, p)
    if learner is None or isinstance(learner, LearnerConfig):
        cfg = learner or LearnerConfig()
        model = cfg.build()
        config = {"learner": vars(cfg).copy()}
    else:
        model, config = learner, {"learner": getattr(learner, "kind", type(learner).__name__)}
    score_from = ps.first_day if score_from is None else score_from
    report = RunReport("online", score_from=score_from, config=config)
    report.weights = {str(f): [] for f in watch}
    tally = _Tally(report)
    vocab = Vocabulary() if vocab is None else vocab
    graph_stream = not isinstance(ps.samples[0].payload, SparseVector)
    groups = _by_day(ps)

    for day in _days(ps):
        t_train = t_pred = 0.0
        for k in groups.get(day, ()):
            s = ps.samples[k]
            if graph_stream:
                x, _ = counts_to_vector(ps.features[k], vocab)
            else:
                x = s.payload
            t0 = time.perf_counter()
            pred = model.predict(x)
            t1 = time.perf_counter()
            if day >= score_from:
                tally.record(pred.y_hat, s.y)
                if observer is not None:
                    observer(k, pred)
            t2 = time.perf_counter()
            model.update(x, s.y)
            t_train += time.perf_counter() - t2
            t_pred += t1 - t0
        if day >= score_from:
            _close_day(report, day, len(vocab) if graph_stream else model.dim, t_train, t_pred)
        for f in watch:
            idx = vocab.get(f) if graph_stream else int(f)
            report.weights[str(f)].append(0.0 if idx is None else model.weight(idx))
    report.config["vocab_size"] = len(vocab) if graph_stream else model.dim
    return report


def _close_day(report, day, vocab_size, t_train, t_pred):
    report.days.append(day)
    report.cum_error.append(report.mistakes / report.scored if report.scored else None)
    report.n_scored.append(report.scored)
    report.cum_mistakes.append(report.mistakes)
    report.cum_vocab.append(vocab_size)
    report.train_seconds.append(t_train)
    report.predict_seconds.append(t_pred)


def track_weights(stream, watch, learner: LearnerConfig | None = None,
                  p: RelabelParams = RelabelParams()) -> dict:
    """End-of-day weight of each watched feature during an online run."""
    if not watch:
        return {}
    return run_online(stream, learner, p, watch=watch).weights


def _vectorize_frozen(feats, vocab):
    """Map a feature bag onto a frozen local vocabulary (dict key -> index)."""
    pairs = {}
    for key, c in feats.items():
        idx = vocab.get(key)
        if idx is not None:
            pairs[idx] = c
    return SparseVector.from_dict(pairs)


def _train_window(ps, indices, batch_config):
    vocab = {}
    rows = []
    for k in indices:
        for key in ps.features[k]:
            if key not in vocab:
                vocab[key] = len(vocab)
        rows.append((_vectorize_frozen(ps.features[k], vocab), ps.samples[k].y))
    return batch_train(rows, batch_config, dim=len(vocab)), vocab


def run_batch_regimen(stream, regimen: RegimenConfig, p: RelabelParams = RelabelParams(),
                      batch_config: BatchConfig | None = None, score_from: int | None = None,
                      observer=None) -> RunReport:
    """Score the stream with a batch model (re)trained on earlier days only.

    ``once``/``multi-once`` train on the first 1 / ``window_days`` days and
    never retrain; ``daily``/``multi-daily`` retrain from scratch before each
    scored day on the preceding 1 / ``window_days`` days. Every batch model
    sees only the features of its own training window.
    """
    if regimen.kind == "online":
        raise ValueError("use run_online for the online regimen")
    ps = prepare(stream, p)
    batch_config = batch_config or BatchConfig()
    w = regimen.train_days
    span = ps.last_day - ps.first_day + 1
    if w > span:
        raise ValueError(f"training window of {w} days exceeds the stream span of {span} days")
    start = ps.first_day + w
    score_from = start if score_from is None else max(start, score_from)
    report = RunReport(regimen.kind, score_from=score_from,
                       config={"regimen": vars(regimen).copy(), "batch": vars(batch_config).copy()})
    tally = _Tally(report)
    groups = _by_day(ps)
    retrain = regimen.kind in ("daily", "multi-daily")
    model, vocab = None, {}

    def train(lo, hi, day):
        idx = [k for d in range(lo, hi + 1) for k in groups.get(d, ())]
        if not idx:
            log.info("no training data in days %d..%d; keeping previous model", lo, hi)
            return None
        report.train_windows.append({"day": day, "lo": lo, "hi": hi, "n": len(idx)})
        return _train_window(ps, idx, batch_config)

    t_train = 0.0
    if not retrain:
        t0 = time.perf_counter()
        trained = train(ps.first_day, ps.first_day + w - 1, start)
        t_train = time.perf_counter() - t0
        if trained:
            model, vocab = trained

    for day in range(score_from, ps.last_day + 1):
        if retrain:
            t0 = time.perf_counter()
            trained = train(day - w, day - 1, day)
            t_train = time.perf_counter() - t0
            if trained:
                model, vocab = trained
        t0 = time.perf_counter()
        for k in groups.get(day, ()):
            s = ps.samples[k]
            y_hat = model.predict(_vectorize_frozen(ps.features[k], vocab)).y_hat if model else -1
            tally.record(y_hat, s.y)
            if observer is not None:
                observer(k, y_hat)
        _close_day(report, day, len(vocab), t_train, time.perf_counter() - t0)
        t_train = 0.0
    return report


def run_regimen(stream, regimen: RegimenConfig, learner: LearnerConfig | None = None,
                p: RelabelParams = RelabelParams(), batch_config: BatchConfig | None = None,
                score_from: int | None = None, watch=()) -> RunReport:
    if regimen.kind == "online":
        return run_online(stream, learner, p, score_from=score_from, watch=watch)
    return run_batch_regimen(stream, regimen, p, batch_config, score_from)


def compare_regimens(stream, window_days=10, learner: LearnerConfig | None = None,
                     p: RelabelParams = RelabelParams(), batch_config: BatchConfig | None = None,
                     kinds=REGIMENS, score_from: int | None = None) -> dict:
    """Run several regimens scored on the same days (from the end of the longest training window)."""
    ps = prepare(stream, p)
    if score_from is None:
        longest = max(RegimenConfig(k, window_days).train_days for k in kinds if k != "online") \
            if any(k != "online" for k in kinds) else 0
        score_from = ps.first_day + longest
    return {k: run_regimen(ps, RegimenConfig(k, window_days), learner, p, batch_config, score_from)
            for k in kinds}


class AuditingLearner:
    """Wraps a learner and fails loudly if a label arrives before its prediction is recorded."""

    def __init__(self, inner):
        self.inner = inner
        self.kind = getattr(inner, "kind", "audited")
        self.events = []
        self._pending = None
        self._recorded = set()
        self._n_pred = 0
        self.violations = []

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def observe(self, k, prediction):
        self._recorded.add(self._n_pred - 1)
        self.events.append(("record", k))

    def predict(self, x):
        if self._pending is not None:
            self.violations.append(f"prediction {self._n_pred} requested before update of previous sample")
        self._pending = x
        self._n_pred += 1
        self.events.append(("predict", self._n_pred - 1))
        return self.inner.predict(x)

    def update(self, x, y):
        if self._pending is None or not (self._pending == x):
            self.violations.append(f"label for sample {self._n_pred} consumed without a matching prediction")
        self._pending = None
        self.events.append(("update", self._n_pred - 1))
        return self.inner.update(x, y)

    def n_recorded(self):
        return len(self._recorded)
