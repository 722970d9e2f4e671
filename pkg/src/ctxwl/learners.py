"""Online linear learners over growing sparse feature spaces, and a batch SVM baseline.

All online models mutate in place: ``predict`` never looks at a label and
``update`` touches only the coordinates that are non-zero in ``x``.
Scores are computed with :func:`math.fsum`, so a score equals the exact
(correctly rounded) sum of its per-feature contributions regardless of order.
"""
from __future__ import annotations

import io
import json
import logging
import math
import os
import tempfile
import warnings
import zipfile
from dataclasses import asdict, dataclass, field
from statistics import NormalDist

import numpy as np
from scipy import optimize, sparse

from .cwlk import SparseVector, Vocabulary

log = logging.getLogger(__name__)

MODEL_FORMAT = "ctxwl-model"
MODEL_VERSION = 1
# keeps variances strictly positive under long runs of contradictory labels
VARIANCE_FLOOR = 1e-300


@dataclass(frozen=True)
class Prediction:
    y_hat: int
    score: float
    confidence: float


def sign(score: float) -> int:
    # ties go to the benign class
    return 1 if score > 0 else -1


@dataclass
class LearnerConfig:
    kind: str = "cw"
    eta: float = 0.9
    a: float = 1.0
    lr: float = 0.1
    binary: bool = False

    def __post_init__(self):
        if self.kind not in LEARNERS:
            raise ValueError(f"unknown learner {self.kind!r}; choose from {sorted(LEARNERS)}")

    def build(self):
        cls = LEARNERS[self.kind]
        if self.kind == "cw":
            return cls(eta=self.eta, a=self.a, binary=self.binary)
        if self.kind == "lrsgd":
            return cls(lr=self.lr, binary=self.binary)
        return cls(binary=self.binary)


def _check_sample(x: SparseVector, y):
    if y not in (1, -1):
        raise ValueError(f"label must be +1 or -1, got {y!r}")
    if not x.is_finite():
        raise ValueError("sample has non-finite feature values")


class _Growing:
    """Dense float vector that grows on demand, new slots set to ``fill``."""

    def __init__(self, fill=0.0, capacity=64):
        self.fill = float(fill)
        self.buf = np.full(capacity, self.fill)
        self.n = 0

    def ensure(self, n):
        if n <= self.n:
            return
        if n > self.buf.size:
            cap = max(n, 2 * self.buf.size)
            new = np.full(cap, self.fill)
            new[: self.n] = self.buf[: self.n]
            self.buf = new
        self.n = n

    @property
    def view(self):
        return self.buf[: self.n]


class OnlineLinearModel:
    kind = "linear"

    def __init__(self, binary=False):
        self.binary = binary
        self._w = _Growing(0.0)
        self.n_updates = 0

    @property
    def dim(self) -> int:
        return self._w.n

    @property
    def weights(self) -> np.ndarray:
        return self._w.view

    def weight(self, index: int) -> float:
        return float(self._w.buf[index]) if index < self.dim else 0.0

    def _prep(self, x):
        return x.binarize() if self.binary else x

    def _known(self, x):
        if x.nnz and x.indices[-1] >= self.dim:
            keep = x.indices < self.dim
            return x.indices[keep], x.values[keep]
        return x.indices, x.values

    def contributions(self, x: SparseVector) -> np.ndarray:
        """Per-feature ``w_f * x_f`` aligned with ``x.indices`` (0 for unseen features)."""
        x = self._prep(x)
        out = np.zeros(x.nnz)
        known = x.indices < self.dim
        out[known] = self._w.buf[x.indices[known]] * x.values[known]
        return out

    def score(self, x: SparseVector) -> float:
        return math.fsum(self.contributions(x))

    def _confidence(self, x, s):
        nrm = math.sqrt(x.squared_norm())
        return math.inf if nrm == 0 else s / nrm

    def predict(self, x: SparseVector) -> Prediction:
        x = self._prep(x)
        s = self.score(x)
        return Prediction(sign(s), s, self._confidence(x, s))

    def update(self, x: SparseVector, y: int) -> float:
        _check_sample(x, y)
        x = self._prep(x)
        self._w.ensure(x.dim)
        step = self._step(x, y)
        self.n_updates += 1
        return step

    def _step(self, x, y):
        raise NotImplementedError

    def hyperparams(self) -> dict:
        return {"binary": self.binary}

    def state(self) -> dict:
        return {"w": self.weights.copy()}

    def set_state(self, arrays):
        w = np.asarray(arrays["w"], dtype=np.float64)
        self._w = _Growing(0.0, max(64, w.size))
        self._w.ensure(w.size)
        self._w.buf[: w.size] = w


class Perceptron(OnlineLinearModel):
    kind = "perceptron"

    def _step(self, x, y):
        if sign(self.score(x)) == y:
            return 0.0
        self._w.buf[x.indices] += y * x.values
        return 1.0


class PassiveAggressive(OnlineLinearModel):
    kind = "pa"

    def _step(self, x, y):
        sq = x.squared_norm()
        if sq == 0:
            return 0.0
        tau = max(0.0, 1.0 - y * self.score(x)) / sq
        if tau > 0:
            self._w.buf[x.indices] += tau * y * x.values
        return tau


class LogisticSGD(OnlineLinearModel):
    kind = "lrsgd"

    def __init__(self, lr=0.1, binary=False):
        super().__init__(binary)
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr

    def _step(self, x, y):
        g = _logistic(-y * self.score(x))
        self._w.buf[x.indices] += self.lr * g * y * x.values
        return self.lr * g

    def hyperparams(self):
        return {"binary": self.binary, "lr": self.lr}


def _logistic(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class ConfidenceWeighted(OnlineLinearModel):
    """Confidence-weighted classifier with a diagonal Gaussian over weights.

    Each update is the KL projection of the current Gaussian onto the set of
    diagonal Gaussians satisfying ``y * mu.x >= phi * sqrt(x' Sigma x)`` with
    ``phi = Phi^-1(eta)``. The step reduces to one scalar root-finding
    problem in ``r = sqrt(x' Sigma' x)``; the constraint then holds with
    equality whenever the model moves.
    """

    kind = "cw"
    variant = "stdev-diagonal-exact"

    def __init__(self, eta=0.9, a=1.0, binary=False):
        super().__init__(binary)
        if not 0.5 < eta < 1:
            raise ValueError(f"eta must lie in (0.5, 1), got {eta}")
        if a <= 0:
            raise ValueError("initial variance must be positive")
        self.eta = eta
        self.a = float(a)
        self.phi = NormalDist().inv_cdf(eta)
        self._var = _Growing(self.a)

    @property
    def mu(self) -> np.ndarray:
        return self._w.view

    @property
    def sigma(self) -> np.ndarray:
        return self._var.view

    def variance(self, index: int) -> float:
        return float(self._var.buf[index]) if index < self.dim else self.a

    def x_sigma_x(self, x: SparseVector) -> float:
        x = self._prep(x)
        var = np.full(x.nnz, self.a)
        known = x.indices < self.dim
        var[known] = self._var.buf[x.indices[known]]
        return math.fsum(var * x.values * x.values)

    def _confidence(self, x, s):
        v = self.x_sigma_x(x)
        return math.inf if v == 0 else s / math.sqrt(v)

    def margin_slack(self, x: SparseVector, y: int) -> float:
        """``y * mu.x - phi * sqrt(x' Sigma x)``; non-negative when the constraint holds."""
        x = self._prep(x)
        return y * self.score(x) - self.phi * math.sqrt(self.x_sigma_x(x))

    def update(self, x, y):
        _check_sample(x, y)
        x = self._prep(x)
        self._w.ensure(x.dim)
        self._var.ensure(x.dim)
        step = self._step(x, y)
        self.n_updates += 1
        return step

    def _step(self, x, y):
        idx, xv = x.indices, x.values
        if not idx.size:
            return 0.0
        sig = self._var.buf[idx]
        t = sig * xv * xv
        v = math.fsum(t)
        if v <= 0.0:
            return 0.0
        m = y * math.fsum(self._w.buf[idx] * xv)
        phi = self.phi
        sv = math.sqrt(v)
        if m >= phi * sv:
            return 0.0
        # work in units of the current standard deviation sqrt(v)
        tau = t / v
        mh = m / sv
        rho = _solve_radius(tau, mh, phi)
        alpha = (phi * rho - mh) / sv
        if alpha <= 0.0:
            return 0.0
        shrink = phi * (phi * rho - mh) / rho
        self._w.buf[idx] += alpha * y * sig * xv
        self._var.buf[idx] = np.maximum(sig / (1.0 + shrink * tau), VARIANCE_FLOOR)
        return alpha

    def hyperparams(self):
        return {"binary": self.binary, "eta": self.eta, "a": self.a, "variant": self.variant}

    def state(self):
        return {"mu": self.mu.copy(), "sigma": self.sigma.copy()}

    def set_state(self, arrays):
        mu = np.asarray(arrays["mu"], dtype=np.float64)
        sg = np.asarray(arrays["sigma"], dtype=np.float64)
        if mu.shape != sg.shape:
            raise ValueError("mu and sigma differ in length")
        self._w = _Growing(0.0, max(64, mu.size))
        self._var = _Growing(self.a, max(64, sg.size))
        self._w.ensure(mu.size)
        self._var.ensure(sg.size)
        self._w.buf[: mu.size] = mu
        self._var.buf[: sg.size] = sg


def _solve_radius(tau, mh, phi):
    """Root in (0, 1] of ``sum(tau / (1 + k(rho) tau)) = rho**2``.

    ``tau`` are the per-feature shares of the current variance (summing to 1),
    ``mh`` the signed margin in units of the current standard deviation and
    ``k(rho) = phi (phi rho - mh) / rho``.
    """

    def gap(rho):
        k = phi * (phi * rho - mh) / rho
        return math.fsum(tau / (1.0 + k * tau)) - rho * rho

    lo = max(mh / phi, 0.0)
    if lo == 0.0:
        lo = 1e-3
        while gap(lo) <= 0.0 and lo > 1e-300:
            lo *= 1e-3
    elif gap(lo) <= 0.0:
        return lo
    if gap(1.0) >= 0.0:
        return 1.0
    # the root can be many orders of magnitude below 1, so bracket in log space
    s = optimize.brentq(lambda z: gap(math.exp(z)), math.log(lo), 0.0, xtol=1e-15, maxiter=500)
    return math.exp(s)


LEARNERS = {
    "cw": ConfidenceWeighted,
    "perceptron": Perceptron,
    "pa": PassiveAggressive,
    "lrsgd": LogisticSGD,
}


@dataclass
class BatchConfig:
    C: float = 1.0
    tol: float = 1e-5
    max_iter: int = 20000
    seed: int = 0


@dataclass
class BatchLinearModel:
    """Linear max-margin model ``sign(w.x + b)`` trained on a fixed feature set."""

    w: np.ndarray
    bias: float = 0.0
    single_class: bool = False
    config: BatchConfig = field(default_factory=BatchConfig)
    kind = "svm"

    @property
    def dim(self) -> int:
        return int(self.w.size)

    def weight(self, index):
        return float(self.w[index]) if index < self.dim else 0.0

    def contributions(self, x):
        out = np.zeros(x.nnz)
        known = x.indices < self.dim
        out[known] = self.w[x.indices[known]] * x.values[known]
        return out

    def score(self, x):
        return math.fsum(self.contributions(x)) + self.bias

    def predict(self, x):
        s = self.score(x)
        nrm = math.sqrt(x.squared_norm())
        return Prediction(sign(s), s, math.inf if nrm == 0 else s / nrm)

    def hyperparams(self):
        return asdict(self.config) | {"single_class": self.single_class}

    def state(self):
        return {"w": self.w.copy(), "bias": np.array([self.bias])}


def to_csr(vectors, dim=None):
    indptr = [0]
    idx, val = [], []
    for x in vectors:
        idx.append(x.indices)
        val.append(x.values)
        indptr.append(indptr[-1] + x.nnz)
    idx = np.concatenate(idx) if idx else np.zeros(0, np.int64)
    val = np.concatenate(val) if val else np.zeros(0)
    if dim is None:
        dim = int(idx.max()) + 1 if idx.size else 0
    return sparse.csr_matrix((val, idx, np.asarray(indptr)), shape=(len(indptr) - 1, dim))


def batch_train(samples, config: BatchConfig | None = None, dim=None) -> BatchLinearModel:
    """Train an L2-regularised hinge-loss linear model to convergence.

    Uses liblinear's dual coordinate descent. A single-class training set is
    accepted and yields a constant model predicting that class.
    """
    from sklearn.svm import LinearSVC

    config = config or BatchConfig()
    samples = list(samples)
    if not samples:
        raise ValueError("batch_train needs at least one sample")
    X = to_csr([x for x, _ in samples], dim)
    y = np.array([lab for _, lab in samples])
    if not np.isin(y, (1, -1)).all():
        raise ValueError("labels must be +1 or -1")
    classes = np.unique(y)
    if classes.size == 1:
        log.info("batch training set has a single class (%+d); model is constant", classes[0])
        return BatchLinearModel(np.zeros(X.shape[1]), float(classes[0]), True, config)
    clf = LinearSVC(loss="hinge", dual=True, C=config.C, tol=config.tol,
                    max_iter=config.max_iter, random_state=config.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        clf.fit(X, y)
    return BatchLinearModel(clf.coef_.ravel().astype(np.float64), float(clf.intercept_[0]), False, config)


class ModelFileError(ValueError):
    pass


class VocabularyMismatchError(ModelFileError):
    pass


def save_model(model, path, vocab: Vocabulary | None = None, seed=None):
    """Write ``model`` as an ``.npz`` container with a JSON header."""
    vocab_size = len(vocab) if vocab is not None else None
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "learner": model.kind,
        "hyperparams": model.hyperparams(),
        "vocab_hash": vocab.digest() if vocab is not None else None,
        "vocab_size": vocab_size,
        "dim": model.dim,
        "seed": seed,
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))} | model.state()
    _atomic_write_bytes(path, _npz_bytes(arrays))


def _npz_bytes(arrays):
    # np.savez stamps entries with the wall clock; a fixed date keeps files byte-identical
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)
    return buf.getvalue()


def _atomic_write_bytes(path, data):
    path = os.fspath(path)
    if os.path.exists(path) and not os.path.isfile(path):
        with open(path, "wb") as fh:
            fh.write(data)
        return
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(str(z["header"]))


def load_model(path, vocab: Vocabulary | None = None):
    """Load a model; with ``vocab`` given, its prefix must match the saved hash."""
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from None
    with z:
        header = json.loads(str(z["header"]))
        arrays = {k: z[k] for k in z.files if k != "header"}
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
        raise ModelFileError(
            f"unsupported model file (format {header.get('format')!r}, version {header.get('version')!r})")
    if vocab is not None and header["vocab_hash"] is not None:
        n = header["vocab_size"]
        if len(vocab) < n or vocab.digest(n) != header["vocab_hash"]:
            raise VocabularyMismatchError("vocabulary does not match the one the model was saved with")
    hp = dict(header["hyperparams"])
    kind = header["learner"]
    if kind == "svm":
        single = hp.pop("single_class")
        return BatchLinearModel(arrays["w"], float(arrays["bias"][0]), single, BatchConfig(**hp))
    if kind not in LEARNERS:
        raise ModelFileError(f"unknown learner {kind!r}")
    if kind == "cw":
        hp.pop("variant", None)
    model = LEARNERS[kind](**hp)
    model.set_state(arrays)
    return model
