"""Seeded generator of labelled, timestamped graph streams with drifting malware families.

Benign apps are random background graphs whose nodes are all in the
user-aware context. A malware sample is a background graph of the same
distribution with its family's motif grafted on; motif nodes keep the
contexts given in the motif (user-unaware / unresolved). Each family's
daily volume follows a triangular emerge / peak / fade profile.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .graph import Context, ContextualGraph, parse_graph, serialize_graph

UA = Context.USER_AWARE.value
UU = Context.USER_UNAWARE.value
UR = Context.UNRESOLVED.value

# Sensitive APIs that also show up, in the user-aware context, in benign code.
SENSITIVE_APIS = (
    "SmsManager.sendTextMessage", "SmsManager.getDefault", "SmsManager.sendMultipartTextMessage",
    "AlarmManager.set", "TelephonyManager.getDeviceId", "TelephonyManager.getSubscriberId",
    "Location.getLatitude", "Location.getLongitude", "DataOutputStream.writeBytes",
    "URL.openConnection", "HttpURLConnection.connect", "Class.forName", "Method.invoke",
    "PackageManager.getInstalledPackages", "ContentResolver.query", "Runtime.exec",
    "DexClassLoader.loadClass", "System.loadLibrary",
)


class ScenarioError(ValueError):
    pass


@dataclass
class FamilySpec:
    name: str
    motif: ContextualGraph
    start: int
    peak: int
    end: int
    peak_rate: float
    label: int = 1

    def __post_init__(self):
        if not self.start <= self.peak <= self.end:
            raise ScenarioError(f"family {self.name}: need start <= peak <= end, "
                                f"got {self.start}, {self.peak}, {self.end}")
        if self.peak_rate < 1:
            raise ScenarioError(f"family {self.name}: peak rate must be >= 1")
        if self.label != 1:
            raise ScenarioError(f"family {self.name}: malware families carry label +1")

    def rate(self, day: int) -> float:
        """Expected members on ``day`` (triangular profile, 0 outside [start, end])."""
        if day < self.start or day > self.end:
            return 0.0
        if day == self.peak:
            return float(self.peak_rate)
        if day < self.peak:
            return self.peak_rate * (day - self.start + 1) / (self.peak - self.start + 1)
        return self.peak_rate * (self.end - day + 1) / (self.end - self.peak + 1)

    def to_dict(self):
        return {"name": self.name, "motif": self.motif.to_record(), "start": self.start,
                "peak": self.peak, "end": self.end, "peak_rate": self.peak_rate, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["motif"] = parse_graph(json.dumps(d["motif"]))
        return cls(**d)


@dataclass
class ScenarioConfig:
    families: list = field(default_factory=list)
    benign_rate: float = 60.0
    label_noise: float = 0.0
    alphabet_size: int = 40
    days: int = 60
    seed: int = 0
    background_nodes: tuple = (6, 14)
    motif_keep: float = 0.8
    graft_edges: int = 2
    flip_day: int | None = None
    flip_family: str | None = None
    flip_switch_context: bool = True

    def __post_init__(self):
        if self.days < 1:
            raise ScenarioError("days must be >= 1")
        if self.benign_rate < 0:
            raise ScenarioError("benign rate must be >= 0")
        if not 0 <= self.label_noise < 1:
            raise ScenarioError("label noise must lie in [0, 1)")
        if self.alphabet_size < 1:
            raise ScenarioError("alphabet size must be >= 1")
        lo, hi = self.background_nodes
        if not 1 <= lo <= hi:
            raise ScenarioError("background node range must satisfy 1 <= lo <= hi")
        if not 0 < self.motif_keep <= 1:
            raise ScenarioError("motif_keep must lie in (0, 1]")
        names = [f.name for f in self.families]
        if len(set(names)) != len(names):
            raise ScenarioError("family names must be unique")
        if self.flip_family is not None and self.flip_family not in names:
            raise ScenarioError(f"unknown flip family {self.flip_family!r}")
        self.background_nodes = tuple(self.background_nodes)

    def alphabet(self) -> list:
        base = list(SENSITIVE_APIS)
        extra = [f"api.Generic{k:03d}" for k in range(max(0, self.alphabet_size - len(base)))]
        return (base + extra)[: self.alphabet_size]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["families"] = [f.to_dict() for f in self.families]
        d["background_nodes"] = list(self.background_nodes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["families"] = [FamilySpec.from_dict(f) for f in d.get("families", [])]
        if "background_nodes" in d:
            d["background_nodes"] = tuple(d["background_nodes"])
        return cls(**d)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def motif(nodes, edges) -> ContextualGraph:
    return ContextualGraph.build(nodes, edges)


SMS_MOTIF = motif(
    [(0, "AlarmManager.set", [UU]), (1, "SmsManager.getDefault", [UU]),
     (2, "SmsManager.sendTextMessage", [UU]), (3, "SmsManager.sendMultipartTextMessage", [UU, UR])],
    [(0, 1), (1, 2), (1, 3)],
)
LEAK_MOTIF = motif(
    [(0, "TelephonyManager.getDeviceId", [UU]), (1, "Location.getLatitude", [UU]),
     (2, "Location.getLongitude", [UU]), (3, "URL.openConnection", [UU]),
     (4, "DataOutputStream.writeBytes", [UU])],
    [(0, 3), (1, 4), (2, 4), (3, 4)],
)
REFLECTION_MOTIF = motif(
    [(0, "Class.forName", [UR]), (1, "Method.invoke", [UR]),
     (2, "PackageManager.getInstalledPackages", [UR, UU]), (3, "DexClassLoader.loadClass", [UR])],
    [(0, 1), (3, 0), (1, 2)],
)


def default_scenario(days=60, seed=0, label_noise=0.02, benign_rate=70.0) -> ScenarioConfig:
    """Three overlapping families with disjoint motifs over ``days`` days."""
    s = days / 60
    fams = [
        FamilySpec("sms", SMS_MOTIF, round(2 * s), round(12 * s), round(28 * s), 40),
        FamilySpec("leak", LEAK_MOTIF, round(16 * s), round(28 * s), round(44 * s), 40),
        FamilySpec("reflect", REFLECTION_MOTIF, round(32 * s), round(46 * s), days - 1, 40),
    ]
    return ScenarioConfig(families=fams, benign_rate=benign_rate, label_noise=label_noise,
                          days=days, seed=seed)


def flip_scenario(sc: ScenarioConfig, flip_day: int, family: str | None = None,
                  switch_context: bool = True) -> ScenarioConfig:
    """Return a copy of ``sc`` in which one family's members turn benign from ``flip_day``.

    With ``switch_context`` the migrated motif is re-annotated user-aware;
    without it the inputs keep their distribution and only the labelling
    function changes.
    """
    if not sc.families:
        raise ScenarioError("flip needs at least one family")
    if family is None:
        active = [f for f in sc.families if f.start <= flip_day <= f.end]
        family = (active or sc.families)[0].name
    return dataclasses.replace(sc, flip_day=flip_day, flip_family=family,
                               flip_switch_context=switch_context)


def _background(rng, alphabet, n_range):
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    labels = rng.integers(0, len(alphabet), size=n)
    nodes = [[i, alphabet[labels[i]], [UA]] for i in range(n)]
    edges = set()
    if n > 1:
        degs = rng.choice([0, 1, 1, 2], size=n)
        for i in range(n):
            for j in rng.choice(n - 1, size=min(int(degs[i]), n - 1), replace=False):
                j = int(j) + (j >= i)
                edges.add((i, j))
    return nodes, edges


def _graft(rng, nodes, edges, fam_motif, keep, n_links, context_override=None):
    base = len(nodes)
    kept = [n for n in fam_motif.nodes
            if n.id == fam_motif.nodes[0].id or rng.random() < keep]
    remap = {}
    for k, n in enumerate(kept):
        remap[n.id] = base + k
        ctx = [context_override] if context_override else sorted(n.contexts)
        nodes.append([base + k, n.label, ctx])
    for s, d in fam_motif.edges:
        if s in remap and d in remap:
            edges.add((remap[s], remap[d]))
    motif_ids = list(remap.values())
    for _ in range(n_links):
        # random control-flow links between the payload and the host code
        b = int(rng.integers(0, base))
        m = motif_ids[int(rng.integers(0, len(motif_ids)))]
        edges.add((m, b) if rng.random() < 0.5 else (b, m))


def generate(sc: ScenarioConfig) -> list:
    """Materialise the stream of ``sc`` as graphs sorted by day."""
    alphabet = sc.alphabet()
    out = []
    for day in range(sc.days):
        rng = np.random.default_rng([sc.seed, day])
        plan = [(None, int(rng.poisson(sc.benign_rate)))]
        plan += [(f, int(rng.poisson(f.rate(day)))) for f in sc.families]
        k = 0
        for fam, count in plan:
            for _ in range(count):
                nodes, edges = _background(rng, alphabet, sc.background_nodes)
                y, tag = -1, None
                if fam is not None:
                    tag = fam.name
                    flipped = sc.flip_family == fam.name and sc.flip_day is not None and day >= sc.flip_day
                    override = UA if flipped and sc.flip_switch_context else None
                    _graft(rng, nodes, edges, fam.motif, sc.motif_keep, sc.graft_edges, override)
                    y = -1 if flipped else fam.label
                if y == -1 and sc.label_noise and rng.random() < sc.label_noise:
                    y = 1
                out.append(ContextualGraph.build(
                    nodes, sorted(edges), graph_id=f"d{day:03d}-{k:05d}", y=y, t=day, family=tag))
                k += 1
    return out


def write_stream(graphs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(serialize_graph(g) + "\n")


def motif_features(fam: FamilySpec, contextual=True) -> list:
    """Height-0 labels of the family's motif nodes, root first."""
    from .cwlk import RelabelParams, relabel
    return list(relabel(fam.motif, RelabelParams(h=0, contextual=contextual)).gamma[0])
