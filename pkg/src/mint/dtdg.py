"""Discrete-time dynamic graphs built from transaction edge streams.

An edge stream (one row per transfer) is bucketed into daily snapshots,
labelled with the weekly growth property and split chronologically into
train / validation / test segments.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SECONDS_PER_DAY = 86400
CSV_HEADER = ("source", "target", "timestamp", "weight")
STATS_COLUMNS = (
    "Token", "#Node", "#Transaction", "#Snapshots", "Growth rate", "Novelty", "Surprise",
)
STORE_VERSION = 1


class ParseError(ValueError):
    """Malformed edge-stream input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class EdgeEvent:
    source: str
    target: str
    timestamp: int
    weight: float

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if not self.weight >= 0:
            raise ValueError(f"weight must be nonnegative, got {self.weight}")


@dataclass
class Snapshot:
    """One day of transactions.

    Nodes are dense integer indices assigned in order of first appearance,
    so the set of nodes active up to and including this day is simply
    ``range(n_active)``.
    """

    day_index: int
    n_active: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    @property
    def nodes(self) -> range:
        return range(self.n_active)

    @property
    def edge_count(self) -> int:
        return int(self.src.shape[0])


@dataclass(frozen=True)
class LabelParams:
    n: int = 7
    delta1: int = 1
    delta2: int = 7

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.delta1 <= self.delta2:
            raise ValueError("need 0 <= delta1 <= delta2")


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split over the *labelled* snapshots.

    ``train_end`` and ``val_end`` are exclusive positions in the sequence of
    labelled days; everything from ``val_end`` to ``n_labeled`` is test.
    """

    train_end: int
    val_end: int
    n_labeled: int

    def __post_init__(self):
        if not 0 < self.train_end < self.val_end < self.n_labeled:
            raise ValueError(f"invalid split {self}")


@dataclass
class NetworkStats:
    name: str
    node_count: int
    transaction_count: int
    snapshot_count: int
    growth_rate: float
    novelty: float
    surprise: float

    def as_row(self) -> dict:
        return dict(zip(STATS_COLUMNS, (
            self.name, self.node_count, self.transaction_count, self.snapshot_count,
            self.growth_rate, self.novelty, self.surprise,
        )))


@dataclass
class TemporalGraph:
    name: str
    snapshots: Sequence[Snapshot]
    node_ids: list[str]
    label_params: LabelParams | None = None
    # aligned with snapshots; -1 marks days without a complete label window
    labels: np.ndarray | None = None
    split: SplitSpec | None = None
    first_day: int = 0  # absolute day number (timestamp // 86400) of snapshot 0
    meta: dict = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.node_ids)

    @property
    def edge_counts(self) -> np.ndarray:
        return np.array([s.edge_count for s in self.snapshots], dtype=np.int64)

    @property
    def labeled_days(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError(f"{self.name}: graph is not labelled")
        return np.flatnonzero(self.labels >= 0)

    def segment(self, name: str) -> np.ndarray:
        """Snapshot indices of the labelled days in ``train``, ``val`` or ``test``."""
        if self.split is None:
            raise ValueError(f"{self.name}: graph has no split")
        days = self.labeled_days
        sp = self.split
        bounds = {"train": (0, sp.train_end), "val": (sp.train_end, sp.val_end),
                  "test": (sp.val_end, sp.n_labeled)}
        lo, hi = bounds[name]
        return days[lo:hi]

    def stop(self, name: str) -> int:
        """Exclusive snapshot index at which segment ``name`` ends."""
        return int(self.segment(name)[-1]) + 1


# ---------------------------------------------------------------------------
# ingestion and discretization
# ---------------------------------------------------------------------------

def _parse_row(row: list[str], line: int) -> EdgeEvent:
    if len(row) != 4:
        raise ParseError(f"expected 4 fields, got {len(row)}", line)
    source, target, ts, w = (f.strip() for f in row)
    if not source or not target:
        raise ParseError("empty node id", line)
    try:
        timestamp = int(ts)
    except ValueError:
        raise ParseError(f"timestamp is not an integer: {ts!r}", line) from None
    try:
        weight = float(w)
    except ValueError:
        raise ParseError(f"weight is not a number: {w!r}", line) from None
    if timestamp < 0:
        raise ParseError(f"negative timestamp {timestamp}", line)
    if not (weight >= 0 and math.isfinite(weight)):
        raise ParseError(f"weight must be finite and nonnegative: {w!r}", line)
    return EdgeEvent(source, target, timestamp, weight)


def ingest_edge_stream(path: str | Path) -> list[EdgeEvent]:
    """Read a ``source,target,timestamp,weight`` CSV into time-sorted events.

    The header row is optional. Line numbers in errors are physical file
    lines (1-based).
    """
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            if line == 1 and tuple(f.strip().lower() for f in row) == CSV_HEADER:
                continue
            events.append(_parse_row(row, line))
    if not events:
        raise ParseError(f"no events in {path}")
    # sorted() is stable, so same-second events keep file order
    return sorted(events, key=lambda e: e.timestamp)


def write_edge_stream(events: Iterable[EdgeEvent], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for e in events:
            writer.writerow([e.source, e.target, e.timestamp, repr(float(e.weight))])


def node_index(events: Sequence[EdgeEvent]) -> dict[str, int]:
    """Dense node indices in order of first appearance (source before target)."""
    index: dict[str, int] = {}
    for e in events:
        for node in (e.source, e.target):
            if node not in index:
                index[node] = len(index)
    return index


def discretize(events: Sequence[EdgeEvent], index: dict[str, int] | None = None) -> list[Snapshot]:
    """Bucket sorted events into one snapshot per calendar (UTC) day.

    Days without events between the first and last event day produce empty
    snapshots, so day indices are consecutive.
    """
    if not events:
        raise ValueError("no events to discretize")
    if index is None:
        index = node_index(events)
    ts = np.fromiter((e.timestamp for e in events), dtype=np.int64, count=len(events))
    if np.any(np.diff(ts) < 0):
        raise ValueError("events must be sorted by timestamp")
    days = ts // SECONDS_PER_DAY
    days -= days[0]
    src = np.fromiter((index[e.source] for e in events), dtype=np.int64, count=len(events))
    dst = np.fromiter((index[e.target] for e in events), dtype=np.int64, count=len(events))
    weight = np.fromiter((e.weight for e in events), dtype=np.float64, count=len(events))
    # first appearance order makes the active set a prefix of the index range
    seen = np.maximum.accumulate(np.maximum(src, dst)) + 1

    n_days = int(days[-1]) + 1
    bounds = np.searchsorted(days, np.arange(n_days + 1), side="left")
    snapshots = []
    n_active = 0
    for d in range(n_days):
        lo, hi = bounds[d], bounds[d + 1]
        if hi > lo:
            n_active = int(seen[hi - 1])
        snapshots.append(Snapshot(d, n_active, src[lo:hi], dst[lo:hi], weight[lo:hi]))
    return snapshots


# ---------------------------------------------------------------------------
# labels and splits
# ---------------------------------------------------------------------------

def _window_sums(counts: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Sum of counts over inclusive day ranges [lo, hi]."""
    csum = np.concatenate([[0], np.cumsum(counts)])
    return csum[hi + 1] - csum[lo]


def compute_labels(g: TemporalGraph | Sequence[int], p: LabelParams = LabelParams()) -> np.ndarray:
    """Growth labels aligned with the snapshots.

    Day ``t`` is labelled 1 when the edge count over days
    ``[t + delta1, t + delta2]`` strictly exceeds the count over the current
    window ``[t - n + 1, t]``. Days whose current or future window falls
    outside the data get -1.
    """
    counts = g.edge_counts if isinstance(g, TemporalGraph) else np.asarray(g, dtype=np.int64)
    T = len(counts)
    if T < p.n + p.delta2:
        raise ValueError("insufficient snapshots for labeling")
    labels = np.full(T, -1, dtype=np.int8)
    t = np.arange(p.n - 1, T - p.delta2)
    future = _window_sums(counts, t + p.delta1, t + p.delta2)
    current = _window_sums(counts, t - p.n + 1, t)
    labels[t] = (future > current).astype(np.int8)
    return labels


def split_counts(n_labeled: int, ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)) -> SplitSpec:
    if n_labeled < 3:
        raise ValueError(f"need at least 3 labelled snapshots to split, got {n_labeled}")
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) <= 0:
        raise ValueError(f"bad split ratios {ratios}")
    # the epsilon keeps e.g. 0.7 * 650 = 454.99999... from flooring to 454
    sizes = [math.floor(ratios[0] * n_labeled + 1e-9), math.floor(ratios[1] * n_labeled + 1e-9)]
    sizes.append(n_labeled - sum(sizes))
    # degenerate tiny graphs: steal one snapshot from the largest neighbour
    for i in range(3):
        if sizes[i] == 0:
            neighbours = [j for j in (i - 1, i + 1) if 0 <= j < 3]
            donor = max(neighbours, key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[i] += 1
    return SplitSpec(sizes[0], sizes[0] + sizes[1], n_labeled)


def chronological_split(g: TemporalGraph, ratios=(0.70, 0.15, 0.15)) -> SplitSpec:
    return split_counts(len(g.labeled_days), ratios)


def build_temporal_graph(
    name: str,
    events: Sequence[EdgeEvent],
    label_params: LabelParams = LabelParams(),
    ratios=(0.70, 0.15, 0.15),
) -> TemporalGraph:
    """Discretize, label and split an event stream in one go."""
    index = node_index(events)
    snapshots = discretize(events, index)
    g = TemporalGraph(name, snapshots, list(index), first_day=events[0].timestamp // SECONDS_PER_DAY)
    label(g, label_params, ratios)
    return g


def label(g: TemporalGraph, label_params: LabelParams = LabelParams(), ratios=(0.70, 0.15, 0.15)) -> TemporalGraph:
    g.label_params = label_params
    g.labels = compute_labels(g, label_params)
    g.split = chronological_split(g, ratios)
    return g


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def _pair_keys(s: Snapshot, n_nodes: int) -> np.ndarray:
    return np.unique(s.src * n_nodes + s.dst)


def novelty(g: TemporalGraph) -> float:
    """Mean per-snapshot fraction of directed pairs not seen on earlier days."""
    n = max(g.node_count, 1)
    seen = np.empty(0, dtype=np.int64)
    ratios = []
    for s in g.snapshots:
        if s.edge_count == 0:
            continue
        keys = _pair_keys(s, n)
        new = ~np.isin(keys, seen, assume_unique=True)
        ratios.append(int(new.sum()) / keys.size)
        seen = np.union1d(seen, keys)
    if not ratios:
        raise ValueError(f"{g.name}: graph has no edges")
    return sum(ratios) / len(ratios)


def _segment_pairs(g: TemporalGraph, days: Iterable[int]) -> np.ndarray:
    n = max(g.node_count, 1)
    parts = [_pair_keys(g.snapshots[d], n) for d in days]
    return np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)


def surprise(g: TemporalGraph) -> float:
    """Fraction of distinct test-split pairs that never occur in the train split.

    The train side covers every snapshot up to the end of the train segment
    (including the unlabelled warm-up days); the test side covers the
    labelled test days.
    """
    train = _segment_pairs(g, range(g.stop("train")))
    test = _segment_pairs(g, g.segment("test"))
    if test.size == 0:
        raise ValueError(f"{g.name}: test split has no edges")
    return float((~np.isin(test, train, assume_unique=True)).sum() / test.size)


def growth_rate(labels) -> float:
    labels = np.asarray(labels)
    labels = labels[labels >= 0]
    if labels.size == 0:
        raise ValueError("no labels")
    return float(labels.mean())


def node_overlap(a: TemporalGraph | Iterable[str], b: TemporalGraph | Iterable[str]) -> float:
    """Fraction of ``a``'s node identifiers that also occur in ``b``."""
    na = set(a.node_ids if isinstance(a, TemporalGraph) else a)
    nb = set(b.node_ids if isinstance(b, TemporalGraph) else b)
    if not na or not nb:
        raise ValueError("empty node set")
    return len(na & nb) / len(na)


def network_stats(g: TemporalGraph) -> NetworkStats:
    return NetworkStats(
        name=g.name,
        node_count=g.node_count,
        transaction_count=int(g.edge_counts.sum()),
        snapshot_count=len(g.snapshots),
        growth_rate=growth_rate(g.labels),
        novelty=novelty(g),
        surprise=surprise(g),
    )


def write_stats_csv(stats: Sequence[NetworkStats], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=STATS_COLUMNS)
        writer.writeheader()
        for s in stats:
            writer.writerow(s.as_row())


# ---------------------------------------------------------------------------
# preprocessed store
# ---------------------------------------------------------------------------

def save_store(g: TemporalGraph, directory: str | Path) -> Path:
    """Write ``g`` as manifest + node table + labels + one edge file per day."""
    directory = Path(directory)
    (directory / "edges").mkdir(parents=True, exist_ok=True)
    p = g.label_params
    manifest = {
        "format_version": STORE_VERSION,
        "name": g.name,
        "first_day": g.first_day,
        "n_snapshots": len(g.snapshots),
        "node_count": g.node_count,
        "label_params": None if p is None else {"n": p.n, "delta1": p.delta1, "delta2": p.delta2},
        "split": None if g.split is None else {
            "train_end": g.split.train_end, "val_end": g.split.val_end, "n_labeled": g.split.n_labeled,
        },
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    with open(directory / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "node_id"])
        writer.writerows(enumerate(g.node_ids))
    if g.labels is not None:
        with open(directory / "labels.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["day_index", "label"])
            writer.writerows((d, int(y)) for d, y in enumerate(g.labels) if y >= 0)
    for s in g.snapshots:
        with open(directory / "edges" / f"day_{s.day_index:05d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source", "target", "weight"])
            writer.writerows(zip(s.src.tolist(), s.dst.tolist(), map(repr, s.weight.tolist())))
    return directory


def load_store(directory: str | Path) -> TemporalGraph:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no store manifest in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != STORE_VERSION:
        raise ValueError(f"unsupported store version {manifest.get('format_version')}")
    with open(directory / "nodes.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    node_ids = [r[1] for r in rows]
    snapshots = []
    n_active = 0
    for d in range(manifest["n_snapshots"]):
        data = np.loadtxt(directory / "edges" / f"day_{d:05d}.csv", delimiter=",", skiprows=1, ndmin=2)
        if data.size == 0:
            data = np.empty((0, 3))
        src, dst = data[:, 0].astype(np.int64), data[:, 1].astype(np.int64)
        if src.size:
            n_active = max(n_active, int(max(src.max(), dst.max())) + 1)
        snapshots.append(Snapshot(d, n_active, src, dst, data[:, 2].astype(np.float64)))
    g = TemporalGraph(manifest["name"], snapshots, node_ids, first_day=manifest["first_day"])
    if manifest["label_params"] is not None:
        g.label_params = LabelParams(**manifest["label_params"])
        g.labels = compute_labels(g, g.label_params)
    if manifest["split"] is not None:
        g.split = SplitSpec(**manifest["split"])
    return g


def find_stores(root: str | Path) -> list[Path]:
    """Store directories directly under ``root`` (or ``root`` itself)."""
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    return sorted(p.parent for p in root.glob("*/manifest.json"))


# ---------------------------------------------------------------------------
# synthetic networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    """Growth profile for :func:`generate_synthetic`.

    trend:
      ``alternating``  log-intensity rises for ``phase_days`` then falls for
                       ``phase_days`` (peak/trough ratio ``amplitude``)
      ``doubling``     intensity doubles every 7 days
      ``shrinking``    intensity halves every 7 days
      ``flat``         constant intensity
    churn is the probability that a transaction's source is a brand-new
    address; churn=1 makes every edge novel.
    """

    days: int = 140
    base_intensity: float = 40.0
    trend: str = "alternating"
    phase_days: int = 7
    amplitude: float = 4.0
    phase_offset: int = 0
    node_pool: int = 60
    churn: float = 0.2
    noise: str = "poisson"
    weight_scale: float = 1.0
    start_day: int = 18519  # 2020-09-14

    def intensity(self) -> np.ndarray:
        t = np.arange(self.days, dtype=np.float64)
        if self.trend == "alternating":
            p = (t + self.phase_offset) % (2 * self.phase_days)
            tri = np.where(p < self.phase_days, p, 2 * self.phase_days - p) / self.phase_days
            return self.base_intensity * self.amplitude ** tri
        if self.trend == "doubling":
            return self.base_intensity * 2.0 ** (t / 7)
        if self.trend == "shrinking":
            return self.base_intensity * 0.5 ** (t / 7)
        if self.trend == "flat":
            return np.full_like(t, self.base_intensity)
        raise ValueError(f"unknown trend {self.trend!r}")


def _check_regime(r: Regime, label_params: LabelParams) -> None:
    problems = []
    if r.base_intensity <= 0:
        problems.append("base_intensity must be positive")
    if r.days < label_params.n + label_params.delta2:
        problems.append(f"days must be >= {label_params.n + label_params.delta2}")
    if r.node_pool < 2:
        problems.append("node_pool must be >= 2")
    if not 0 <= r.churn <= 1:
        problems.append("churn must be in [0, 1]")
    if r.amplitude <= 0 or r.phase_days < 1:
        problems.append("amplitude and phase_days must be positive")
    if r.noise not in ("poisson", "none"):
        problems.append(f"unknown noise {r.noise!r}")
    if r.weight_scale < 0:
        problems.append("weight_scale must be nonnegative")
    if problems:
        raise ValueError("infeasible regime: " + "; ".join(problems))


def synthetic_events(seed: int, regime: Regime = Regime(), label_params: LabelParams = LabelParams()) -> list[EdgeEvent]:
    _check_regime(regime, label_params)
    rng = np.random.default_rng(seed)
    lam = regime.intensity()
    if regime.noise == "poisson":
        counts = rng.poisson(lam)
    else:
        counts = np.rint(lam).astype(np.int64)
    # the first day must carry an event so day 0 is the first snapshot
    counts[0] = max(counts[0], 1)
    prefix = f"s{seed}n"
    pool = regime.node_pool
    events = []
    for d, k in enumerate(counts):
        day0 = (regime.start_day + d) * SECONDS_PER_DAY
        secs = np.sort(rng.integers(0, SECONDS_PER_DAY, size=k))
        fresh = rng.random(k) < regime.churn
        for j in range(k):
            if fresh[j]:
                src = pool
                pool += 1
                dst = int(rng.integers(0, pool - 1))
            else:
                src = int(rng.integers(0, pool))
                dst = int(rng.integers(0, pool - 1))
                dst += dst >= src
            w = float(rng.lognormal(0.0, 1.0) * regime.weight_scale)
            events.append(EdgeEvent(f"{prefix}{src}", f"{prefix}{dst}", int(day0 + secs[j]), w))
    return events


def generate_synthetic(
    seed: int,
    regime: Regime = Regime(),
    label_params: LabelParams = LabelParams(),
    name: str | None = None,
) -> TemporalGraph:
    """Deterministic synthetic transaction network with a planted trend."""
    events = synthetic_events(seed, regime, label_params)
    return build_temporal_graph(name or f"synthetic-{seed}", events, label_params)
