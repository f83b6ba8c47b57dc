"""Worker location data: GPS trace ingestion and synthetic generators.

Samples are ``(G, N, 2)`` arrays of per-time-slot worker locations,
normalized to the unit square by the task-area bounds.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import Rect, SystemConfig, Worker, worst_case_distance

log = logging.getLogger(__name__)

TRACE_HEADER = ("worker_id", "timestamp", "x", "y")
SYNTHETIC_KINDS = ("uniform", "gaussian_mixture", "rectangles")


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    worker_id: int
    timestamp: float
    x: float
    y: float


@dataclass
class WorkerTrace:
    """One worker's records sorted by time, restricted to the task area."""

    worker_id: int
    times: np.ndarray
    points: np.ndarray
    working_area: Rect
    location: np.ndarray
    D: float

    @property
    def n_records(self) -> int:
        return len(self.times)

    def worker(self, b: float) -> Worker:
        return Worker(self.worker_id, b, tuple(self.location), self.working_area, self.D)


@dataclass
class TraceSet:
    traces: dict[int, WorkerTrace]
    dropped: int
    n_records: int

    @property
    def ids(self) -> list[int]:
        return sorted(self.traces)

    def most_recorded(self, n: int) -> list[int]:
        """Ids of the ``n`` workers with the most records, ties by smaller id."""
        ranked = sorted(self.traces, key=lambda i: (-self.traces[i].n_records, i))
        return sorted(ranked[:n])


@dataclass
class SampleSet:
    samples: np.ndarray
    area: Rect
    provenance: str
    worker_ids: tuple[int, ...] = ()
    slot_times: np.ndarray | None = None
    skipped: int = 0

    def __post_init__(self):
        s = self.samples
        if s.ndim != 3 or s.shape[-1] != 2:
            raise ValueError("samples must be (G, N, 2)")
        if s.size and (s.min() < -1e-12 or s.max() > 1 + 1e-12):
            raise ValueError("normalized samples must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_workers(self) -> int:
        return self.samples.shape[1]

    def original(self) -> np.ndarray:
        return self.area.denormalize(self.samples)


def read_traces(path) -> list[TraceRecord]:
    """Parse a ``worker_id,timestamp,x,y`` CSV; errors name the line."""
    path = Path(path)
    records: list[TraceRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != TRACE_HEADER:
            raise TraceFormatError(f"{path}:1: expected header {','.join(TRACE_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise TraceFormatError(f"{path}:{line}: expected 4 fields, got {len(row)}")
            try:
                wid = int(row[0])
                t, x, y = (float(v) for v in row[1:])
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{line}: {exc}") from None
            if not all(map(math.isfinite, (t, x, y))):
                raise TraceFormatError(f"{path}:{line}: non-finite value")
            records.append(TraceRecord(wid, t, x, y))
    if not records:
        raise TraceFormatError(f"{path}: no records")
    return records


def ingest_traces(csv_path, cfg: SystemConfig) -> TraceSet:
    """Per-worker traces with working area, location and worst-case distance.

    The working area is the bounding box of a worker's records clipped to
    the task area; the location is the centroid of its in-area records.
    Workers without any in-area record are dropped.
    """
    area = cfg.task_area
    by_worker: dict[int, list[TraceRecord]] = {}
    records = read_traces(csv_path)
    for rec in records:
        by_worker.setdefault(rec.worker_id, []).append(rec)

    traces: dict[int, WorkerTrace] = {}
    dropped = 0
    for wid in sorted(by_worker):
        recs = sorted(by_worker[wid], key=lambda r: r.timestamp)
        xy = np.array([(r.x, r.y) for r in recs])
        inside = np.array([area.contains(p) for p in xy])
        if not inside.any():
            dropped += 1
            continue
        lo = area.clip(xy.min(axis=0))
        hi = area.clip(xy.max(axis=0))
        wa = Rect(lo[0], hi[0], lo[1], hi[1])
        times = np.array([r.timestamp for r in recs])[inside]
        pts = xy[inside]
        traces[wid] = WorkerTrace(wid, times, pts, wa, pts.mean(axis=0),
                                  worst_case_distance(wa, area, cfg.h))
    if dropped:
        log.warning("dropped %d worker(s) with no records inside the task area", dropped)
    return TraceSet(traces, dropped, len(records))


def build_samples(traces: TraceSet, employed_ids: Sequence[int], slot: float,
                  area: Rect) -> SampleSet:
    """One sample per time slot holding every employed worker's latest record.

    Slots start at the earliest record of the employed workers and are
    half-open. Slots where some employed worker has no record are skipped.
    """
    if not slot > 0:
        raise ValueError("slot length must be positive")
    ids = list(employed_ids)
    missing = [i for i in ids if i not in traces.traces]
    if missing:
        raise KeyError(f"no trace for worker(s) {missing}")
    if not ids:
        raise ValueError("no employed workers")
    t0 = min(traces.traces[i].times[0] for i in ids)
    t1 = max(traces.traces[i].times[-1] for i in ids)
    n_slots = int(math.floor((t1 - t0) / slot)) + 1

    latest = np.full((n_slots, len(ids), 2), np.nan)
    for k, wid in enumerate(ids):
        tr = traces.traces[wid]
        slot_idx = np.floor((tr.times - t0) / slot).astype(int)
        # records are time-sorted, so the last write per slot is the latest
        latest[slot_idx, k] = tr.points
    complete = ~np.isnan(latest).any(axis=(1, 2))
    skipped = int(n_slots - complete.sum())
    if not complete.any():
        raise ValueError("no time slot contains every employed worker")
    samples = area.normalize(latest[complete])
    slot_times = t0 + slot * np.flatnonzero(complete)
    return SampleSet(np.clip(samples, 0.0, 1.0), area, "traces", tuple(ids), slot_times, skipped)


# --- synthetic -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic location model in normalized coordinates.

    ``gaussian_mixture`` draws each location from ``centers`` with common
    standard deviation ``sd``; ``assign='iid'`` picks a component per
    location, ``'worker'`` fixes worker ``i`` to component ``i mod M``.
    ``rectangles`` draws worker ``i`` uniformly from ``rects[i mod M]``.
    """

    kind: str = "uniform"
    centers: tuple[tuple[float, float], ...] = ()
    sd: float = 0.05
    mix_weights: tuple[float, ...] = ()
    assign: str = "iid"
    rects: tuple[tuple[float, float, float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.kind == "gaussian_mixture":
            if not self.centers:
                raise ValueError("gaussian_mixture needs at least one center")
            if not self.sd > 0:
                raise ValueError("sd must be positive")
            if self.assign not in ("iid", "worker"):
                raise ValueError("assign must be 'iid' or 'worker'")
            if self.mix_weights and (len(self.mix_weights) != len(self.centers)
                                     or min(self.mix_weights) < 0 or sum(self.mix_weights) <= 0):
                raise ValueError("mix_weights must be nonnegative, one per center")
        if self.kind == "rectangles":
            if not self.rects:
                raise ValueError("rectangles needs at least one rectangle")
            for r in self.rects:
                Rect(*r)
                if min(r) < 0 or max(r) > 1:
                    raise ValueError("rectangles must lie in the unit square")

    @property
    def tag(self) -> str:
        return f"synthetic:{self.kind}"

    def working_area(self, index: int) -> Rect:
        """Normalized working area of the ``index``-th worker (0-based)."""
        if self.kind == "rectangles":
            return Rect(*self.rects[index % len(self.rects)])
        return Rect(0.0, 1.0, 0.0, 1.0)


def gen_synthetic(spec: SyntheticSpec, n_workers: int, n_samples: int, seed,
                  area: Rect | None = None) -> SampleSet:
    """Seed-deterministic synthetic sample set in normalized coordinates."""
    if n_workers < 1 or n_samples < 0:
        raise ValueError("need n_workers >= 1 and n_samples >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (n_samples, n_workers)
    if spec.kind == "uniform":
        pts = rng.uniform(0.0, 1.0, shape + (2,))
    elif spec.kind == "gaussian_mixture":
        centers = np.asarray(spec.centers, dtype=float)
        if spec.assign == "worker":
            comp = np.broadcast_to(np.arange(n_workers) % len(centers), shape)
        else:
            p = None
            if spec.mix_weights:
                p = np.asarray(spec.mix_weights, dtype=float)
                p = p / p.sum()
            comp = rng.choice(len(centers), size=shape, p=p)
        pts = np.clip(centers[comp] + rng.normal(0.0, spec.sd, shape + (2,)), 0.0, 1.0)
    else:
        boxes = np.array([spec.working_area(i).as_tuple() for i in range(n_workers)])
        u = rng.uniform(0.0, 1.0, shape + (2,))
        pts = np.stack([boxes[:, 0] + u[..., 0] * (boxes[:, 1] - boxes[:, 0]),
                        boxes[:, 2] + u[..., 1] * (boxes[:, 3] - boxes[:, 2])], axis=-1)
    return SampleSet(pts, area or Rect(0.0, 1.0, 0.0, 1.0), spec.tag,
                     tuple(range(1, n_workers + 1)))


def write_samples_csv(samples: SampleSet, path) -> None:
    """Long-format CSV: ``sample,worker_id,x,y`` in task-area units."""
    orig = samples.original()
    ids = samples.worker_ids or tuple(range(1, samples.n_workers + 1))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "worker_id", "x", "y"])
        for g, row in enumerate(orig):
            for wid, (x, y) in zip(ids, row):
                w.writerow([g, wid, f"{x:.12g}", f"{y:.12g}"])
