"""Trace records, synchronization metrics, fault-tolerance sweeps and CSV I/O."""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

CSV_HEADER = ("time_ns", "node", "domain", "clock_time_ns", "diff_ns", "cause")
CAUSES = ("sample", "pre_sync", "post_sync")
DEFAULT_EPSILON = 1000


class EmptyTrace(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class MalformedCsv(ValueError):
    pass


class TraceRecord(NamedTuple):
    sim_time: int
    node: str
    domain: int
    local_domain_time: int
    diff: int
    cause: str


class Series(NamedTuple):
    """Sample-only trace of one (node, domain) clock."""
    times: np.ndarray
    diffs: np.ndarray


def series(records: Iterable[TraceRecord], node: str, domain: int, cause: str = "sample") -> Series:
    pts = [(r.sim_time, r.diff) for r in records if r.node == node and r.domain == domain and r.cause == cause]
    arr = np.array(pts, dtype=np.int64).reshape(-1, 2)
    return Series(arr[:, 0], arr[:, 1])


def group_series(records: Iterable[TraceRecord]) -> dict[tuple[str, int], Series]:
    """All sample series keyed by (node, domain), in first-seen order."""
    buckets: dict[tuple[str, int], list[tuple[int, int]]] = {}
    for r in records:
        if r.cause == "sample":
            buckets.setdefault((r.node, r.domain), []).append((r.sim_time, r.diff))
    out = {}
    for key, pts in buckets.items():
        arr = np.array(pts, dtype=np.int64)
        out[key] = Series(arr[:, 0], arr[:, 1])
    return out


def relative_to(trace: Series, reference: Series) -> tuple[np.ndarray, np.ndarray]:
    """``trace.diffs - reference.diffs`` at each trace sample time.

    The second array flags which samples had a reference sample at the same
    instant; unmatched entries of the first array are meaningless.
    """
    idx = np.searchsorted(reference.times, trace.times)
    idx_c = np.minimum(idx, max(len(reference.times) - 1, 0))
    if len(reference.times) == 0:
        return np.zeros_like(trace.diffs), np.zeros(len(trace.times), dtype=bool)
    matched = reference.times[idx_c] == trace.times
    rel = trace.diffs - reference.diffs[idx_c]
    return rel, matched


def convergence_time(trace: Series, epsilon: int, reference: Series | None = None) -> int | None:
    """Earliest sample time after which the clock stays within ``epsilon`` of the reference.

    Without a reference the trace is compared with true time (diff == 0).
    Samples that have no reference sample at the same instant count as out
    of bounds, so a clock whose grandmaster has died never converges.
    """
    if len(trace.times) == 0:
        raise EmptyTrace("trace has no samples")
    if reference is None:
        rel, matched = trace.diffs, np.ones(len(trace.times), dtype=bool)
    else:
        rel, matched = relative_to(trace, reference)
    bad = ~matched | (np.abs(rel) > epsilon)
    if not bad.any():
        return int(trace.times[0])
    last_bad = int(np.flatnonzero(bad)[-1])
    if last_bad == len(trace.times) - 1:
        return None
    return int(trace.times[last_bad + 1])


def divergence_slope(trace: Series, window: tuple[int, int], reference: Series | None = None) -> float:
    """Least-squares slope of diff against sim time over ``window``, in ppm."""
    t0, t1 = window
    if reference is not None:
        rel, matched = relative_to(trace, reference)
        times = trace.times[matched]
        diffs = rel[matched]
    else:
        times, diffs = trace.times, trace.diffs
    sel = (times >= t0) & (times <= t1)
    x = times[sel].astype(np.float64)
    y = diffs[sel].astype(np.float64)
    if len(x) < 10:
        raise TooFewSamples(f"{len(x)} samples in window, need >= 10")
    x = x - x.mean()
    y = y - y.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise TooFewSamples("all samples at one instant")
    return float(np.dot(x, y)) / denom * 1e6


# -- run summary ------------------------------------------------------------

@dataclass
class PairSummary:
    node: str
    domain: int
    gm: str
    convergence_time: int | None
    max_abs_diff_after_convergence: int | None
    peak_to_peak: int | None
    applied_sync_count: int
    last_sync_time: int | None
    divergence_slope: float | None
    live: bool


@dataclass
class RunSummary:
    epsilon: int
    horizon: int
    domains: dict[int, str]
    pairs: dict[tuple[str, int], PairSummary]
    dropped: dict[str, int] = field(default_factory=dict)
    filtered: dict[str, int] = field(default_factory=dict)

    def pair(self, node: str, domain: int) -> PairSummary:
        return self.pairs[(node, domain)]

    def synced(self, node: str) -> list[int]:
        """Domains in which ``node`` is converged and still receiving corrections."""
        return [d for (n, d), p in self.pairs.items() if n == node and p.live]

    def to_json(self) -> str:
        doc = {
            "epsilon_ns": self.epsilon,
            "horizon_ns": self.horizon,
            "domains": {str(d): gm for d, gm in sorted(self.domains.items())},
            "clocks": [
                {k: v for k, v in asdict(p).items()} for p in self.pairs.values()
            ],
            "dropped_frames": dict(sorted(self.dropped.items())),
            "filtered_frames": dict(sorted(self.filtered.items())),
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def summarize(records: Sequence[TraceRecord], gm_of: dict[int, str], epsilon: int = DEFAULT_EPSILON,
              horizon: int | None = None, counters=None, drops=None,
              stale_after: int | None = None) -> RunSummary:
    """Per-(node, domain) metrics, all measured against the domain grandmaster's trace.

    A pair is ``live`` when it has converged and (if ``stale_after`` is set)
    its last correction happened no earlier than ``stale_after`` before the
    end of the trace.
    """
    groups = group_series(records)
    if horizon is None:
        horizon = max((r.sim_time for r in records), default=0)
    applied: dict[tuple[str, int], int] = {}
    last_sync: dict[tuple[str, int], int] = {}
    for r in records:
        if r.cause == "post_sync":
            key = (r.node, r.domain)
            applied[key] = applied.get(key, 0) + 1
            last_sync[key] = r.sim_time
    end = max((int(s.times[-1]) for s in groups.values() if len(s.times)), default=horizon)

    pairs: dict[tuple[str, int], PairSummary] = {}
    for (node, d), tr in groups.items():
        gm = gm_of.get(d)
        ref = groups.get((gm, d)) if gm is not None else None
        if ref is None:
            ref = Series(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        conv = convergence_time(tr, epsilon, ref)
        max_abs = p2p = slope = None
        if conv is not None:
            rel, _ = relative_to(tr, ref)
            tail = rel[tr.times >= conv]
            max_abs = int(np.abs(tail).max())
            p2p = int(tail.max() - tail.min())
        else:
            start = last_sync.get((node, d), 0)
            for reference in ((ref,) if len(ref.times) else ()) + (None,):
                try:
                    slope = round(divergence_slope(tr, (start, end), reference), 6)
                    break
                except TooFewSamples:
                    continue
        if counters is not None and (node, d) in counters:
            n_applied = counters[(node, d)].applied
        else:
            n_applied = applied.get((node, d), 0)
        ls = last_sync.get((node, d))
        live = conv is not None
        if live and stale_after is not None and node != gm:
            live = bool(ls is not None and ls >= end - stale_after)
        pairs[(node, d)] = PairSummary(node, d, gm or "", conv, max_abs, p2p, int(n_applied),
                                       ls, slope, bool(live))

    dropped: dict[str, int] = {}
    filtered: dict[str, int] = {}
    for rec in drops or ():
        node = rec.port.rsplit(".", 1)[0]
        target = filtered if rec.reason == "blackhole" else dropped
        target[node] = target.get(node, 0) + 1
    return RunSummary(epsilon, horizon, dict(gm_of), pairs, dropped, filtered)


# -- fault tolerance ----------------------------------------------------------

@dataclass
class FaultSweep:
    k: int
    witness: tuple | None
    runs: int
    outcomes: list[tuple[tuple, bool]] = field(default_factory=list)


def _all_ecus_synced(cfg, epsilon: int) -> bool:
    from .simulation import run_scenario

    summary = run_scenario(cfg).summary(epsilon)
    return all(summary.synced(ecu) for ecu in cfg.ecus())


def faults_tolerated(base, family: Sequence, epsilon: int = DEFAULT_EPSILON, jobs: int = 1) -> FaultSweep:
    """Largest k such that every k-subset of ``family`` leaves all ECUs synchronized.

    Subsets are checked exhaustively, smallest first. The first failing
    subset (of size k + 1) is returned as the witness. ``k == -1`` means the
    base scenario fails on its own.
    """
    from dataclasses import replace

    family = list(family)
    outcomes: list[tuple[tuple, bool]] = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for size in range(len(family) + 1):
            subsets = list(itertools.combinations(family, size))
            cfgs = [replace(base, events=tuple(base.events) + tuple(s)) for s in subsets]
            if pool is not None:
                oks = list(pool.map(_all_ecus_synced, cfgs, itertools.repeat(epsilon)))
            else:
                oks = [_all_ecus_synced(c, epsilon) for c in cfgs]
            outcomes.extend(zip(subsets, oks))
            for subset, ok in zip(subsets, oks):
                if not ok:
                    return FaultSweep(size - 1, subset, len(outcomes), outcomes)
    finally:
        if pool is not None:
            pool.shutdown()
    return FaultSweep(len(family), None, len(outcomes), outcomes)


# -- CSV ------------------------------------------------------------------------

def format_csv(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for r in records:
        buf.write(f"{r.sim_time},{r.node},{r.domain},{r.local_domain_time},{r.diff},{r.cause}\n")
    return buf.getvalue()


def emit_csv(records: Iterable[TraceRecord], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_csv(records))
    return path


def parse_csv(text: str) -> list[TraceRecord]:
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise MalformedCsv("missing header") from None
    if tuple(header) != CSV_HEADER:
        raise MalformedCsv(f"unexpected header {','.join(header)!r}")
    out = []
    for lineno, row in enumerate(rows, 2):
        if len(row) != 6:
            raise MalformedCsv(f"line {lineno}: expected 6 fields, got {len(row)}")
        try:
            t, node, dom, ct, diff, cause = row
            rec = TraceRecord(int(t), node, int(dom), int(ct), int(diff), cause)
        except ValueError:
            raise MalformedCsv(f"line {lineno}: non-integer field") from None
        if cause not in CAUSES:
            raise MalformedCsv(f"line {lineno}: unknown cause {cause!r}")
        if rec.local_domain_time - rec.sim_time != rec.diff:
            raise MalformedCsv(f"line {lineno}: diff_ns != clock_time_ns - time_ns")
        out.append(rec)
    return out


def read_csv(path: str | Path) -> list[TraceRecord]:
    return parse_csv(Path(path).read_text(encoding="utf-8"))
