"""Drifting oscillators and per-domain disciplined clocks.

An :class:`Oscillator` maps simulation time to the node's raw local time as a
piecewise-affine function. Rates are held as integer parts-per-trillion
offsets from nominal so the mapping is evaluated in exact integer arithmetic
(floor rounding to the nanosecond).

A :class:`DomainClock` is an affine correction on top of the oscillator; one
exists per (node, gPTP domain).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import NamedTuple

from .simcore import S, RngStream

PPT_PER_PPM = 1_000_000
_PPT_SCALE = 10**12
MAX_CONSTANT_PPM = 1e4


@dataclass(frozen=True)
class DriftModel:
    """How an oscillator's rate departs from nominal.

    ``kind`` is ``"none"``, ``"constant"`` (uses ``rate_ppm``) or
    ``"random_walk"``: every ``step_interval`` ns the rate is redrawn
    uniformly within ``±step_bound_ppm`` of nominal. A bound of 1 ppm is the
    same thing as 1 µs of drift per second.
    """

    kind: str = "none"
    rate_ppm: float = 0.0
    step_bound_ppm: float = 0.0
    step_interval: int = S

    def __post_init__(self):
        if self.kind not in ("none", "constant", "random_walk"):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.kind == "constant" and abs(self.rate_ppm) > MAX_CONSTANT_PPM:
            raise ValueError(f"constant drift {self.rate_ppm} ppm exceeds ±{MAX_CONSTANT_PPM:g} ppm")
        if self.kind == "random_walk":
            if self.step_interval <= 0:
                raise ValueError("random_walk step_interval must be > 0")
            if not 0 <= self.step_bound_ppm < 1e6:
                raise ValueError("random_walk step bound must be in [0, 1e6) ppm")

    @classmethod
    def none(cls) -> "DriftModel":
        return cls("none")

    @classmethod
    def constant(cls, ppm: float) -> "DriftModel":
        return cls("constant", rate_ppm=float(ppm))

    @classmethod
    def random_walk(cls, step_bound_ppm: float, step_interval: int = S) -> "DriftModel":
        return cls("random_walk", step_bound_ppm=float(step_bound_ppm), step_interval=int(step_interval))

    def rate_bound_ppm(self) -> float:
        """Largest possible |rate - 1| in ppm."""
        if self.kind == "constant":
            return abs(self.rate_ppm)
        if self.kind == "random_walk":
            return self.step_bound_ppm
        return 0.0


class Segment(NamedTuple):
    start: int          # sim ns
    rate_ppt: int       # rate = 1 + rate_ppt / 1e12
    local_at_start: int

    @property
    def rate(self) -> float:
        return 1.0 + self.rate_ppt / _PPT_SCALE


def _ppm_to_ppt(ppm: float) -> int:
    return int(round(ppm * PPT_PER_PPM))


class Oscillator:
    """Free-running hardware clock of one node."""

    def __init__(self, node: str, drift: DriftModel, rng: RngStream | None = None,
                 initial_offset: int = 0) -> None:
        if drift.kind == "random_walk" and rng is None:
            raise ValueError("random_walk drift needs an RngStream")
        self.node = node
        self.drift = drift
        self.rng = rng
        self.segments: list[Segment] = [Segment(0, self._draw_rate(), int(initial_offset))]
        self._starts = [0]

    def _draw_rate(self) -> int:
        d = self.drift
        if d.kind == "constant":
            return _ppm_to_ppt(d.rate_ppm)
        if d.kind == "random_walk":
            return _ppm_to_ppt(self.rng.uniform(-d.step_bound_ppm, d.step_bound_ppm))
        return 0

    def advance_drift(self, until: int) -> int:
        """Materialize every rate segment starting before ``until``."""
        if self.drift.kind != "random_walk":
            return len(self.segments)
        step = self.drift.step_interval
        segs = self.segments
        while segs[-1].start + step < until:
            last = segs[-1]
            start = last.start + step
            segs.append(Segment(start, self._draw_rate(), _eval(last, start)))
            self._starts.append(start)
        return len(segs)

    def segment_at(self, t: int) -> Segment:
        if t < 0:
            raise ValueError(f"negative sim time {t}")
        self.advance_drift(t)
        i = bisect.bisect_right(self._starts, t) - 1
        return self.segments[i]

    def local_time(self, t: int) -> int:
        return _eval(self.segment_at(t), t)

    def rate(self, t: int) -> float:
        return self.segment_at(t).rate


def _eval(seg: Segment, t: int) -> int:
    dt = t - seg.start
    return seg.local_at_start + dt + (dt * seg.rate_ppt) // _PPT_SCALE


def local_time(osc: Oscillator, t: int) -> int:
    return osc.local_time(t)


def advance_drift(osc: Oscillator, until: int) -> int:
    return osc.advance_drift(until)


class ClockDiff(NamedTuple):
    sim_time: int
    diff: int


@dataclass
class DomainClock:
    """Affine map from raw local time to a node's view of a domain's time.

    ``domain = origin_domain + rate_ratio * (local - origin_local)``; the map
    is the identity until the first correction.
    """

    node: str
    domain: int
    origin_local: int = 0
    origin_domain: int = 0
    rate_ratio: float = 1.0
    last_sync: tuple[int, int] | None = None  # (sim_time, seq)
    corrections: int = 0

    def at_local(self, local: int) -> int:
        delta = local - self.origin_local
        if self.rate_ratio == 1.0:
            return self.origin_domain + delta
        return self.origin_domain + int(round(delta * self.rate_ratio))

    def domain_time(self, osc: Oscillator, t: int) -> int:
        return self.at_local(osc.local_time(t))

    def diff(self, osc: Oscillator, t: int) -> ClockDiff:
        return ClockDiff(t, self.domain_time(osc, t) - t)

    def apply_sync_correction(self, master_estimate: int, at_local: int,
                              rate_ratio: float | None = None) -> tuple[int, int]:
        """Step the clock so that it reads ``master_estimate`` at ``at_local``.

        Returns the domain time at ``at_local`` before and after the step.
        """
        if rate_ratio is not None and rate_ratio <= 0:
            raise ValueError("rate_ratio must be > 0")
        before = self.at_local(at_local)
        self.origin_local = int(at_local)
        self.origin_domain = int(master_estimate)
        if rate_ratio is not None:
            self.rate_ratio = float(rate_ratio)
        self.corrections += 1
        return before, self.at_local(at_local)


def domain_time(clk: DomainClock, osc: Oscillator, t: int) -> int:
    if clk.node != osc.node:
        raise ValueError(f"clock of {clk.node!r} evaluated against oscillator of {osc.node!r}")
    return clk.domain_time(osc, t)


def apply_sync_correction(clk: DomainClock, master_estimate: int, at_local: int,
                          rate_ratio: float | None = None) -> tuple[int, int]:
    return clk.apply_sync_correction(master_estimate, at_local, rate_ratio)
