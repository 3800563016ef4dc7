"""gPTP protocol engine: two-step Sync/Follow_Up and peer-delay measurement.

One :class:`GptpEngine` runs per node and holds the state of every domain the
node takes part in. Port roles are static (no BMCA). Grandmasters emit a Sync
on each master port every ``sync_interval`` and follow it with a Follow_Up
carrying the Sync's precise egress time. Bridges step their own domain clock
on the slave port and relay the pair on their master ports, adding the
ingress link delay and their residence time to the correction field.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, ClassVar

from .clocks import DomainClock
from .netmodel import Frame, Network, NetNode, Port
from .simcore import MS, S, US, EventLog, Scheduler

MASTER = "master"
SLAVE = "slave"
PASSIVE = "passive"
DISABLED = "disabled"
ROLES = (MASTER, SLAVE, PASSIVE, DISABLED)

NRR_BAND = (0.999, 1.001)
NEGATIVE_DELAY_LIMIT = -1 * US


class NoLinkDelay(RuntimeError):
    pass


class NegativeDelay(ValueError):
    pass


class ZeroInterval(ZeroDivisionError):
    pass


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Sync:
    KIND: ClassVar[str] = "sync"
    domain: int
    seq: int

    def log_fields(self):
        return {"domain": self.domain, "seq": self.seq}


@dataclass(frozen=True, slots=True)
class FollowUp:
    KIND: ClassVar[str] = "follow_up"
    domain: int
    seq: int
    precise_origin: int
    correction: int = 0
    rate_ratio: float = 1.0

    def log_fields(self):
        return {"domain": self.domain, "seq": self.seq, "origin": self.precise_origin,
                "correction": self.correction}


@dataclass(frozen=True, slots=True)
class PdelayReq:
    KIND: ClassVar[str] = "pdelay_req"
    seq: int

    def log_fields(self):
        return {"seq": self.seq}


@dataclass(frozen=True, slots=True)
class PdelayResp:
    KIND: ClassVar[str] = "pdelay_resp"
    seq: int
    t2: int

    def log_fields(self):
        return {"seq": self.seq, "t2": self.t2}


@dataclass(frozen=True, slots=True)
class PdelayRespFollowUp:
    KIND: ClassVar[str] = "pdelay_resp_follow_up"
    seq: int
    t3: int

    def log_fields(self):
        return {"seq": self.seq, "t3": self.t3}


MESSAGE_KINDS = tuple(m.KIND for m in (Sync, FollowUp, PdelayReq, PdelayResp, PdelayRespFollowUp))
SYNC_CLASSES = frozenset({Sync.KIND, FollowUp.KIND})


@dataclass(frozen=True)
class EngineConfig:
    sync_interval: int = 125 * MS
    pdelay_interval: int = S
    # first Sync leaves after the first peer-delay exchanges have completed
    sync_start: int = 1 * MS
    use_nrr: bool = False
    use_rate_ratio: bool = False
    residence_time: int = 0
    pdelay_turnaround: int = 0
    link_delay_fallback: int | None = None
    sync_size: int = 64
    follow_up_size: int = 90
    pdelay_req_size: int = 64
    pdelay_resp_size: int = 64
    pdelay_resp_follow_up_size: int = 90

    def __post_init__(self):
        if self.sync_interval <= 0 or self.pdelay_interval <= 0:
            raise ValueError("sync and pdelay intervals must be > 0")
        if self.residence_time < 0 or self.pdelay_turnaround < 0 or self.sync_start < 0:
            raise ValueError("residence_time, pdelay_turnaround and sync_start must be >= 0")

    def size_of(self, kind: str) -> int:
        return getattr(self, f"{kind}_size")


# -- protocol arithmetic ----------------------------------------------------

def compute_master_estimate(precise_origin: int, correction: int, link_delay: int | None) -> int:
    """Grandmaster time at the instant the Sync reached this port."""
    if link_delay is None:
        raise NoLinkDelay("no peer delay measured on the slave port")
    return precise_origin + correction + link_delay


def compute_mean_link_delay(t1: int, t2: int, t3: int, t4: int, nrr: float = 1.0) -> int:
    """Mean one-way link delay from one pdelay exchange.

    ``t1``/``t4`` are the initiator's request egress and response ingress,
    ``t2``/``t3`` the responder's request ingress and response egress. ``nrr``
    is the responder-to-initiator frequency ratio.
    """
    if nrr == 1.0:
        twice = (t4 - t1) - (t3 - t2)
        delay = twice // 2 if twice >= 0 else -((-twice) // 2)
    else:
        delay = int(round((nrr * (t4 - t1) - (t3 - t2)) / 2))
    if delay < NEGATIVE_DELAY_LIMIT:
        raise NegativeDelay(f"mean link delay {delay} ns")
    return max(delay, 0)


@dataclass
class PdelayState:
    req_seq: int = -1
    t1: int | None = None
    t2: int | None = None
    t4: int | None = None
    mean_link_delay: int | None = None
    nrr: float = 1.0
    nrr_flagged: bool = False
    history: deque = field(default_factory=lambda: deque(maxlen=2))
    completed: int = 0
    discarded: int = 0


def update_nrr(state: PdelayState, t3: int, t4: int) -> float:
    """Fold a new (t3, t4) pair into ``state`` and return the neighbor rate ratio."""
    if state.history:
        prev_t3, prev_t4 = state.history[-1]
        dt4 = t4 - prev_t4
        if dt4 == 0:
            state.history.append((t3, t4))
            return state.nrr
        nrr = (t3 - prev_t3) / dt4
        lo, hi = NRR_BAND
        if nrr < lo or nrr > hi:
            state.nrr_flagged = True
            nrr = min(max(nrr, lo), hi)
        state.nrr = nrr
    state.history.append((t3, t4))
    return state.nrr


# -- per-node engine --------------------------------------------------------

@dataclass
class _PendingSync:
    seq: int
    ingress_ts: int
    port: str


@dataclass
class _Relay:
    seq: int
    ingress_ts: int
    egress: dict[str, int] = field(default_factory=dict)
    followup: tuple[int, int, float] | None = None  # (origin, correction incl. link delay, rate ratio)
    sent: set[str] = field(default_factory=set)


@dataclass
class DomainCounters:
    applied: int = 0
    orphan_followups: int = 0
    stale: int = 0
    no_link_delay: int = 0
    ignored: int = 0
    ticks: int = 0


Recorder = Callable[[int, str, int, int, str], None]


class GptpEngine:
    """gPTP state machines of one node, across all of its domains and ports."""

    def __init__(self, node: NetNode, net: Network, cfg: EngineConfig,
                 roles: dict[int, dict[str, str]], gm_domains: set[int],
                 horizon: int, recorder: Recorder | None = None) -> None:
        self.node = node
        self.net = net
        self.sched: Scheduler = net.sched
        self.log: EventLog = net.log
        self.cfg = cfg
        self.horizon = horizon
        self.recorder = recorder
        self.gm_domains = set(gm_domains)
        self.roles = {d: dict(r) for d, r in roles.items()}
        order = list(node.ports)
        self.slave_port: dict[int, str | None] = {}
        self.master_ports: dict[int, list[str]] = {}
        for d, table in self.roles.items():
            slaves = [p for p in order if table.get(p) == SLAVE]
            if len(slaves) > 1:
                raise ValueError(f"{node.id} domain {d}: more than one slave port")
            if d in self.gm_domains and slaves:
                raise ValueError(f"{node.id} is grandmaster of domain {d} but has a slave port")
            self.slave_port[d] = slaves[0] if slaves else None
            self.master_ports[d] = [p for p in order if table.get(p) == MASTER]
        self.clocks = {d: DomainClock(node.id, d) for d in sorted(self.roles)}
        self.pdelay = {name: PdelayState() for name, p in node.ports.items() if p.link is not None}
        self.counters = {d: DomainCounters() for d in self.clocks}
        self.sync_seq = {d: 0 for d in self.gm_domains}
        self.last_applied: dict[int, int] = {}
        self._pending: dict[int, _PendingSync] = {}
        self._relay: dict[int, _Relay] = {}
        node.handler = self

    # -- timers -----------------------------------------------------------

    def start_pdelay(self, at: int = 0) -> None:
        for name in self.pdelay:
            self._at(at, lambda n=name: self.pdelay_initiator_tick(n), "pdelay_tick", name)

    def start_sync(self, at: int = 0) -> None:
        for d in sorted(self.gm_domains):
            self._at(at, lambda d=d: self.master_sync_tick(d), "sync_tick", str(d))

    def _at(self, t: int, action, kind: str, what: str) -> None:
        if t < self.horizon:
            self.sched.schedule(t, action, kind=kind, target=f"{self.node.id}:{what}")

    def master_sync_tick(self, domain: int) -> int:
        """Send Sync on every master port of a domain this node is grandmaster of."""
        if self.node.failed:
            return 0
        now = self.sched.now
        seq = self.sync_seq[domain]
        self.sync_seq[domain] = seq + 1
        self.counters[domain].ticks += 1
        self.log.add(now, "sync_tick", self.node.id, domain=domain, seq=seq)
        sent = 0
        for name in self.master_ports[domain]:
            self._send(name, Sync(domain, seq))
            sent += 1
        self._at(now + self.cfg.sync_interval, lambda: self.master_sync_tick(domain), "sync_tick", str(domain))
        return sent

    def pdelay_initiator_tick(self, port_name: str) -> None:
        if self.node.failed:
            return
        st = self.pdelay[port_name]
        st.req_seq += 1
        st.t1 = st.t2 = st.t4 = None
        self._send(port_name, PdelayReq(st.req_seq))
        self._at(self.sched.now + self.cfg.pdelay_interval,
                 lambda: self.pdelay_initiator_tick(port_name), "pdelay_tick", port_name)

    def _send(self, port_name: str, msg) -> Frame:
        return self.net.transmit(self.node.ports[port_name], msg, self.cfg.size_of(msg.KIND))

    # -- frame hooks ------------------------------------------------------

    def on_egress(self, port: Port, frame: Frame) -> None:
        msg = frame.payload
        if isinstance(msg, Sync):
            d = msg.domain
            if d in self.gm_domains:
                origin = self.clocks[d].at_local(frame.egress_ts)
                self._send(port.name, FollowUp(d, msg.seq, origin, 0, 1.0))
                return
            relay = self._relay.get(d)
            if relay is not None and relay.seq == msg.seq:
                relay.egress[port.name] = frame.egress_ts
                if relay.followup is not None:
                    self._relay_followup(d, relay, port.name)
        elif isinstance(msg, PdelayReq):
            self.pdelay[port.name].t1 = frame.egress_ts
        elif isinstance(msg, PdelayResp):
            self._send(port.name, PdelayRespFollowUp(msg.seq, frame.egress_ts))

    def on_receive(self, port: Port, frame: Frame) -> None:
        msg = frame.payload
        if isinstance(msg, Sync):
            self._on_sync(port, frame, msg)
        elif isinstance(msg, FollowUp):
            self._on_followup(port, msg)
        elif isinstance(msg, PdelayReq):
            self.pdelay_responder(port.name, msg, frame.ingress_ts)
        elif isinstance(msg, PdelayResp):
            st = self.pdelay.get(port.name)
            if st is not None and msg.seq == st.req_seq and st.t1 is not None:
                st.t2 = msg.t2
                st.t4 = frame.ingress_ts
        elif isinstance(msg, PdelayRespFollowUp):
            self._on_pdelay_resp_followup(port.name, msg)

    # -- sync path --------------------------------------------------------

    def _is_slave_port(self, domain: int, port_name: str) -> bool:
        return domain in self.slave_port and self.slave_port[domain] == port_name

    def _on_sync(self, port: Port, frame: Frame, msg: Sync) -> None:
        d = msg.domain
        if not self._is_slave_port(d, port.name):
            if d in self.counters:
                self.counters[d].ignored += 1
            return
        if msg.seq <= self.last_applied.get(d, -1):
            self.counters[d].stale += 1
            return
        # a newer Sync replaces one whose Follow_Up never came
        self._pending[d] = _PendingSync(msg.seq, frame.ingress_ts, port.name)
        if self.master_ports[d]:
            relay = _Relay(msg.seq, frame.ingress_ts)
            self._relay[d] = relay
            if self.cfg.residence_time:
                self.sched.schedule_in(self.cfg.residence_time, lambda: self._relay_sync(d, relay),
                                       kind="relay", target=f"{self.node.id}:{d}")
            else:
                self._relay_sync(d, relay)

    def _relay_sync(self, d: int, relay: _Relay) -> None:
        if self.node.failed or self._relay.get(d) is not relay:
            return
        for name in self.master_ports[d]:
            self._send(name, Sync(d, relay.seq))

    def _on_followup(self, port: Port, msg: FollowUp) -> None:
        d = msg.domain
        if not self._is_slave_port(d, port.name):
            if d in self.counters:
                self.counters[d].ignored += 1
            return
        self.slave_receive_sync(d, msg)

    def slave_receive_sync(self, d: int, fu: FollowUp) -> bool:
        """Complete a Sync/Follow_Up pair: step the domain clock and relay downstream."""
        c = self.counters[d]
        pending = self._pending.get(d)
        if pending is None or pending.seq != fu.seq:
            c.orphan_followups += 1
            return False
        if fu.seq <= self.last_applied.get(d, -1):
            c.stale += 1
            return False
        del self._pending[d]
        st = self.pdelay.get(pending.port)
        link_delay = st.mean_link_delay if st is not None else None
        if link_delay is None:
            link_delay = self.cfg.link_delay_fallback
        if link_delay is None:
            c.no_link_delay += 1
            self.log.add(self.sched.now, "no_link_delay", self.node.id, domain=d, seq=fu.seq)
            return False
        if self.cfg.use_rate_ratio:
            rate_ratio = fu.rate_ratio * (st.nrr if st is not None else 1.0)
            link_term = int(round(link_delay * rate_ratio))
        else:
            rate_ratio = 1.0
            link_term = link_delay
        estimate = compute_master_estimate(fu.precise_origin, fu.correction, link_term)

        now = self.sched.now
        osc = self.node.osc
        clk = self.clocks[d]
        local_now = osc.local_time(now)
        pre = clk.at_local(local_now)
        clk.apply_sync_correction(estimate, pending.ingress_ts,
                                  rate_ratio if self.cfg.use_rate_ratio else None)
        post = clk.at_local(local_now)
        clk.last_sync = (now, fu.seq)
        self.last_applied[d] = fu.seq
        c.applied += 1
        if self.recorder is not None:
            self.recorder(now, self.node.id, d, pre, "pre_sync")
            self.recorder(now, self.node.id, d, post, "post_sync")
        self.log.add(now, "sync_applied", self.node.id, domain=d, seq=fu.seq, estimate=estimate,
                     at_local=pending.ingress_ts, link_delay=link_term, pre=pre - now, post=post - now)

        relay = self._relay.get(d)
        if relay is not None and relay.seq == fu.seq:
            relay.followup = (fu.precise_origin, fu.correction + link_term, rate_ratio)
            for name in list(relay.egress):
                self._relay_followup(d, relay, name)
        return True

    def _relay_followup(self, d: int, relay: _Relay, port_name: str) -> None:
        if port_name in relay.sent or self.node.failed:
            return
        origin, correction, rate_ratio = relay.followup
        residence = relay.egress[port_name] - relay.ingress_ts
        if self.cfg.use_rate_ratio:
            residence = int(round(residence * rate_ratio))
        relay.sent.add(port_name)
        self.log.add(self.sched.now, "relay", self.node.id, domain=d, seq=relay.seq, port=port_name,
                     residence=residence, correction=correction + residence)
        self._send(port_name, FollowUp(d, relay.seq, origin, correction + residence, rate_ratio))

    # -- peer delay -------------------------------------------------------

    def pdelay_responder(self, port_name: str, req: PdelayReq, t2: int) -> None:
        if self.node.failed:
            return
        if self.cfg.pdelay_turnaround:
            self.sched.schedule_in(self.cfg.pdelay_turnaround,
                                   lambda: self._send(port_name, PdelayResp(req.seq, t2)),
                                   kind="pdelay_resp", target=f"{self.node.id}:{port_name}")
        else:
            self._send(port_name, PdelayResp(req.seq, t2))

    def _on_pdelay_resp_followup(self, port_name: str, msg: PdelayRespFollowUp) -> None:
        st = self.pdelay.get(port_name)
        if st is None or msg.seq != st.req_seq or st.t4 is None or st.t1 is None:
            return
        update_nrr(st, msg.t3, st.t4)
        nrr = st.nrr if self.cfg.use_nrr else 1.0
        now = self.sched.now
        try:
            delay = compute_mean_link_delay(st.t1, st.t2, msg.t3, st.t4, nrr)
        except NegativeDelay:
            st.discarded += 1
            self.log.add(now, "pdelay_discard", self.node.id, port=port_name, seq=msg.seq)
            return
        st.mean_link_delay = delay
        st.completed += 1
        self.log.add(now, "pdelay", self.node.id, port=port_name, seq=msg.seq, delay=delay,
                     nrr=f"{st.nrr:.12f}")
        st.t1 = st.t2 = st.t4 = None
