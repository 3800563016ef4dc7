"""Nodes, ports and full-duplex links carrying gPTP frames.

Timestamps are ideal: a frame is stamped with the sender's oscillator time at
the instant its first bit leaves the port and with the receiver's oscillator
time when the first bit arrives, ``prop_delay`` later. Each link direction is
a FIFO line that stays busy for the frame's serialization time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Protocol

from .clocks import Oscillator
from .simcore import EventLog, Scheduler

END_STATION = "end_station"
BRIDGE = "bridge"
MIN_FRAME_SIZE = 64
DEFAULT_PROP_DELAY = 500
DEFAULT_BITRATE = 100_000_000


def port_id(node: str, port: str) -> str:
    return f"{node}.{port}"


def split_port_id(pid: str) -> tuple[str, str]:
    node, sep, port = pid.rpartition(".")
    if not sep or not node or not port:
        raise ValueError(f"port id {pid!r} is not of the form node.port")
    return node, port


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    ports: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in (END_STATION, BRIDGE):
            raise ValueError(f"node {self.id}: unknown kind {self.kind!r}")
        if self.kind == END_STATION and len(self.ports) != 1:
            raise ValueError(f"end station {self.id} must have exactly 1 port")
        if self.kind == BRIDGE and len(self.ports) < 2:
            raise ValueError(f"bridge {self.id} must have at least 2 ports")
        if len(set(self.ports)) != len(self.ports):
            raise ValueError(f"node {self.id}: duplicate port names")


@dataclass(frozen=True)
class LinkSpec:
    id: str
    a: str
    b: str
    prop_delay: int = DEFAULT_PROP_DELAY
    bitrate: int = DEFAULT_BITRATE

    def __post_init__(self):
        if self.prop_delay < 0:
            raise ValueError(f"link {self.id}: negative prop_delay")
        if self.bitrate <= 0:
            raise ValueError(f"link {self.id}: bitrate must be > 0")
        if self.a == self.b:
            raise ValueError(f"link {self.id}: both ends on {self.a}")


def serialization_time(size: int, bitrate: int) -> int:
    """Nanoseconds a ``size``-byte frame occupies the line (rounded up)."""
    return -(-size * 8 * 1_000_000_000 // bitrate)


@dataclass
class Frame:
    src_port: str
    dst_port: str
    size: int
    payload: Any
    egress_ts: int | None = None
    ingress_ts: int | None = None
    egress_time: int | None = None
    ingress_time: int | None = None


class FrameHandler(Protocol):
    def on_egress(self, port: "Port", frame: Frame) -> None: ...
    def on_receive(self, port: "Port", frame: Frame) -> None: ...


class Port:
    def __init__(self, node: "NetNode", name: str) -> None:
        self.node = node
        self.name = name
        self.id = port_id(node.id, name)
        self.link: "Link | None" = None
        self.peer: "Port | None" = None
        self.queue: deque[Frame] = deque()
        self.busy = False
        self.filters: frozenset[str] = frozenset()

    def __repr__(self) -> str:
        return f"Port({self.id})"


class Link:
    def __init__(self, spec: LinkSpec, a: Port, b: Port) -> None:
        self.spec = spec
        self.a = a
        self.b = b
        self.failed = False


class NetNode:
    def __init__(self, spec: NodeSpec, osc: Oscillator) -> None:
        self.id = spec.id
        self.spec = spec
        self.kind = spec.kind
        self.osc = osc
        self.failed = False
        self.ports = {name: Port(self, name) for name in spec.ports}
        self.handler: FrameHandler | None = None


@dataclass
class DropRecord:
    time: int
    port: str
    reason: str
    msg: str


class Network:
    """Runtime wiring of nodes and links on top of a :class:`Scheduler`."""

    def __init__(self, scheduler: Scheduler, log: EventLog | None = None) -> None:
        self.sched = scheduler
        self.log = log if log is not None else EventLog()
        self.nodes: dict[str, NetNode] = {}
        self.ports: dict[str, Port] = {}
        self.links: dict[str, Link] = {}
        self.drop_log: list[DropRecord] = []
        self.tx_count = 0
        self.rx_count = 0

    def add_node(self, spec: NodeSpec, osc: Oscillator) -> NetNode:
        if spec.id in self.nodes:
            raise ValueError(f"duplicate node {spec.id}")
        node = NetNode(spec, osc)
        self.nodes[spec.id] = node
        for p in node.ports.values():
            self.ports[p.id] = p
        return node

    def connect(self, spec: LinkSpec) -> Link:
        a, b = self.ports[spec.a], self.ports[spec.b]
        for p in (a, b):
            if p.link is not None:
                raise ValueError(f"port {p.id} already attached to link {p.link.spec.id}")
        link = Link(spec, a, b)
        a.link = b.link = link
        a.peer, b.peer = b, a
        self.links[spec.id] = link
        return link

    # -- transmission -------------------------------------------------------

    def transmit(self, port: Port, payload: Any, size: int) -> Frame:
        """Queue ``payload`` on ``port``; the frame departs when the line frees up."""
        if size < MIN_FRAME_SIZE:
            raise ValueError(f"frame size {size} below Ethernet minimum {MIN_FRAME_SIZE}")
        dst = port.peer.id if port.peer is not None else ""
        frame = Frame(port.id, dst, size, payload)
        port.queue.append(frame)
        if not port.busy:
            self._start_next(port)
        return frame

    def _drop(self, port: Port, frame: Frame, reason: str) -> None:
        now = self.sched.now
        msg = frame.payload.KIND
        self.drop_log.append(DropRecord(now, port.id, reason, msg))
        self.log.add(now, "filter" if reason == "blackhole" else "drop", port.node.id,
                     port=port.name, reason=reason, msg=msg, **_payload_fields(frame.payload))

    def _start_next(self, port: Port) -> None:
        while port.queue:
            frame = port.queue.popleft()
            node = port.node
            kind = frame.payload.KIND
            if node.failed:
                self._drop(port, frame, "node_down")
                continue
            if port.link is None or port.link.failed:
                self._drop(port, frame, "link_down")
                continue
            if kind in port.filters:
                self._drop(port, frame, "blackhole")
                continue
            now = self.sched.now
            frame.egress_time = now
            frame.egress_ts = node.osc.local_time(now)
            self.tx_count += 1
            self.log.add(now, "tx", node.id, port=port.name, msg=kind,
                         ts=frame.egress_ts, **_payload_fields(frame.payload))
            port.busy = True
            link = port.link
            self.sched.schedule(now + link.spec.prop_delay, lambda f=frame, p=port.peer: self._deliver(p, f),
                                kind="deliver", target=port.peer.id)
            self.sched.schedule(now + serialization_time(frame.size, link.spec.bitrate),
                                lambda p=port: self._tx_done(p), kind="tx_done", target=port.id)
            if node.handler is not None:
                node.handler.on_egress(port, frame)
            return

    def _tx_done(self, port: Port) -> None:
        port.busy = False
        self._start_next(port)

    def _deliver(self, port: Port, frame: Frame) -> None:
        now = self.sched.now
        if port.link.failed:
            self._drop(port, frame, "link_down")
            return
        node = port.node
        if node.failed:
            self._drop(port, frame, "node_down")
            return
        frame.ingress_time = now
        frame.ingress_ts = node.osc.local_time(now)
        self.rx_count += 1
        self.log.add(now, "rx", node.id, port=port.name, msg=frame.payload.KIND,
                     ts=frame.ingress_ts, **_payload_fields(frame.payload))
        if node.handler is not None:
            node.handler.on_receive(port, frame)

    # -- faults -------------------------------------------------------------

    def fail_link(self, link_id: str) -> bool:
        link = self.links[link_id]
        changed = not link.failed
        link.failed = True
        return changed

    def fail_node(self, node_id: str) -> bool:
        node = self.nodes[node_id]
        changed = not node.failed
        node.failed = True
        return changed

    def set_filter(self, pid: str, classes) -> bool:
        port = self.ports[pid]
        merged = port.filters | frozenset(classes)
        changed = merged != port.filters
        port.filters = merged
        return changed


def _payload_fields(payload: Any) -> dict:
    fields = getattr(payload, "log_fields", None)
    return fields() if fields is not None else {}
