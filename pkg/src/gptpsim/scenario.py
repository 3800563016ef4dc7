"""Scenario configuration: topology, clocks, domains, port roles and faults.

A :class:`ScenarioConfig` is an immutable, validated value. It is built either
programmatically (see :func:`builtin_quad_motor_ring`) or from the sectioned
``key = value`` text format handled by :func:`parse_scenario` and
:func:`format_scenario`; the grammar is documented in
``docs/scenario-format.md``.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field, fields, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Mapping

from .clocks import DriftModel
from .gptp import MASTER, PASSIVE, ROLES, SLAVE, SYNC_CLASSES, MESSAGE_KINDS, EngineConfig
from .netmodel import BRIDGE, END_STATION, LinkSpec, NodeSpec, port_id, split_port_id
from .simcore import MS, NS, S, US

CLOCK_FAILURE = "clock_failure"
LINK_FAILURE = "link_failure"
BLACKHOLE = "blackhole"
FAULT_KINDS = (CLOCK_FAILURE, LINK_FAILURE, BLACKHOLE)

SECTIONS = ("general", "nodes", "links", "clocks", "domains", "roles", "events")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


@dataclass(frozen=True)
class ClockSpec:
    drift: DriftModel = field(default_factory=DriftModel.none)
    offset: int = 0


@dataclass(frozen=True)
class DomainSpec:
    id: int
    gm: str
    roles: tuple[tuple[str, str, str], ...]   # (node, port, role), sorted
    direction: str = ""

    def roles_of(self, node: str) -> dict[str, str]:
        return {p: r for n, p, r in self.roles if n == node}

    def nodes(self) -> list[str]:
        seen: dict[str, None] = {}
        for n, _, _ in self.roles:
            seen.setdefault(n)
        return list(seen)


@dataclass(frozen=True)
class FaultEvent:
    kind: str
    at: int
    node: str | None = None
    link: str | None = None
    port: str | None = None
    filter: frozenset[str] = SYNC_CLASSES

    @classmethod
    def clock_failure(cls, node: str, at: int) -> "FaultEvent":
        return cls(CLOCK_FAILURE, at, node=node)

    @classmethod
    def link_failure(cls, link: str, at: int) -> "FaultEvent":
        return cls(LINK_FAILURE, at, link=link)

    @classmethod
    def blackhole(cls, node: str, port: str, at: int,
                  filter: Iterable[str] = SYNC_CLASSES) -> "FaultEvent":
        return cls(BLACKHOLE, at, node=node, port=port, filter=frozenset(filter))

    def describe(self) -> str:
        if self.kind == CLOCK_FAILURE:
            return f"clock_failure({self.node}@{format_duration(self.at)})"
        if self.kind == LINK_FAILURE:
            return f"link_failure({self.link}@{format_duration(self.at)})"
        return f"blackhole({self.node}.{self.port}@{format_duration(self.at)})"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration: int
    seed: int
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]
    clocks: Mapping[str, ClockSpec]
    domains: tuple[DomainSpec, ...]
    engine: EngineConfig = field(default_factory=EngineConfig)
    events: tuple[FaultEvent, ...] = ()
    sampling_interval: int = 10 * MS
    description: str = ""

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def link(self, link_id: str) -> LinkSpec:
        for lk in self.links:
            if lk.id == link_id:
                return lk
        raise KeyError(link_id)

    def domain(self, domain_id: int) -> DomainSpec:
        for d in self.domains:
            if d.id == domain_id:
                return d
        raise KeyError(domain_id)

    def clock(self, node_id: str) -> ClockSpec:
        return self.clocks.get(node_id, ClockSpec())

    def gm_of(self) -> dict[int, str]:
        return {d.id: d.gm for d in self.domains}

    def ecus(self) -> list[str]:
        """End stations that are grandmaster of no domain."""
        gms = set(self.gm_of().values())
        return [n.id for n in self.nodes if n.kind == END_STATION and n.id not in gms]


# -- errors -------------------------------------------------------------------

@dataclass(frozen=True)
class Issue:
    code: str
    field: str
    reason: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.code} [{self.field}] {self.reason}"


class ScenarioError(ValueError):
    def __init__(self, issues: list[Issue]):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues))

    def codes(self) -> set[str]:
        return {i.code for i in self.issues}


# -- validation -----------------------------------------------------------

def validate(cfg: ScenarioConfig) -> list[Issue]:
    """Every problem with ``cfg``; an empty list means the scenario is runnable.

    ``field`` on each issue is ``section:key`` so the parser can map it back
    to a line.
    """
    issues: list[Issue] = []
    add = lambda code, where, reason: issues.append(Issue(code, where, reason))

    if cfg.duration <= 0:
        add("Invalid", "general:duration", "duration must be > 0")
    if cfg.sampling_interval <= 0:
        add("Invalid", "general:sampling_interval", "sampling_interval must be > 0")

    nodes: dict[str, NodeSpec] = {}
    for n in cfg.nodes:
        if n.id in nodes:
            add("Invalid", f"nodes:{n.id}", "duplicate node id")
        if not _NAME.match(n.id):
            add("Invalid", f"nodes:{n.id}", "node ids must be identifiers (no dots)")
        nodes[n.id] = n

    attached: dict[str, str] = {}
    link_ids: set[str] = set()
    for lk in cfg.links:
        where = f"links:{lk.id}"
        if lk.id in link_ids:
            add("Invalid", where, "duplicate link id")
        link_ids.add(lk.id)
        for end in (lk.a, lk.b):
            try:
                nid, pname = split_port_id(end)
            except ValueError as exc:
                add("DanglingPort", where, str(exc))
                continue
            if nid not in nodes:
                add("UnknownNode", where, f"node {nid!r} does not exist")
            elif pname not in nodes[nid].ports:
                add("DanglingPort", where, f"node {nid!r} has no port {pname!r}")
            elif end in attached:
                add("DanglingPort", where, f"port {end} already attached to link {attached[end]}")
            else:
                attached[end] = lk.id

    if nodes and not issues:
        adj: dict[str, set[str]] = {n: set() for n in nodes}
        for lk in cfg.links:
            a, b = split_port_id(lk.a)[0], split_port_id(lk.b)[0]
            adj[a].add(b)
            adj[b].add(a)
        start = next(iter(nodes))
        seen, todo = {start}, deque([start])
        while todo:
            for nb in adj[todo.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        missing = [n for n in nodes if n not in seen]
        if missing:
            add("Invalid", "links", f"topology not connected; unreachable: {', '.join(missing)}")

    for nid in cfg.clocks:
        if nid not in nodes:
            add("UnknownNode", f"clocks:{nid}", f"node {nid!r} does not exist")

    dom_ids: set[int] = set()
    for d in cfg.domains:
        where = f"domains:{d.id}"
        if d.id in dom_ids:
            add("Invalid", where, "duplicate domain id")
        dom_ids.add(d.id)
        if d.id < 0 or d.id > 255:
            add("Invalid", where, "domain id must be in 0..255")
        if d.gm not in nodes:
            add("UnknownNode", where, f"grandmaster {d.gm!r} does not exist")
        slaves: dict[str, list[str]] = {}
        for nid, pname, role in d.roles:
            rwhere = f"roles:{d.id}.{nid}"
            if nid not in nodes:
                add("UnknownNode", rwhere, f"node {nid!r} does not exist")
                continue
            if pname not in nodes[nid].ports:
                add("DanglingPort", rwhere, f"node {nid!r} has no port {pname!r}")
                continue
            if role not in ROLES:
                add("Invalid", rwhere, f"unknown role {role!r}")
            if role != "disabled" and port_id(nid, pname) not in attached:
                add("DanglingPort", rwhere, f"port {nid}.{pname} has role {role} but no link")
            if role == SLAVE:
                slaves.setdefault(nid, []).append(pname)
        for nid, ports in slaves.items():
            if len(ports) > 1:
                add("RoleConflict", f"roles:{d.id}.{nid}",
                    f"{nid} has {len(ports)} slave ports in domain {d.id}: {', '.join(ports)}")
        if d.gm in nodes:
            gm_roles = d.roles_of(d.gm)
            if any(r == SLAVE for r in gm_roles.values()):
                add("RoleConflict", f"roles:{d.id}.{d.gm}",
                    f"grandmaster {d.gm} has a slave port in its own domain {d.id}")
            if not any(r == MASTER for r in gm_roles.values()):
                add("Invalid", f"roles:{d.id}.{d.gm}", f"grandmaster {d.gm} has no master port in domain {d.id}")

    for i, ev in enumerate(cfg.events):
        where = f"events:{i}"
        if ev.kind not in FAULT_KINDS:
            add("Invalid", where, f"unknown event kind {ev.kind!r}")
            continue
        if not 0 <= ev.at <= cfg.duration:
            add("EventOutOfRange", where, f"at={format_duration(ev.at)} outside [0, {format_duration(cfg.duration)}]")
        if ev.kind in (CLOCK_FAILURE, BLACKHOLE):
            if ev.node not in nodes:
                add("UnknownNode", where, f"node {ev.node!r} does not exist")
                continue
        if ev.kind == LINK_FAILURE and ev.link not in link_ids:
            add("Invalid", where, f"link {ev.link!r} does not exist")
        if ev.kind == BLACKHOLE:
            if nodes[ev.node].kind != BRIDGE:
                add("Invalid", where, f"blackhole node {ev.node} must be a bridge")
            if ev.port not in nodes[ev.node].ports:
                add("DanglingPort", where, f"node {ev.node!r} has no port {ev.port!r}")
            bad = set(ev.filter) - set(MESSAGE_KINDS)
            if bad or not ev.filter:
                add("Invalid", where, f"bad filter classes {sorted(bad)}")
    return issues


def checked(cfg: ScenarioConfig) -> ScenarioConfig:
    issues = validate(cfg)
    if issues:
        raise ScenarioError(issues)
    return cfg


# -- units ----------------------------------------------------------------

_UNITS = {"ns": NS, "us": US, "µs": US, "ms": MS, "s": S}
_DUR = re.compile(r"^([+-]?\d+(?:\.\d+)?)\s*(ns|us|µs|ms|s)$")


def parse_duration(text: str) -> int:
    m = _DUR.match(text.strip())
    if not m:
        raise ValueError(f"bad duration {text!r} (expected e.g. 125ms, 500ns, 2s)")
    value = Decimal(m.group(1)) * _UNITS[m.group(2)]
    if value != value.to_integral_value():
        raise ValueError(f"duration {text!r} is not a whole number of nanoseconds")
    return int(value)


def format_duration(ns: int) -> str:
    for unit, scale in (("s", S), ("ms", MS), ("us", US)):
        if ns != 0 and ns % scale == 0:
            return f"{ns // scale}{unit}"
    return f"{ns}ns"


def parse_rate(text: str) -> float:
    """Drift rate in ppm from ``10ppm``, ``0.5us/s``, ``500ns/s`` ..."""
    t = text.strip()
    try:
        if t.endswith("ppm"):
            return float(Decimal(t[:-3]))
        if t.endswith("/s"):
            return float(Decimal(parse_duration_decimal(t[:-2])) / 1000)
    except (InvalidOperation, ValueError):
        pass
    raise ValueError(f"bad rate {text!r} (expected e.g. 10ppm or 100us/s)")


def parse_duration_decimal(text: str) -> Decimal:
    m = _DUR.match(text.strip())
    if not m:
        raise ValueError(text)
    return Decimal(m.group(1)) * _UNITS[m.group(2)]


def format_rate(ppm: float) -> str:
    return f"{ppm!r}ppm"


_BITRATE = re.compile(r"^(\d+(?:\.\d+)?)\s*(bps|kbps|Mbps|Gbps)?$")


def parse_bitrate(text: str) -> int:
    m = _BITRATE.match(text.strip())
    if not m:
        raise ValueError(f"bad bitrate {text!r} (expected e.g. 100Mbps)")
    scale = {None: 1, "bps": 1, "kbps": 10**3, "Mbps": 10**6, "Gbps": 10**9}[m.group(2)]
    value = Decimal(m.group(1)) * scale
    if value <= 0 or value != value.to_integral_value():
        raise ValueError(f"bad bitrate {text!r}")
    return int(value)


def format_bitrate(bps: int) -> str:
    for unit, scale in (("Gbps", 10**9), ("Mbps", 10**6), ("kbps", 10**3)):
        if bps % scale == 0:
            return f"{bps // scale}{unit}"
    return f"{bps}bps"


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"bad boolean {text!r}")


# -- text format ----------------------------------------------------------

_ENGINE_DURATIONS = ("sync_interval", "pdelay_interval", "sync_start", "residence_time", "pdelay_turnaround")
_ENGINE_BOOLS = ("use_nrr", "use_rate_ratio")
_ENGINE_SIZES = tuple(f.name for f in fields(EngineConfig) if f.name.endswith("_size"))


def _attrs(tokens: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep or not k or not v:
            raise ValueError(f"expected key=value, got {tok!r}")
        if k in out:
            raise ValueError(f"attribute {k!r} given twice")
        out[k] = v
    return out


def _take(attrs: dict[str, str], allowed: Iterable[str], required: Iterable[str] = ()) -> None:
    extra = set(attrs) - set(allowed)
    if extra:
        raise ValueError(f"unknown attribute(s) {', '.join(sorted(extra))}")
    missing = [k for k in required if k not in attrs]
    if missing:
        raise ValueError(f"missing attribute(s) {', '.join(missing)}")


def _parse_drift(words: list[str]) -> ClockSpec:
    kind, attrs = words[0], _attrs(words[1:])
    offset = parse_duration(attrs.pop("offset")) if "offset" in attrs else 0
    if kind == "none":
        _take(attrs, ())
        return ClockSpec(DriftModel.none(), offset)
    if kind == "constant":
        _take(attrs, ("rate",), ("rate",))
        return ClockSpec(DriftModel.constant(parse_rate(attrs["rate"])), offset)
    if kind == "random_walk":
        _take(attrs, ("step", "interval"), ("step",))
        interval = parse_duration(attrs["interval"]) if "interval" in attrs else S
        return ClockSpec(DriftModel.random_walk(parse_rate(attrs["step"]), interval), offset)
    raise ValueError(f"unknown drift model {kind!r} (none, constant, random_walk)")


def _format_drift(spec: ClockSpec) -> str:
    d = spec.drift
    if d.kind == "constant":
        text = f"constant rate={format_rate(d.rate_ppm)}"
    elif d.kind == "random_walk":
        text = f"random_walk step={format_rate(d.step_bound_ppm)} interval={format_duration(d.step_interval)}"
    else:
        text = "none"
    if spec.offset:
        text += f" offset={format_duration(spec.offset)}"
    return text


def _parse_event(words: list[str]) -> FaultEvent:
    kind, attrs = words[0], _attrs(words[1:])
    if kind == CLOCK_FAILURE:
        _take(attrs, ("node", "at"), ("node", "at"))
        return FaultEvent.clock_failure(attrs["node"], parse_duration(attrs["at"]))
    if kind == LINK_FAILURE:
        _take(attrs, ("link", "at"), ("link", "at"))
        return FaultEvent.link_failure(attrs["link"], parse_duration(attrs["at"]))
    if kind == BLACKHOLE:
        _take(attrs, ("node", "port", "at", "filter"), ("node", "port", "at"))
        flt = attrs["filter"].split(",") if "filter" in attrs else SYNC_CLASSES
        return FaultEvent.blackhole(attrs["node"], attrs["port"], parse_duration(attrs["at"]),
                                    [f.strip() for f in flt])
    raise ValueError(f"unknown event kind {kind!r} ({', '.join(FAULT_KINDS)})")


def format_event(ev: FaultEvent) -> str:
    at = format_duration(ev.at)
    if ev.kind == CLOCK_FAILURE:
        return f"clock_failure node={ev.node} at={at}"
    if ev.kind == LINK_FAILURE:
        return f"link_failure link={ev.link} at={at}"
    flt = ",".join(k for k in MESSAGE_KINDS if k in ev.filter)
    return f"blackhole node={ev.node} port={ev.port} at={at} filter={flt}"


def parse_event(text: str) -> FaultEvent:
    return _parse_event(text.split())


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and validate a scenario file; raises :class:`ScenarioError`."""
    issues: list[Issue] = []
    lines: dict[str, int] = {}
    general: dict[str, str] = {}
    nodes: list[NodeSpec] = []
    links: list[LinkSpec] = []
    clocks: dict[str, ClockSpec] = {}
    domain_heads: dict[int, tuple[str, str]] = {}
    roles: dict[int, list[tuple[str, str, str]]] = {}
    events: list[FaultEvent] = []
    section = None
    seen_keys: set[tuple[str, str]] = set()

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line[1:-1].strip() if line.endswith("]") else None
            if name not in SECTIONS:
                issues.append(Issue("SyntaxError", "section", f"unknown section header {line!r}", lineno))
                section = None
                continue
            section = name
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            issues.append(Issue("SyntaxError", section or "-", f"expected 'key = value', got {line!r}", lineno))
            continue
        if section is None:
            issues.append(Issue("SyntaxError", key, "entry outside of any section", lineno))
            continue
        where = f"{section}:{key}"
        if section != "events":
            if (section, key) in seen_keys:
                issues.append(Issue("SyntaxError", where, "duplicate key", lineno))
                continue
            seen_keys.add((section, key))
        if not value:
            issues.append(Issue("SyntaxError", where, "empty value", lineno))
            continue
        words = value.split()
        try:
            if section == "general":
                general[key] = value
                lines[where] = lineno
            elif section == "nodes":
                attrs = _attrs(words[1:])
                _take(attrs, ("ports",), ("ports",))
                nodes.append(NodeSpec(key, words[0], tuple(p.strip() for p in attrs["ports"].split(","))))
                lines[where] = lineno
            elif section == "links":
                if len(words) < 2:
                    raise ValueError("expected '<node.port> <node.port> [delay=..] [bitrate=..]'")
                attrs = _attrs(words[2:])
                _take(attrs, ("delay", "bitrate"))
                links.append(LinkSpec(key, words[0], words[1],
                                      parse_duration(attrs.get("delay", "500ns")),
                                      parse_bitrate(attrs.get("bitrate", "100Mbps"))))
                lines[where] = lineno
            elif section == "clocks":
                clocks[key] = _parse_drift(words)
                lines[where] = lineno
            elif section == "domains":
                did = int(key)
                attrs = _attrs(words)
                _take(attrs, ("gm", "direction"), ("gm",))
                domain_heads[did] = (attrs["gm"], attrs.get("direction", ""))
                lines[f"domains:{did}"] = lineno
            elif section == "roles":
                dpart, dot, nid = key.partition(".")
                if not dot or not nid:
                    raise ValueError("role keys look like '<domain>.<node>'")
                did = int(dpart)
                attrs = _attrs(words)
                _take(attrs, ROLES)
                entries = roles.setdefault(did, [])
                for role, plist in attrs.items():
                    for p in plist.split(","):
                        entries.append((nid, p.strip(), role))
                lines[f"roles:{did}.{nid}"] = lineno
            elif section == "events":
                if key != "event":
                    raise ValueError("entries in [events] are written 'event = <kind> k=v ...'")
                lines[f"events:{len(events)}"] = lineno
                events.append(_parse_event(words))
        except (ValueError, KeyError) as exc:
            issues.append(Issue("SyntaxError", where, str(exc).strip("'\""), lineno))

    engine_kw: dict = {}
    top: dict = {"name": "unnamed", "duration": 20 * S, "seed": 1, "sampling_interval": 10 * MS,
                  "description": ""}
    for key, value in general.items():
        where = f"general:{key}"
        try:
            if key in ("name", "description"):
                top[key] = value
            elif key == "seed":
                top["seed"] = int(value)
            elif key in ("duration", "sampling_interval"):
                top[key] = parse_duration(value)
            elif key in _ENGINE_DURATIONS:
                engine_kw[key] = parse_duration(value)
            elif key in _ENGINE_BOOLS:
                engine_kw[key] = _parse_bool(value)
            elif key in _ENGINE_SIZES:
                engine_kw[key] = int(value)
            elif key == "link_delay_fallback":
                engine_kw[key] = None if value == "none" else parse_duration(value)
            else:
                raise ValueError(f"unknown setting {key!r}")
        except ValueError as exc:
            issues.append(Issue("SyntaxError", where, str(exc), lines.get(where)))
    try:
        engine = EngineConfig(**engine_kw)
    except ValueError as exc:
        issues.append(Issue("Invalid", "general", str(exc)))
        engine = EngineConfig()

    for did in roles:
        if did not in domain_heads:
            issues.append(Issue("Invalid", f"roles:{did}", f"roles given for undeclared domain {did}",
                                min(v for k, v in lines.items() if k.startswith(f"roles:{did}."))))
    domains = tuple(
        DomainSpec(did, gm, tuple(sorted(roles.get(did, ()))), direction)
        for did, (gm, direction) in sorted(domain_heads.items())
    )
    if issues:
        raise ScenarioError(issues)

    cfg = ScenarioConfig(
        name=top["name"], duration=top["duration"], seed=top["seed"], nodes=tuple(nodes),
        links=tuple(links), clocks=clocks, domains=domains, engine=engine, events=tuple(events),
        sampling_interval=top["sampling_interval"], description=top["description"],
    )
    problems = validate(cfg)
    if problems:
        raise ScenarioError([replace(i, line=_line_for(i.field, lines)) for i in problems])
    return cfg


def _line_for(where: str, lines: dict[str, int]) -> int | None:
    if where in lines:
        return lines[where]
    section = where.split(":", 1)[0]
    candidates = [v for k, v in lines.items() if k.startswith(section + ":")]
    return min(candidates) if candidates else None


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def format_scenario(cfg: ScenarioConfig) -> str:
    out = ["# gptpsim scenario", "", "[general]", f"name = {cfg.name}"]
    if cfg.description:
        out.append(f"description = {cfg.description}")
    out += [
        f"duration = {format_duration(cfg.duration)}",
        f"seed = {cfg.seed}",
        f"sampling_interval = {format_duration(cfg.sampling_interval)}",
    ]
    e = cfg.engine
    for key in _ENGINE_DURATIONS:
        out.append(f"{key} = {format_duration(getattr(e, key))}")
    for key in _ENGINE_BOOLS:
        out.append(f"{key} = {str(getattr(e, key)).lower()}")
    fb = e.link_delay_fallback
    out.append(f"link_delay_fallback = {'none' if fb is None else format_duration(fb)}")
    for key in _ENGINE_SIZES:
        out.append(f"{key} = {getattr(e, key)}")

    out += ["", "[nodes]"]
    out += [f"{n.id} = {n.kind} ports={','.join(n.ports)}" for n in cfg.nodes]
    out += ["", "[links]"]
    out += [f"{lk.id} = {lk.a} {lk.b} delay={format_duration(lk.prop_delay)} bitrate={format_bitrate(lk.bitrate)}"
            for lk in cfg.links]
    out += ["", "[clocks]"]
    out += [f"{nid} = {_format_drift(spec)}" for nid, spec in cfg.clocks.items()]
    out += ["", "[domains]"]
    for d in cfg.domains:
        line = f"{d.id} = gm={d.gm}"
        if d.direction:
            line += f" direction={d.direction}"
        out.append(line)
    out += ["", "[roles]"]
    node_order = [n.id for n in cfg.nodes]
    for d in cfg.domains:
        for nid in sorted(d.nodes(), key=node_order.index):
            table = d.roles_of(nid)
            parts = []
            for role in ROLES:
                ports = [p for p in cfg.node(nid).ports if table.get(p) == role]
                if ports:
                    parts.append(f"{role}={','.join(ports)}")
            out.append(f"{d.id}.{nid} = {' '.join(parts)}")
    out += ["", "[events]"]
    out += [f"event = {format_event(ev)}" for ev in cfg.events]
    return "\n".join(out) + "\n"


# -- built-in scenarios -------------------------------------------------------

RING = ("fl", "fr", "rr", "rl")    # clockwise order of the wheel switches
BODY_CONTROLLER = "body_controller"
MAIN_COMPUTER = "main_computer"
DEFAULT_STEP_PPM = 0.5


def _sw(i: int) -> str:
    return f"sw_{RING[i % 4]}"


def _ring_roles(gm: str, gm_switch: int, clockwise: bool, others: dict[int, str]) -> list[tuple[str, str, str]]:
    """Static roles for one domain flowing around the ring from ``gm_switch``.

    Clockwise traffic leaves a switch on p0 and enters the next on p1. The
    last switch on the walk keeps its onward ring port passive, which breaks
    the loop. ``others`` maps switch index -> attached controller that also
    takes part in this domain (as a slave).
    """
    down, up = ("p0", "p1") if clockwise else ("p1", "p0")
    roles = [(gm, "p0", MASTER)]
    for hop in range(4):
        i = (gm_switch + hop) % 4 if clockwise else (gm_switch - hop) % 4
        sw = _sw(i)
        if hop == 0:
            roles += [(sw, "p3", SLAVE), (sw, up, PASSIVE)]
        else:
            roles.append((sw, up, SLAVE))
        roles.append((sw, down, MASTER if hop < 3 else PASSIVE))
        roles += [(sw, "p2", MASTER), (f"ecu_{RING[i]}", "p0", SLAVE)]
        if i in others:
            roles += [(sw, "p3", MASTER), (others[i], "p0", SLAVE)]
    return roles


def builtin_quad_motor_ring(duration: int = 20 * S, seed: int = 1,
                            step_bound_ppm: float = DEFAULT_STEP_PPM) -> ScenarioConfig:
    """Four wheel-motor ECUs on a ring of four switches with two grandmasters.

    The body controller hangs off ``sw_fl`` and masters domains 0
    (clockwise) and 1 (counterclockwise); the main computer hangs off the
    opposite switch ``sw_rr``, is a slave in domains 0/1 and masters
    domains 2 (clockwise) and 3 (counterclockwise). Every ECU is a slave in
    all four domains.
    """
    nodes = [NodeSpec(BODY_CONTROLLER, END_STATION, ("p0",)), NodeSpec(MAIN_COMPUTER, END_STATION, ("p0",))]
    for i in range(4):
        ports = ("p0", "p1", "p2", "p3") if i in (0, 2) else ("p0", "p1", "p2")
        nodes.append(NodeSpec(_sw(i), BRIDGE, ports))
    nodes += [NodeSpec(f"ecu_{w}", END_STATION, ("p0",)) for w in RING]

    links = [LinkSpec(f"ring_{RING[i]}_{RING[(i + 1) % 4]}", port_id(_sw(i), "p0"), port_id(_sw(i + 1), "p1"))
             for i in range(4)]
    links += [LinkSpec(f"edge_{w}", port_id(f"sw_{w}", "p2"), port_id(f"ecu_{w}", "p0")) for w in RING]
    links += [LinkSpec("uplink_bc", port_id(BODY_CONTROLLER, "p0"), port_id("sw_fl", "p3")),
              LinkSpec("uplink_mc", port_id(MAIN_COMPUTER, "p0"), port_id("sw_rr", "p3"))]

    drift = DriftModel.random_walk(step_bound_ppm, S)
    clocks = {n.id: ClockSpec(drift) for n in nodes}

    domains = (
        DomainSpec(0, BODY_CONTROLLER, tuple(sorted(_ring_roles(BODY_CONTROLLER, 0, True, {2: MAIN_COMPUTER}))),
                   "clockwise"),
        DomainSpec(1, BODY_CONTROLLER, tuple(sorted(_ring_roles(BODY_CONTROLLER, 0, False, {2: MAIN_COMPUTER}))),
                   "counterclockwise"),
        DomainSpec(2, MAIN_COMPUTER, tuple(sorted(_ring_roles(MAIN_COMPUTER, 2, True, {}))), "clockwise"),
        DomainSpec(3, MAIN_COMPUTER, tuple(sorted(_ring_roles(MAIN_COMPUTER, 2, False, {}))), "counterclockwise"),
    )
    return checked(ScenarioConfig(
        name="quad-motor-ring", duration=duration, seed=seed, nodes=tuple(nodes), links=tuple(links),
        clocks=clocks, domains=domains,
        description="four wheel-motor ECUs, ring of four switches, two redundant grandmasters",
    ))


BLACKHOLE_GM_PPM = 0.5
BLACKHOLE_VICTIM_RELATIVE_PPM = 10.0


def builtin_normal(seed: int = 1) -> ScenarioConfig:
    return replace(builtin_quad_motor_ring(seed=seed), name="normal",
                   description="normal operation: four domains from two grandmasters under random-walk drift")


def builtin_gm_failover(seed: int = 1, at: int = 4 * S) -> ScenarioConfig:
    base = builtin_quad_motor_ring(seed=seed)
    return checked(replace(base, name="gm-failover", events=(FaultEvent.clock_failure(BODY_CONTROLLER, at),),
                           description="body controller (primary grandmaster) fails at 4 s; "
                                       "domains 2/3 from the main computer carry on"))


def builtin_blackhole(seed: int = 1, at: int = 2 * S) -> ScenarioConfig:
    base = builtin_quad_motor_ring(seed=seed)
    clocks = dict(base.clocks)
    clocks[BODY_CONTROLLER] = ClockSpec(DriftModel.constant(BLACKHOLE_GM_PPM))
    clocks[MAIN_COMPUTER] = ClockSpec(DriftModel.constant(BLACKHOLE_GM_PPM))
    clocks["ecu_fl"] = ClockSpec(DriftModel.constant(BLACKHOLE_GM_PPM + BLACKHOLE_VICTIM_RELATIVE_PPM))
    return checked(replace(base, name="blackhole", clocks=clocks,
                           events=(FaultEvent.blackhole("sw_fl", "p2", at),),
                           description="front-left switch stops forwarding Sync/Follow_Up to the "
                                       "front-left ECU at 2 s"))


BUILTINS = {
    "normal": builtin_normal,
    "gm-failover": builtin_gm_failover,
    "blackhole": builtin_blackhole,
}


def builtin(name: str, seed: int = 1) -> ScenarioConfig:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}") from None
    return factory(seed=seed)


def with_drift(cfg: ScenarioConfig, drift: DriftModel, nodes: Iterable[str] | None = None) -> ScenarioConfig:
    """Copy of ``cfg`` with ``drift`` on the given nodes (default: all)."""
    targets = set(nodes) if nodes is not None else {n.id for n in cfg.nodes}
    clocks = dict(cfg.clocks)
    for nid in targets:
        clocks[nid] = ClockSpec(drift, cfg.clock(nid).offset)
    return replace(cfg, clocks=clocks)


def relative_drift_ppm(cfg: ScenarioConfig, node: str, domain: int) -> float | None:
    """Configured rate of ``node`` relative to the domain grandmaster, if both are constant."""
    a, b = cfg.clock(node).drift, cfg.clock(cfg.domain(domain).gm).drift
    rate = lambda d: d.rate_ppm if d.kind == "constant" else 0.0 if d.kind == "none" else None
    ra, rb = rate(a), rate(b)
    if ra is None or rb is None:
        return None
    return ra - rb


def relative_rate_bound_ppm(cfg: ScenarioConfig, node: str, domain: int) -> float:
    """Upper bound on |rate(node) - rate(grandmaster)| in ppm."""
    gm = cfg.domain(domain).gm
    if node == gm:
        return 0.0
    rel = relative_drift_ppm(cfg, node, domain)
    if rel is not None:
        return abs(rel)
    return cfg.clock(node).drift.rate_bound_ppm() + cfg.clock(gm).drift.rate_bound_ppm()


def apply_fault(event: FaultEvent, net) -> bool:
    """Put ``event`` into effect on a running network; returns whether anything changed.

    Re-applying an event that is already in effect changes nothing.
    """
    if event.kind == CLOCK_FAILURE:
        return net.fail_node(event.node)
    if event.kind == LINK_FAILURE:
        return net.fail_link(event.link)
    if event.kind == BLACKHOLE:
        return net.set_filter(port_id(event.node, event.port), event.filter)
    raise ValueError(f"unknown fault kind {event.kind!r}")
