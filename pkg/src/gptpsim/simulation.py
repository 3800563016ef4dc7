"""Wire a :class:`ScenarioConfig` into a runnable simulation."""

from __future__ import annotations

from dataclasses import dataclass, field

from .clocks import Oscillator
from .gptp import DISABLED, DomainCounters, GptpEngine
from .metrics import RunSummary, TraceRecord, summarize
from .netmodel import DropRecord, Network
from .scenario import ScenarioConfig, apply_fault, checked
from .simcore import EventLog, RngStream, Scheduler


@dataclass
class RunResult:
    config: ScenarioConfig
    records: list[TraceRecord]
    log: EventLog
    event_count: int
    counters: dict[tuple[str, int], DomainCounters]
    drops: list[DropRecord]
    mean_link_delays: dict[str, int | None]
    pdelay_completed: dict[str, int] = field(default_factory=dict)
    trail: list | None = None

    def summary(self, epsilon: int = 1000) -> RunSummary:
        return summarize(self.records, self.config.gm_of(), epsilon,
                         horizon=self.config.duration, counters=self.counters, drops=self.drops,
                         stale_after=4 * self.config.engine.sync_interval)


class Simulation:
    """One independent, single-threaded simulation instance."""

    def __init__(self, cfg: ScenarioConfig, keep_trail: bool = False) -> None:
        self.cfg = checked(cfg)
        self.sched = Scheduler()
        if keep_trail:
            self.sched.trail = []
        self.log = EventLog()
        self.net = Network(self.sched, self.log)
        self.records: list[TraceRecord] = []

        for spec in cfg.nodes:
            clock = cfg.clock(spec.id)
            rng = RngStream(cfg.seed, f"osc:{spec.id}") if clock.drift.kind == "random_walk" else None
            self.net.add_node(spec, Oscillator(spec.id, clock.drift, rng, clock.offset))
        for lk in cfg.links:
            self.net.connect(lk)

        gm_of = cfg.gm_of()
        self.engines: dict[str, GptpEngine] = {}
        for spec in cfg.nodes:
            roles = {}
            for d in cfg.domains:
                table = {p: r for p, r in d.roles_of(spec.id).items() if r != DISABLED}
                if table:
                    roles[d.id] = table
            gm_domains = {d for d, gm in gm_of.items() if gm == spec.id}
            self.engines[spec.id] = GptpEngine(self.net.nodes[spec.id], self.net, cfg.engine, roles,
                                               gm_domains, cfg.duration, self._record)

        # faults first so that a fault and a timer at the same instant resolve fault-first
        for ev in cfg.events:
            self.sched.schedule(ev.at, lambda ev=ev: self._fault(ev), kind="fault", target=ev.kind)
        for eng in self.engines.values():
            eng.start_pdelay(0)
        for eng in self.engines.values():
            eng.start_sync(cfg.engine.sync_start)
        self.sched.schedule(0, self._sample, kind="sample")

    def _record(self, t: int, node: str, domain: int, clock_time: int, cause: str) -> None:
        self.records.append(TraceRecord(t, node, domain, clock_time, clock_time - t, cause))

    def _fault(self, ev) -> None:
        changed = apply_fault(ev, self.net)
        self.log.add(self.sched.now, "fault", ev.node or ev.link or "", fault=ev.kind,
                     port=ev.port or "-", changed=changed)

    def _sample(self) -> None:
        t = self.sched.now
        for node_id, eng in self.engines.items():
            node = eng.node
            if node.failed:
                continue
            local = node.osc.local_time(t)
            for d, clk in eng.clocks.items():
                ct = clk.at_local(local)
                self.records.append(TraceRecord(t, node_id, d, ct, ct - t, "sample"))
        nxt = t + self.cfg.sampling_interval
        if nxt < self.cfg.duration:
            self.sched.schedule(nxt, self._sample, kind="sample")

    def run(self) -> RunResult:
        count = self.sched.run_until(self.cfg.duration)
        counters = {(n, d): c for n, eng in self.engines.items() for d, c in eng.counters.items()}
        delays, completed = {}, {}
        for n, eng in self.engines.items():
            for pname, st in eng.pdelay.items():
                delays[f"{n}.{pname}"] = st.mean_link_delay
                completed[f"{n}.{pname}"] = st.completed
        return RunResult(self.cfg, self.records, self.log, count, counters, list(self.net.drop_log),
                         delays, completed, self.sched.trail)


def run_scenario(cfg: ScenarioConfig, keep_trail: bool = False) -> RunResult:
    return Simulation(cfg, keep_trail).run()
