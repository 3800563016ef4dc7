"""Small scenario builders and cached golden runs shared by the test modules."""

from __future__ import annotations

from functools import lru_cache

from gptpsim.clocks import DriftModel
from gptpsim.gptp import MASTER, SLAVE, EngineConfig
from gptpsim.netmodel import BRIDGE, END_STATION, LinkSpec, NodeSpec
from gptpsim.scenario import ClockSpec, DomainSpec, ScenarioConfig, builtin, checked
from gptpsim.simcore import S
from gptpsim.simulation import run_scenario


def chain(delays=(500, 500), duration=2 * S, engine=None, drift=None, clocks=None, seed=1):
    """gm -- br1 -- ... -- brN -- slave, one domain flowing left to right.

    ``delays`` gives the propagation delay of each link from the grandmaster
    outwards, so ``len(delays) - 1`` bridges sit in between.
    """
    n_br = len(delays) - 1
    names = ["gm"] + [f"br{i + 1}" for i in range(n_br)] + ["slave"]
    nodes = [NodeSpec("gm", END_STATION, ("p0",))]
    nodes += [NodeSpec(b, BRIDGE, ("p0", "p1")) for b in names[1:-1]]
    nodes.append(NodeSpec("slave", END_STATION, ("p0",)))
    links, roles = [], [("gm", "p0", MASTER)]
    for i, d in enumerate(delays):
        left, right = names[i], names[i + 1]
        a = f"{left}.p0"
        b = f"{right}.p1" if right.startswith("br") else f"{right}.p0"
        links.append(LinkSpec(f"l{i}", a, b, prop_delay=d))
    for b in names[1:-1]:
        roles += [(b, "p1", SLAVE), (b, "p0", MASTER)]
    roles.append(("slave", "p0", SLAVE))
    all_clocks = {n: ClockSpec(drift or DriftModel.none()) for n in names}
    all_clocks.update(clocks or {})
    return checked(ScenarioConfig(
        name=f"chain{n_br}", duration=duration, seed=seed, nodes=tuple(nodes), links=tuple(links),
        clocks=all_clocks, domains=(DomainSpec(0, "gm", tuple(sorted(roles))),),
        engine=engine or EngineConfig(),
    ))


@lru_cache(maxsize=None)
def golden(name: str, seed: int = 1):
    return run_scenario(builtin(name, seed=seed))


def reachable_domains(cfg, failed_links=(), failed_nodes=()):
    """Per node, the domains whose grandmaster can still reach it.

    Built only from the configured topology and role tables: an edge runs
    from a master port to the peer when the peer's port is its slave port.
    Independent of the simulator's own frame handling.
    """
    import networkx as nx

    from gptpsim.netmodel import split_port_id

    dead = set(failed_nodes)
    out: dict[str, set[int]] = {n.id: set() for n in cfg.nodes}
    for d in cfg.domains:
        role = {(n, p): r for n, p, r in d.roles}
        g = nx.DiGraph()
        g.add_nodes_from(n.id for n in cfg.nodes if n.id not in dead)
        for lk in cfg.links:
            if lk.id in failed_links:
                continue
            a, b = split_port_id(lk.a), split_port_id(lk.b)
            for src, dst in ((a, b), (b, a)):
                if src[0] in dead or dst[0] in dead:
                    continue
                if role.get(src) == "master" and role.get(dst) == "slave":
                    g.add_edge(src[0], dst[0])
        if d.gm in dead:
            continue
        for n in nx.descendants(g, d.gm) | {d.gm}:
            out[n].add(d.id)
    return out


def oracle_k(cfg, family):
    """Largest k such that every k-subset of ``family`` leaves each ECU reachable in some domain."""
    from itertools import combinations

    def ok(subset):
        links = {f.link for f in subset if f.kind == "link_failure"}
        nodes = {f.node for f in subset if f.kind == "clock_failure"}
        reach = reachable_domains(cfg, links, nodes)
        return all(reach[e] for e in cfg.ecus())

    for size in range(len(family) + 1):
        bad = [s for s in combinations(family, size) if not ok(s)]
        if bad:
            return size - 1, bad
    return len(family), []


def check_chain_additivity(delays=(300, 700, 400, 900), residence=1500, duration=2 * S):
    """Run a bridge chain and compare each Follow_Up correction with a sum rebuilt from the log.

    Hop delays come from Sync tx/rx timestamps of neighbouring nodes and
    residences from each bridge's own Sync rx/tx timestamps. Returns the
    number of sequence numbers checked.
    """
    from gptpsim.simulation import run_scenario

    res = run_scenario(chain(delays, duration=duration, engine=EngineConfig(residence_time=residence)))
    tx = {(e.node, e.get("seq")): e.get("ts") for e in res.log.of_kind("tx") if e.get("msg") == "sync"}
    rx = {(e.node, e.get("seq")): e.get("ts") for e in res.log.of_kind("rx") if e.get("msg") == "sync"}
    fu = {e.get("seq"): (e.get("origin"), e.get("correction")) for e in res.log.of_kind("rx")
          if e.node == "slave" and e.get("msg") == "follow_up"}
    applied = {e.get("seq"): e.get("estimate") for e in res.log.of_kind("sync_applied") if e.node == "slave"}
    path = ["gm"] + [f"br{i + 1}" for i in range(len(delays) - 1)] + ["slave"]
    assert fu, "no Follow_Up reached the slave"
    for seq, (origin, correction) in fu.items():
        hops = [rx[(path[i + 1], seq)] - tx[(path[i], seq)] for i in range(len(delays))]
        residences = [tx[(b, seq)] - rx[(b, seq)] for b in path[1:-1]]
        assert hops == list(delays), (seq, hops)
        assert correction == sum(hops[:-1]) + sum(residences), (seq, correction)
        assert applied[seq] == origin + correction + hops[-1], seq
    return len(fu)
