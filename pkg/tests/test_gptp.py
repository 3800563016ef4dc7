from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from gptpsim.clocks import DriftModel
from gptpsim.gptp import (
    EngineConfig, NegativeDelay, NoLinkDelay, PdelayState, compute_master_estimate,
    compute_mean_link_delay, update_nrr,
)
from gptpsim.netmodel import BRIDGE, END_STATION, LinkSpec, NodeSpec
from gptpsim.scenario import ClockSpec, DomainSpec, FaultEvent, ScenarioConfig, builtin_quad_motor_ring, checked
from gptpsim.simcore import MS, S, US
from gptpsim.simulation import Simulation, run_scenario

from helpers import chain, check_chain_additivity, golden

# -- arithmetic ----------------------------------------------------------------


def test_mean_link_delay_symmetric_link():
    assert compute_mean_link_delay(0, 500, 600, 1100, 1.0) == 500


def test_mean_link_delay_degenerate():
    assert compute_mean_link_delay(0, 0, 0, 0, 1.0) == 0


def test_small_negative_delay_floors_to_zero():
    assert compute_mean_link_delay(0, 0, 900, 100, 1.0) == 0


def test_large_negative_delay_is_rejected():
    with pytest.raises(NegativeDelay):
        compute_mean_link_delay(0, 0, 5000, 1000, 1.0)


@given(st.integers(0, 10**6), st.integers(0, 10**9), st.integers(0, 10**6), st.integers(0, 10**12))
def test_mean_link_delay_recovers_true_delay(delay, turnaround, t1, t2_offset):
    t2 = t2_offset
    t3 = t2 + turnaround
    t4 = t1 + 2 * delay + turnaround
    assert compute_mean_link_delay(t1, t2, t3, t4, 1.0) == delay


def test_master_estimate_single_hop():
    assert compute_master_estimate(1 * S, 0, 500) == 1 * S + 500


def test_master_estimate_one_upstream_hop():
    assert compute_master_estimate(1 * S, 1300, 500) == 1 * S + 1800


def test_master_estimate_needs_link_delay():
    with pytest.raises(NoLinkDelay):
        compute_master_estimate(S, 0, None)


def test_nrr_identical_clocks():
    st_ = PdelayState()
    update_nrr(st_, 100, 200)
    assert update_nrr(st_, 100 + S, 200 + S) == 1.0


def test_nrr_clamped_and_flagged():
    st_ = PdelayState()
    update_nrr(st_, 0, 0)
    assert update_nrr(st_, 1500, 1000) == 1.001
    assert st_.nrr_flagged


def test_nrr_zero_interval_keeps_previous():
    st_ = PdelayState(nrr=1.0002)
    update_nrr(st_, 0, 0)
    assert update_nrr(st_, 50, 0) == 1.0002


# -- peer delay in simulation ----------------------------------------------------


def _responder_fast(use_nrr):
    cfg = chain((500,), duration=2500 * MS, engine=EngineConfig(pdelay_turnaround=100 * US, use_nrr=use_nrr),
                clocks={"slave": ClockSpec(DriftModel.constant(100))})
    sim = Simulation(cfg)
    res = sim.run()
    return sim.engines["gm"].pdelay["p0"], res


def test_nrr_estimate_for_100ppm_responder():
    state, _ = _responder_fast(use_nrr=True)
    assert state.nrr == pytest.approx(1.0001, abs=1e-7)


def test_nrr_removes_turnaround_bias():
    with_nrr, _ = _responder_fast(use_nrr=True)
    without, _ = _responder_fast(use_nrr=False)
    # closed form: uncorrected error is -(rate * turnaround) / 2 = -(1e-4 * 100 us) / 2 = -5 ns
    assert abs(with_nrr.mean_link_delay - 500) <= 2
    assert without.mean_link_delay - 500 == pytest.approx(-5, abs=1)


def test_round_trip_equals_two_props_plus_turnaround():
    res = run_scenario(chain((500,), duration=1500 * MS, engine=EngineConfig(pdelay_turnaround=100 * US)))
    t1 = {e.get("seq"): e.get("ts") for e in res.log.of_kind("tx")
          if e.node == "gm" and e.get("msg") == "pdelay_req"}
    t4 = {e.get("seq"): e.get("ts") for e in res.log.of_kind("rx")
          if e.node == "gm" and e.get("msg") == "pdelay_resp"}
    assert t1.keys() == t4.keys() == {0, 1}
    assert all(t4[s] - t1[s] == 2 * 500 + 100 * US for s in t1)


def test_responder_turnaround_matches_log():
    res = run_scenario(replace(builtin_quad_motor_ring(duration=3 * S), clocks={}))
    rx_req = {(e.node, e.get("port"), e.get("seq")): e.time for e in res.log.of_kind("rx")
              if e.get("msg") == "pdelay_req"}
    tx_resp = {(e.node, e.get("port"), e.get("seq")): (e.time, e.get("t2")) for e in res.log.of_kind("tx")
               if e.get("msg") == "pdelay_resp"}
    t3s = {(e.node, e.get("port"), e.get("seq")): e.get("t3") for e in res.log.of_kind("tx")
           if e.get("msg") == "pdelay_resp_follow_up"}
    assert t3s and t3s.keys() == tx_resp.keys()
    for key, t3 in t3s.items():
        sent_at, t2 = tx_resp[key]
        assert t3 - t2 == sent_at - rx_req[key]


def test_twenty_exchanges_per_port():
    res = golden("normal")
    assert set(res.pdelay_completed.values()) == {20}


def test_pdelay_on_failed_link_is_drop_logged():
    cfg = replace(chain((500,), duration=3 * S), events=(FaultEvent.link_failure("l0", 1500 * MS),))
    res = run_scenario(cfg)
    dropped = [d for d in res.drops if d.msg == "pdelay_req"]
    assert {d.time for d in dropped} == {2 * S}
    assert {d.reason for d in dropped} == {"link_down"}


def test_failed_responder_stops_answering():
    cfg = replace(chain((500,), duration=3500 * MS), events=(FaultEvent.clock_failure("slave", 500 * MS),))
    res = run_scenario(cfg)
    assert res.pdelay_completed["gm.p0"] == 1


# -- sync dissemination ------------------------------------------------------------


def _fan_out_scenario(duration=100 * MS):
    nodes = (NodeSpec("gm", BRIDGE, ("p0", "p1")), NodeSpec("a", END_STATION, ("p0",)),
             NodeSpec("b", END_STATION, ("p0",)))
    links = (LinkSpec("ga", "gm.p0", "a.p0"), LinkSpec("gb", "gm.p1", "b.p0"))
    roles = (("a", "p0", "slave"), ("b", "p0", "slave"), ("gm", "p0", "master"), ("gm", "p1", "master"))
    return checked(ScenarioConfig("fan", duration, 1, nodes, links, {}, (DomainSpec(0, "gm", roles),)))


def test_gm_with_two_master_ports_sends_four_frames_per_tick():
    res = run_scenario(_fan_out_scenario())
    sent = [e for e in res.log.of_kind("tx") if e.node == "gm" and e.get("msg") in ("sync", "follow_up")]
    assert Counter(e.get("msg") for e in sent) == {"sync": 2, "follow_up": 2}
    assert len(res.log.of_kind("sync_tick")) == 1


def test_failed_gm_sends_nothing():
    sim = Simulation(_fan_out_scenario())
    sim.net.fail_node("gm")
    assert sim.engines["gm"].master_sync_tick(0) == 0


def test_160_ticks_per_domain():
    res = golden("normal")
    for d in range(4):
        seqs = [e.get("seq") for e in res.log.of_kind("sync_tick") if e.get("domain") == d]
        assert seqs == list(range(160))


def test_slave_steps_onto_master():
    cfg = chain((500,), duration=500 * MS,
                clocks={"gm": ClockSpec(DriftModel.constant(3)), "slave": ClockSpec(DriftModel.none(), 10 * US)})
    sim = Simulation(cfg)
    res = sim.run()
    gm_osc = sim.net.nodes["gm"].osc
    posts = [r for r in res.records if r.node == "slave" and r.cause == "post_sync"]
    pres = [r for r in res.records if r.node == "slave" and r.cause == "pre_sync"]
    assert pres[0].diff >= 10 * US - 1
    for r in posts:
        assert abs(r.diff - (gm_osc.local_time(r.sim_time) - r.sim_time)) <= 1


def test_lost_followup_means_no_correction():
    cfg = replace(chain((500, 500), duration=2 * S),
                  events=(FaultEvent.blackhole("br1", "p0", 1 * S, ["follow_up"]),))
    sim = Simulation(cfg)
    res = sim.run()
    posts = [r.sim_time for r in res.records if r.node == "slave" and r.cause == "post_sync"]
    assert posts and max(posts) < 1 * S
    eng = sim.engines["slave"]
    last_seq = max(e.get("seq") for e in res.log.of_kind("sync_tick"))
    # every newer Sync replaced the unanswered one
    assert eng._pending[0].seq == last_seq
    assert eng.counters[0].orphan_followups == 0


def test_residual_after_correction_without_drift():
    sim = Simulation(replace(builtin_quad_motor_ring(duration=20 * S), clocks={}))
    res = sim.run()
    posts = [r for r in res.records if r.cause == "post_sync" and r.node.startswith("ecu")]
    assert len(posts) == 4 * 4 * 160
    assert max(abs(r.diff) for r in posts) <= 1


def test_residual_after_correction_with_drift_is_small():
    sim = Simulation(builtin_quad_motor_ring(duration=5 * S))
    res = sim.run()
    gm_of = sim.cfg.gm_of()
    for r in res.records:
        if r.cause != "post_sync":
            continue
        gm_osc = sim.net.nodes[gm_of[r.domain]].osc
        # one nanosecond of pdelay rounding per hop, at most five hops
        assert abs(r.diff - (gm_osc.local_time(r.sim_time) - r.sim_time)) <= 6


def test_bridge_correction_adds_link_delay_and_residence():
    res = run_scenario(chain((500, 500), duration=300 * MS, engine=EngineConfig(residence_time=800)))
    relays = res.log.of_kind("relay")
    assert relays
    assert {e.get("residence") for e in relays} == {800}
    assert {e.get("correction") for e in relays} == {1300}


def test_passive_ports_do_not_relay():
    nodes = (NodeSpec("gm", END_STATION, ("p0",)), NodeSpec("br", BRIDGE, ("p0", "p1")),
             NodeSpec("x", END_STATION, ("p0",)))
    links = (LinkSpec("a", "gm.p0", "br.p1"), LinkSpec("b", "br.p0", "x.p0"))
    roles = (("br", "p0", "passive"), ("br", "p1", "slave"), ("gm", "p0", "master"))
    cfg = checked(ScenarioConfig("passive", 500 * MS, 1, nodes, links, {}, (DomainSpec(0, "gm", roles),)))
    res = run_scenario(cfg)
    assert not [e for e in res.log.of_kind("tx") if e.node == "br" and e.get("msg") in ("sync", "follow_up")]
    assert res.counters[("br", 0)].applied > 0


def test_ring_delivers_each_sync_once():
    res = golden("normal")
    for d, gm in {0: "body_controller", 1: "body_controller", 2: "main_computer", 3: "main_computer"}.items():
        got = Counter((e.node, e.get("seq")) for e in res.log.of_kind("rx")
                      if e.get("msg") == "sync" and e.get("domain") == d)
        assert set(got.values()) == {1}
        assert gm not in {n for n, _ in got}
        members = {n for n, _ in got}
        assert len(members) == (9 if d < 2 else 8)
        assert all(got[(n, s)] == 1 for n in members for s in range(160))


def test_correction_additivity_on_three_hop_chain():
    assert check_chain_additivity() == 16


@given(st.lists(st.integers(0, 5000), min_size=2, max_size=5), st.integers(0, 20_000))
@settings(max_examples=15, deadline=None)
def test_correction_additivity_any_chain(delays, residence):
    assert check_chain_additivity(tuple(delays), residence, duration=400 * MS) == 4
