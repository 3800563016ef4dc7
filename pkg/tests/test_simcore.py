import numpy as np
import pytest
from hypothesis import given, strategies as st

from gptpsim.scenario import builtin_quad_motor_ring
from gptpsim.simcore import (
    InvalidRange, MS, RngStream, S, Scheduler, SchedulingInPast, EventLog, draw_uniform,
)
from gptpsim.simulation import run_scenario


def test_event_at_now_fires_before_later_events():
    sched = Scheduler()
    fired = []
    sched.schedule(5, lambda: fired.append("later"))
    sched.schedule(0, lambda: fired.append("now"))
    sched.run_until(10)
    assert fired == ["now", "later"]


def test_same_instant_fires_in_insertion_order():
    sched = Scheduler()
    fired = []
    for tag in "abc":
        sched.schedule(7, lambda tag=tag: fired.append(tag))
    sched.run_until(7)
    assert fired == ["a", "b", "c"]


def test_cancelled_event_never_fires():
    sched = Scheduler()
    fired = []
    h = sched.schedule(3, lambda: fired.append(1))
    Scheduler.cancel(h)
    assert sched.run_until(10) == 0
    assert fired == []


def test_empty_queue_advances_clock():
    sched = Scheduler()
    assert sched.run_until(10 * S) == 0
    assert sched.now == 10 * S


def test_order_1s_2s_2s():
    sched = Scheduler()
    sched.trail = []
    sched.schedule(2 * S, lambda: None, kind="b")
    sched.schedule(1 * S, lambda: None, kind="a")
    sched.schedule(2 * S, lambda: None, kind="c")
    assert sched.run_until(3 * S) == 3
    assert [k for _, _, k, _ in sched.trail] == ["a", "b", "c"]


def test_scheduling_in_the_past_is_rejected():
    sched = Scheduler()
    sched.run_until(5)
    with pytest.raises(SchedulingInPast):
        sched.schedule(4, lambda: None)
    with pytest.raises(SchedulingInPast):
        sched.run_until(4)


def test_events_scheduled_during_run_respect_horizon():
    sched = Scheduler()
    ticks = []

    def tick():
        ticks.append(sched.now)
        sched.schedule_in(MS, tick)

    sched.schedule(0, tick)
    sched.run_until(10 * MS)
    assert ticks == [i * MS for i in range(11)]
    assert len(sched) == 1


@given(st.lists(st.integers(0, 1000), max_size=60))
def test_fire_order_is_sorted_by_time_then_seq(times):
    sched = Scheduler()
    sched.trail = []
    for t in times:
        sched.schedule(t, lambda: None)
    sched.run_until(1000)
    keys = [(t, s) for t, s, _, _ in sched.trail]
    assert keys == sorted(keys)
    assert len(keys) == len(times)


def test_ring_event_count_is_reproducible():
    cfg = builtin_quad_motor_ring(duration=2 * S)
    a, b = run_scenario(cfg, keep_trail=True), run_scenario(cfg, keep_trail=True)
    assert a.event_count == b.event_count > 0
    assert a.trail == b.trail


def test_draw_degenerate_range():
    assert draw_uniform(RngStream(1, "x"), 0, 0) == 0


def test_draw_rejects_inverted_range():
    with pytest.raises(InvalidRange):
        draw_uniform(RngStream(1, "x"), 1, 0)


def test_million_draws_have_mean_near_zero():
    draws = RngStream(7, "stat").uniform(-1.0, 1.0, size=1_000_000)
    assert abs(draws.mean()) < 0.01
    assert draws.min() >= -1.0 and draws.max() < 1.0


def test_same_seed_and_id_give_identical_streams():
    a, b = RngStream(3, "osc:a"), RngStream(3, "osc:a")
    assert [a.uniform(-1, 1) for _ in range(100)] == [b.uniform(-1, 1) for _ in range(100)]


def test_different_ids_give_different_streams():
    a, b = RngStream(3, "osc:a"), RngStream(3, "osc:b")
    assert not np.array_equal(a.uniform(-1, 1, 100), b.uniform(-1, 1, 100))


def test_event_log_formats_fields_in_order():
    log = EventLog()
    log.add(5, "tx", "n1", port="p0", seq=3)
    assert log.to_text() == "5 tx n1 port=p0 seq=3\n"
    assert log.of_kind("tx")[0].get("seq") == 3
