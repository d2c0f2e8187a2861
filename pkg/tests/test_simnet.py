import random

import pytest

from quorumcommit.core import Begin, ConfigurationError, Message, MessageId
from quorumcommit.nodes import ProtocolTiming
from quorumcommit.simnet import (
    FaultEntry,
    FaultSchedule,
    NetworkModel,
    World,
    run_until,
    send,
)

MSG = Message(MessageId(1, 1), 1, 2, Begin(0))


def timing():
    return ProtocolTiming(heartbeat=50, suspicion=250, draw_period=5, threshold=0.8,
                          round_deadline=(250, 500), txn_timeout=250, retry=100,
                          prepare_delay=(10, 20))


def test_send_fixed_delay():
    (ev,) = send(NetworkModel(25, 25), MSG, 100, random.Random(0))
    assert ev.time == 125 and ev.data is MSG


def test_send_total_loss():
    assert send(NetworkModel(1, 5, loss_prob=1.0), MSG, 0, random.Random(0)) == []


def test_send_certain_duplication():
    evs = send(NetworkModel(1, 50, dup_prob=1.0), MSG, 0, random.Random(3))
    assert len(evs) == 2 and evs[0].data.id == evs[1].data.id


@pytest.mark.parametrize("kw", [dict(delay_min=5, delay_max=1),
                                dict(delay_min=1, delay_max=2, loss_prob=1.5)])
def test_network_model_validation(kw):
    with pytest.raises(ConfigurationError):
        NetworkModel(**kw)


def test_overlapping_crash_windows_rejected():
    with pytest.raises(ConfigurationError):
        FaultSchedule([FaultEntry(1, 10, 50), FaultEntry(1, 40, 90)])
    FaultSchedule([FaultEntry(1, 10, 50), FaultEntry(1, 60, 90)])


def world(seed=0, loss=0.0, dup=0.0, n=3, parts=(3, 4)):
    return World(n, parts, NetworkModel(10, 40, loss, dup), timing(), seed=seed)


def test_empty_schedule_only_background_traffic():
    w = world()
    trace = run_until(w, 0)
    kinds = {r[1] for r in trace.records}
    assert "txn_start" not in kinds and "state" not in kinds


def _run(seed, crash=True):
    w = world(seed, loss=0.1, dup=0.1, n=5, parts=(5, 6, 7))
    w.begin_transaction(0, 0, (5, 6, 7))
    w.begin_transaction(30, 1, (6, 7))
    if crash:
        w.apply_faults(FaultSchedule([FaultEntry(0, 60), FaultEntry(2, 100, 900)]))
    return run_until(w, 20_000)


def test_same_seed_same_bytes():
    assert _run(11).text() == _run(11).text()
    assert _run(11).digest() != _run(12).digest()


def test_crashed_dispatcher_stops_heartbeating():
    w = world()
    w.crash(0, 50)
    trace = run_until(w, 2_000)
    late = [r for r in trace.records if r[1] == "send" and r[2] == 0 and r[0] > 50]
    assert late == []


def test_delivery_to_crashed_node_is_traced_as_dropped():
    w = world()
    w.crash(1, 0)
    trace = run_until(w, 200)
    drops = [r for r in trace.records if r[1] == "drop"]
    assert drops and all(r[3] == 1 for r in drops)


def test_restart_of_live_node_is_an_error():
    w = world()
    w.restart(1, 10)
    with pytest.raises(ConfigurationError):
        run_until(w, 100)


def test_crash_restart_crash_windows_honored():
    w = world()
    w.apply_faults(FaultSchedule([FaultEntry(1, 10, 100), FaultEntry(1, 300, 400)]))
    trace = run_until(w, 1_000)
    events = [(r[0], r[1]) for r in trace.records if r[2] == 1 and r[1] in ("crash", "restart")]
    assert events == [(10, "crash"), (100, "restart"), (300, "crash"), (400, "restart")]


def test_restart_keeps_validated_map():
    w = world(n=3, parts=(3, 4))
    w.begin_transaction(0, 0, (3, 4))
    w.apply_faults(FaultSchedule([FaultEntry(1, 2_000, 2_500)]))
    run_until(w, 1_999)
    before = {t: dict(m) for t, m in w.nodes[1].store.validated.items()}
    assert before
    run_until(w, 3_000)
    assert w.nodes[1].store.validated == before


def test_trigger_crashes_mid_handler():
    w = world(n=3, parts=(3, 4))
    w.begin_transaction(0, 0, (3, 4))
    w.crash_on(0, "send", "ValidateRequest", occurrence=1)
    trace = run_until(w, 5_000)
    sends = [r for r in trace.records if r[1] == "send" and r[2] == 0
             and type(r[4].payload).__name__ == "ValidateRequest"]
    # the crash fires on the first ValidateRequest; its sibling is never sent
    assert len(sends) == 1
    crash = next(i for i, r in enumerate(trace.records) if r[1] == "crash")
    assert trace.records[crash - 1][4] is sends[0][4]


def test_unknown_participant_ids_rejected():
    with pytest.raises(ConfigurationError):
        World(3, (1, 4), NetworkModel(1, 1), timing())
