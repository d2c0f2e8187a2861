import pytest

from quorumcommit import checker as ck
from quorumcommit.core import TraceParseError, trace_line


def rec(kind, src=None, payload=None, time=0, dst=None):
    return {"time": time, "kind": kind, "src": src, "dst": dst, "payload": payload or {}}


def config(n=5, loss=0.0):
    return rec("config", payload={"validators": list(range(n)), "participants": [],
                                  "network": {"loss_prob": loss}})


def send(src, payload):
    return rec("send", src, payload)


def rounds(node, seq):
    return [rec("round", node, {"round": r}) for r in seq]


def test_round_monotonic():
    assert ck.check_round_monotonic(rounds(1, [0, 1, 1, 2])).passed
    res = ck.check_round_monotonic(rounds(1, [0, 2, 1]))
    assert not res.passed and res.first_violation_line == 3


def test_round_after_restart_may_repeat_durable_round():
    trace = rounds(1, [0, 3]) + [rec("crash", 1), rec("restart", 1)] + rounds(1, [3])
    assert ck.check_round_monotonic(trace).passed


def coord(node, r):
    return rec("role", node, {"round": r, "role": "coordinator"})


def test_unique_coordinator():
    assert ck.check_unique_coordinator([coord(1, 3), coord(2, 4)]).passed
    assert not ck.check_unique_coordinator([coord(1, 3), coord(2, 3)]).passed
    assert ck.check_unique_coordinator([config()]).passed


def announce(src, r, d):
    return send(src, {"type": "LeaderAnnounce", "id": [src, 1], "round": r, "dispatcher": d})


def test_unique_dispatcher():
    assert ck.check_unique_dispatcher([announce(1, 3, 7), announce(1, 3, 7)]).passed
    assert not ck.check_unique_dispatcher([announce(1, 3, 7), announce(2, 3, 9)]).passed
    assert ck.check_unique_dispatcher([announce(1, 3, 7), announce(2, 5, 9)]).passed


def start(txn, parts):
    return rec("txn_start", parts[0], {"txn": txn, "participants": list(parts)})


def persist(v, txn, p):
    return rec("persist", v, {"txn": txn, "participant": p})


def decision(src, kind, txn):
    return send(src, {"type": kind, "id": [src, 9], "txn": txn})


def test_commit_with_majority_passes():
    trace = [config(5), start(1, [5, 6])]
    trace += [persist(v, 1, p) for v in (0, 1, 2) for p in (5, 6)]
    trace.append(decision(0, "Commit", 1))
    assert ck.check_commit_safety(trace).passed


def test_commit_with_two_marks_fails():
    trace = [config(5), start(1, [5, 6])]
    trace += [persist(v, 1, 5) for v in (0, 1, 2)] + [persist(v, 1, 6) for v in (0, 1)]
    trace.append(decision(0, "Commit", 1))
    res = ck.check_commit_safety(trace)
    assert not res.passed and res.first_violation_line == len(trace)


def test_commit_and_rollback_from_different_dispatchers_fails():
    trace = [config(3), start(1, [5])] + [persist(v, 1, 5) for v in (0, 1)]
    trace += [decision(0, "Commit", 1), decision(2, "Rollback", 1)]
    assert not ck.check_commit_safety(trace).passed


def test_participant_disagreement_and_safety_notes_fail():
    states = [rec("state", 5, {"txn": 1, "state": "committed"}),
              rec("state", 6, {"txn": 1, "state": "aborted"})]
    assert not ck.check_commit_safety(states).passed
    note = rec("violation", 5, {"severity": "safety", "reason": "x"})
    assert not ck.check_commit_safety([note]).passed
    proto = rec("violation", 5, {"severity": "protocol", "reason": "x"})
    assert ck.check_commit_safety([proto]).passed


def committed(p, txn, t):
    return rec("state", p, {"txn": txn, "state": "committed"}, time=t)


def test_termination():
    trace = [config(5), start(1, [5, 6]), committed(5, 1, 10), committed(6, 1, 20)]
    assert ck.check_termination(trace, horizon=30).passed
    assert not ck.check_termination(trace, horizon=15).passed


def test_termination_beyond_tolerated_crashes_is_unmet():
    trace = [config(5), start(1, [5])] + [rec("crash", v) for v in (0, 1, 2)]
    res = ck.check_termination(trace, horizon=100)
    assert res.status == ck.UNMET and res.passed


def test_two_crashes_are_within_contract():
    trace = [config(5), start(1, [5])] + [rec("crash", v) for v in (0, 1)]
    assert ck.check_termination(trace, horizon=100).status == ck.FAIL
    assert ck.check_termination(trace + [committed(5, 1, 50)], horizon=100).passed


def test_unannounced_election_fails_termination():
    trace = [config(5), rec("suspect", 1, {"round": 1}, time=5)]
    assert not ck.check_termination(trace, horizon=100).passed
    assert ck.check_termination(trace + [announce(1, 1, 2)], horizon=100).passed


def test_report_is_a_pure_function_of_the_trace():
    trace = [config(5), start(1, [5]), coord(1, 1), announce(1, 1, 2), committed(5, 1, 9)]
    a, b = ck.check_all(trace, 100), ck.check_all(trace, 100)
    assert a.to_json() == b.to_json() and a.ok


def test_text_lines_and_dicts_agree():
    dicts = [config(3), start(1, [5]), persist(0, 1, 5), decision(0, "Commit", 1)]
    lines = [trace_line(d["time"], d["kind"], d["src"], d["dst"], d["payload"])
             for d in dicts]
    assert ck.check_all(lines, 0).to_dict() == ck.check_all(dicts, 0).to_dict()
    assert not ck.check_commit_safety(lines).passed


def test_malformed_record_reports_line():
    with pytest.raises(TraceParseError) as exc:
        ck.check_all([config(3), rec("round", 1, {"rnd": 1})])
    assert exc.value.line_no == 2
