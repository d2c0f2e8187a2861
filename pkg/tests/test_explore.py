import pickle

import pytest

from quorumcommit import dispatcher as dsp
from quorumcommit.explore import MicroModel, explore, fingerprint, initial_world, rebase
from quorumcommit.simnet import Trace, _plain


class Recorder(Trace):
    def __init__(self, inner):
        super().__init__()
        self.inner = inner
        self.monitor = inner.monitor

    def emit(self, time, kind, src, dst, payload):
        self.inner.emit(time, kind, src, dst, payload)
        super().emit(time, kind, src, dst, payload)


def drive(world, until, rebase_each, delays=(1, 2)):
    """Advance like the explorer does, picking delays round-robin."""
    world.trace = Recorder(world.trace)
    offset, k, events = 0, 0, []
    while True:
        t = world.next_time()
        if t is None or offset + t > until:
            break
        world.now = t
        mark = len(world.trace.records)
        while world.queue and world.queue[0][0] == t:
            world.step()
        for rec in world.trace.records[mark:]:
            events.append((offset + rec[0], rec[1], rec[2], rec[3], repr(_plain(rec[4]))))
        sent, world.capture = world.capture, []
        for msg in sent:
            world.schedule_delivery(t + delays[k % len(delays)], msg)
            k += 1
        if rebase_each:
            offset += t
            rebase(world)
    return events


@pytest.mark.parametrize("crash_at", [None, 3, 9])
def test_rebasing_does_not_change_behaviour(crash_at):
    model = MicroModel()
    a, b = initial_world(model), initial_world(model)
    if crash_at is not None:
        a.crash(0, crash_at)
        b.crash(0, crash_at)
    plain = drive(a, 300, rebase_each=False)
    shifted = drive(b, 300, rebase_each=True)
    assert plain == shifted
    assert any(e[1] == "state" for e in plain)


def test_fingerprint_ignores_object_sharing():
    w = initial_world(MicroModel())
    copy = pickle.loads(pickle.dumps(w))
    assert fingerprint(w, True) == fingerprint(copy, True)
    assert fingerprint(w, True) != fingerprint(w, False)


def test_fault_free_micro_model_is_safe_and_terminates():
    res = explore(MicroModel(max_crashes=0, max_states=200_000))
    assert res.ok and res.terminal > 0 and res.undecided_at_horizon == 0


def test_planted_quorum_bug_is_found(monkeypatch):
    # a dispatcher that commits on its own mark alone
    monkeypatch.setattr(dsp, "majority_threshold", lambda n: 1)
    res = explore(MicroModel(max_crashes=0, max_states=2_000))
    assert any(name == "commit_safety" for name, _ in res.violations)


def test_rejects_more_than_one_crash():
    with pytest.raises(ValueError):
        explore(MicroModel(max_crashes=2))
