from quorumcommit import validator as vd
from quorumcommit.core import (
    Committed,
    Decision,
    FenceRequest,
    Heartbeat,
    MessageId,
    Ready,
    RolledBack,
    Unfence,
    Validated,
    ValidateRequest,
)
from quorumcommit.effects import Note, Send, sends

RID = MessageId(2, 7)
REQ = ValidateRequest(1, RID, Ready(1, 2), (2, 3))


def _kinds(effects):
    return [e.kind for e in effects if isinstance(e, Note)]


def test_new_request_is_stored_and_acknowledged():
    store = vd.ValidatorStore(4)
    effects = vd.on_validate_request(store, REQ, reply_to=0)
    assert store.validated[1] == {RID: Ready(1, 2)}
    assert store.participants[1] == (2, 3)
    assert sends(effects) == [Send(0, Validated(1, RID, 4))]
    assert "persist" in _kinds(effects)


def test_duplicate_request_re_acknowledges_without_storing_again():
    store = vd.ValidatorStore(4)
    vd.on_validate_request(store, REQ, 0)
    before = {t: dict(m) for t, m in store.validated.items()}
    effects = vd.on_validate_request(store, REQ, 0)
    assert store.validated == before
    assert sends(effects) == [Send(0, Validated(1, RID, 4))]
    assert "persist" not in _kinds(effects)


def test_request_for_finalized_txn_still_acknowledged():
    store = vd.ValidatorStore(4)
    vd.on_finality(store, Committed(1))
    assert sends(vd.on_validate_request(store, REQ, 0)) == [Send(0, Validated(1, RID, 4))]


def test_finality_and_conflict():
    store = vd.ValidatorStore(4)
    vd.on_finality(store, Committed(1))
    assert store.finalized[1] is Decision.COMMIT
    assert vd.on_finality(store, Committed(1)) == []
    bad = vd.on_finality(store, RolledBack(1))
    assert _kinds(bad) == ["violation"] and bad[0].data["severity"] == "safety"
    assert store.finalized[1] is Decision.COMMIT


def test_fenced_validator_refuses_new_readys_but_keeps_old_ones():
    store = vd.ValidatorStore(4)
    vd.on_validate_request(store, REQ, 0)
    vd.on_fence_request(store, FenceRequest(1, 0, 0), 0)
    other = ValidateRequest(1, MessageId(3, 1), Ready(1, 3), (2, 3))
    effects = vd.on_validate_request(store, other, 0)
    assert sends(effects) == [] and "refused" in _kinds(effects)
    # the Ready it already holds is still acknowledged
    assert sends(vd.on_validate_request(store, REQ, 0))


def test_fence_reply_reports_holdings_and_active_fences():
    store = vd.ValidatorStore(4)
    vd.on_validate_request(store, REQ, 0)
    (reply,) = sends(vd.on_fence_request(store, FenceRequest(1, 2, 1), 0))
    rep = reply.payload
    assert rep.readys == ((RID, 2),) and rep.participants == (2, 3)
    assert rep.fences == ((2, 1),) and rep.decision is None


def test_unfence_lifts_and_tombstones():
    store = vd.ValidatorStore(4)
    vd.on_fence_request(store, FenceRequest(1, 0, 0), 0)
    assert store.is_fenced(1)
    assert _kinds(vd.on_unfence(store, Unfence(1, 0, 0))) == ["unfence"]
    assert not store.is_fenced(1)
    # a FenceRequest overtaken by its Unfence must not re-raise the fence
    vd.on_fence_request(store, FenceRequest(1, 0, 0), 0)
    assert not store.is_fenced(1)
    # a new attempt is a different fence
    vd.on_fence_request(store, FenceRequest(1, 0, 1), 0)
    assert store.is_fenced(1)


def test_unfence_before_fence_request():
    store = vd.ValidatorStore(4)
    assert vd.on_unfence(store, Unfence(1, 3, 0)) == []
    vd.on_fence_request(store, FenceRequest(1, 3, 0), 0)
    assert not store.is_fenced(1)


def test_one_of_two_fences_lifted_keeps_txn_fenced():
    store = vd.ValidatorStore(4)
    vd.on_fence_request(store, FenceRequest(1, 0, 0), 0)
    vd.on_fence_request(store, FenceRequest(1, 1, 0), 1)
    vd.on_unfence(store, Unfence(1, 0, 0))
    assert store.is_fenced(1)


def test_heartbeat_updates_and_stale_heartbeat_ignored():
    store = vd.ValidatorStore(4)
    assert vd.on_heartbeat(store, Heartbeat(0), 0, now=100)
    assert store.last_heartbeat == 100 and store.current_dispatcher == 0
    store.election_round = 3
    assert not vd.on_heartbeat(store, Heartbeat(2), 0, now=500)
    assert store.last_heartbeat == 100


def test_liveness_check():
    store = vd.ValidatorStore(4, last_heartbeat=100, current_dispatcher=0)
    assert vd.check_dispatcher_liveness(store, 100 + 50 + 1, 50)
    assert not vd.check_dispatcher_liveness(store, 100, 50)
    store.current_dispatcher = 4
    assert not vd.check_dispatcher_liveness(store, 10**9, 50)


def test_forget_volatile_keeps_durable_maps():
    store = vd.ValidatorStore(4)
    vd.on_validate_request(store, REQ, 0)
    vd.on_finality(store, Committed(1))
    store.votes[3] = 2
    validated, finalized = dict(store.validated), dict(store.finalized)
    store.forget_volatile(now=900)
    assert store.validated == validated and store.finalized == finalized
    assert store.votes == {3: 2}
    assert store.current_dispatcher is None and store.last_heartbeat == 900
