"""Validator-side persistence, acknowledgement, finality and liveness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Committed,
    Decision,
    FenceReply,
    FenceRequest,
    Heartbeat,
    MessageId,
    NodeId,
    Ready,
    RolledBack,
    TxnId,
    Unfence,
    Validated,
    ValidateRequest,
)
from .effects import Effect, Note, Send, violation

# (dispatcher round, attempt) naming one fence
FenceTag = tuple[int, int]


@dataclass
class ValidatorStore:
    """Per-validator state. Everything except the two liveness fields is durable."""

    node: NodeId
    validated: dict[TxnId, dict[MessageId, Ready]] = field(default_factory=dict)
    finalized: dict[TxnId, Decision] = field(default_factory=dict)
    participants: dict[TxnId, tuple[NodeId, ...]] = field(default_factory=dict)
    # txn -> active fences (round, attempt); while any is active the validator
    # accepts no new Ready metadata for that txn
    fenced: dict[TxnId, set[FenceTag]] = field(default_factory=dict)
    # withdrawn fences, so a late FenceRequest cannot re-raise one
    unfenced: dict[TxnId, set[FenceTag]] = field(default_factory=dict)
    election_round: int = 0
    votes: dict[int, NodeId] = field(default_factory=dict)
    # volatile
    last_heartbeat: int = 0
    current_dispatcher: Optional[NodeId] = None

    def is_fenced(self, txn: TxnId) -> bool:
        return bool(self.fenced.get(txn))

    def holds(self, txn: TxnId, participant: NodeId) -> bool:
        return any(r.participant == participant
                   for r in self.validated.get(txn, {}).values())

    def held_readys(self, txn: TxnId) -> tuple[tuple[MessageId, NodeId], ...]:
        return tuple(sorted((rid, r.participant)
                            for rid, r in self.validated.get(txn, {}).items()))

    def forget_volatile(self, now: int) -> None:
        self.last_heartbeat = now
        self.current_dispatcher = None


def persist(store: ValidatorStore, txn: TxnId, ready_id: MessageId, ready: Ready,
            participants: Optional[tuple[NodeId, ...]]) -> tuple[bool, list[Effect]]:
    """Record Ready metadata. Returns (holds_it_now, effects).

    A fenced transaction accepts no participant it did not already hold.
    """
    if participants and txn not in store.participants:
        store.participants[txn] = tuple(participants)
    per_txn = store.validated.get(txn)
    if per_txn is not None and ready_id in per_txn:
        return True, []
    if store.is_fenced(txn) and not store.holds(txn, ready.participant):
        return False, [Note("refused", {"txn": txn, "participant": ready.participant})]
    store.validated.setdefault(txn, {})[ready_id] = ready
    return True, [Note("persist", {"txn": txn, "participant": ready.participant,
                                   "ready_id": list(ready_id)})]


def on_validate_request(store: ValidatorStore, msg: ValidateRequest,
                        reply_to: NodeId) -> list[Effect]:
    ok, effects = persist(store, msg.txn, msg.ready_id, msg.ready, msg.participants)
    if ok:
        # re-reply on duplicates: the first Validated may have been lost
        effects.append(Send(reply_to, Validated(msg.txn, msg.ready_id, store.node)))
    return effects


def finalize(store: ValidatorStore, txn: TxnId, decision: Decision) -> list[Effect]:
    prior = store.finalized.get(txn)
    if prior is None:
        store.finalized[txn] = decision
        return [Note("finalize", {"txn": txn, "decision": decision.value})]
    if prior is not decision:
        return [violation("safety", "conflicting finality at validator",
                          txn=txn, had=prior.value, got=decision.value)]
    return []


def on_finality(store: ValidatorStore, msg: Committed | RolledBack) -> list[Effect]:
    decision = Decision.COMMIT if isinstance(msg, Committed) else Decision.ROLLBACK
    return finalize(store, msg.txn, decision)


def raise_fence(store: ValidatorStore, txn: TxnId, tag: FenceTag) -> list[Effect]:
    if tag in store.unfenced.get(txn, ()) or tag in store.fenced.get(txn, ()):
        return []
    store.fenced.setdefault(txn, set()).add(tag)
    return [Note("fence", {"txn": txn, "round": tag[0], "attempt": tag[1]})]


def lower_fence(store: ValidatorStore, txn: TxnId, tag: FenceTag) -> list[Effect]:
    store.unfenced.setdefault(txn, set()).add(tag)
    active = store.fenced.get(txn)
    if not active or tag not in active:
        return []
    active.discard(tag)
    if not active:
        del store.fenced[txn]
    return [Note("unfence", {"txn": txn, "round": tag[0], "attempt": tag[1]})]


def on_fence_request(store: ValidatorStore, msg: FenceRequest,
                     reply_to: NodeId) -> list[Effect]:
    tag = (msg.round, msg.attempt)
    effects = raise_fence(store, msg.txn, tag)
    effects.append(Send(reply_to, fence_report(store, msg.txn, tag)))
    return effects


def on_unfence(store: ValidatorStore, msg: Unfence) -> list[Effect]:
    return lower_fence(store, msg.txn, (msg.round, msg.attempt))


def fence_report(store: ValidatorStore, txn: TxnId, tag: FenceTag) -> FenceReply:
    return FenceReply(txn, store.node, tag[0], tag[1], store.participants.get(txn),
                      store.held_readys(txn), store.finalized.get(txn),
                      tuple(sorted(store.fenced.get(txn, ()))))


def on_heartbeat(store: ValidatorStore, msg: Heartbeat, src: NodeId, now: int) -> bool:
    """Refresh liveness from a heartbeat; False when the heartbeat is stale."""
    if msg.round < store.election_round:
        return False
    store.last_heartbeat = now
    store.current_dispatcher = src
    return True


def check_dispatcher_liveness(store: ValidatorStore, now: int, timeout: int) -> bool:
    if store.current_dispatcher == store.node:
        return False
    return now - store.last_heartbeat > timeout
