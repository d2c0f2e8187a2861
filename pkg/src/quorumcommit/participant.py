"""Participant and transaction-manager state machine."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import (
    Begin,
    Decision,
    InvalidTransactionError,
    LeaderAnnounce,
    NodeId,
    Ready,
    TxnId,
    TxnInfo,
)
from .effects import Effect, Note, Schedule, Send, violation


class ParticipantState(str, enum.Enum):
    WORKING = "working"
    PREPARING = "preparing"
    READY = "ready"
    COMMITTED = "committed"
    ABORTED = "aborted"


FINAL_STATES = (ParticipantState.COMMITTED, ParticipantState.ABORTED)

LEGAL_TRANSITIONS = {
    (ParticipantState.WORKING, ParticipantState.PREPARING),
    (ParticipantState.PREPARING, ParticipantState.READY),
    (ParticipantState.READY, ParticipantState.COMMITTED),
    (ParticipantState.READY, ParticipantState.ABORTED),
}


@dataclass
class ParticipantRecord:
    node: NodeId
    txn: TxnId
    known_dispatcher: NodeId
    prepare_delay: int = 0
    state: ParticipantState = ParticipantState.WORKING
    pending_ready: Optional[Ready] = None
    # decision that outran our own Ready under reordering
    buffered_decision: Optional[Decision] = None
    # set only on the transaction manager's record
    participants: Optional[tuple[NodeId, ...]] = None

    @property
    def is_manager(self) -> bool:
        return self.participants is not None

    @property
    def final(self) -> bool:
        return self.state in FINAL_STATES


def _enter(rec: ParticipantRecord, state: ParticipantState) -> Note:
    rec.state = state
    return Note("state", {"txn": rec.txn, "state": state.value})


def tm_begin(tm: NodeId, txn: TxnId, participants: Sequence[NodeId],
             dispatcher: NodeId, prepare_delay: int = 0
             ) -> tuple[ParticipantRecord, list[Effect]]:
    """Start a transaction at its manager.

    The manager skips the Begin receipt and goes straight to preparing; every
    other participant gets a Begin and the dispatcher learns the participant set.
    """
    if not participants:
        raise InvalidTransactionError(f"transaction {txn} has no participants")
    if tm not in participants:
        raise InvalidTransactionError(f"manager {tm} is not a participant of {txn}")
    if len(set(participants)) != len(participants):
        raise InvalidTransactionError(f"duplicate participants in {txn}")
    parts = tuple(participants)
    rec = ParticipantRecord(tm, txn, dispatcher, prepare_delay, participants=parts)
    effects: list[Effect] = [
        Note("txn_start", {"txn": txn, "participants": list(parts)}),
        _enter(rec, ParticipantState.PREPARING),
        Schedule(prepare_delay, ("prepared", txn)),
    ]
    effects += [Send(p, Begin(txn)) for p in parts if p != tm]
    effects.append(Send(dispatcher, TxnInfo(txn, parts)))
    return rec, effects


def on_begin(rec: ParticipantRecord, msg: Begin) -> list[Effect]:
    if msg.txn != rec.txn:
        return [violation("protocol", "begin for another transaction",
                          txn=rec.txn, got=msg.txn)]
    if rec.state is not ParticipantState.WORKING:
        return []
    return _start_prepare(rec)


def _start_prepare(rec: ParticipantRecord) -> list[Effect]:
    return [_enter(rec, ParticipantState.PREPARING),
            Schedule(rec.prepare_delay, ("prepared", rec.txn))]


def complete_prepare(rec: ParticipantRecord) -> list[Effect]:
    """Local work is durable: announce Ready to the known dispatcher."""
    if rec.state is not ParticipantState.PREPARING:
        return []
    rec.pending_ready = Ready(rec.txn, rec.node)
    effects: list[Effect] = [_enter(rec, ParticipantState.READY),
                             Send(rec.known_dispatcher, rec.pending_ready)]
    if rec.buffered_decision is not None:
        effects += on_decision(rec, rec.buffered_decision)
    return effects


def on_decision(rec: ParticipantRecord, decision: Decision) -> list[Effect]:
    state = rec.state
    if state in (ParticipantState.WORKING, ParticipantState.PREPARING):
        if rec.buffered_decision is not None and rec.buffered_decision is not decision:
            return [violation("safety", "conflicting buffered decisions",
                              txn=rec.txn, had=rec.buffered_decision.value,
                              got=decision.value)]
        rec.buffered_decision = decision
        if state is ParticipantState.WORKING:
            # a decision proves the transaction exists even if Begin was lost
            return _start_prepare(rec)
        return []
    if state is ParticipantState.READY:
        rec.pending_ready = None
        rec.buffered_decision = None
        target = (ParticipantState.COMMITTED if decision is Decision.COMMIT
                  else ParticipantState.ABORTED)
        return [_enter(rec, target)]
    recorded = (Decision.COMMIT if state is ParticipantState.COMMITTED
                else Decision.ROLLBACK)
    if recorded is decision:
        return []
    return [violation("safety", "conflicting decision at participant",
                      txn=rec.txn, state=state.value, got=decision.value)]


def on_leader_announce(rec: ParticipantRecord, msg: LeaderAnnounce) -> list[Effect]:
    rec.known_dispatcher = msg.dispatcher
    out: list[Effect] = []
    if rec.is_manager and not rec.final:
        # the successor may never have seen the participant set
        out.append(Send(msg.dispatcher, TxnInfo(rec.txn, rec.participants)))
    if rec.state is ParticipantState.READY and rec.pending_ready is not None:
        out.append(Send(msg.dispatcher, rec.pending_ready))
    return out


def retransmit(rec: ParticipantRecord) -> list[Effect]:
    """Periodic resend of whatever this participant is still waiting on."""
    if rec.final:
        return []
    out: list[Effect] = []
    if rec.is_manager:
        parts = rec.participants
        out += [Send(p, Begin(rec.txn)) for p in parts if p != rec.node]
        out.append(Send(rec.known_dispatcher, TxnInfo(rec.txn, parts)))
    if rec.state is ParticipantState.READY and rec.pending_ready is not None:
        out.append(Send(rec.known_dispatcher, rec.pending_ready))
    return out

