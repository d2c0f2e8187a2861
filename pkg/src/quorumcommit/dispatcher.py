"""Commit coordination run by the current dispatcher.

The dispatcher is one of the validators; its own persistence counts as one
validation mark. A transaction commits once every participant's Ready is
persisted by a majority of validators.

Rollback is guarded. Before it can roll back, the dispatcher asks validators
to *fence* the transaction: a fenced validator accepts no Ready it does not
already hold, and it reports what it holds. Rollback is issued only once some
participant's Ready can no longer reach a majority, even counting every
validator that has not answered yet. A commit needs that same Ready at a
majority, so no dispatcher, old or new, can ever pair a commit with a rollback.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core import (
    Commit,
    Committed,
    Decision,
    FenceReply,
    FenceRequest,
    MessageId,
    NodeId,
    Ready,
    Rollback,
    RolledBack,
    TxnId,
    TxnInfo,
    Unfence,
    Validated,
    ValidateRequest,
    majority_threshold,
)
from .effects import Effect, Note, Send, violation
from .validator import (
    ValidatorStore,
    fence_report,
    finalize,
    lower_fence,
    persist,
    raise_fence,
)


class TxnPhase(str, enum.Enum):
    COLLECTING = "collecting"
    DECIDING = "deciding"
    COMMITTED_FINAL = "committed"
    ROLLED_BACK_FINAL = "rolled_back"


FINAL_PHASES = (TxnPhase.COMMITTED_FINAL, TxnPhase.ROLLED_BACK_FINAL)


@dataclass
class TxnRecord:
    txn: TxnId
    participants: tuple[NodeId, ...]
    deadline: int
    ready_received: dict[NodeId, MessageId] = field(default_factory=dict)
    validation_marks: dict[MessageId, set[NodeId]] = field(default_factory=dict)
    phase: TxnPhase = TxnPhase.COLLECTING
    # validator -> participants whose Ready it held when it fenced (current attempt)
    fence_reports: dict[NodeId, frozenset[NodeId]] = field(default_factory=dict)
    fencing: bool = False
    fence_attempt: int = 0
    # participants that have spoken since the decision (no further pushes needed)
    heard_after_final: set[NodeId] = field(default_factory=set)

    @property
    def final(self) -> bool:
        return self.phase in FINAL_PHASES

    def marks_for(self, participant: NodeId) -> set[NodeId]:
        rid = self.ready_received.get(participant)
        return self.validation_marks.get(rid, set()) if rid is not None else set()

    def ready_validated(self, participant: NodeId, n_validators: int) -> bool:
        return len(self.marks_for(participant)) >= majority_threshold(n_validators)

    def all_validated(self, n_validators: int) -> bool:
        return all(self.ready_validated(p, n_validators) for p in self.participants)

    def decision(self) -> Optional[Decision]:
        if self.phase is TxnPhase.COMMITTED_FINAL:
            return Decision.COMMIT
        if self.phase is TxnPhase.ROLLED_BACK_FINAL:
            return Decision.ROLLBACK
        return None


def rollback_is_safe(rec: TxnRecord, n_validators: int) -> bool:
    """True when some participant's Ready can never reach a majority."""
    reporters = rec.fence_reports
    silent = n_validators - len(reporters)
    need = majority_threshold(n_validators)
    for p in rec.participants:
        holders = sum(1 for held in reporters.values() if p in held)
        if holders + silent < need:
            return True
    return False


class Dispatcher:
    """Dispatcher duties of one validator node."""

    def __init__(self, node: NodeId, validators: Sequence[NodeId], store: ValidatorStore,
                 txn_timeout: int, round_: int = 0):
        self.node = node
        self.round = round_
        self.validators = tuple(validators)
        self.store = store
        self.txn_timeout = txn_timeout
        self.records: dict[TxnId, TxnRecord] = {}
        # Readys for transactions whose participant set is not known yet
        self.held: dict[TxnId, dict[NodeId, MessageId]] = {}

    @property
    def n(self) -> int:
        return len(self.validators)

    @property
    def others(self) -> tuple[NodeId, ...]:
        return tuple(v for v in self.validators if v != self.node)

    # -- record creation ---------------------------------------------------

    def on_txn_info(self, msg: TxnInfo, now: int) -> list[Effect]:
        txn = msg.txn
        if txn in self.records:
            return self._resend_decision(self.records[txn], msg.participants)
        prior = self.store.finalized.get(txn)
        if prior is not None:
            return _decision_sends(prior, txn, msg.participants)
        if not msg.participants:
            return [violation("protocol", "TxnInfo without participants", txn=txn)]
        return self._open(txn, tuple(msg.participants), now)

    def _open(self, txn: TxnId, participants: tuple[NodeId, ...], now: int) -> list[Effect]:
        rec = TxnRecord(txn, participants, deadline=now + self.txn_timeout)
        self.records[txn] = rec
        effects: list[Effect] = [Note("txn_open", {"txn": txn,
                                                   "participants": list(participants)})]
        # metadata this node persisted in an earlier reign (failover case 1)
        for rid, ready in sorted(self.store.validated.get(txn, {}).items()):
            if ready.participant in participants and ready.participant not in rec.ready_received:
                effects += self._accept_ready(rec, ready, rid)
        for participant, rid in sorted(self.held.pop(txn, {}).items()):
            effects += self.on_ready(Ready(txn, participant), rid, now)
        return effects

    # -- validation --------------------------------------------------------

    def on_ready(self, msg: Ready, rid: MessageId, now: int) -> list[Effect]:
        txn = msg.txn
        rec = self.records.get(txn)
        if rec is None:
            prior = self.store.finalized.get(txn)
            if prior is not None:
                return _decision_sends(prior, txn, (msg.participant,))
            participants = self.store.participants.get(txn)
            if participants is None:
                self.held.setdefault(txn, {}).setdefault(msg.participant, rid)
                return [Note("held", {"txn": txn, "participant": msg.participant})]
            effects = self._open(txn, participants, now)
            rec = self.records[txn]
            if msg.participant in rec.ready_received:
                return effects
            return effects + self.on_ready(msg, rid, now)
        if msg.participant not in rec.participants:
            return [violation("protocol", "Ready from non-participant",
                              txn=txn, participant=msg.participant)]
        if rec.final:
            rec.heard_after_final.add(msg.participant)
            return self._resend_decision(rec, (msg.participant,))
        if msg.participant in rec.ready_received:
            return []
        return self._accept_ready(rec, msg, rid)

    def _accept_ready(self, rec: TxnRecord, ready: Ready, rid: MessageId) -> list[Effect]:
        rec.ready_received[ready.participant] = rid
        marks = rec.validation_marks.setdefault(rid, set())
        ok, effects = persist(self.store, rec.txn, rid, ready, rec.participants)
        if ok:
            marks.add(self.node)
        if len(rec.ready_received) == len(rec.participants) and rec.phase is TxnPhase.COLLECTING:
            rec.phase = TxnPhase.DECIDING
        req = ValidateRequest(rec.txn, rid, ready, rec.participants)
        effects += [Send(v, req) for v in self.others]
        effects += self._maybe_commit(rec)
        return effects

    def on_validated(self, msg: Validated) -> list[Effect]:
        rec = self.records.get(msg.txn)
        if rec is None or msg.ready_id not in rec.validation_marks:
            return [Note("unknown_validated", {"txn": msg.txn,
                                               "ready_id": list(msg.ready_id)})]
        if rec.final:
            return []
        rec.validation_marks[msg.ready_id].add(msg.validator)
        return self._maybe_commit(rec)

    def _maybe_commit(self, rec: TxnRecord) -> list[Effect]:
        if rec.final or not rec.all_validated(self.n):
            return []
        rec.phase = TxnPhase.COMMITTED_FINAL
        effects = finalize(self.store, rec.txn, Decision.COMMIT)
        effects += [Send(p, Commit(rec.txn)) for p in rec.participants]
        effects += [Send(v, Committed(rec.txn)) for v in self.others]
        return effects

    # -- timeouts and rollback ---------------------------------------------

    def _tag(self, rec: TxnRecord) -> tuple[int, int]:
        return (self.round, rec.fence_attempt)

    def on_txn_timeout(self, rec: TxnRecord, now: int) -> list[Effect]:
        """Deadline expiry: fence the transaction and roll back once that is safe.

        If a fence attempt has run a full period, every Ready is in hand and
        rollback is still not provably safe, the fence itself is what blocks
        the commit: withdraw it and let the validations through.
        """
        if rec.final or now < rec.deadline:
            return []
        rec.deadline = now + self.txn_timeout
        if not rec.fencing:
            return self._raise_fence(rec)
        if len(rec.ready_received) == len(rec.participants):
            return self._lift_fence(rec)
        pending = [v for v in self.others if v not in rec.fence_reports]
        tag = self._tag(rec)
        return [Send(v, FenceRequest(rec.txn, *tag)) for v in pending]

    def _raise_fence(self, rec: TxnRecord) -> list[Effect]:
        rec.fencing = True
        rec.fence_reports = {}
        tag = self._tag(rec)
        effects = raise_fence(self.store, rec.txn, tag)
        effects += self._absorb_report(rec, fence_report(self.store, rec.txn, tag))
        if not rec.final:
            effects += [Send(v, FenceRequest(rec.txn, *tag)) for v in self.others]
        return effects

    def _lift_fence(self, rec: TxnRecord) -> list[Effect]:
        tag = self._tag(rec)
        rec.fencing = False
        rec.fence_reports = {}
        rec.fence_attempt += 1
        effects = lower_fence(self.store, rec.txn, tag)
        effects += [Send(v, Unfence(rec.txn, *tag)) for v in self.others]
        # Readys refused locally while fenced can be persisted now
        for p in rec.participants:
            rid = rec.ready_received[p]
            if self.node not in rec.validation_marks[rid]:
                ok, more = persist(self.store, rec.txn, rid, Ready(rec.txn, p),
                                   rec.participants)
                effects += more
                if ok:
                    rec.validation_marks[rid].add(self.node)
        return effects + self._maybe_commit(rec)

    def on_fence_reply(self, msg: FenceReply) -> list[Effect]:
        rec = self.records.get(msg.txn)
        if rec is None or rec.final:
            return []
        if msg.decision is not None:
            return self._adopt(rec, msg.decision)
        # withdrawn fences of ours that the validator still holds (lost Unfence)
        effects: list[Effect] = [
            Send(msg.validator, Unfence(msg.txn, r, a)) for r, a in msg.fences
            if r == self.round and a < rec.fence_attempt]
        if msg.round != self.round or msg.attempt != rec.fence_attempt or not rec.fencing:
            return effects
        return effects + self._absorb_report(rec, msg)

    def _absorb_report(self, rec: TxnRecord, report: FenceReply) -> list[Effect]:
        if report.decision is not None:
            return self._adopt(rec, report.decision)
        held = frozenset(p for _, p in report.readys if p in rec.participants)
        rec.fence_reports[report.validator] = held
        effects: list[Effect] = []
        # a fenced validator's holdings are validation marks in their own right
        for rid, p in report.readys:
            if p not in rec.participants:
                continue
            if p not in rec.ready_received:
                rec.ready_received[p] = rid
                rec.validation_marks.setdefault(rid, set())
                req = ValidateRequest(rec.txn, rid, Ready(rec.txn, p), rec.participants)
                effects += [Send(v, req) for v in self.others if v != report.validator]
            rec.validation_marks[rec.ready_received[p]].add(report.validator)
        effects += self._maybe_commit(rec)
        if not rec.final and rollback_is_safe(rec, self.n):
            effects += self._rollback(rec)
        return effects

    def _rollback(self, rec: TxnRecord) -> list[Effect]:
        rec.phase = TxnPhase.ROLLED_BACK_FINAL
        effects = finalize(self.store, rec.txn, Decision.ROLLBACK)
        effects += [Send(p, Rollback(rec.txn)) for p in rec.participants]
        effects += [Send(v, RolledBack(rec.txn)) for v in self.others]
        return effects

    def _adopt(self, rec: TxnRecord, decision: Decision) -> list[Effect]:
        rec.phase = (TxnPhase.COMMITTED_FINAL if decision is Decision.COMMIT
                     else TxnPhase.ROLLED_BACK_FINAL)
        effects = finalize(self.store, rec.txn, decision)
        effects += _decision_sends(decision, rec.txn, rec.participants)
        finality = Committed if decision is Decision.COMMIT else RolledBack
        effects += [Send(v, finality(rec.txn)) for v in self.others]
        return effects

    def _resend_decision(self, rec: TxnRecord, to: Iterable[NodeId]) -> list[Effect]:
        decision = rec.decision()
        if decision is None:
            return []
        return _decision_sends(decision, rec.txn, to)

    # -- periodic work -----------------------------------------------------

    def retry(self, now: int) -> list[Effect]:
        """Re-request missing validations, drive expired deadlines and push a
        rollback to participants that may never have heard of the transaction."""
        effects: list[Effect] = []
        for txn in sorted(self.records):
            rec = self.records[txn]
            if rec.final:
                if rec.phase is TxnPhase.ROLLED_BACK_FINAL:
                    silent = [p for p in rec.participants if p not in rec.ready_received
                              and p not in rec.heard_after_final]
                    effects += self._resend_decision(rec, silent)
                continue
            for p in rec.participants:
                rid = rec.ready_received.get(p)
                if rid is None:
                    continue
                marks = rec.validation_marks[rid]
                if len(marks) >= majority_threshold(self.n):
                    continue
                req = ValidateRequest(txn, rid, Ready(txn, p), rec.participants)
                effects += [Send(v, req) for v in self.others if v not in marks]
            if now >= rec.deadline:
                effects += self.on_txn_timeout(rec, now)
        return effects

    # -- failover ----------------------------------------------------------

    def reconcile(self, resent: Iterable[tuple[Ready, MessageId]], now: int) -> list[Effect]:
        """Rebuild pending work after this node is announced as dispatcher.

        Transactions finalized in the local store have their decision re-sent;
        every other transaction known from the store or from resent Readys gets
        a fresh record and its validations re-requested.
        """
        effects: list[Effect] = []
        known = set(self.store.validated) | set(self.store.participants)
        for txn in sorted(known):
            if txn in self.records or txn in self.store.finalized:
                continue
            participants = self.store.participants.get(txn)
            if participants is None:
                # wait for the manager's TxnInfo before opening a record
                held = self.held.setdefault(txn, {})
                for rid, r in sorted(self.store.validated[txn].items()):
                    held.setdefault(r.participant, rid)
                continue
            effects += self._open(txn, participants, now)
        for ready, rid in resent:
            effects += self.on_ready(ready, rid, now)
        return effects


def _decision_sends(decision: Decision, txn: TxnId, to: Iterable[NodeId]) -> list[Effect]:
    payload = Commit(txn) if decision is Decision.COMMIT else Rollback(txn)
    return [Send(p, payload) for p in to]
