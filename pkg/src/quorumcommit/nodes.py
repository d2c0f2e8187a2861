"""Validator and participant nodes: wire the pure transitions to the simulator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterable, Optional

from . import election as el
from . import participant as pt
from . import validator as vd
from .core import (
    Begin,
    Commit,
    Committed,
    Decision,
    FenceReply,
    FenceRequest,
    Unfence,
    Heartbeat,
    LeaderAnnounce,
    Message,
    NodeId,
    Proposal,
    Ready,
    Rollback,
    RolledBack,
    TxnInfo,
    Validated,
    ValidateRequest,
    Vote,
    is_duplicate,
)
from .dispatcher import Dispatcher
from .effects import Effect, Note, Schedule, Send

# participant retransmission interval grows up to this multiple of the base
RETRY_BACKOFF_CAP = 4

if TYPE_CHECKING:
    from .simnet import World


@dataclass
class ProtocolTiming:
    """Protocol timers, all in simulator ticks."""

    heartbeat: int
    suspicion: int
    draw_period: int
    threshold: float
    round_deadline: tuple[int, int]
    txn_timeout: int
    retry: int
    prepare_delay: tuple[int, int]
    include_self_in_wheel: bool = True


class Node:
    def __init__(self, world: World, node: NodeId):
        self.world = world
        self.node = node
        self.rng = world.rng(f"node/{node}")
        self.seq = 0  # message counter, kept across restarts so ids stay unique
        self.incarnation = 0
        self.seen: set = set()

    @property
    def timing(self) -> ProtocolTiming:
        return self.world.timing

    def apply(self, effects: Iterable[Effect]) -> None:
        world = self.world
        for e in effects:
            if isinstance(e, Send):
                world.transmit(self, e.dst, e.payload)
            elif isinstance(e, Note):
                world.note(self.node, e.kind, e.data)
            elif isinstance(e, Schedule):
                world.set_timer(self.node, e.delay, e.tag)

    def set_timer(self, delay: int, tag: Any) -> None:
        self.world.set_timer(self.node, delay, tag)

    def receive(self, msg: Message) -> None:
        if is_duplicate(self.seen, msg.id):
            return
        self.seen.add(msg.id)
        self.deliver(msg)

    def crash(self) -> None:
        self.incarnation += 1
        self.seen = set()

    def deliver(self, msg: Message) -> None:
        raise NotImplementedError

    def on_timer(self, tag: Any) -> None:
        raise NotImplementedError

    def start(self) -> None:
        pass

    def restart(self) -> None:
        pass


class ValidatorNode(Node):
    def __init__(self, world: World, node: NodeId, validators: tuple[NodeId, ...],
                 participants: tuple[NodeId, ...]):
        super().__init__(world, node)
        self.validators = validators
        self.participants = participants
        self.store = vd.ValidatorStore(node)
        self.election = el.ElectionState(node, voted_in=self.store.votes)
        self.dispatcher: Optional[Dispatcher] = None
        self.dispatcher_round = -1
        self.draw_armed = False

    @property
    def others(self) -> tuple[NodeId, ...]:
        return tuple(v for v in self.validators if v != self.node)

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        initial = self.world.initial_dispatcher
        self.store.current_dispatcher = initial
        self.store.last_heartbeat = self.world.now
        self._note_round()
        if self.node == initial:
            self._become_dispatcher(0)
        self.set_timer(self.timing.heartbeat, ("liveness",))

    def crash(self) -> None:
        super().crash()
        self.dispatcher = None
        self.dispatcher_round = -1
        self.draw_armed = False

    def restart(self) -> None:
        self.store.forget_volatile(self.world.now)
        self.election = el.ElectionState(self.node, round=self.store.election_round,
                                         voted_in=self.store.votes)
        self._note_round()
        self.set_timer(self.timing.heartbeat, ("liveness",))

    def _note_round(self) -> None:
        self.store.election_round = self.election.round
        self.world.note(self.node, "round", {"round": self.election.round})

    def _new_deadline(self) -> int:
        lo, hi = self.timing.round_deadline
        return self.world.now + (lo if lo == hi else self.rng.randint(lo, hi))

    # -- dispatcher role ---------------------------------------------------

    def _become_dispatcher(self, round_: int) -> None:
        self.dispatcher = Dispatcher(self.node, self.validators, self.store,
                                     self.timing.txn_timeout, round_)
        self.dispatcher_round = round_
        self.store.current_dispatcher = self.node
        self.world.note(self.node, "dispatcher", {"round": round_})
        self.apply(self.dispatcher.reconcile([], self.world.now))
        self._heartbeat()
        self.set_timer(self.timing.heartbeat, ("heartbeat", self.dispatcher_round))
        self.set_timer(self.timing.retry, ("retry", self.dispatcher_round))

    def _step_down(self) -> None:
        if self.dispatcher is not None:
            self.world.note(self.node, "step_down", {"round": self.dispatcher_round})
        self.dispatcher = None
        self.dispatcher_round = -1

    def _heartbeat(self) -> None:
        hb = Heartbeat(self.dispatcher_round)
        for dst in self.others + self.participants:
            self.world.transmit(self, dst, hb)

    # -- election ----------------------------------------------------------

    def _arm_draws(self) -> None:
        if not self.draw_armed:
            self.draw_armed = True
            self.set_timer(self.timing.draw_period, ("draw",))

    def _entered_round(self) -> None:
        self._note_round()
        self.set_timer(self.election.round_deadline - self.world.now,
                       ("round_deadline", self.election.round))
        self._arm_draws()

    def _start_election(self) -> None:
        self.election.enter_round(self.election.round + 1, self._new_deadline())
        self.world.note(self.node, "suspect", {"round": self.election.round})
        self._entered_round()

    def _broadcast_announce(self, ann: LeaderAnnounce) -> None:
        self.world.note(self.node, "role", {"round": ann.round,
                                            "role": el.Role.COORDINATOR.value})
        for dst in self.others + self.participants:
            self.world.transmit(self, dst, ann)
        self._on_announce(ann)

    def _on_announce(self, ann: LeaderAnnounce, src: Optional[NodeId] = None) -> None:
        before = self.election.round
        if not el.on_announce(self.election, ann):
            return
        if self.election.round != before:
            self._note_round()
        self.store.current_dispatcher = ann.dispatcher
        self.store.last_heartbeat = self.world.now
        if ann.dispatcher == self.node:
            if self.dispatcher is None or self.dispatcher_round < ann.round:
                self._become_dispatcher(ann.round)
        elif self.dispatcher is not None:
            self._step_down()

    # -- message handling --------------------------------------------------

    def deliver(self, msg: Message) -> None:
        p = msg.payload
        now = self.world.now
        if isinstance(p, ValidateRequest):
            self.apply(vd.on_validate_request(self.store, p, msg.src))
        elif isinstance(p, (Committed, RolledBack)):
            self.apply(vd.on_finality(self.store, p))
        elif isinstance(p, FenceRequest):
            self.apply(vd.on_fence_request(self.store, p, msg.src))
        elif isinstance(p, Unfence):
            self.apply(vd.on_unfence(self.store, p))
        elif isinstance(p, Heartbeat):
            if p.round > self.election.round:
                self._on_announce(LeaderAnnounce(p.round, msg.src))
            elif vd.on_heartbeat(self.store, p, msg.src, now) and self.election.active \
                    and p.round == self.election.round:
                self._on_announce(LeaderAnnounce(p.round, msg.src))
        elif isinstance(p, Proposal):
            before = self.election.round
            vote = el.on_proposal(self.election, p, msg.src, self._new_deadline())
            if self.election.round != before:
                self._entered_round()
            if vote is not None:
                self.world.transmit(self, msg.src, vote)
        elif isinstance(p, Vote):
            ann = el.on_vote(self.election, p, len(self.validators), self.rng,
                             self.timing.include_self_in_wheel)
            if ann is not None:
                self._broadcast_announce(ann)
        elif isinstance(p, LeaderAnnounce):
            self._on_announce(p)
        elif self.dispatcher is not None:
            self._dispatch(msg)
        else:
            self.world.note(self.node, "misrouted", {"type": type(p).__name__})

    def _dispatch(self, msg: Message) -> None:
        d = self.dispatcher
        p = msg.payload
        now = self.world.now
        if isinstance(p, Ready):
            self.apply(d.on_ready(p, msg.id, now))
        elif isinstance(p, TxnInfo):
            self.apply(d.on_txn_info(p, now))
        elif isinstance(p, Validated):
            self.apply(d.on_validated(p))
        elif isinstance(p, FenceReply):
            self.apply(d.on_fence_reply(p))
        else:
            self.world.note(self.node, "misrouted", {"type": type(p).__name__})

    def on_timer(self, tag: Any) -> None:
        kind = tag[0]
        t = self.timing
        now = self.world.now
        if kind == "liveness":
            if not self.election.active and self.dispatcher is None and \
                    vd.check_dispatcher_liveness(self.store, now, t.suspicion):
                self._start_election()
            self.set_timer(t.heartbeat, ("liveness",))
        elif kind == "draw":
            self.draw_armed = False
            st = self.election
            if st.active and st.role is el.Role.FOLLOWER:
                proposal = el.draw_tick(st, self.rng.random(), t.threshold)
                if proposal is not None:
                    self.world.note(self.node, "role", {"round": st.round,
                                                        "role": el.Role.CANDIDATE.value})
                    for dst in self.others:
                        self.world.transmit(self, dst, proposal)
                    ann = el.self_elect_if_alone(st, len(self.validators), self.rng,
                                                 t.include_self_in_wheel)
                    if ann is not None:
                        self._broadcast_announce(ann)
                else:
                    self._arm_draws()
        elif kind == "round_deadline":
            if tag[1] == self.election.round and \
                    el.on_round_timeout(self.election, now, self._new_deadline()):
                self._entered_round()
        elif kind == "heartbeat":
            if self.dispatcher is not None and tag[1] == self.dispatcher_round:
                self._heartbeat()
                self.set_timer(t.heartbeat, tag)
        elif kind == "retry":
            if self.dispatcher is not None and tag[1] == self.dispatcher_round:
                self.apply(self.dispatcher.retry(now))
                self.set_timer(t.retry, tag)


class ParticipantNode(Node):
    def __init__(self, world: World, node: NodeId):
        super().__init__(world, node)
        self.dispatcher = world.initial_dispatcher
        self.dispatcher_round = 0
        self.records: dict[int, pt.ParticipantRecord] = {}
        self.retry_armed = False
        self.retry_interval = self.timing.retry

    def _prepare_delay(self) -> int:
        lo, hi = self.timing.prepare_delay
        return lo if lo == hi else self.rng.randint(lo, hi)

    def _record(self, txn: int) -> pt.ParticipantRecord:
        rec = self.records.get(txn)
        if rec is None:
            rec = pt.ParticipantRecord(self.node, txn, self.dispatcher, self._prepare_delay())
            self.records[txn] = rec
        return rec

    def _arm_retry(self) -> None:
        if not self.retry_armed:
            self.retry_armed = True
            self.set_timer(self.retry_interval, ("retry",))

    def crash(self) -> None:
        super().crash()
        self.retry_armed = False
        self.retry_interval = self.timing.retry

    def restart(self) -> None:
        for txn in sorted(self.records):
            rec = self.records[txn]
            if rec.state is pt.ParticipantState.PREPARING:
                self.set_timer(rec.prepare_delay, ("prepared", txn))
        self._arm_retry()

    def begin(self, txn: int, participants: tuple[NodeId, ...]) -> None:
        rec, effects = pt.tm_begin(self.node, txn, participants, self.dispatcher,
                                   self._prepare_delay())
        self.records[txn] = rec
        self.apply(effects)
        self._arm_retry()

    def deliver(self, msg: Message) -> None:
        p = msg.payload
        if isinstance(p, Begin):
            self.apply(pt.on_begin(self._record(p.txn), p))
            self._arm_retry()
        elif isinstance(p, (Commit, Rollback)):
            decision = Decision.COMMIT if isinstance(p, Commit) else Decision.ROLLBACK
            self.apply(pt.on_decision(self._record(p.txn), decision))
        elif isinstance(p, LeaderAnnounce):
            self._adopt(p)
        elif isinstance(p, Heartbeat):
            if p.round > self.dispatcher_round:
                self._adopt(LeaderAnnounce(p.round, msg.src))
        else:
            self.world.note(self.node, "misrouted", {"type": type(p).__name__})

    def _adopt(self, ann: LeaderAnnounce) -> None:
        if ann.round < self.dispatcher_round:
            return
        if ann.round == self.dispatcher_round and ann.dispatcher == self.dispatcher:
            return
        self.dispatcher = ann.dispatcher
        self.dispatcher_round = ann.round
        self.retry_interval = self.timing.retry
        for txn in sorted(self.records):
            self.apply(pt.on_leader_announce(self.records[txn], ann))

    def on_timer(self, tag: Any) -> None:
        kind = tag[0]
        if kind == "begin":
            self.begin(tag[1], tag[2])
        elif kind == "prepared":
            self.apply(pt.complete_prepare(self.records[tag[1]]))
        elif kind == "retry":
            self.retry_armed = False
            pending = False
            for txn in sorted(self.records):
                rec = self.records[txn]
                if not rec.final:
                    pending = True
                    self.apply(pt.retransmit(rec))
            if pending:
                # back off while nothing answers; a new dispatcher resets it
                self.retry_interval = min(2 * self.retry_interval,
                                          RETRY_BACKOFF_CAP * self.timing.retry)
                self._arm_retry()
            else:
                self.retry_interval = self.timing.retry
