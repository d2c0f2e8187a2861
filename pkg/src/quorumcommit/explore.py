"""Exhaustive exploration of a small protocol instance.

The simulator normally draws each message delay from a seeded stream. Here
every message delay is branched over a small set instead, and an optional
validator crash is branched over every tick in a window, so all timed
interleavings of the instance are visited. Random draws made by the nodes
themselves (election numbers, roulette spins) stay seeded; the explorer
enumerates the adversary (network and crashes), not the protocol's coins.

States reached by different paths are merged by fingerprint, so the walk is a
graph search rather than a tree walk.
"""

from __future__ import annotations

import hashlib
import io
import itertools
import pickle
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .checker import TraceMonitor
from .core import (Commit, Committed, Decision, Heartbeat, LeaderAnnounce, Message,
                   Rollback, RolledBack)
from .nodes import ParticipantNode, ProtocolTiming
from .participant import ParticipantState
from .simnet import NetworkModel, Trace, World


class _MonitorTrace(Trace):
    """Trace that feeds an incremental monitor and keeps nothing else."""

    def __init__(self) -> None:
        super().__init__()
        self.monitor = TraceMonitor()
        self.count = 0

    def emit(self, time: int, kind: str, src: Optional[int], dst: Optional[int],
             payload: Any) -> None:
        self.count += 1
        self.monitor.feed(self.count, time, kind, src, dst, payload)


class _SplitMix:
    """Small-state stand-in for a node's coin stream.

    A Mersenne Twister state is several kilobytes, which dominates the cost of
    copying and hashing a world. The explorer keeps the coins seeded anyway,
    so any decent generator with a one-word state serves.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def _next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self._next() >> 11) / (1 << 53)

    def randint(self, a: int, b: int) -> int:
        return a + self._next() % (b - a + 1)

    def __getstate__(self) -> int:
        return self.state

    def __setstate__(self, state: int) -> None:
        self.state = state


_MASK = (1 << 64) - 1


def default_micro_timing() -> ProtocolTiming:
    return ProtocolTiming(heartbeat=40, suspicion=90, draw_period=4, threshold=0.3,
                          round_deadline=(16, 22), txn_timeout=12, retry=60,
                          prepare_delay=(1, 1), include_self_in_wheel=True)


@dataclass
class MicroModel:
    n_validators: int = 3
    n_participants: int = 2
    delays: tuple[int, ...] = (1, 2)
    max_crashes: int = 1
    # a crash may hit any validator at any tick up to this one (None: the horizon)
    crash_window: int | None = None
    horizon: int = 300
    seed: int = 0
    timing: ProtocolTiming = field(default_factory=default_micro_timing)
    max_states: int = 1_000_000


@dataclass
class ExploreResult:
    states: int = 0
    transitions: int = 0
    terminal: int = 0
    horizon_cut: int = 0
    undecided_at_horizon: int = 0
    violations: list[tuple[str, str]] = field(default_factory=list)
    truncated: bool = False
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations and not self.truncated

    def to_text(self) -> str:
        lines = [f"states explored:        {self.states}",
                 f"transitions:            {self.transitions}",
                 f"settled end states:     {self.terminal}",
                 f"cut at horizon:         {self.horizon_cut}",
                 f"  of which undecided:   {self.undecided_at_horizon}",
                 f"safety violations:      {len(self.violations)}",
                 f"elapsed:                {self.elapsed:.1f}s"]
        if self.truncated:
            lines.append("TRUNCATED: state budget exhausted")
        for name, detail in self.violations[:5]:
            lines.append(f"  {name}: {detail}")
        return "\n".join(lines)


def initial_world(model: MicroModel) -> World:
    n = model.n_validators
    participants = tuple(range(n, n + model.n_participants))
    net = NetworkModel(min(model.delays), max(model.delays))
    world = World(n, participants, net, model.timing, seed=model.seed,
                  trace=_MonitorTrace(), capture_sends=True)
    for node_id, node in world.nodes.items():
        node.rng = _SplitMix(model.seed * 1000 + node_id)
    world._rngs.clear()
    world.begin_transaction(0, 0, participants)
    return world


def _dead_timer(world: World, node_id: int, incarnation: Any, tag: tuple) -> bool:
    """True for a timer that is a no-op whenever it fires.

    Nodes stay down once crashed and election rounds only grow, so a timer
    tied to a round the node has left (or to a round whose election already
    closed, which never reopens) can be dropped.
    """
    if node_id in world.crashed:
        return tag[0] != "begin"  # begin timers still settle bookkeeping
    node = world.nodes[node_id]
    kind = tag[0]
    if kind == "round_deadline":
        el = node.election
        return tag[1] < el.round or (tag[1] == el.round and not el.active)
    if kind in ("heartbeat", "retry") and len(tag) > 1:
        return tag[1] != node.dispatcher_round and tag[1] < node.election.round
    return False


def _shift(world: World) -> None:
    """Move the clock origin to ``world.now``; queue order is left alone."""
    now = world.now
    world.queue = [(t - now, seq, kind, data) for t, seq, kind, data in world.queue
                   if not (kind == "timer" and _dead_timer(world, *data))]
    world.now = 0
    stale = -(world.timing.suspicion + 1)
    for v in world.validator_ids:
        node = world.nodes[v]
        node.store.last_heartbeat = max(node.store.last_heartbeat - now, stale)
        el = node.election
        el.round_deadline = el.round_deadline - now if el.active else 0
        if node.dispatcher is not None:
            for rec in node.dispatcher.records.values():
                rec.deadline = 0 if rec.final else max(rec.deadline - now, 0)


def _rank(world: World) -> None:
    world.queue = [(t, rank, kind, data)
                   for rank, (t, _, kind, data) in enumerate(sorted(world.queue))]
    world._seq = len(world.queue)


def rebase(world: World) -> None:
    """Shift every stored time so that ``world.now`` becomes 0.

    The protocol only ever compares times with each other, so the shift is
    invisible to it. Times that can no longer matter are clamped: an elapsed
    deadline stays elapsed, and a heartbeat older than the suspicion timeout
    is as old as it needs to be. Timers of crashed nodes are dropped and queue
    sequence numbers are replaced by rank.
    """
    _shift(world)
    _rank(world)


def _fast_pickle(obj: Any) -> bytes:
    # no memo: the bytes then depend on values only, not on object sharing
    buf = io.BytesIO()
    pk = pickle.Pickler(buf, pickle.HIGHEST_PROTOCOL)
    pk.fast = True
    pk.dump(obj)
    return buf.getvalue()


def _state_bytes(world: World, crash_allowed: bool) -> bytes:
    """Everything but the event queue, as canonical bytes.

    The trace is replaced by the monitor's safety summary. Per-node message
    counters and delivered-id sets are left out: without duplication no id is
    ever delivered twice, so they only name messages and never steer them.
    The node-to-world back references are the one cycle and are detached for
    the duration.
    """
    saved = [(n, n.world, n.seq, n.seen) for n in world.nodes.values()]
    for n, _, _, _ in saved:
        n.world, n.seq, n.seen = None, 0, None
    try:
        return _fast_pickle((sorted(world.crashed), sorted(world.open_work),
                             world.pending_begins, world.in_flight,
                             list(world.nodes.values()), world.trace.monitor.summary(),
                             crash_allowed))
    finally:
        for n, w, seq, seen in saved:
            n.world, n.seq, n.seen = w, seq, seen


def _digest(state: bytes, entries: list[tuple]) -> bytes:
    """Digest of a world given its state bytes and its queue entries.

    Queue position in time-then-sequence order stands in for the sequence
    number.
    """
    h = hashlib.blake2b(state, digest_size=16)
    h.update(_fast_pickle([(t, kind, data) for t, _, kind, data in sorted(entries)]))
    return h.digest()


def fingerprint(world: World, crash_allowed: bool) -> bytes:
    """Digest of everything that can influence the future of a rebased world."""
    return _digest(_state_bytes(world, crash_allowed), world.queue)


def _safety_failures(world: World) -> list[tuple[str, str]]:
    m = world.trace.monitor
    out = []
    for res in (m.round_monotonic(), m.unique_coordinator(), m.unique_dispatcher(),
                m.commit_safety()):
        if not res.passed:
            out.append((res.name, res.detail))
    return out


def _current_dispatcher(world: World) -> int:
    announces = world.trace.monitor.announces
    if not announces:
        return world.initial_dispatcher
    latest = max(announces)
    return min(announces[latest])


def _quiescent(world: World) -> bool:
    """Transaction decided everywhere and the acting dispatcher alive."""
    return world.settled() and _current_dispatcher(world) not in world.crashed


def _inert(world: World, msg: Message) -> bool:
    """True when delivering ``msg`` is a no-op now and at any later tick.

    Such messages are dropped instead of scheduled, so their delays are not
    branched over. Every case rests on a monotone quantity: crashed nodes stay
    down in the micro-model, and round numbers never decrease.
    """
    if msg.dst in world.crashed:
        return True
    node = world.nodes[msg.dst]
    p = msg.payload
    if isinstance(node, ParticipantNode):
        if isinstance(p, Heartbeat):
            return p.round <= node.dispatcher_round
        if isinstance(p, LeaderAnnounce):
            return p.round < node.dispatcher_round or (
                p.round == node.dispatcher_round and p.dispatcher == node.dispatcher)
        if isinstance(p, (Commit, Rollback)):
            # final participant states absorb; only a conflicting decision acts
            rec = node.records.get(p.txn)
            return rec is not None and rec.state is _FINAL_STATE[type(p)]
    elif isinstance(p, LeaderAnnounce):
        return p.round < node.election.round
    elif isinstance(p, (Committed, RolledBack)):
        # finality is never overwritten, so a matching repeat is a no-op
        return node.store.finalized.get(p.txn) is _FINALITY[type(p)]
    return False


_FINAL_STATE = {Commit: ParticipantState.COMMITTED, Rollback: ParticipantState.ABORTED}
_FINALITY = {Committed: Decision.COMMIT, RolledBack: Decision.ROLLBACK}


def _has_event(world: World, node: int, t: int) -> bool:
    for time, _, kind, data in world.queue:
        if time != t:
            continue
        if kind == "deliver" and data.dst == node:
            return True
        if kind == "timer" and data[0] == node:
            return True
    return False


def explore(model: Optional[MicroModel] = None,
            progress: Optional[Callable[[ExploreResult, int], None]] = None) -> ExploreResult:
    """Depth-first search over every delay choice and crash point of ``model``.

    A crash of validator v at tick t is indistinguishable from a crash at the
    next tick where v has something to do, so crashes are only branched at
    ticks where the victim has a pending event.
    """
    model = model or MicroModel()
    if model.max_crashes > 1:
        raise ValueError("the micro-model injects at most one crash")
    start = time.perf_counter()
    res = ExploreResult()
    root = initial_world(model)
    window = model.horizon if model.crash_window is None else model.crash_window

    def crash_allowed(w: World, elapsed: int) -> bool:
        return len(w.crashed) < model.max_crashes and elapsed <= window

    # fingerprint -> earliest elapsed time it was reached at; a later arrival
    # has less horizon left, so it is only worth expanding when it is earlier
    seen = {fingerprint(root, crash_allowed(root, 0)): 0}
    stack = [(root, 0)]
    while stack:
        world, elapsed = stack.pop()
        res.states += 1
        if progress and res.states % 50_000 == 0:
            progress(res, len(stack))
        if res.states > model.max_states:
            res.truncated = True
            break
        if _quiescent(world):
            res.terminal += 1
            continue
        t = world.next_time()
        if t is None or elapsed + t > model.horizon:
            res.horizon_cut += 1
            if world.open_work or world.pending_begins:
                res.undecided_at_horizon += 1
            continue
        victims: list[Optional[int]] = []
        if crash_allowed(world, elapsed + t):
            victims = [v for v in world.validator_ids
                       if v not in world.crashed and _has_event(world, v, t)]
        base = pickle.dumps(world, pickle.HIGHEST_PROTOCOL) if victims else None
        # the crash-free branch goes last so it can reuse ``world`` in place
        for victim in victims + [None]:
            w = pickle.loads(base) if victim is not None else world
            w.now = t
            if victim is not None:
                w._crash_now(victim)
            while w.queue and w.queue[0][0] == t:
                w.step()
            bad = _safety_failures(w)
            if bad:
                res.violations += bad
                continue
            sent, w.capture = w.capture, []
            live = [m for m in sent if not _inert(w, m)]
            _shift(w)
            now = elapsed + t
            # everything but the queue is common to all delay choices, so it is
            # serialized once and worlds are only copied for unseen successors
            state = _state_bytes(w, crash_allowed(w, now))
            fresh = []
            for choice in itertools.product(model.delays, repeat=len(live)):
                res.transitions += 1
                added = [(d, w._seq + 1 + k, "deliver", m)
                         for k, (m, d) in enumerate(zip(live, choice))]
                fp = _digest(state, w.queue + added)
                if seen.get(fp, model.horizon + 1) <= now:
                    continue
                seen[fp] = now
                fresh.append(choice)
            after = pickle.dumps(w, pickle.HIGHEST_PROTOCOL) if len(fresh) > 1 else None
            for i, choice in enumerate(fresh):
                succ = w if i == len(fresh) - 1 else pickle.loads(after)
                for msg, d in zip(live, choice):
                    succ.schedule_delivery(d, msg)
                _rank(succ)
                stack.append((succ, now))
    res.elapsed = time.perf_counter() - start
    return res
