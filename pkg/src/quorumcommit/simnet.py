"""Deterministic discrete-event simulator hosting every node.

Time is an integer tick count (the harness uses microseconds). Events run in
``(time, seq)`` order where ``seq`` is assigned at scheduling time, so a run is
a pure function of its configuration and root seed.
"""

from __future__ import annotations

import gzip
import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Optional, Sequence

from .core import (
    ConfigurationError,
    Message,
    MessageId,
    NodeId,
    Payload,
    message_to_dict,
    trace_line,
)
from .nodes import Node, ParticipantNode, ProtocolTiming, ValidatorNode


@dataclass
class NetworkModel:
    delay_min: int
    delay_max: int
    loss_prob: float = 0.0
    dup_prob: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.delay_min <= self.delay_max:
            raise ConfigurationError(
                f"need 0 <= delay_min <= delay_max, got {self.delay_min}, {self.delay_max}")
        for name in ("loss_prob", "dup_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")

    @property
    def mean_delay(self) -> float:
        return (self.delay_min + self.delay_max) / 2


class FaultEntry(NamedTuple):
    node: NodeId
    crash_at: int
    restart_at: Optional[int] = None


@dataclass
class FaultSchedule:
    entries: list[FaultEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entries = [FaultEntry(*e) for e in self.entries]
        windows: dict[NodeId, list[tuple[int, float]]] = {}
        for e in self.entries:
            if e.restart_at is not None and not e.crash_at < e.restart_at:
                raise ConfigurationError(f"node {e.node}: restart must follow crash")
            end = float("inf") if e.restart_at is None else e.restart_at
            windows.setdefault(e.node, []).append((e.crash_at, end))
        for node, spans in windows.items():
            spans.sort()
            for (_, end), (start, _) in zip(spans, spans[1:]):
                if start <= end:
                    raise ConfigurationError(f"node {node}: overlapping crash windows")

    @property
    def last_event_time(self) -> int:
        times = [0]
        for e in self.entries:
            times.append(e.crash_at if e.restart_at is None else e.restart_at)
        return max(times)


class SimEvent(NamedTuple):
    time: int
    seq: int
    kind: str  # "deliver" | "timer" | "crash" | "restart"
    data: Any


def _plain(payload: Any) -> Any:
    return message_to_dict(payload) if isinstance(payload, Message) else payload


class Trace:
    """Append-only event log. Records are plain tuples; JSON is produced on demand.

    ``send`` records keep the :class:`Message` itself and are converted to their
    dict form only when the trace is serialized.
    """

    def __init__(self) -> None:
        self.records: list[tuple] = []

    def emit(self, time: int, kind: str, src: Optional[int], dst: Optional[int],
             payload: Any) -> None:
        self.records.append((time, kind, src, dst, payload))

    def lines(self) -> Iterable[str]:
        for t, k, s, d, p in self.records:
            yield trace_line(t, k, s, d, _plain(p))

    def dicts(self) -> list[dict]:
        return [{"time": t, "kind": k, "src": s, "dst": d, "payload": _plain(p), "line": i}
                for i, (t, k, s, d, p) in enumerate(self.records, start=1)]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path: str) -> None:
        data = self.text().encode()
        if str(path).endswith(".gz"):
            # mtime pinned so compressed traces stay byte-identical too
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb",
                                                        mtime=0) as fh:
                fh.write(data)
        else:
            with open(path, "wb") as fh:
                fh.write(data)


def read_trace_lines(path: str) -> list[str]:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        return fh.read().splitlines()


def stream_seed(root: int, name: str) -> int:
    """Stable per-stream seed: the stream name is mixed into the root seed."""
    digest = hashlib.blake2b(f"{root}/{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def send(net: NetworkModel, msg: Message, now: int, rng: random.Random) -> list[SimEvent]:
    """Network fate of one message: zero, one or two deliveries (seq left at 0)."""
    if net.loss_prob and rng.random() < net.loss_prob:
        return []
    lo, span = net.delay_min, net.delay_max - net.delay_min + 1
    out = [SimEvent(now + lo + int(rng.random() * span), 0, "deliver", msg)]
    if net.dup_prob and rng.random() < net.dup_prob:
        out.append(SimEvent(now + lo + int(rng.random() * span), 0, "deliver", msg))
    return out


class World:
    def __init__(self, n_validators: int, participants: Sequence[NodeId],
                 network: NetworkModel, timing: ProtocolTiming, seed: int = 0,
                 trace: Optional[Trace] = None, capture_sends: bool = False):
        if n_validators < 1:
            raise ConfigurationError("need at least one validator")
        participants = tuple(participants)
        if any(p < n_validators for p in participants):
            raise ConfigurationError("participant ids must follow the validator ids")
        self.network = network
        self.timing = timing
        self.seed = seed
        self.trace = trace if trace is not None else Trace()
        self.now = 0
        self._seq = 0
        self.queue: list[tuple] = []
        self._rngs: dict[str, random.Random] = {}
        self.initial_dispatcher = 0
        self.validator_ids = tuple(range(n_validators))
        self.participant_ids = participants
        self.crashed: set[NodeId] = set()
        # (txn, participant) pairs started but not yet final
        self.open_work: set[tuple[int, int]] = set()
        self.pending_begins = 0
        self.in_flight = 0
        # when set, sends are parked here instead of being handed to the network
        self.capture: Optional[list[Message]] = [] if capture_sends else None
        # crash-on-event triggers:
        # [watched node, kind, payload type, remaining, victim, restart delay]
        self.triggers: list[list] = []
        self.nodes: dict[NodeId, Node] = {}
        for v in self.validator_ids:
            self.nodes[v] = ValidatorNode(self, v, self.validator_ids, participants)
        for p in participants:
            self.nodes[p] = ParticipantNode(self, p)
        self.trace.emit(0, "config", None, None, {
            "seed": seed,
            "validators": list(self.validator_ids),
            "participants": list(participants),
            "network": {"delay_min": network.delay_min, "delay_max": network.delay_max,
                        "loss_prob": network.loss_prob, "dup_prob": network.dup_prob},
        })
        for node in self.nodes.values():
            node.start()

    # -- randomness --------------------------------------------------------

    def rng(self, name: str) -> random.Random:
        r = self._rngs.get(name)
        if r is None:
            r = self._rngs[name] = random.Random(stream_seed(self.seed, name))
        return r

    # -- scheduling --------------------------------------------------------

    def _push(self, time: int, kind: str, data: Any) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (time, self._seq, kind, data))

    def set_timer(self, node: NodeId, delay: int, tag: Any) -> None:
        self._push(self.now + max(delay, 0), "timer",
                   (node, self.nodes[node].incarnation, tag))

    def crash(self, node: NodeId, t: int) -> None:
        if node not in self.nodes:
            raise ConfigurationError(f"unknown node {node}")
        self._push(t, "crash", node)

    def restart(self, node: NodeId, t: int) -> None:
        if node not in self.nodes:
            raise ConfigurationError(f"unknown node {node}")
        self._push(t, "restart", node)

    def apply_faults(self, faults: FaultSchedule) -> None:
        for e in faults.entries:
            self.crash(e.node, e.crash_at)
            if e.restart_at is not None:
                self.restart(e.node, e.restart_at)

    def crash_on(self, node: NodeId, kind: str, mtype: Optional[str] = None,
                 occurrence: int = 1, restart_after: Optional[int] = None,
                 watch: Optional[NodeId] = None) -> None:
        """Crash ``node`` right after ``watch`` (default: ``node`` itself) emits its
        ``occurrence``-th trace record of ``kind``, optionally restricted to payload
        type ``mtype``. Sends the victim would make later in the same handler are
        suppressed, as in a real mid-step crash."""
        watch = node if watch is None else watch
        for n in (node, watch):
            if n not in self.nodes:
                raise ConfigurationError(f"unknown node {n}")
        if occurrence < 1:
            raise ConfigurationError("occurrence must be >= 1")
        self.triggers.append([watch, kind, mtype, occurrence, node, restart_after])

    @property
    def pending_triggers(self) -> bool:
        return bool(self.triggers)

    def _emit(self, kind: str, src: Optional[int], dst: Optional[int], payload: Any) -> None:
        self.trace.emit(self.now, kind, src, dst, payload)
        if not self.triggers:
            return
        for trig in self.triggers:
            watch, tkind, mtype, _, victim, restart_after = trig
            if src != watch or kind != tkind:
                continue
            if mtype is not None and (not isinstance(payload, Message)
                                      or type(payload.payload).__name__ != mtype):
                continue
            trig[3] -= 1
            if trig[3] == 0:
                self.triggers.remove(trig)
                self._crash_now(victim)
                if restart_after is not None:
                    self.restart(victim, self.now + restart_after)
            return

    def _crash_now(self, node: NodeId) -> None:
        if node not in self.crashed:
            self.crashed.add(node)
            self.nodes[node].crash()
            self._emit("crash", node, None, {})

    def begin_transaction(self, at: int, txn: int, participants: Sequence[NodeId],
                          manager: Optional[NodeId] = None) -> None:
        participants = tuple(participants)
        tm = participants[0] if manager is None else manager
        self.pending_begins += 1
        self._push(at, "timer", (tm, None, ("begin", txn, participants)))

    # -- messaging ---------------------------------------------------------

    def transmit(self, sender: Node, dst: NodeId, payload: Payload) -> None:
        if sender.node in self.crashed:
            return
        sender.seq += 1
        msg = Message(MessageId(sender.node, sender.seq), sender.node, dst, payload)
        self._emit("send", msg.src, dst, msg)
        if self.capture is not None:
            self.capture.append(msg)
            return
        rng = self.rng(f"link/{msg.src}/{dst}")
        events = send(self.network, msg, self.now, rng)
        if not events:
            self._emit("lost", msg.src, dst, {"id": list(msg.id)})
        elif len(events) == 2:
            self._emit("dup", msg.src, dst, {"id": list(msg.id)})
        for ev in events:
            self.schedule_delivery(ev.time, msg)

    def schedule_delivery(self, time: int, msg: Message) -> None:
        self.in_flight += 1
        self._push(time, "deliver", msg)

    def note(self, node: NodeId, kind: str, data: dict) -> None:
        if kind == "txn_start":
            self.pending_begins -= 1
            for p in data["participants"]:
                self.open_work.add((data["txn"], p))
        elif kind == "state" and data["state"] in ("committed", "aborted"):
            self.open_work.discard((data["txn"], node))
        self._emit(kind, node, None, data)

    # -- execution ---------------------------------------------------------

    def step(self) -> bool:
        if not self.queue:
            return False
        time, _, kind, data = heapq.heappop(self.queue)
        self.now = time
        if kind == "deliver":
            self.in_flight -= 1
            msg = data
            if msg.dst in self.crashed:
                self._emit("drop", msg.src, msg.dst,
                           {"id": list(msg.id), "reason": "crashed"})
            else:
                self._emit("deliver", msg.src, msg.dst, {"id": list(msg.id)})
                self.nodes[msg.dst].receive(msg)
        elif kind == "timer":
            node, incarnation, tag = data
            n = self.nodes[node]
            if node in self.crashed:
                if tag[0] == "begin":
                    self.pending_begins -= 1
            elif incarnation is None or incarnation == n.incarnation:
                n.on_timer(tag)
        elif kind == "crash":
            self._crash_now(data)
        elif kind == "restart":
            if data not in self.crashed:
                raise ConfigurationError(f"restart of live node {data} at t={time}")
            self.crashed.discard(data)
            self._emit("restart", data, None, {})
            self.nodes[data].restart()
        return True

    def next_time(self) -> Optional[int]:
        return self.queue[0][0] if self.queue else None

    def settled(self) -> bool:
        """All transactions decided everywhere and no election running."""
        if self.open_work or self.pending_begins:
            return False
        for v in self.validator_ids:
            if v not in self.crashed and self.nodes[v].election.active:
                return False
        return True


def run_until(world: World, t_end: int,
              stop: Optional[Callable[[World], bool]] = None) -> Trace:
    """Execute events up to and including ``t_end`` (or until ``stop`` holds)."""
    while world.queue and world.queue[0][0] <= t_end:
        world.step()
        if stop is not None and stop(world):
            break
    world.trace.emit(world.now, "end", None, None, {"in_flight": world.in_flight})
    return world.trace

