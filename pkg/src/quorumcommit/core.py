"""Identifiers, message payloads, quorum arithmetic and trace (de)serialization."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, fields
from typing import Any, Iterable, NamedTuple, Optional, Union

NodeId = int
TxnId = int
ElectionRound = int


class QuorumCommitError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(QuorumCommitError):
    pass


class InvalidTransactionError(QuorumCommitError):
    pass


class InvalidInputError(QuorumCommitError):
    pass


class TraceParseError(QuorumCommitError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class MessageId(NamedTuple):
    sender: NodeId
    seq: int


class Decision(str, enum.Enum):
    COMMIT = "Commit"
    ROLLBACK = "Rollback"


# -- payloads ---------------------------------------------------------------


@dataclass(frozen=True)
class Begin:
    txn: TxnId


@dataclass(frozen=True)
class TxnInfo:
    txn: TxnId
    participants: tuple[NodeId, ...]


@dataclass(frozen=True)
class Ready:
    txn: TxnId
    participant: NodeId


@dataclass(frozen=True)
class ValidateRequest:
    # ready_id and participants ride along so validators can persist
    # everything a successor dispatcher needs after failover.
    txn: TxnId
    ready_id: MessageId
    ready: Ready
    participants: tuple[NodeId, ...]


@dataclass(frozen=True)
class Validated:
    txn: TxnId
    ready_id: MessageId
    validator: NodeId


@dataclass(frozen=True)
class Commit:
    txn: TxnId


@dataclass(frozen=True)
class Rollback:
    txn: TxnId


@dataclass(frozen=True)
class Committed:
    txn: TxnId


@dataclass(frozen=True)
class RolledBack:
    txn: TxnId


@dataclass(frozen=True)
class FenceRequest:
    """Stop accepting new Readys for ``txn``. (round, attempt) names the fence."""

    txn: TxnId
    round: ElectionRound
    attempt: int


@dataclass(frozen=True)
class FenceReply:
    txn: TxnId
    validator: NodeId
    round: ElectionRound
    attempt: int
    participants: Optional[tuple[NodeId, ...]]
    readys: tuple[tuple[MessageId, NodeId], ...]
    decision: Optional[Decision]
    # every fence still active at the validator, as (round, attempt) pairs
    fences: tuple[tuple[ElectionRound, int], ...] = ()


@dataclass(frozen=True)
class Unfence:
    """Withdraw the named fence; only the dispatcher that raised it sends this."""

    txn: TxnId
    round: ElectionRound
    attempt: int


@dataclass(frozen=True)
class Proposal:
    round: ElectionRound
    number: float


@dataclass(frozen=True)
class Vote:
    round: ElectionRound
    voter: NodeId
    number: float


@dataclass(frozen=True)
class LeaderAnnounce:
    round: ElectionRound
    dispatcher: NodeId


@dataclass(frozen=True)
class Heartbeat:
    round: ElectionRound


Payload = Union[
    Begin, TxnInfo, Ready, ValidateRequest, Validated, Commit, Rollback,
    Committed, RolledBack, FenceRequest, FenceReply, Unfence, Proposal, Vote,
    LeaderAnnounce, Heartbeat,
]

PAYLOAD_TYPES: dict[str, type] = {
    cls.__name__: cls
    for cls in (
        Begin, TxnInfo, Ready, ValidateRequest, Validated, Commit, Rollback,
        Committed, RolledBack, FenceRequest, FenceReply, Unfence, Proposal, Vote,
        LeaderAnnounce, Heartbeat,
    )
}

DECISION_PAYLOADS = (Commit, Rollback)
FINALITY_PAYLOADS = (Committed, RolledBack)


@dataclass(frozen=True)
class Message:
    id: MessageId
    src: NodeId
    dst: NodeId
    payload: Payload

    def __post_init__(self) -> None:
        p = self.payload
        if isinstance(p, (Proposal, Vote)) and not 0.0 <= p.number < 1.0:
            raise InvalidInputError(f"election number {p.number!r} outside [0, 1)")
        txn = getattr(p, "txn", None)
        if txn is not None and (not isinstance(txn, int) or txn < 0):
            raise InvalidInputError(f"invalid txn id {txn!r}")


# -- quorum arithmetic ------------------------------------------------------


def majority_threshold(n: int) -> int:
    """Smallest number of validators forming a majority of ``n``."""
    if n < 1:
        raise ConfigurationError("validator count must be at least 1")
    return n // 2 + 1


def tolerated_crashes(n: int) -> int:
    """Validator crashes survivable while a majority stays reachable: ceil(n/2 - 1)."""
    if n < 1:
        raise ConfigurationError("validator count must be at least 1")
    # integer form of ceil(n/2 - 1)
    return (n + 1) // 2 - 1


def is_duplicate(seen: set, msg_id: MessageId) -> bool:
    return msg_id in seen


# -- JSON encoding ----------------------------------------------------------


def _encode_value(value: Any) -> Any:
    if isinstance(value, Decision):
        return value.value
    if isinstance(value, Ready):
        return {"txn": value.txn, "participant": value.participant}
    if isinstance(value, tuple):
        return [_encode_value(v) for v in value]
    return value


def payload_to_dict(payload: Payload) -> dict:
    out: dict[str, Any] = {"type": type(payload).__name__}
    for f in fields(payload):
        out[f.name] = _encode_value(getattr(payload, f.name))
    return out


def payload_from_dict(data: dict) -> Payload:
    data = dict(data)
    name = data.pop("type")
    try:
        cls = PAYLOAD_TYPES[name]
    except KeyError:
        raise InvalidInputError(f"unknown payload type {name!r}") from None
    kwargs: dict[str, Any] = {}
    for f in fields(cls):
        v = data[f.name]
        if f.name == "participants" and v is not None:
            v = tuple(v)
        elif f.name == "ready_id":
            v = MessageId(*v)
        elif f.name == "ready":
            v = Ready(v["txn"], v["participant"])
        elif f.name == "readys":
            v = tuple((MessageId(*rid), p) for rid, p in v)
        elif f.name == "fences":
            v = tuple((r, a) for r, a in v)
        elif f.name == "decision" and v is not None:
            v = Decision(v)
        kwargs[f.name] = v
    return cls(**kwargs)


def message_to_dict(msg: Message) -> dict:
    d = {"id": [msg.id.sender, msg.id.seq]}
    d.update(payload_to_dict(msg.payload))
    return d


def message_from_dict(data: dict, src: NodeId, dst: NodeId) -> Message:
    data = dict(data)
    sender, seq = data.pop("id")
    return Message(MessageId(sender, seq), src, dst, payload_from_dict(data))


TRACE_FIELDS = ("time", "kind", "src", "dst", "payload")


def trace_line(time: int, kind: str, src: Optional[int], dst: Optional[int],
               payload: Any) -> str:
    """One line-delimited JSON trace record with a fixed field order."""
    return json.dumps(
        {"time": time, "kind": kind, "src": src, "dst": dst, "payload": payload},
        separators=(",", ":"),
    )


def parse_trace_lines(lines: Iterable[str]) -> list[dict]:
    records = []
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(i, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or tuple(rec) != TRACE_FIELDS:
            raise TraceParseError(i, f"expected fields {TRACE_FIELDS}")
        rec["line"] = i
        records.append(rec)
    return records

