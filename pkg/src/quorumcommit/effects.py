"""Side effects returned by state-machine transitions.

Transitions never touch the network or the clock directly; they return a
list of these and the hosting node applies them.
"""

from __future__ import annotations

from typing import Any, NamedTuple, Union

from .core import NodeId, Payload


class Send(NamedTuple):
    dst: NodeId
    payload: Payload


class Note(NamedTuple):
    """A trace event (state transition, persistence, violation, ...)."""

    kind: str
    data: dict


class Schedule(NamedTuple):
    delay: int
    tag: Any


Effect = Union[Send, Note, Schedule]


def violation(severity: str, reason: str, **data: Any) -> Note:
    return Note("violation", {"severity": severity, "reason": reason, **data})


def sends(effects: list) -> list[Send]:
    return [e for e in effects if isinstance(e, Send)]
