"""Randomized dispatcher election.

A suspecting validator draws uniform numbers; three consecutive draws above
the threshold let it propose itself. Whoever gathers a majority of votes
becomes coordinator and picks the next dispatcher by roulette wheel over the
greatest numbers the voters reported.
"""

from __future__ import annotations

import enum
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .core import (
    ElectionRound,
    InvalidInputError,
    LeaderAnnounce,
    NodeId,
    Proposal,
    Vote,
    majority_threshold,
)

WINDOW = 3
# stand-in for a literal 0.0 greatest number, which would zero a wheel slot
MIN_WEIGHT = math.ulp(0.0)


class Role(str, enum.Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    COORDINATOR = "coordinator"


@dataclass
class ElectionState:
    node: NodeId
    round: ElectionRound = 0
    window: deque = field(default_factory=lambda: deque(maxlen=WINDOW))
    greatest: float = 0.0
    voted_in: dict[ElectionRound, NodeId] = field(default_factory=dict)
    votes_for_me: set[NodeId] = field(default_factory=set)
    numbers: dict[NodeId, float] = field(default_factory=dict)
    role: Role = Role.FOLLOWER
    round_deadline: int = 0
    active: bool = False

    def enter_round(self, new_round: ElectionRound, deadline: int) -> None:
        if new_round < self.round:
            raise InvalidInputError(f"round would decrease: {self.round} -> {new_round}")
        if new_round > self.round:
            self.window.clear()
            self.greatest = 0.0
            self.votes_for_me = set()
            self.numbers = {}
            self.role = Role.FOLLOWER
        self.round = new_round
        self.round_deadline = deadline
        self.active = True


def draw_tick(st: ElectionState, draw: float, threshold: float) -> Optional[Proposal]:
    """Feed one random draw; returns a Proposal when the launch condition holds."""
    if not 0.0 <= draw < 1.0:
        raise InvalidInputError(f"draw {draw!r} outside [0, 1)")
    if not st.active or st.role is not Role.FOLLOWER:
        return None
    st.window.append(draw)
    st.greatest = max(st.greatest, draw)
    if len(st.window) < WINDOW or not all(d > threshold for d in st.window):
        return None
    if st.round in st.voted_in:
        return None
    st.role = Role.CANDIDATE
    st.voted_in[st.round] = st.node
    st.votes_for_me = {st.node}
    st.numbers = {st.node: st.greatest}
    return Proposal(st.round, st.greatest)


def on_proposal(st: ElectionState, msg: Proposal, src: NodeId,
                deadline: int) -> Optional[Vote]:
    """Vote for the first proposer seen in a round. ``deadline`` applies on round adoption."""
    if msg.round < st.round:
        return None
    if msg.round > st.round:
        st.enter_round(msg.round, deadline)
    if st.round in st.voted_in:
        return None
    st.voted_in[st.round] = src
    return Vote(st.round, st.node, st.greatest)


def wheel_weights(numbers: Mapping[NodeId, float], coordinator: NodeId,
                  include_self: bool) -> dict[NodeId, float]:
    wheel = {n: max(w, MIN_WEIGHT) for n, w in numbers.items()
             if include_self or n != coordinator}
    if not wheel:
        # single-validator group with self excluded: nobody else to pick
        wheel = {coordinator: max(numbers.get(coordinator, 0.0), MIN_WEIGHT)}
    return wheel


def on_vote(st: ElectionState, msg: Vote, n_validators: int, rng: random.Random,
            include_self: bool = True) -> Optional[LeaderAnnounce]:
    if st.role not in (Role.CANDIDATE, Role.COORDINATOR) or msg.round != st.round:
        return None
    if msg.voter in st.votes_for_me:
        return None
    st.votes_for_me.add(msg.voter)
    st.numbers[msg.voter] = msg.number
    return _maybe_coordinate(st, n_validators, rng, include_self)


def _maybe_coordinate(st: ElectionState, n_validators: int, rng: random.Random,
                      include_self: bool) -> Optional[LeaderAnnounce]:
    if st.role is not Role.CANDIDATE:
        return None
    if len(st.votes_for_me) < majority_threshold(n_validators):
        return None
    st.role = Role.COORDINATOR
    winner = roulette_select(wheel_weights(st.numbers, st.node, include_self), rng)
    return LeaderAnnounce(st.round, winner)


def self_elect_if_alone(st: ElectionState, n_validators: int, rng: random.Random,
                        include_self: bool = True) -> Optional[LeaderAnnounce]:
    """A fresh candidate's own vote is already a majority when n_validators == 1."""
    return _maybe_coordinate(st, n_validators, rng, include_self)


def roulette_select(wheel: Mapping[NodeId, float], rng: random.Random) -> NodeId:
    """Pick a node with probability proportional to its weight."""
    if not wheel:
        raise InvalidInputError("roulette wheel is empty")
    entries = sorted(wheel.items())
    total = 0.0
    for node, weight in entries:
        if not weight > 0.0:
            raise InvalidInputError(f"non-positive weight {weight!r} for node {node}")
        total += weight
    spin = rng.random() * total
    acc = 0.0
    for node, weight in entries:
        acc += weight
        if spin < acc:
            return node
    return entries[-1][0]


def on_round_timeout(st: ElectionState, now: int, next_deadline: int) -> bool:
    """Abandon a stalled round. Returns True when the round advanced."""
    if not st.active or now < st.round_deadline:
        return False
    st.enter_round(st.round + 1, next_deadline)
    return True


def on_announce(st: ElectionState, msg: LeaderAnnounce) -> bool:
    """Adopt an announced dispatcher unless the announcement is stale."""
    if msg.round < st.round:
        return False
    if msg.round > st.round:
        st.enter_round(msg.round, st.round_deadline)
    st.active = False
    return True
