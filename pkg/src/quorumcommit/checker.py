"""Offline trace checks for round monotonicity, election uniqueness, commit
safety and bounded termination.

Every check is a pure function of the trace. The work is done by a single
incremental :class:`TraceMonitor`, so one pass serves all checks and the
exhaustive explorer can carry a monitor along each explored path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Iterator, Optional

from .core import (
    Message,
    TraceParseError,
    majority_threshold,
    parse_trace_lines,
    tolerated_crashes,
)

PASS = "pass"
FAIL = "fail"
UNMET = "precondition unmet"

# payload fields the checks read, per message type
_WATCHED = {"LeaderAnnounce": ("round", "dispatcher"), "Commit": ("txn",),
            "Rollback": ("txn",)}

SAFETY_CHECKS = ("round_monotonic", "unique_coordinator", "unique_dispatcher",
                 "commit_safety")


@dataclass
class CheckResult:
    name: str
    status: str
    first_violation_line: Optional[int] = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != FAIL


@dataclass
class InvariantReport:
    checks: list[CheckResult]
    counts: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": [asdict(c) for c in self.checks],
                "counts": self.counts}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            where = f" (line {c.first_violation_line})" if c.first_violation_line else ""
            extra = f": {c.detail}" if c.detail else ""
            lines.append(f"{c.name:<20} {c.status.upper()}{where}{extra}")
        for k in sorted(self.counts):
            lines.append(f"  {k}: {self.counts[k]}")
        return "\n".join(lines)


class _Failure:
    __slots__ = ("line", "detail")

    def __init__(self) -> None:
        self.line: Optional[int] = None
        self.detail = ""

    def record(self, line: int, detail: str) -> None:
        if self.line is None:
            self.line, self.detail = line, detail


class TraceMonitor:
    """Incremental state for all checks; feed records in trace order."""

    def __init__(self) -> None:
        self.n_validators: Optional[int] = None
        self.validators: set[int] = set()
        self.loss_prob = 0.0
        self.rounds: dict[int, int] = {}
        self.coordinators: dict[int, set[int]] = {}
        self.announces: dict[int, set[int]] = {}
        self.txn_participants: dict[int, tuple[int, ...]] = {}
        self.txn_start_time: dict[int, int] = {}
        self.persisted: dict[tuple[int, int], set[int]] = {}
        self.decisions: dict[int, set[str]] = {}
        self.outcomes: dict[int, dict[int, str]] = {}
        self.final_time: dict[tuple[int, int], int] = {}
        self.elections: dict[int, int] = {}  # round -> first suspect time
        self.crashed: set[int] = set()
        self.max_crashed_validators = 0
        self.end_time = 0
        self.round_fail = _Failure()
        self.coord_fail = _Failure()
        self.dispatcher_fail = _Failure()
        self.safety_fail = _Failure()

    # -- feeding -----------------------------------------------------------

    def feed(self, line: int, time: int, kind: str, src: Any, dst: Any,
             payload: Any) -> None:
        try:
            self._feed(line, time, kind, src, dst, payload)
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceParseError(line, f"malformed {kind!r} record ({exc!r})") from None

    def _feed(self, line: int, time: int, kind: str, src: Any, dst: Any,
              payload: Any) -> None:
        self.end_time = max(self.end_time, time)
        if kind == "send":
            self._on_send(line, src, payload)
        elif kind == "round":
            r = payload["round"]
            prev = self.rounds.get(src)
            if prev is not None and r < prev:
                self.round_fail.record(line, f"node {src} round {prev} -> {r}")
            self.rounds[src] = r if prev is None else max(prev, r)
        elif kind == "role":
            if payload["role"] == "coordinator":
                coords = self.coordinators.setdefault(payload["round"], set())
                coords.add(src)
                if len(coords) > 1:
                    self.coord_fail.record(
                        line, f"round {payload['round']}: coordinators {sorted(coords)}")
        elif kind == "persist":
            key = (payload["txn"], payload["participant"])
            self.persisted.setdefault(key, set()).add(src)
        elif kind == "txn_start":
            txn = payload["txn"]
            self.txn_participants[txn] = tuple(payload["participants"])
            self.txn_start_time.setdefault(txn, time)
        elif kind == "state":
            state = payload["state"]
            if state in ("committed", "aborted"):
                txn = payload["txn"]
                per = self.outcomes.setdefault(txn, {})
                per.setdefault(src, state)
                self.final_time.setdefault((txn, src), time)
                if len(set(per.values())) > 1:
                    self.safety_fail.record(line, f"txn {txn}: participants disagree")
        elif kind == "violation":
            if payload["severity"] == "safety":
                self.safety_fail.record(line, payload["reason"])
        elif kind == "suspect":
            self.elections.setdefault(payload["round"], time)
        elif kind == "crash":
            self.crashed.add(src)
            down = len(self.crashed & self.validators)
            self.max_crashed_validators = max(self.max_crashed_validators, down)
        elif kind == "restart":
            self.crashed.discard(src)
        elif kind == "config":
            self.validators = set(payload["validators"])
            self.n_validators = len(self.validators)
            self.loss_prob = payload["network"]["loss_prob"]

    def _on_send(self, line: int, src: int, msg: Any) -> None:
        if isinstance(msg, Message):
            # live trace: read the payload object directly
            payload = msg.payload
            mtype = type(payload).__name__
            if mtype not in _WATCHED:
                return
            msg = {f: getattr(payload, f) for f in _WATCHED[mtype]}
        else:
            mtype = msg["type"]
        if mtype == "LeaderAnnounce":
            names = self.announces.setdefault(msg["round"], set())
            names.add(msg["dispatcher"])
            if len(names) > 1:
                self.dispatcher_fail.record(
                    line, f"round {msg['round']}: dispatchers {sorted(names)}")
        elif mtype in ("Commit", "Rollback"):
            txn = msg["txn"]
            kinds = self.decisions.setdefault(txn, set())
            kinds.add(mtype)
            if len(kinds) > 1:
                self.safety_fail.record(line, f"txn {txn}: both Commit and Rollback sent")
            if mtype == "Commit":
                self._check_commit_precondition(line, txn)

    def _check_commit_precondition(self, line: int, txn: int) -> None:
        parts = self.txn_participants.get(txn)
        if parts is None:
            self.safety_fail.record(line, f"txn {txn}: Commit for unknown transaction")
            return
        need = majority_threshold(self.n_validators or 1)
        for p in parts:
            have = len(self.persisted.get((txn, p), ()))
            if have < need:
                self.safety_fail.record(
                    line, f"txn {txn}: Commit with participant {p} validated by {have} < {need}")
                return

    # -- results -----------------------------------------------------------

    def _result(self, name: str, failure: _Failure) -> CheckResult:
        if failure.line is None:
            return CheckResult(name, PASS)
        return CheckResult(name, FAIL, failure.line, failure.detail)

    def round_monotonic(self) -> CheckResult:
        return self._result("round_monotonic", self.round_fail)

    def unique_coordinator(self) -> CheckResult:
        return self._result("unique_coordinator", self.coord_fail)

    def unique_dispatcher(self) -> CheckResult:
        return self._result("unique_dispatcher", self.dispatcher_fail)

    def commit_safety(self) -> CheckResult:
        return self._result("commit_safety", self.safety_fail)

    def termination(self, horizon: Optional[int] = None) -> CheckResult:
        horizon = self.end_time if horizon is None else horizon
        n = self.n_validators or 1
        if self.max_crashed_validators > tolerated_crashes(n):
            return CheckResult("termination", UNMET, detail=(
                f"{self.max_crashed_validators} validators down at once, "
                f"tolerated {tolerated_crashes(n)}"))
        if self.loss_prob >= 1.0:
            return CheckResult("termination", UNMET, detail="no eventual delivery")
        down_participants = self.crashed - self.validators
        for txn in sorted(self.txn_participants):
            parts = self.txn_participants[txn]
            if down_participants & set(parts):
                continue
            for p in parts:
                t = self.final_time.get((txn, p))
                if t is None or t > horizon:
                    return CheckResult("termination", FAIL, detail=(
                        f"txn {txn} undecided at participant {p} by {horizon}"))
        for r in sorted(self.elections):
            if self.elections[r] > horizon:
                continue
            if not any(ar >= r for ar in self.announces):
                return CheckResult("termination", FAIL,
                                   detail=f"election round {r} never announced")
        return CheckResult("termination", PASS)

    def counts(self) -> dict[str, Any]:
        committed = sum(1 for per in self.outcomes.values()
                        if "committed" in per.values())
        rolled = sum(1 for per in self.outcomes.values()
                     if "aborted" in per.values())
        return {
            "rounds_seen": sorted({r for r in self.rounds.values()}),
            "txns_started": len(self.txn_participants),
            "txns_committed": committed,
            "txns_rolled_back": rolled,
            "coordinators_per_round": {str(r): sorted(c)
                                       for r, c in sorted(self.coordinators.items())},
        }

    def report(self, horizon: Optional[int] = None,
               with_termination: bool = True) -> InvariantReport:
        checks = [self.round_monotonic(), self.unique_coordinator(),
                  self.unique_dispatcher(), self.commit_safety()]
        if with_termination:
            checks.append(self.termination(horizon))
        return InvariantReport(checks, self.counts())

    def summary(self) -> tuple:
        """Hashable digest of the state relevant to the safety checks."""

        def frz(d: dict) -> tuple:
            return tuple(sorted((k, tuple(sorted(v))) for k, v in d.items()))

        return (
            tuple(sorted(self.rounds.items())), frz(self.coordinators),
            frz(self.announces), frz(self.persisted), frz(self.decisions),
            tuple(sorted((t, tuple(sorted(o.items()))) for t, o in self.outcomes.items())),
            tuple(sorted(self.txn_participants.items())),
            self.round_fail.line is None, self.coord_fail.line is None,
            self.dispatcher_fail.line is None, self.safety_fail.line is None,
        )


def iter_records(trace: Any) -> Iterator[tuple]:
    """Yield (line, time, kind, src, dst, payload) from any supported trace form."""
    records = getattr(trace, "records", None)
    if records is not None:
        for i, rec in enumerate(records, start=1):
            yield (i, *rec)
        return
    items = list(trace)
    if items and isinstance(items[0], str):
        items = parse_trace_lines(items)
    for i, rec in enumerate(items, start=1):
        yield (rec.get("line", i), rec["time"], rec["kind"], rec["src"], rec["dst"],
               rec["payload"])


def monitor(trace: Any) -> TraceMonitor:
    m = TraceMonitor()
    for rec in iter_records(trace):
        m.feed(*rec)
    return m


def check_round_monotonic(trace: Any) -> CheckResult:
    return monitor(trace).round_monotonic()


def check_unique_coordinator(trace: Any) -> CheckResult:
    return monitor(trace).unique_coordinator()


def check_unique_dispatcher(trace: Any) -> CheckResult:
    return monitor(trace).unique_dispatcher()


def check_commit_safety(trace: Any) -> CheckResult:
    return monitor(trace).commit_safety()


def check_termination(trace: Any, horizon: Optional[int] = None) -> CheckResult:
    return monitor(trace).termination(horizon)


def check_all(trace: Any, horizon: Optional[int] = None) -> InvariantReport:
    return monitor(trace).report(horizon)
