"""Scenario configuration, runs, seed sweeps and latency statistics."""

from __future__ import annotations

import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any, Iterable, Optional, Sequence

from .checker import SAFETY_CHECKS, InvariantReport, TraceMonitor, iter_records
from .core import ConfigurationError, tolerated_crashes
from .nodes import ProtocolTiming
from .simnet import FaultEntry, FaultSchedule, NetworkModel, Trace, World, run_until

US_PER_MS = 1000


def _us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


# -- scenario -----------------------------------------------------------------

_TOP_KEYS = {"name", "n_validators", "participants", "participants_per_txn",
             "transactions", "network", "faults", "random_faults", "triggered_faults",
             "timing", "seed", "horizon_ms", "stop_when_settled"}
_TXN_KEYS = {"count", "arrival", "start_ms", "rate_per_s", "schedule"}
_NET_KEYS = {"delay_min_ms", "delay_max_ms", "loss_prob", "dup_prob"}
_FAULT_KEYS = {"node", "crash_at_ms", "restart_at_ms"}
_RANDOM_FAULT_KEYS = {"crashes", "include_dispatcher", "window_ms", "restart_prob",
                      "downtime_ms"}
_TRIGGER_KEYS = {"node", "watch", "kind", "type", "occurrence", "restart_after_ms"}
_TIMING_KEYS = {"threshold", "draw_period_ms", "heartbeat_ms", "suspicion_ms",
                "txn_timeout_ms", "round_deadline_ms", "retry_ms", "prepare_delay_ms",
                "include_self_in_wheel"}


@dataclass
class Scenario:
    n_validators: int = 5
    participants: int = 6
    participants_per_txn: int = 3
    transactions: dict = field(default_factory=lambda: {"count": 100,
                                                        "arrival": "simultaneous"})
    network: dict = field(default_factory=lambda: {"delay_min_ms": 10.0,
                                                   "delay_max_ms": 40.0,
                                                   "loss_prob": 0.0, "dup_prob": 0.0})
    faults: list = field(default_factory=list)
    random_faults: Optional[dict] = None
    triggered_faults: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    seed: int = 0
    horizon_ms: Optional[float] = None
    stop_when_settled: bool = True
    name: str = ""

    # -- loading -------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        problems = _unknown(data, _TOP_KEYS, "")
        for key, allowed in (("transactions", _TXN_KEYS), ("network", _NET_KEYS),
                             ("timing", _TIMING_KEYS),
                             ("random_faults", _RANDOM_FAULT_KEYS)):
            if isinstance(data.get(key), dict):
                problems += _unknown(data[key], allowed, key + ".")
        for i, f in enumerate(data.get("faults") or []):
            problems += _unknown(f, _FAULT_KEYS, f"faults[{i}].")
        for i, f in enumerate(data.get("triggered_faults") or []):
            problems += _unknown(f, _TRIGGER_KEYS, f"triggered_faults[{i}].")
        if problems:
            raise ConfigurationError("unknown scenario keys: " + ", ".join(problems))
        base = cls()
        kwargs = {k: v for k, v in data.items()}
        if "network" in kwargs:
            kwargs["network"] = {**base.network, **kwargs["network"]}
        sc = cls(**kwargs)
        sc.validate()
        return sc

    @classmethod
    def from_json(cls, text: str) -> Scenario:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"scenario is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("scenario must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path: str) -> Scenario:
        with open(path) as fh:
            return cls.from_json(fh.read())

    @classmethod
    def builtin(cls, name: str) -> Scenario:
        """Load one of the scenarios shipped with the package (e.g. ``"reference"``)."""
        text = resources.files(__package__).joinpath(f"scenarios/{name}.json").read_text()
        return cls.from_json(text)

    def to_dict(self) -> dict:
        return asdict(self)

    # -- derived values ------------------------------------------------------

    @property
    def mean_delay_ms(self) -> float:
        return (self.network["delay_min_ms"] + self.network["delay_max_ms"]) / 2

    def network_model(self) -> NetworkModel:
        n = self.network
        return NetworkModel(_us(n["delay_min_ms"]), _us(n["delay_max_ms"]),
                            float(n.get("loss_prob", 0.0)), float(n.get("dup_prob", 0.0)))

    def protocol_timing(self) -> ProtocolTiming:
        t = self.timing
        mean = self.mean_delay_ms
        heartbeat = t.get("heartbeat_ms", 2 * mean)
        rd = t.get("round_deadline_ms", [10 * mean, 20 * mean])
        prep = t.get("prepare_delay_ms", [5.0, 15.0])
        return ProtocolTiming(
            heartbeat=_us(heartbeat),
            suspicion=_us(t.get("suspicion_ms", 5 * heartbeat)),
            draw_period=max(1, _us(t.get("draw_period_ms", mean / 5))),
            threshold=float(t.get("threshold", 0.8)),
            round_deadline=(_us(rd[0]), _us(rd[1])),
            txn_timeout=_us(t.get("txn_timeout_ms", 10 * mean)),
            retry=max(1, _us(t.get("retry_ms", 4 * mean))),
            prepare_delay=(_us(prep[0]), _us(prep[1])),
            include_self_in_wheel=bool(t.get("include_self_in_wheel", True)),
        )

    @property
    def horizon_us(self) -> int:
        ms = self.horizon_ms if self.horizon_ms is not None else 1000 * self.mean_delay_ms
        return _us(ms)

    def validate(self) -> None:
        bad = []
        if not isinstance(self.n_validators, int) or self.n_validators < 1:
            bad.append("n_validators (must be an integer >= 1)")
        if not isinstance(self.participants, int) or self.participants < 1:
            bad.append("participants (must be an integer >= 1)")
        k = self.participants_per_txn
        if not isinstance(k, int) or not 1 <= k <= max(self.participants, 1):
            bad.append("participants_per_txn (must lie in [1, participants])")
        for key in ("loss_prob", "dup_prob"):
            v = self.network.get(key, 0.0)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                bad.append(f"network.{key} (must lie in [0, 1])")
        lo, hi = self.network.get("delay_min_ms"), self.network.get("delay_max_ms")
        if not isinstance(lo, (int, float)) or not isinstance(hi, (int, float)) \
                or not 0 <= lo <= hi:
            bad.append("network.delay_min_ms/delay_max_ms (need 0 <= min <= max)")
        th = self.timing.get("threshold", 0.8)
        if not isinstance(th, (int, float)) or not 0.0 <= th < 1.0:
            bad.append("timing.threshold (must lie in [0, 1))")
        if self.horizon_ms is not None and not self.horizon_ms > 0:
            bad.append("horizon_ms (must be > 0)")
        tx = self.transactions
        if tx.get("arrival", "simultaneous") not in ("simultaneous", "poisson"):
            bad.append("transactions.arrival (simultaneous | poisson)")
        if tx.get("arrival") == "poisson" and not tx.get("rate_per_s", 0) > 0:
            bad.append("transactions.rate_per_s (must be > 0 for poisson arrival)")
        n_nodes = self.n_validators + self.participants if isinstance(self.participants, int) else 0
        for i, f in enumerate(self.faults):
            if not 0 <= f.get("node", -1) < n_nodes:
                bad.append(f"faults[{i}].node (unknown node)")
        rf = self.random_faults
        if rf is not None and isinstance(self.n_validators, int) and self.n_validators >= 1:
            if not 0 <= rf.get("crashes", 0) <= self.n_validators:
                bad.append("random_faults.crashes (must lie in [0, n_validators])")
            if not 0.0 <= rf.get("restart_prob", 0.0) <= 1.0:
                bad.append("random_faults.restart_prob (must lie in [0, 1])")
        if bad:
            raise ConfigurationError("invalid scenario fields: " + "; ".join(bad))
        try:
            self.protocol_timing()
            self.network_model()
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigurationError(f"invalid timing values: {exc}") from None

    # -- per-seed materialization --------------------------------------------

    def participant_ids(self) -> list[int]:
        return list(range(self.n_validators, self.n_validators + self.participants))

    def workload(self, seed: int) -> list[tuple[int, int, tuple[int, ...]]]:
        """(arrival time in us, txn id, participants with the manager first)."""
        tx = self.transactions
        if "schedule" in tx:
            return [(_us(item["at_ms"]), i, tuple(item["participants"]))
                    for i, item in enumerate(tx["schedule"])]
        rng = random.Random(f"{seed}/workload")
        pool = self.participant_ids()
        t = float(tx.get("start_ms", 0.0))
        out = []
        for txn in range(int(tx.get("count", 0))):
            if tx.get("arrival", "simultaneous") == "poisson" and txn > 0:
                t += rng.expovariate(tx["rate_per_s"] / 1000.0)
            out.append((_us(t), txn, tuple(rng.sample(pool, self.participants_per_txn))))
        return out

    def fault_schedule(self, seed: int) -> FaultSchedule:
        entries = [FaultEntry(f["node"], _us(f["crash_at_ms"]),
                              None if f.get("restart_at_ms") is None
                              else _us(f["restart_at_ms"]))
                   for f in self.faults]
        rf = self.random_faults
        if rf:
            rng = random.Random(f"{seed}/faults")
            lo, hi = rf.get("window_ms", [0.0, 1000.0])
            others = list(range(1, self.n_validators))
            victims = []
            n = int(rf.get("crashes", 0))
            if n and rf.get("include_dispatcher", True):
                victims.append(0)
                n -= 1
            victims += rng.sample(others, min(n, len(others)))
            down = rf.get("downtime_ms", [200.0, 800.0])
            for v in victims:
                at = rng.uniform(lo, hi)
                restart = None
                if rng.random() < rf.get("restart_prob", 0.0):
                    restart = _us(at + rng.uniform(*down))
                entries.append(FaultEntry(v, _us(at), restart))
        return FaultSchedule(entries)


def _unknown(data: Any, allowed: set, prefix: str) -> list[str]:
    if not isinstance(data, dict):
        return []
    return [prefix + k for k in sorted(data) if k not in allowed]


# -- latency statistics -------------------------------------------------------


@dataclass
class LatencyStats:
    count: int
    mean: Optional[float]
    min: Optional[float]
    max: Optional[float]
    p90: Optional[float]
    bucket_width: float
    histogram: list[tuple[float, int]]

    @property
    def empty(self) -> bool:
        return self.count == 0

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self, unit: str = "ms") -> str:
        if self.empty:
            return "no committed transactions"
        return (f"n={self.count} mean={self.mean:.1f}{unit} min={self.min:.1f}{unit} "
                f"max={self.max:.1f}{unit} p90={self.p90:.1f}{unit}")

    def histogram_csv(self) -> str:
        rows = ["bucket_start,count"]
        rows += [f"{_fmt(start)},{count}" for start, count in self.histogram]
        return "\n".join(rows) + "\n"


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def latency_stats(latencies: Iterable[float], bucket_width: float = 10.0) -> LatencyStats:
    """Mean/min/max, nearest-rank p90 and a fixed-width histogram."""
    values = sorted(latencies)
    if bucket_width <= 0:
        raise ConfigurationError("bucket width must be positive")
    if not values:
        return LatencyStats(0, None, None, None, None, bucket_width, [])
    if values[0] < 0:
        raise ConfigurationError("latencies must be non-negative")
    n = len(values)
    p90 = values[math.ceil(0.9 * n) - 1]
    buckets: dict[int, int] = {}
    for v in values:
        b = int(v // bucket_width)
        buckets[b] = buckets.get(b, 0) + 1
    lo, hi = min(buckets), max(buckets)
    hist = [(b * bucket_width, buckets.get(b, 0)) for b in range(lo, hi + 1)]
    return LatencyStats(n, math.fsum(values) / n, values[0], values[-1], p90,
                        bucket_width, hist)


def latencies_from_trace(trace: Any) -> tuple[list[float], int]:
    """Per-transaction latency in ms (manager's Begin to last Committed) and
    the number of rolled-back transactions."""
    m = TraceMonitor()
    for rec in iter_records(trace):
        m.feed(*rec)
    return _latencies(m)


def _latencies(m: TraceMonitor) -> tuple[list[float], int]:
    out = []
    rolled = 0
    for txn in sorted(m.txn_participants):
        parts = m.txn_participants[txn]
        outcome = m.outcomes.get(txn, {})
        if "aborted" in outcome.values():
            rolled += 1
            continue
        if len(outcome) == len(parts) and all(s == "committed" for s in outcome.values()):
            last = max(m.final_time[(txn, p)] for p in parts)
            out.append((last - m.txn_start_time[txn]) / US_PER_MS)
    return out, rolled


# -- runs -----------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    trace: Trace
    report: InvariantReport
    stats: LatencyStats
    rolled_back: int
    latencies: list[float]


def build_world(scenario: Scenario, seed: int) -> World:
    world = World(scenario.n_validators, scenario.participant_ids(),
                  scenario.network_model(), scenario.protocol_timing(), seed=seed)
    for at, txn, parts in scenario.workload(seed):
        world.begin_transaction(at, txn, parts)
    world.apply_faults(scenario.fault_schedule(seed))
    for trig in scenario.triggered_faults:
        world.crash_on(trig["node"], trig["kind"], trig.get("type"),
                       int(trig.get("occurrence", 1)),
                       None if trig.get("restart_after_ms") is None
                       else _us(trig["restart_after_ms"]), trig.get("watch"))
    return world


def run_scenario(scenario: Scenario, seed: Optional[int] = None,
                 trace_out: Optional[str] = None, bucket_ms: float = 10.0) -> RunResult:
    seed = scenario.seed if seed is None else seed
    world = build_world(scenario, seed)
    last_fault = scenario.fault_schedule(seed).last_event_time
    stop = None
    if scenario.stop_when_settled:
        def stop(w: World) -> bool:
            return w.now >= last_fault and not w.pending_triggers and w.settled()
    horizon = scenario.horizon_us
    trace = run_until(world, horizon, stop)
    if trace_out:
        trace.write(trace_out)
    m = TraceMonitor()
    for rec in iter_records(trace):
        m.feed(*rec)
    report = m.report(horizon)
    lat, rolled = _latencies(m)
    report.counts["seed"] = seed
    return RunResult(seed, trace, report, latency_stats(lat, bucket_ms), rolled, lat)


# -- sweeps ---------------------------------------------------------------------


@dataclass
class SweepReport:
    runs: int = 0
    failures: dict[str, int] = field(default_factory=dict)
    failing_seeds: dict[str, list[int]] = field(default_factory=dict)
    unmet: int = 0
    rolled_back: int = 0
    committed: int = 0
    stats: Optional[LatencyStats] = None

    @property
    def any_failed(self) -> bool:
        return any(self.failures.values())

    @property
    def safety_failures(self) -> int:
        return sum(self.failures.get(name, 0) for name in SAFETY_CHECKS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["any_failed"] = self.any_failed
        return d

    def to_text(self) -> str:
        lines = [f"runs: {self.runs}"]
        for name in sorted(self.failures):
            seeds = self.failing_seeds.get(name, [])
            tail = f" (seeds {seeds[:10]})" if seeds else ""
            lines.append(f"{name:<20} failures={self.failures[name]}{tail}")
        lines.append(f"termination precondition unmet: {self.unmet}")
        lines.append(f"committed: {self.committed} rolled back: {self.rolled_back}")
        if self.stats is not None:
            lines.append("latency " + self.stats.summary())
        lines.append("ANY FAILED" if self.any_failed else "all checks passed")
        return "\n".join(lines)


def _sweep_one(args: tuple[dict, int]) -> tuple[int, dict[str, str], int, list[float]]:
    sc_dict, seed = args
    res = run_scenario(Scenario.from_dict(sc_dict), seed)
    return seed, {c.name: c.status for c in res.report.checks}, res.rolled_back, res.latencies


def seed_sweep(scenario: Scenario, seeds: Sequence[int], jobs: int = 1,
               bucket_ms: float = 10.0) -> SweepReport:
    report = SweepReport()
    if not seeds:
        return report
    work = [(scenario.to_dict(), s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, work, chunksize=8))
    else:
        results = [_sweep_one(w) for w in work]
    pooled: list[float] = []
    for seed, statuses, rolled, lat in results:
        report.runs += 1
        report.rolled_back += rolled
        report.committed += len(lat)
        pooled += lat
        for name, status in statuses.items():
            report.failures.setdefault(name, 0)
            if status == "fail":
                report.failures[name] += 1
                report.failing_seeds.setdefault(name, []).append(seed)
            elif status == "precondition unmet":
                report.unmet += 1
    report.stats = latency_stats(pooled, bucket_ms)
    return report


def tolerated(scenario: Scenario) -> int:
    return tolerated_crashes(scenario.n_validators)
