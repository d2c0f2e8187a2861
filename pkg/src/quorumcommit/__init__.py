"""Fault-tolerant commit consensus with a validator quorum and randomized
dispatcher election, run inside a deterministic network simulator."""

from .checker import (
    CheckResult,
    InvariantReport,
    TraceMonitor,
    check_all,
    check_commit_safety,
    check_round_monotonic,
    check_termination,
    check_unique_coordinator,
    check_unique_dispatcher,
)
from .core import (
    ConfigurationError,
    Decision,
    InvalidInputError,
    InvalidTransactionError,
    Message,
    MessageId,
    QuorumCommitError,
    TraceParseError,
    majority_threshold,
    tolerated_crashes,
)
from .election import roulette_select
from .harness import LatencyStats, RunResult, Scenario, SweepReport, latency_stats, run_scenario, seed_sweep
from .simnet import FaultEntry, FaultSchedule, NetworkModel, Trace, World, run_until

__version__ = "0.1.0"
