"""Walk through a dispatcher failover, event by event.

The dispatcher is crashed right after it forwards its first ValidateRequest.
The script prints the interesting part of the trace: the crash, the
validators noticing the silence, the election, the new dispatcher taking over
and the transaction finishing.

    python3 demos/failover_walkthrough.py [scenario] [seed]
"""

import sys

from quorumcommit import Scenario, run_scenario

# note kinds worth showing; plain deliveries and heartbeats are noise here
SHOWN_NOTES = {"crash", "suspect", "role", "dispatcher", "step_down", "held",
               "finalize", "state", "txn_start"}
SHOWN_SENDS = {"LeaderAnnounce", "Commit", "Rollback", "FenceRequest"}


def describe(ev):
    kind, payload = ev["kind"], ev["payload"]
    if kind == "send":
        return f"{ev['src']} -> {ev['dst']}  {payload['type']} {payload}"
    return f"{ev['src']}  {kind} {payload}"


def main():
    name = sys.argv[1] if len(sys.argv) > 1 else "failover_case1"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 3
    res = run_scenario(Scenario.builtin(name), seed)
    print(f"scenario {name}, seed {seed}\n")
    for ev in res.trace.dicts():
        kind = ev["kind"]
        if kind in SHOWN_NOTES or (kind == "send" and ev["payload"]["type"] in SHOWN_SENDS):
            print(f"{ev['time'] / 1000:9.1f} ms  {describe(ev)}")
    print()
    print(res.report.to_text())
    print("latency " + res.stats.summary())


if __name__ == "__main__":
    main()
