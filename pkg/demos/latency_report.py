"""Latency report over a handful of seeds of the reference scenario.

Prints mean/min/max/p90 and a text histogram of commit latencies pooled over
all runs. Absolute numbers depend on the scenario's assumed link delays.

    python3 demos/latency_report.py [seeds] [bucket_ms]
"""

import sys

from quorumcommit import Scenario, latency_stats, run_scenario


def main():
    n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 20
    bucket = float(sys.argv[2]) if len(sys.argv) > 2 else 10.0
    sc = Scenario.builtin("reference")
    pooled = []
    for seed in range(n_seeds):
        res = run_scenario(sc, seed)
        if not res.report.ok:
            print(f"seed {seed}: {res.report.to_text()}")
        pooled += res.latencies
    st = latency_stats(pooled, bucket)
    print(f"{len(pooled)} commits over {n_seeds} seeds")
    print(st.summary())
    if st.empty:
        return
    rows = [line.split(",") for line in st.histogram_csv().splitlines()[1:]]
    top = max(int(r[-1]) for r in rows)
    for *edges, count in rows:
        bar = "#" * round(40 * int(count) / top)
        print(f"{edges[0]:>8} ms {int(count):5d} {bar}")


if __name__ == "__main__":
    main()
