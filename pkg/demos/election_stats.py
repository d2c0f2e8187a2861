"""How often each candidate wins the roulette, against its share of the wheel.

    python3 demos/election_stats.py [spins]
"""

import random
import sys

from quorumcommit import roulette_select


def main():
    spins = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
    # greatest draws as a coordinator might hold them after a round
    wheel = {0: 0.93, 1: 0.85, 2: 0.41, 3: 0.97, 4: 0.12}
    rng = random.Random(7)
    wins = dict.fromkeys(wheel, 0)
    for _ in range(spins):
        wins[roulette_select(wheel, rng)] += 1
    total = sum(wheel.values())
    print("node  weight  expected  observed")
    for node, w in wheel.items():
        print(f"{node:4d}  {w:6.2f}  {w / total:8.4f}  {wins[node] / spins:8.4f}")


if __name__ == "__main__":
    main()
