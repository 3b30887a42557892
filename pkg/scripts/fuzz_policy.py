#!/usr/bin/env python3
"""Long-running policy fuzz: random specs, random scripted turns, invariants.

The pytest acceptance suite runs 10k steps of this; use --steps to go further.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from tests.test_acceptance import _replay_fuzz_session, _run_fuzz_session


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=10_000)
    parser.add_argument("--turns", type=int, default=8, help="turns per session")
    parser.add_argument("--seed", type=int, default=0, help="first session seed")
    args = parser.parse_args()

    start = time.perf_counter()
    steps, session, violations = 0, args.seed, []
    while steps < args.steps:
        spec, script, trace, fingerprint, bad = _run_fuzz_session(session, args.turns)
        violations.extend(bad)
        replay_trace, replay_fp = _replay_fuzz_session(spec, script, session)
        if replay_trace != trace or replay_fp != fingerprint:
            violations.append(f"seed {session}: replay mismatch")
        steps += args.turns
        session += 1
    elapsed = time.perf_counter() - start
    print(f"{steps} steps over {session - args.seed} sessions in {elapsed:.1f}s")
    if violations:
        print(f"{len(violations)} violations:")
        for v in violations[:20]:
            print(" ", v)
        return 1
    print("zero violations")
    return 0


if __name__ == "__main__":
    sys.exit(main())
