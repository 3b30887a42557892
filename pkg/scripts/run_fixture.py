#!/usr/bin/env python3
"""Replay one or all bundled fixtures and print their metric reports."""

import argparse
import sys
from pathlib import Path

from worksheets.evaluation import replay
from worksheets.service import FIXTURES_DIR

BUNDLED = [
    FIXTURES_DIR / "restaurant",
    FIXTURES_DIR / "banking" / "fixture.json",
    FIXTURES_DIR / "banking" / "fixture_refusal.json",
    FIXTURES_DIR / "course",
    FIXTURES_DIR / "ticket",
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("fixture", nargs="?", help="fixture dir/manifest (default: all bundled)")
    args = parser.parse_args()
    targets = [Path(args.fixture)] if args.fixture else BUNDLED
    failures = 0
    for target in targets:
        report, _ = replay(target)
        print(report.to_table())
        print()
        failures += len(report.failures())
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
