"""Run the acceptance criteria and print one PASS/FAIL line each.

Usage: python3 scripts/run_acceptance.py [criterion ...]
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from test_acceptance import CRITERIA, run  # noqa: E402


def main(argv):
    keys = [int(a) for a in argv] or list(CRITERIA)
    results = [run(k)[0] for k in keys]
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
