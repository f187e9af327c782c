"""Run the acceptance checks and print one line per criterion."""
import argparse
import sys

from vpdroop import acceptance

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("numbers", type=int, nargs="*", choices=sorted(acceptance.CHECKS))
    args = ap.parse_args()
    results = []
    for k in args.numbers or sorted(acceptance.CHECKS):
        results.append(acceptance.run_check(k))
        print(results[-1].line(), flush=True)
    print(f"{sum(r.passed for r in results)}/{len(results)} passed")
    sys.exit(0 if all(r.passed for r in results) else 1)
