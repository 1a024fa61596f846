"""Write a synthetic tutoring log in the native format.

    python scripts/generate_synthetic_log.py --out data/synthetic.tsv [--students 95 --responses 40]

Useful for exercising the full pipeline without the released dataset.  The
synthetic log only carries rule-mappable feedback, so the baseline24 scheme
yields no records from it.
"""

import argparse
from pathlib import Path

from algebra_errors import data as D
from algebra_errors.synthetic import generate_log


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--students", type=int, default=95)
    p.add_argument("--responses", type=int, default=40)
    p.add_argument("--bug-rate", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rows = generate_log(args.students, args.responses, bug_rate=args.bug_rate, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    D.write_native_log(rows, args.out)
    print(f"{len(rows)} interactions -> {args.out}")


if __name__ == "__main__":
    main()
