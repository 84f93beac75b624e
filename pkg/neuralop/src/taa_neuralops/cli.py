"""Train one architecture/variant/format combination as a standalone process.

    taa-neuralops --dataset DIR --family unet --variant dD --format gray \
                  --budget 20000 --seed 0
"""

from __future__ import annotations

import argparse
import sys

from .training import DEFAULT_BUDGET, FAMILIES, train_family


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="taa-neuralops", description=__doc__)
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--family", required=True, choices=FAMILIES)
    parser.add_argument("--variant", default="dD", choices=("d", "dD"))
    parser.add_argument("--format", dest="fmt", default="gray",
                        choices=("heat", "gray"))
    parser.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    def progress(update, loss):
        print(f"update {update}: loss {loss:.3e}", flush=True)

    meta = train_family(args.dataset, args.family, args.variant, args.fmt,
                        budget=args.budget, seed=args.seed,
                        batch_size=args.batch_size, progress=progress)
    print(f"{meta['model_id']}: {meta['parameter_count']} parameters, "
          f"{meta['wall_seconds']:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
