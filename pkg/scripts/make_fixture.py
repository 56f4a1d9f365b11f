#!/usr/bin/env python3
"""Generate a synthetic raw-input dataset plus a ready-to-run configuration.

Example:

    python scripts/make_fixture.py --out demo_inputs --seed 7
    discourse-hedonics run --config demo_inputs/run.cfg
"""

import argparse
from pathlib import Path

from discourse_hedonics.fixtures import make_input_fixture


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="directory for the input files")
    parser.add_argument("--collections", type=int, default=6)
    parser.add_argument("--nfts", type=int, default=30, help="NFTs per collection")
    parser.add_argument("--trades", type=float, default=4.0, help="mean trades per NFT")
    parser.add_argument("--items", type=int, default=400, help="discourse items per collection")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--format", choices=("csv", "jsonl"), default="csv", dest="fmt")
    args = parser.parse_args()

    out = Path(args.out)
    paths = make_input_fixture(
        out,
        n_collections=args.collections,
        nfts_per_collection=args.nfts,
        mean_trades_per_nft=args.trades,
        items_per_collection=args.items,
        seed=args.seed,
        discourse_format=args.fmt,
    )
    config = out / "run.cfg"
    config.write_text(
        f"transactions={paths.transactions}\n"
        f"market={paths.market}\n"
        f"discourse={paths.discourse}\n"
        f"features={paths.features}\n"
        f"out={out / 'run_output'}\n"
        f"seed={args.seed}\n"
    )
    print(f"inputs under {out}, config at {config}")


if __name__ == "__main__":
    main()
