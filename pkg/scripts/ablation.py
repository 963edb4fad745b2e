"""Run the four-arm desk ablation on synthetic corpora and write the report.

    python scripts/ablation.py --seeds 0 1 2 3 4 --out results
"""
import argparse
import json
import logging
from pathlib import Path

from freqcap.config import desk_config
from freqcap.experiments import DESK_DELTA, DESK_GAMMA, ablation


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lambda", dest="lam", type=float, default=0.07)
    p.add_argument("--out", default="results")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = desk_config(gamma=DESK_GAMMA, delta=DESK_DELTA, lam=args.lam, epochs=args.epochs)
    result = ablation(seeds=args.seeds, cfg=cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(result.to_json(), indent=2) + "\n")
    (out / "ablation_table.txt").write_text(result.table() + "\n")
    print(result.table())
    print(f"{result.seconds:.0f}s")


if __name__ == "__main__":
    main()
