"""Head-count and baseline ablation on the synthetic task, re-checked from disk.

    python3 scripts/ablation.py --heads 4 16 64 --out-dir results/ablation
"""

import argparse
import json
import sys
from pathlib import Path

from relmod.checkpoint import Checkpoint
from relmod.config import load_config
from relmod.harness import ablate, evaluate, load_datasets


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--heads", type=int, nargs="+", default=[4, 16, 64])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--out-dir", default="results/ablation")
    args = ap.parse_args()

    config = load_config(args.config, epochs=args.epochs)
    train_ex, dev_ex = load_datasets(config)
    report = ablate(config, args.heads, args.out_dir, args.seeds, train_ex, dev_ex)
    print(report.table())
    for row in report.rows:
        again = evaluate(Checkpoint.load(row["checkpoint"]), dev_ex)
        row["reevaluated_identical"] = again == row["metrics"]
        print(f"{row['variant']:<16} seed {row['seed']}: params {row['n_params']}, "
              f"re-evaluation identical: {row['reevaluated_identical']}")
    Path(args.out_dir, "report.json").write_text(json.dumps(report.rows, indent=2) + "\n")
    return 0 if all(r["reevaluated_identical"] for r in report.rows) else 1


if __name__ == "__main__":
    sys.exit(main())
