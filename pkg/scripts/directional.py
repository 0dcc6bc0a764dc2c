"""Relation module vs pooled-context baseline on the synthetic mismatch task.

    python3 scripts/directional.py --seeds 0 1 2 --out results/directional.json
"""

import argparse
import json
import sys
from pathlib import Path

from relmod.config import load_config
from relmod.harness import compare_na


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--facts", type=int, help="facts per context (overrides the config)")
    ap.add_argument("--epochs", type=int, default=30, help="overrides the config")
    ap.add_argument("--out", help="write the full result as JSON")
    ap.add_argument("--ckpt-dir", help="keep every checkpoint here")
    args = ap.parse_args()

    config = load_config(args.config, facts_per_example=args.facts, epochs=args.epochs)
    result = compare_na(config, args.seeds, args.ckpt_dir,
                        progress=lambda r: print(json.dumps(r), file=sys.stderr, flush=True))
    rm, fc = result["means"]["relation_module"], result["means"]["baseline_fc_na"]
    print(f"{'model':<18}{'EM':>8}{'F1':>8}{'NA_acc':>9}{'Ans_acc':>9}")
    for name, m in (("relation_module", rm), ("baseline_fc_na", fc)):
        print(f"{name:<18}{m['EM']:>8.2f}{m['F1']:>8.2f}{m['NA_accuracy']:>9.2f}{m['answerable_accuracy']:>9.2f}")
    print(f"NA gain {rm['NA_accuracy'] - fc['NA_accuracy']:+.2f}, answerable change "
          f"{rm['answerable_accuracy'] - fc['answerable_accuracy']:+.2f}, {result['seconds']:.0f} s")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
