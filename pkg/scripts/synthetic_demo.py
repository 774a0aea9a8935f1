"""Write a synthetic manifest and run the whole pipeline on it.

    python scripts/synthetic_demo.py --out demo --seed 3
"""

import argparse
import json
from pathlib import Path

from activelo.cli import main as cli_main
from activelo.synth import benchmark_entries


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("demo"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--clean", type=int, default=6)
    ap.add_argument("--cluttered", type=int, default=6)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = args.out / "manifest.json"
    entries = benchmark_entries(args.clean, args.cluttered, seed=args.seed)
    manifest.write_text(json.dumps({"sequences": entries}, indent=2) + "\n", encoding="utf-8")
    config = {
        "manifest": "manifest.json",
        "seed": args.seed,
        "output": "run",
        "analyze": {"stride": 8},
        "itss": {"u": 3},
        "ais": {"h": 2, "iter": 3, "stride": 8, "c": 6, "voxel": None},
    }
    (args.out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    rc = cli_main(["run", "--config", str(args.out / "config.json")])
    print((args.out / "run" / "selection.csv").read_text(encoding="utf-8"))
    print((args.out / "run" / "cost_report.txt").read_text(encoding="utf-8"))
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
