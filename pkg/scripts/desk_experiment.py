"""End-to-end run on the desk profile: synthesize, prepare, train, compare to LI.

Usage: python scripts/desk_experiment.py OUT_DIR [--records N] [--seed S] [--set KEY=VALUE ...]

Everything is written under OUT_DIR (raw/, pairs/, run/, eval/). The comparison
table is printed at the end.
"""

import argparse
import sys
import time
from pathlib import Path

from msecg.cli import main as msecg


def step(name, *argv):
    t0 = time.perf_counter()
    code = msecg([str(a) for a in argv])
    if code != 0:
        sys.exit(f"{name} failed with exit code {code}")
    print(f"[{name}] {time.perf_counter() - t0:.1f}s", flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--records", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    common = ["--profile", "desk", "--seed", args.seed]
    for kv in args.set:
        common += ["--set", kv]
    root = args.out_dir
    step("synth", "synth", "--records", args.records, "--out-dir", root / "raw", *common)
    step("prepare", "prepare", "--input", root / "raw" / "manifest.jsonl", "--out-dir", root / "pairs", *common)
    step("train", "train", "--data", root / "pairs", "--out-dir", root / "run", *common)
    step("eval", "eval", "--data", root / "pairs", "--checkpoint", root / "run" / "best.ckpt",
         "--out-dir", root / "eval", *common)


if __name__ == "__main__":
    main()
