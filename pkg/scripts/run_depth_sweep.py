#!/usr/bin/env python3
"""Text-encoder depth sweep on the synthetic benchmark.

Thin wrapper over `deskclip sweep-text-depth` that also generates the
dataset when missing. One run directory per depth lands under --out.
"""

import argparse
import sys
from pathlib import Path

from deskclip.cli import main as cli_main


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data", default="runs/sweep-data")
    p.add_argument("--out", default="runs/depth-sweep")
    p.add_argument("--depths", default="1,2,3,4")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = p.parse_args()

    data_dir = Path(args.data)
    if not (data_dir / "train.tsv").exists():
        rc = cli_main(["synth", str(data_dir), "--classes", str(args.classes),
                       "--seed", str(args.seed)])
        if rc != 0:
            return rc

    argv = ["sweep-text-depth", "--depths", args.depths, "--out", args.out,
            "--jobs", str(args.jobs)]
    for item in [
        f"data.train_manifest={data_dir / 'train.tsv'}",
        f"data.val_manifest={data_dir / 'val.tsv'}",
        f"data.classes_file={data_dir / 'classes.txt'}",
        f"train.seed={args.seed}",
    ] + args.set:
        argv += ["--set", item]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
