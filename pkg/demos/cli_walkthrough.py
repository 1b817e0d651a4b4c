"""
The command-line pipeline
=========================

Runs gen-data, train-source, train-spr, self-train and eval through the
``spr`` entry point into a temporary directory, and shows what each step
writes. The same commands work from a shell, e.g.
``spr train-spr --seed 0 --out runs/spr``.
"""

import tempfile
from pathlib import Path

from spr.cli import main

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    seed = ["--seed", "0"]
    main(["gen-data", *seed, "--out", str(out / "data")])
    main(["train-source", *seed, "--data", str(out / "data"), "--out", str(out / "source")])
    main(["train-spr", *seed, "--data", str(out / "data"), "--init", str(out / "source" / "params"),
          "--dump-prototypes", "--out", str(out / "spr")])
    main(["self-train", *seed, "--data", str(out / "data"), "--params", str(out / "spr" / "params"),
          "--out", str(out / "st")])

    for path in sorted(out.rglob("*")):
        if path.is_file():
            print(f"{path.relative_to(out)!s:32s} {path.stat().st_size:>8d} bytes")
    print()
    print((out / "spr" / "metrics.csv").read_text().splitlines()[0])
    print((out / "spr" / "metrics.csv").read_text().splitlines()[1])
    main(["structure", "--protos", str(out / "spr" / "p_h.sprt"), "--eps", "0.1",
          "--out", str(out / "pr.sprt")])
