#!/usr/bin/env python3
"""End-to-end demo of the evolution loop with a scripted mock LLM.

Writes a small bin-packing run into ./demo_run (3 candidates of increasing
quality, tuned and scored on generated Weibull instances) and prints the two
convergence series.  Requires the evotune-shim package for real candidate
execution; with --recorded it replays canned fitness values instead and works
without the shim.
"""

import argparse
import importlib.util
import json
import shutil
import sys
import tempfile
from pathlib import Path

from evotune.cli import main as evotune_main
from evotune.store import export_convergence

NAIVE = """import numpy as np

class OldestBinFirst:
    def __init__(self, s1=1.0):
        self.s1 = s1

    def score(self, item, bins):
        return -np.arange(len(bins), dtype=float) * self.s1
"""

WASTEFUL = """import numpy as np

class LoosestFit:
    def __init__(self, s1=1.0):
        self.s1 = s1

    def score(self, item, bins):
        return (bins - item) * self.s1
"""

TIGHT = """import numpy as np

class TightestFit:
    def __init__(self, s1=1.0):
        self.s1 = s1

    def score(self, item, bins):
        return -(bins - item) * self.s1
"""

SPACE = '{"s1": (0.5, 2.0)}'


def response(name: str, code: str) -> str:
    return f"# Name: {name}\n# Code:\n```python\n{code}\n```\n# Space:\n```python\n{SPACE}\n```\n"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("demo_run"))
    parser.add_argument("--recorded", action="store_true", help="skip candidate execution")
    args = parser.parse_args()

    if args.out.exists():
        shutil.rmtree(args.out)

    with tempfile.TemporaryDirectory() as tmp:
        scripts = Path(tmp) / "responses"
        scripts.mkdir()
        plan = [("OldestBinFirst", NAIVE), ("LoosestFit", WASTEFUL), ("TightestFit", TIGHT)]
        for index, (name, code) in enumerate(plan):
            (scripts / f"{index:02d}.txt").write_text(response(name, code))

        cli_args = [
            "run", "--problem", "binpack", "--llm", "mock",
            "--script-dir", str(scripts), "--llm-budget", "3",
            "--hpo-budget", "6", "--hpo-strategy", "random", "--seed", "1",
            "--binpack-instances", "3", "--binpack-items", "300",
            "--out", str(args.out),
        ]
        use_recorded = args.recorded or importlib.util.find_spec("evotune_shim") is None
        if use_recorded:
            if not args.recorded:
                print("evotune-shim not installed; falling back to recorded fitness values")
            recorded = Path(tmp) / "recorded.json"
            recorded.write_text(
                json.dumps(
                    {
                        "full_set_size": 3,
                        "training_size": 2,
                        "results": {
                            "OldestBinFirst": {"fitness": 0.93},
                            "LoosestFit": {"fitness": 0.88},
                            "TightestFit": {"fitness": 0.97},
                        },
                    }
                )
            )
            cli_args += ["--recorded-evals", str(recorded)]
        status = evotune_main(cli_args)
        if status != 0:
            return status

    series_a, series_b = export_convergence(args.out)
    print("\nbest fitness vs LLM queries:")
    print(series_a)
    print("best fitness vs full benchmark evaluations:")
    print(series_b)
    print(f"run directory: {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
