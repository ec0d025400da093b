#!/usr/bin/env python3
"""End-to-end demo on the bundled 64-story synthetic corpus.

Generates data, trains the rule and sentence generators jointly, runs
the recursive completion loop, and prints the metric report. Everything
lands under --workdir; rerunning wipes it first.

    python scripts/run_synthetic_pipeline.py --workdir runs/demo --seed 0
"""

import argparse
import json
import shutil
import sys
import time
from pathlib import Path

from click.testing import CliRunner

from coins.cli import main as cli


def sh(runner, *args):
    printable = " ".join(str(a) for a in args)
    print(f"$ coins {printable}", flush=True)
    result = runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)
    if result.exit_code != 0:
        print(result.output, file=sys.stderr)
        sys.exit(result.exit_code)
    print(result.output.rstrip())
    return result


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/demo")
    ap.add_argument("--stories", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=120)
    args = ap.parse_args()

    work = Path(args.workdir)
    if work.exists():
        shutil.rmtree(work)
    work.mkdir(parents=True)
    cfg = work / "config.json"
    cfg.write_text(json.dumps({
        "model": {"max_positions": 160, "dropout_p": 0.0},
        "train": {"learning_rate": 2e-3, "target_nll": 0.01, "seed": args.seed},
    }, indent=2))

    runner = CliRunner()
    t0 = time.time()
    sh(runner, "synth-corpus", "--out", work / "corpus", "--stories", args.stories, "--seed", args.seed)
    sh(runner, "build-nsc", "--stories", work / "corpus/stories.jsonl", "--out", work / "nsc")
    sh(runner, "train-vocab", "--inputs", work / "corpus/stories.jsonl",
       "--inputs", work / "corpus/glucose.jsonl", "--out", work / "vocab")
    sh(runner, "train-coins", "--nsc", work / "nsc/nsc.jsonl",
       "--glucose", work / "corpus/glucose.jsonl", "--vocab", work / "vocab/vocab.json",
       "--config", cfg, "--epochs", args.epochs, "--out", work / "models")
    sh(runner, "train-baseline", "--nsc", work / "nsc/nsc.jsonl",
       "--vocab", work / "vocab/vocab.json", "--config", cfg, "--epochs", args.epochs,
       "--out", work / "baseline")
    sh(runner, "enrich", "--nsc", work / "nsc/nsc.jsonl", "--csi", work / "models",
       "--out", work / "silver")
    sh(runner, "complete", "--nsc", work / "nsc/nsc.jsonl", "--models", work / "models",
       "--mode", "full", "--out", work / "run_full")
    sh(runner, "complete", "--nsc", work / "silver/nsc.jsonl", "--models", work / "models",
       "--mode", "oracle", "--out", work / "run_oracle")
    sh(runner, "complete", "--nsc", work / "nsc/nsc.jsonl", "--models", work / "baseline",
       "--mode", "full", "--out", work / "run_baseline")
    for run in ("run_full", "run_oracle", "run_baseline"):
        sh(runner, "evaluate", "--system", work / run, "--gold", work / "nsc/nsc.jsonl",
           "--ppl-model", work / "models", "--out", work / f"eval_{run}")

    print(f"\ndone in {time.time() - t0:.0f}s; inspect a trace with:")
    print(f"  coins inspect-trace --run {work / 'run_full'} --iteration 1")


if __name__ == "__main__":
    main()
