"""The reproducible command-line pipeline, end to end.

Four verbs cover an experiment: ``gen-data`` writes dataset splits,
``train`` fits a model and checkpoints it, ``eval`` writes per-frame metric
CSVs, and ``export-plots`` renders them to SVG. Every command records the
resolved configuration in a manifest next to its outputs, and with
``--deterministic`` the whole chain is bit-reproducible from (config, seed).

This demo drives the CLI in-process at a miniature scale; the equivalent
shell session is printed alongside each step.

Run:  python3 demos/04_cli_pipeline.py
Works in a temporary directory; copies the plots into demos/output/.
"""

import shutil
import tempfile
from pathlib import Path

from tlrn.cli import main

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

SMALL = [
    "--preset", "ring-desk",
    "--set", "data.image_size=20", "--set", "network.image_size=20",
    "--set", "data.T=4",
    "--set", "data.train_count=12", "--set", "data.val_count=2",
    "--set", "data.test_count=6",
    "--set", "network.base_channels=8", "--set", "network.num_downsamplings=2",
    "--set", "network.latent_channels=12",
    "--set", "network.residual_hidden_channels=12",
    "--set", "train.batch_size=4", "--set", "train.epochs=40",
]


def run(argv):
    print(f"\n$ tlrn {' '.join(argv)}")
    rc = main(argv)
    assert rc == 0, f"exit code {rc}"


with tempfile.TemporaryDirectory() as td:
    work = Path(td)

    # 1. generate train/val/test splits (shrunk ring-desk preset)
    run(["gen-data", *SMALL, "--seed", "0", "--out", str(work / "data")])

    # 2. train the temporal model and the single-frame baseline
    for mode in ("tlrn", "baseline"):
        run(["train", *SMALL, "--seed", "0",
             "--data", str(work / "data" / "train.tlrndata"),
             "--mode", mode, "--out", str(work / mode), "--deterministic"])

    # 3. evaluate on the held-out test split, side by side
    run(["eval", "--checkpoint", str(work / "tlrn" / "checkpoint.ckpt"),
         "--compare", str(work / "baseline" / "checkpoint.ckpt"),
         "--data", str(work / "data" / "test.tlrndata"),
         "--out", str(work / "eval")])
    print("\ncompare.csv:")
    print((work / "eval" / "compare.csv").read_text())

    # 4. evaluate the baseline alone so its summary can be overlaid
    run(["eval", "--checkpoint", str(work / "baseline" / "checkpoint.ckpt"),
         "--data", str(work / "data" / "test.tlrndata"),
         "--out", str(work / "eval-baseline")])

    # 5. render the summaries (and a deformation strip) to SVG
    run(["export-plots", "--summary", str(work / "eval" / "summary.csv"),
         "--compare-summary", str(work / "eval-baseline" / "summary.csv"),
         "--label", "temporal",
         "--checkpoint", str(work / "tlrn" / "checkpoint.ckpt"),
         "--data", str(work / "data" / "test.tlrndata"),
         "--out", str(work / "plots")])

    for svg in (work / "plots").glob("*.svg"):
        shutil.copy(svg, OUT / f"cli_pipeline_{svg.name}")
        print(f"copied {svg.name} -> {OUT / ('cli_pipeline_' + svg.name)}")
