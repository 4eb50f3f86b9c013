"""
Driving everything from the command line
========================================

The same entry point as the ``hodgeflow`` console script, called with the
configs shipped in ``configs/``. Outputs land under a temporary directory.
"""
import tempfile
from pathlib import Path

from hodgeflow.cli import main

configs = Path(__file__).resolve().parent.parent / "configs"
with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    print("decompose ->", main(["decompose", "--config", str(configs / "ring_decompose.yaml"),
                                "--out", str(out / "dec"), "--overwrite"]))
    print("train     ->", main(["train", "--config", str(configs / "ring_hfps.yaml"),
                                "--out", str(out / "metrics"), "--overwrite"]))
    print("report    ->", main(["report", str(out / "metrics"), "--out", str(out / "report"), "--overwrite"]))
    print((out / "report" / "summary.tsv").read_text())
