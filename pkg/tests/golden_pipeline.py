"""fit -> predict -> zplot -> optimize on the shipped fixtures, collected as {name: bytes}.

Set ECMPOWER_REGEN_GOLDEN=1 to rewrite tests/golden/ from the current code.
"""

import contextlib
import io
import os
import shutil
from importlib import resources
from pathlib import Path

from ecmpower.cli import main

GOLDEN_DIR = Path(__file__).parent / "golden"
EPOCH = "1700000000"

STEPS = [
    ("snb_model.json", ["fit", "--setup", "snb_setup.json", "--measurements", "snb_measurements.csv"]),
    ("bdw_model.json", ["fit", "--setup", "bdw_setup.json", "--measurements", "bdw_measurements.csv"]),
    ("snb_predict_dgemm.csv", ["predict", "--model", "snb_model.json", "--kernel", "dgemm", "-n", "8",
                               "--f-core", "1.4"]),
    ("bdw_predict_stream.csv", ["predict", "--model", "bdw_model.json", "--kernel", "stream", "-n", "10",
                                "--f-core", "2.0", "--f-uncore", "1.75"]),
    ("snb_zplot_stream_n.csv", ["zplot", "--model", "snb_model.json", "--kernel", "stream", "--sweep", "n"]),
    ("snb_zplot_dgemm_f.csv", ["zplot", "--model", "snb_model.json", "--kernel", "dgemm", "--sweep", "f_core"]),
    ("bdw_zplot_dgemm_fu.csv", ["zplot", "--model", "bdw_model.json", "--kernel", "dgemm", "--sweep", "f_uncore",
                                "--f-core", "1.2"]),
    ("snb_optimize_dgemm_edp.csv", ["optimize", "--model", "snb_model.json", "--kernel", "dgemm",
                                    "--objective", "min-edp"]),
    ("snb_optimize_stream_energy.csv", ["optimize", "--model", "snb_model.json", "--kernel", "stream",
                                        "--objective", "min-energy"]),
    ("bdw_optimize_stream_edp.csv", ["optimize", "--model", "bdw_model.json", "--kernel", "stream",
                                     "--objective", "min-edp"]),
]


def copy_fixtures(dest: Path) -> None:
    data = resources.files("ecmpower") / "data"
    for entry in data.iterdir():
        if entry.name.endswith((".csv", ".json")):
            shutil.copyfile(entry, dest / entry.name)


def run_pipeline(workdir: Path) -> dict:
    copy_fixtures(workdir)
    old_cwd, old_epoch = os.getcwd(), os.environ.get("SOURCE_DATE_EPOCH")
    os.environ["SOURCE_DATE_EPOCH"] = EPOCH
    outputs = {}
    try:
        os.chdir(workdir)
        for name, argv in STEPS:
            sink = io.StringIO()
            with contextlib.redirect_stderr(io.StringIO()):
                rc = main(argv + ["-o", name], out=sink)
            if rc != 0:
                raise RuntimeError(f"{' '.join(argv)} exited {rc}")
            outputs[name] = (workdir / name).read_bytes()
            outputs[name + ".stdout"] = sink.getvalue().encode()
    finally:
        os.chdir(old_cwd)
        if old_epoch is None:
            os.environ.pop("SOURCE_DATE_EPOCH", None)
        else:
            os.environ["SOURCE_DATE_EPOCH"] = old_epoch
    return outputs


def compare_with_golden(outputs: dict) -> list:
    """Names whose bytes differ from the committed golden files (regenerates first if asked)."""
    if os.environ.get("ECMPOWER_REGEN_GOLDEN") == "1":
        GOLDEN_DIR.mkdir(exist_ok=True)
        for name, data in outputs.items():
            (GOLDEN_DIR / name).write_bytes(data)
    bad = []
    for name, data in outputs.items():
        path = GOLDEN_DIR / name
        if not path.exists() or path.read_bytes() != data:
            bad.append(name)
    return bad
