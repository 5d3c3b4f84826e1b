"""Runs synth -> train -> explain with the CLI and parses every SVG as XML."""

import pathlib
import shutil
import subprocess
import sys
import xml.etree.ElementTree as ET

cli, work = str(pathlib.Path(sys.argv[1]).resolve()), pathlib.Path(sys.argv[2])
shutil.rmtree(work, ignore_errors=True)
work.mkdir(parents=True)


def run(*args):
    subprocess.run([cli, *args], cwd=work, check=True, stdout=subprocess.DEVNULL)


run("synth", "--out", "data", "--set", "synth.speakers_per_class=3",
    "--set", "synth.utterances_per_speaker=2", "--set", "synth.D=8")
run("train", "--data", "data", "--out", "model", "--variant", "m4",
    "--set", "train.epochs=2", "--set", "model.hidden1=4", "--set", "model.hidden2=4")
run("explain", "--data", "data", "--checkpoint", "model", "--out", "explain", "--max-svg", "12")

svgs = sorted((work / "explain" / "heatmaps").glob("*.svg"))
assert len(svgs) == 12, f"expected 12 heatmaps, found {len(svgs)}"
ns = "{http://www.w3.org/2000/svg}"
for path in svgs:
    root = ET.parse(path).getroot()
    assert root.tag == ns + "svg", f"{path}: root is {root.tag}"
    cells = [e for e in root.iter(ns + "rect") if e.get("class") == "cell"]
    scores = [float(c.get("data-score")) for c in cells]
    assert cells and all(0.0 <= s <= 1.0 for s in scores), f"{path}: bad cells"
print(f"{len(svgs)} SVG files are well-formed XML")
