"""The command line, driven from Python.

The same steps from a shell::

    latentrem fit --input demos/data/toy_events.tsv --out fit_out --seed 3
    latentrem cluster --checkpoint fit_out/checkpoint.npz --radius 1.0 --out fit_out
    latentrem export-trajectories --checkpoint fit_out/checkpoint.npz --out traj.csv
    latentrem fit --config fit_out/manifest.json --out rerun
"""
import tempfile
from pathlib import Path

from latentrem.cli import main

toy = Path(__file__).parent / "data" / "toy_events.tsv"
work = Path(tempfile.mkdtemp())

main(["fit", "--input", str(toy), "--out", str(work / "fit"), "--seed", "3",
      "--max-iters", "1500", "--refit-iters", "400"])
print(sorted(p.name for p in (work / "fit").iterdir()))
print((work / "fit" / "clusters.csv").read_text().splitlines()[:4])

main(["cluster", "--checkpoint", str(work / "fit" / "checkpoint.npz"), "--radius", "0.5", "--radius", "2.0",
      "--out", str(work / "sweep")])
print((work / "sweep" / "sweep.csv").read_text())

main(["export-trajectories", "--checkpoint", str(work / "fit" / "checkpoint.npz"),
      "--out", str(work / "traj.csv"), "--grid-points", "5"])
print((work / "traj.csv").read_text().splitlines()[:3])

# A manifest rerun repeats the fit exactly.
main(["fit", "--config", str(work / "fit" / "manifest.json"), "--out", str(work / "rerun")])
same = (work / "fit" / "trajectories.csv").read_bytes() == (work / "rerun" / "trajectories.csv").read_bytes()
print("rerun identical:", same)
