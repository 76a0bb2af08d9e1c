#!/usr/bin/env python3
"""End-to-end demo on the built-in synthetic fixture.

Materializes the toy network and three-class stimulus set, then drives
every CLI stage: forward -> patterns -> stats -> rdm (build/rank/mds) ->
train-heads -> cam -> subsets -> render. Outputs land in ./toy_run (or the
directory given as the first argument).
"""

import pathlib
import sys

from repscope import synthetic
from repscope.cli import main


def run(args):
    print("$ repscope " + " ".join(args))
    code = main(args)
    if code != 0:
        sys.exit(code)


def main_script():
    root = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "toy_run").absolute()
    root.mkdir(parents=True, exist_ok=True)
    net_path = synthetic.toy_network_files(root / "net")
    manifest = synthetic.toy_dataset_files(root / "data", n_per_class=30)
    traces = root / "traces"
    pats = root / "patterns"
    heads = root / "heads"
    figures = root / "figures"
    figures.mkdir(exist_ok=True)

    run(["forward", "--net", str(net_path), "--manifest", str(manifest), "--out", str(traces)])
    run(["patterns", "--traces", str(traces), "--manifest", str(manifest), "--out", str(pats)])

    for layer in synthetic.TAPS:
        run(["stats", "--patterns", str(pats), "--layer", layer, "--per-image",
             "--out", str(root / f"hist_per_image_{layer}.tsv")])
    run(["stats", "--patterns", str(pats), "--layer", "relu2", "--per-neuron",
         "--out", str(root / "hist_per_neuron_relu2.tsv")])
    run(["stats", "--patterns", str(pats), "--layer", "relu2", "--neuron", "0", "--class", "0",
         "--manifest", str(manifest), "--bins", "20",
         "--out", str(root / "hist_neuron0_class0.tsv")])

    rdm_files = []
    for layer in synthetic.TAPS:
        out = root / f"rdm_{layer}.rstf"
        run(["rdm", "build", "--patterns", str(pats), "--layer", layer, "--out", str(out)])
        ranked = root / f"rdm_rank_{layer}.rstf"
        run(["rdm", "rank", "--in", str(out), "--out", str(ranked)])
        run(["render", "heatmap", "--in", str(ranked), "--out",
             str(figures / f"rdm_{layer}.ppm"), "--zoom", "4"])
        rdm_files.append(str(out))
    run(["rdm", "corr", "--a", rdm_files[-2], "--b", rdm_files[-1], "--method", "spearman"])
    run(["rdm", "mds", "--out", str(root / "mds.tsv"), "--dim", "2"] + rdm_files)

    run(["train-heads", "--traces", str(traces), "--manifest", str(manifest),
         "--out", str(heads), "--max-iters", "1500"])
    run(["cam", "--traces", str(traces), "--manifest", str(manifest), "--heads", str(heads),
         "--table-out", str(root / "predictions.tsv"), "--topk", "3"])
    run(["cam", "--traces", str(traces), "--manifest", str(manifest), "--heads", str(heads),
         "--confidences-out", str(root / "confidences_relu2.tsv"), "--layer", "relu2"])
    run(["cam", "--traces", str(traces), "--manifest", str(manifest), "--heads", str(heads),
         "--image", "beta_003", "--layer", "relu2", "--topk", "3",
         "--overlay", str(figures / "cam_beta_003.ppm")])

    run(["subsets", "--manifest", str(manifest),
         "--confidences", str(root / "confidences_relu2.tsv"),
         "--out", str(root / "subsets"), "--groups", "3", "--per-group", "5"])
    run(["rdm", "build", "--patterns", str(pats), "--layer", "relu5",
         "--out", str(root / "rdm_subset1_relu5.rstf"),
         "--subset", str(root / "subsets" / "subset_01.tsv")])

    print(f"\ndone: outputs under {root}")


if __name__ == "__main__":
    main_script()
