"""Cross-component acceptance: the analysis toolkit is driven through its
CLI and file formats only (no imports from it).

Requires the repscope package to be installed in the same environment.
"""

import os
import subprocess
import sys

import numpy as np
from PIL import Image

from rsexport import rstf
from rsexport.checkpoint import export_network, make_toy_checkpoint, save_checkpoint
from rsexport.images import CENTER_CROP, ExportJob, export_images
from rsexport.oracle import oracle_forward_dir, oracle_rdm


def repscope(*args):
    return subprocess.run(
        [sys.executable, "-m", "repscope.cli", *map(str, args)],
        capture_output=True,
        text=True,
    )


def read_index(traces_dir):
    rows = []
    with open(os.path.join(traces_dir, "trace_index.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            rows.append(line.rstrip("\n").split("\t"))
    return rows


def test_s1_cross_oracle_forward(tmp_path):
    ckpt = tmp_path / "toy.npz"
    make_toy_checkpoint(ckpt)
    taps = ["relu1", "relu2", "relu3", "relu4", "relu5", "gpool"]
    desc = export_network(ckpt, taps, tmp_path / "net")

    rng = np.random.default_rng(2024)
    data = tmp_path / "data"
    (data / "tensors").mkdir(parents=True)
    lines = []
    for k in range(10):
        image = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
        rstf.write(image, data / "tensors" / f"img{k:02d}.rstf")
        lines.append(f"img{k:02d}\t0\tstimulus\ttensors/img{k:02d}.rstf\ttrain")
    manifest = data / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")

    engine_out = tmp_path / "engine_traces"
    proc = repscope("forward", "--net", desc, "--manifest", manifest, "--out", engine_out)
    assert proc.returncode == 0, proc.stderr

    oracle_out = tmp_path / "oracle_traces"
    oracle_forward_dir(desc, manifest, oracle_out)

    rows = read_index(engine_out)
    assert len(rows) == 10 * len(taps)
    worst = 0.0
    for image_id, layer_name, rel in rows:
        got = rstf.read(os.path.join(engine_out, rel))
        want = rstf.read(os.path.join(oracle_out, rel))
        assert got.shape == want.shape
        diff = float(np.abs(got.astype(np.float64) - want.astype(np.float64)).max())
        worst = max(worst, diff)
        assert diff < 1e-4, (image_id, layer_name, diff)
    print(f"\nS1 PASS — engine vs torch oracle on 10 images x {len(taps)} taps, max diff {worst:.2e}")


def test_s2_export_round_trip(tmp_path):
    # solid-color sources -> exact constant tensors
    src = tmp_path / "src"
    for class_name, rgb in (("crimson", (255, 0, 0)), ("navy", (0, 0, 255))):
        d = src / class_name
        d.mkdir(parents=True)
        for k in range(3):
            Image.new("RGB", (64, 64), rgb).save(d / f"s{k}.png")
    out = tmp_path / "export"
    manifest = export_images(ExportJob(str(src), (3, 32, 32), CENTER_CROP, str(out)))
    red = rstf.read(out / "tensors" / "crimson__s0.rstf")
    assert (red[0] == 1.0).all() and (red[1] == 0.0).all() and (red[2] == 0.0).all()

    # exported checkpoint + exported images load and run with zero errors
    rng = np.random.default_rng(77)
    arch = {
        "input_dims": [3, 32, 32],
        "layers": [
            {"name": "conv1", "type": "conv", "stride": 1, "pad": 1},
            {"name": "relu1", "type": "relu"},
            {"name": "conv2", "type": "conv", "stride": 2, "pad": 1},
            {"name": "relu2", "type": "relu"},
        ],
    }
    params = {
        "conv1.weight": (rng.standard_normal((4, 3, 3, 3)) * 0.4).astype(np.float32),
        "conv1.bias": np.zeros(4, dtype=np.float32),
        "conv2.weight": (rng.standard_normal((5, 4, 3, 3)) * 0.4).astype(np.float32),
        "conv2.bias": np.zeros(5, dtype=np.float32),
    }
    ckpt = tmp_path / "net.npz"
    save_checkpoint(arch, params, ckpt)
    desc = export_network(ckpt, ["relu1", "relu2"], tmp_path / "net")

    traces = tmp_path / "traces"
    proc = repscope("forward", "--net", desc, "--manifest", manifest, "--out", traces)
    assert proc.returncode == 0, proc.stderr
    patterns = tmp_path / "patterns"
    proc = repscope("patterns", "--traces", traces, "--manifest", manifest, "--out", patterns)
    assert proc.returncode == 0, proc.stderr
    assert (patterns / "patterns_relu2.rstf").exists()
    print("\nS2 PASS — exported images/net accepted by the toolkit with zero validation errors")


def test_oracle_rdm_vs_toolkit_rdm(tmp_path):
    # 20 seeded patterns through both RDM paths, compared as files
    rng = np.random.default_rng(31)
    matrix = rng.uniform(0, 1, (20, 24)).astype(np.float32)

    patterns_dir = tmp_path / "patterns"
    patterns_dir.mkdir()
    rstf.write(matrix, patterns_dir / "patterns_l.rstf")
    with open(patterns_dir / "patterns_l.rows.tsv", "w", encoding="utf-8") as fh:
        fh.write("row\timage_id\tclass_id\n")
        for i in range(20):
            fh.write(f"{i}\timg{i:02d}\t0\n")
    with open(patterns_dir / "thresholds.tsv", "w", encoding="utf-8") as fh:
        fh.write("class_id\tlayer_name\tt\n0\tl\t0.0\n")

    out = tmp_path / "rdm_l.rstf"
    proc = repscope("rdm", "build", "--patterns", patterns_dir, "--layer", "l", "--out", out)
    assert proc.returncode == 0, proc.stderr
    got = rstf.read(out)
    want = oracle_rdm(matrix)
    # the two float64 computations agree at machine precision; through the
    # f32 file channel that shows up as bit-identity after rounding
    assert np.array_equal(got, want.astype(np.float32))
    assert np.abs(got.astype(np.float64) - want).max() < 1.2e-7  # one f32 ulp at 2.0
    print("\nS-extra PASS — toolkit RDM bit-matches the numpy corrcoef oracle at f32")


def test_oracle_gap_agrees_with_engine(tmp_path):
    ckpt = tmp_path / "toy.npz"
    make_toy_checkpoint(ckpt)
    desc = export_network(ckpt, ["gpool"], tmp_path / "net")
    rng = np.random.default_rng(8)
    data = tmp_path / "data"
    (data / "tensors").mkdir(parents=True)
    image = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
    rstf.write(image, data / "tensors" / "img.rstf")
    (data / "manifest.tsv").write_text("img\t0\tc\ttensors/img.rstf\ttrain\n", encoding="utf-8")

    engine_out = tmp_path / "engine"
    proc = repscope("forward", "--net", desc, "--manifest", data / "manifest.tsv", "--out", engine_out)
    assert proc.returncode == 0, proc.stderr
    oracle_out = tmp_path / "oracle"
    oracle_forward_dir(desc, data / "manifest.tsv", oracle_out)
    got = rstf.read(engine_out / "img" / "gpool.rstf")
    want = rstf.read(oracle_out / "img" / "gpool.rstf")
    assert np.abs(got - want).max() < 1e-6
