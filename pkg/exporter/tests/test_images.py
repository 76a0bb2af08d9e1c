import numpy as np
import pytest
from PIL import Image

from rsexport import ExportError, rstf
from rsexport.images import CENTER_CROP, RESIZE, ExportJob, export_images


def make_source(tmp_path, entries):
    """entries: (class_name, filename, rgb, size)."""
    src = tmp_path / "src"
    for class_name, fname, rgb, size in entries:
        d = src / class_name
        d.mkdir(parents=True, exist_ok=True)
        Image.new("RGB", size, rgb).save(d / fname)
    return src


def test_solid_red_center_crop(tmp_path):
    src = make_source(tmp_path, [("airplane", "red.png", (255, 0, 0), (256, 256))])
    job = ExportJob(str(src), (3, 227, 227), CENTER_CROP, str(tmp_path / "out"))
    manifest = export_images(job)
    t = rstf.read(tmp_path / "out" / "tensors" / "airplane__red.rstf")
    assert t.shape == (3, 227, 227)
    assert (t[0] == 1.0).all()
    assert (t[1] == 0.0).all()
    assert (t[2] == 0.0).all()
    lines = [l for l in open(manifest, encoding="utf-8") if not l.startswith("#")]
    assert lines[0].rstrip("\n") == "airplane__red\t0\tairplane\ttensors/airplane__red.rstf\ttrain"


def test_rerun_is_byte_identical(tmp_path):
    src = make_source(
        tmp_path,
        [
            ("b_class", "x.png", (10, 200, 30), (64, 48)),
            ("a_class", "y.png", (0, 0, 255), (64, 48)),
        ],
    )
    job1 = ExportJob(str(src), (3, 32, 32), RESIZE, str(tmp_path / "o1"))
    job2 = ExportJob(str(src), (3, 32, 32), RESIZE, str(tmp_path / "o2"))
    m1 = export_images(job1)
    m2 = export_images(job2)
    assert open(m1, "rb").read() == open(m2, "rb").read()
    for rel in ("tensors/a_class__y.rstf", "tensors/b_class__x.rstf"):
        assert (tmp_path / "o1" / rel).read_bytes() == (tmp_path / "o2" / rel).read_bytes()


def test_class_ids_sorted_and_contiguous(tmp_path):
    src = make_source(
        tmp_path,
        [
            ("zebra", "a.png", (1, 2, 3), (16, 16)),
            ("apple", "b.png", (4, 5, 6), (16, 16)),
            ("mango", "c.png", (7, 8, 9), (16, 16)),
        ],
    )
    manifest = export_images(ExportJob(str(src), (3, 8, 8), RESIZE, str(tmp_path / "out")))
    rows = [l.split("\t") for l in open(manifest, encoding="utf-8") if not l.startswith("#")]
    assert [(r[1], r[2]) for r in rows] == [("0", "apple"), ("1", "mango"), ("2", "zebra")]


def test_undecodable_skipped_and_logged(tmp_path):
    src = make_source(tmp_path, [("c", "ok.png", (9, 9, 9), (32, 32))])
    (src / "c" / "broken.png").write_bytes(b"not an image at all")
    out = tmp_path / "out"
    manifest = export_images(ExportJob(str(src), (3, 16, 16), RESIZE, str(out)))
    rows = [l for l in open(manifest, encoding="utf-8") if not l.startswith("#")]
    assert len(rows) == 1
    excluded = (out / "excluded.tsv").read_text(encoding="utf-8").splitlines()
    assert len(excluded) == 2
    assert excluded[1].startswith("c/broken.png\t")


def test_center_crop_too_small_is_skipped(tmp_path):
    src = make_source(tmp_path, [("c", "small.png", (1, 1, 1), (16, 16))])
    out = tmp_path / "out"
    export_images(ExportJob(str(src), (3, 64, 64), CENTER_CROP, str(out)))
    excluded = (out / "excluded.tsv").read_text(encoding="utf-8").splitlines()
    assert len(excluded) == 2


def test_grayscale_target(tmp_path):
    src = make_source(tmp_path, [("c", "g.png", (100, 100, 100), (20, 20))])
    out = tmp_path / "out"
    export_images(ExportJob(str(src), (1, 10, 10), RESIZE, str(out)))
    t = rstf.read(out / "tensors" / "c__g.rstf")
    assert t.shape == (1, 10, 10)
    np.testing.assert_allclose(t, 100.0 / 255.0, atol=1e-6)


def test_bad_job_config():
    with pytest.raises(ExportError):
        ExportJob("x", (2, 8, 8), RESIZE, "y")
    with pytest.raises(ExportError):
        ExportJob("x", (3, 8, 8), "stretch", "y")
