import numpy as np
import pytest

from rsexport import ExportError, rstf

ONE_BY_ONE = bytes(
    [0x52, 0x53, 0x54, 0x46, 0x01, 0x01, 0x02,
     0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00,
     0x00, 0x00, 0x80, 0x3F]
)


def test_encodes_documented_bytes(tmp_path):
    path = tmp_path / "t.rstf"
    rstf.write(np.array([[1.0]], dtype=np.float32), path)
    assert path.read_bytes() == ONE_BY_ONE


def test_decodes_documented_bytes(tmp_path):
    path = tmp_path / "t.rstf"
    path.write_bytes(ONE_BY_ONE)
    t = rstf.read(path)
    assert t.shape == (1, 1) and t[0, 0] == 1.0


def test_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    t = rng.standard_normal((2, 5, 3)).astype(np.float32)
    path = tmp_path / "t.rstf"
    rstf.write(t, path)
    assert rstf.read(path).tobytes() == t.tobytes()


def test_rejects_garbage(tmp_path):
    path = tmp_path / "g.rstf"
    path.write_bytes(b"not a tensor")
    with pytest.raises(ExportError):
        rstf.read(path)
