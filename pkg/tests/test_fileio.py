import numpy as np
import pytest

from mirrormamba import fileio
from mirrormamba.fileio import FormatError


def test_tensor_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((3,), (2, 4), (1, 3, 8, 8)):
        arr = rng.standard_normal(shape).astype(np.float32)
        p = tmp_path / "t.mmtf"
        fileio.write_tensor(p, arr)
        back = fileio.read_tensor(p)
        np.testing.assert_array_equal(back, arr)
        assert back.dtype == np.float32


def test_tensor_write_deterministic(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    fileio.write_tensor(tmp_path / "a.mmtf", arr)
    fileio.write_tensor(tmp_path / "b.mmtf", arr)
    assert (tmp_path / "a.mmtf").read_bytes() == (tmp_path / "b.mmtf").read_bytes()


def test_tensor_bad_magic(tmp_path):
    p = tmp_path / "bad.mmtf"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        fileio.read_tensor(p)


def test_tensor_truncated(tmp_path):
    p = tmp_path / "t.mmtf"
    fileio.write_tensor(p, np.ones((4, 4), dtype=np.float32))
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        fileio.read_tensor(p)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {"a.w": rng.standard_normal((3, 3)).astype(np.float32),
               "b.bias": rng.standard_normal(3).astype(np.float32)}
    meta = {"step": 7, "note": "hello"}
    p = tmp_path / "c.mmck"
    fileio.write_checkpoint(p, tensors, meta)
    back, back_meta = fileio.read_checkpoint(p)
    assert back_meta["step"] == 7 and back_meta["note"] == "hello"
    assert set(back) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_save_load_save_identical(tmp_path):
    rng = np.random.default_rng(2)
    tensors = {"x": rng.standard_normal((5,)).astype(np.float32)}
    p1, p2 = tmp_path / "1.mmck", tmp_path / "2.mmck"
    fileio.write_checkpoint(p1, tensors, {"v": 1})
    loaded, meta = fileio.read_checkpoint(p1)
    fileio.write_checkpoint(p2, loaded, meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_truncation(tmp_path):
    p = tmp_path / "c.mmck"
    fileio.write_checkpoint(p, {"x": np.ones(4, dtype=np.float32)}, {})
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(FormatError):
        fileio.read_checkpoint(p)


def test_pgm_roundtrip(tmp_path):
    mask = (np.random.default_rng(3).random((6, 9)) > 0.5).astype(np.float32)
    p = tmp_path / "m.pgm"
    fileio.write_pgm(p, mask)
    back = fileio.read_pgm(p)
    np.testing.assert_array_equal(back, mask)
    assert back.dtype == np.float32


def test_pgm_gray_rounding(tmp_path):
    vals = np.linspace(0, 1, 12).reshape(3, 4)
    p = tmp_path / "g.pgm"
    fileio.write_pgm_gray(p, vals)
    blob = p.read_bytes()
    header_end = blob.index(b"255\n") + 4
    data = np.frombuffer(blob[header_end:], dtype=np.uint8).reshape(3, 4)
    np.testing.assert_array_equal(data, np.rint(vals * 255).astype(np.uint8))


def test_pgm_gray_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        fileio.write_pgm_gray(tmp_path / "g.pgm", np.array([[1.5]]))
