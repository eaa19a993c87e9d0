import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsc.frames import (
    Frame,
    cu_grid,
    grid_shape,
    read_frame,
    read_pgm,
    write_frame,
    write_pgm,
)


class TestFrame:
    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            Frame(np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            Frame(np.zeros((0, 8), dtype=np.uint8))

    def test_rejects_out_of_range_samples(self):
        with pytest.raises(ValueError):
            Frame(np.full((8, 8), 300, dtype=np.int32))
        with pytest.raises(ValueError):
            Frame(np.full((8, 8), -1, dtype=np.int32))

    def test_coerces_integer_input(self):
        f = Frame(np.full((8, 8), 200, dtype=np.int64))
        assert f.luma.dtype == np.uint8

    def test_ctu_size_must_be_multiple_of_8(self):
        for bad in (0, 4, 12, -8):
            with pytest.raises(ValueError):
                Frame(np.zeros((64, 64), dtype=np.uint8), ctu_size=bad)

    def test_cu_rects_cover_frame_exactly(self):
        f = Frame(np.zeros((100, 130), dtype=np.uint8), ctu_size=64)
        rects = f.cu_rects()
        assert len(rects) == f.cu_count == 6
        covered = np.zeros((100, 130), dtype=np.int32)
        for x, y, w, h in rects:
            covered[y : y + h, x : x + w] += 1
        assert (covered == 1).all()

    def test_cu_rects_raster_order(self):
        f = Frame(np.zeros((128, 192), dtype=np.uint8))
        rects = f.cu_rects()
        assert [r[:2] for r in rects] == [
            (0, 0), (64, 0), (128, 0), (0, 64), (64, 64), (128, 64)
        ]

    def test_grid_shape_matches_rects(self):
        rows, cols = grid_shape(130, 100, 64)
        assert (rows, cols) == (2, 3)
        assert rows * cols == len(cu_grid(130, 100, 64))


class TestPgmIO:
    def test_roundtrip_8bit(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(37, 53)).astype(np.uint8)
        path = tmp_path / "x.pgm"
        write_pgm(path, arr)
        back = read_pgm(path)
        assert back.dtype == np.uint8
        assert (back == arr).all()

    def test_roundtrip_16bit(self, tmp_path, rng):
        arr = rng.integers(0, 65536, size=(9, 11)).astype(np.uint16)
        path = tmp_path / "x.pgm"
        write_pgm(path, arr, maxval=65535)
        back = read_pgm(path)
        assert back.dtype == np.uint16
        assert (back == arr).all()

    def test_write_is_byte_stable(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(16, 16)).astype(np.uint8)
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_pgm(a, arr)
        write_pgm(b, arr)
        assert a.read_bytes() == b.read_bytes()

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04")
        arr = read_pgm(path)
        assert arr.tolist() == [[1, 2], [3, 4]]

    def test_rejects_non_p5(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P2\n2 2\n255\n")
        with pytest.raises(ValueError, match="P5"):
            read_pgm(path)

    def test_rejects_truncated_raster(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(ValueError, match="truncated"):
            read_pgm(path)

    def test_rejects_unsupported_maxval(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n1 1\n1023\n\x00\x00")
        with pytest.raises(ValueError, match="maxval"):
            read_pgm(path)
        with pytest.raises(ValueError, match="maxval"):
            write_pgm(path, np.zeros((1, 1)), maxval=1023)

    def test_read_frame_rejects_16bit(self, tmp_path):
        path = tmp_path / "x.pgm"
        write_pgm(path, np.zeros((8, 8), dtype=np.uint16), maxval=65535)
        with pytest.raises(ValueError, match="8-bit"):
            read_frame(path)

    def test_frame_roundtrip(self, tmp_path, textured_frame):
        path = tmp_path / "f.pgm"
        write_frame(path, textured_frame)
        back = read_frame(path)
        assert (back.luma == textured_frame.luma).all()

    @settings(max_examples=25, deadline=None)
    @given(
        w=st.integers(min_value=1, max_value=40),
        h=st.integers(min_value=1, max_value=40),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_roundtrip_property(self, w, h, seed):
        arr = np.random.default_rng(seed).integers(0, 256, size=(h, w)).astype(np.uint8)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "p.pgm"
            write_pgm(path, arr)
            assert (read_pgm(path) == arr).all()
