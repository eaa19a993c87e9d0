import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsc.frames import Frame
from rsc.semantics import (
    FileOracle,
    InstanceLayout,
    SemanticMap,
    file_oracle,
    instances_in,
    map_diff,
    mask_ratio,
    proxy_oracle,
    read_layout,
    read_map,
    write_layout,
    write_map,
)

import helpers


class TestTypes:
    def test_map_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SemanticMap(np.full((4, 4), 1.5))
        with pytest.raises(ValueError):
            SemanticMap(np.full((4, 4), -0.1))
        with pytest.raises(ValueError):
            SemanticMap(np.zeros((0, 4)))

    def test_layout_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            InstanceLayout(np.full((4, 4), -1), 2)
        with pytest.raises(ValueError):
            InstanceLayout(np.full((4, 4), 3), 2)

    def test_dimensions(self):
        m = SemanticMap(np.zeros((6, 9)))
        assert (m.height, m.width) == (6, 9)


class TestMapMeasures:
    def test_map_diff_is_mean_abs(self):
        a = SemanticMap(np.zeros((4, 4)))
        b_vals = np.zeros((4, 4))
        b_vals[0, 0] = 0.8
        b = SemanticMap(b_vals)
        assert map_diff(a, b) == pytest.approx(0.8 / 16)

    def test_map_diff_region(self):
        a = SemanticMap(np.zeros((8, 8)))
        vals = np.zeros((8, 8))
        vals[:4, :4] = 0.5
        b = SemanticMap(vals)
        assert map_diff(a, b, region=(0, 0, 4, 4)) == pytest.approx(0.5)
        assert map_diff(a, b, region=(4, 4, 4, 4)) == 0.0

    def test_map_diff_shape_mismatch(self):
        with pytest.raises(ValueError):
            map_diff(SemanticMap(np.zeros((4, 4))), SemanticMap(np.zeros((4, 5))))

    def test_region_validation(self):
        m = SemanticMap(np.zeros((8, 8)))
        for region in ((0, 0, 0, 4), (0, 0, 9, 4), (-1, 0, 4, 4), (6, 6, 4, 4)):
            with pytest.raises(ValueError):
                mask_ratio(m, region=region)

    def test_mask_ratio_threshold_inclusive(self):
        vals = np.zeros((2, 2))
        vals[0, 0] = 0.5
        vals[0, 1] = 0.4999
        assert mask_ratio(SemanticMap(vals)) == 0.25

    def test_instances_in_counts_distinct_labels(self):
        labels = np.zeros((8, 8), dtype=np.int32)
        labels[0:2, 0:2] = 1
        labels[6:8, 6:8] = 2
        layout = InstanceLayout(labels, 2)
        assert instances_in(layout) == 2
        assert instances_in(layout, region=(0, 0, 4, 4)) == 1
        assert instances_in(layout, region=(2, 2, 4, 4)) == 0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31))
    def test_map_diff_pseudometric(self, seed):
        gen = np.random.default_rng(seed)
        a, b, c = (SemanticMap(gen.uniform(0, 1, size=(6, 6))) for _ in range(3))
        assert map_diff(a, a) == 0.0
        assert map_diff(a, b) == map_diff(b, a)
        assert map_diff(a, c) <= map_diff(a, b) + map_diff(b, c) + 1e-12


class TestProxyOracle:
    def test_flat_frame_gives_zero_map(self):
        smap, layout = proxy_oracle(Frame(helpers.flat_luma(64)))
        assert smap.values.max() == 0.0
        assert layout.instance_count == 0

    def test_map_dims_match_frame(self, textured_frame):
        smap, layout = proxy_oracle(textured_frame)
        assert (smap.height, smap.width) == (128, 128)
        assert smap.values.max() == 1.0
        assert layout.labels.shape == (128, 128)

    def test_deterministic(self, textured_frame):
        a, _ = proxy_oracle(textured_frame)
        b, _ = proxy_oracle(textured_frame)
        assert (a.values == b.values).all()

    def test_qp_argument_ignored(self, textured_frame):
        a, _ = proxy_oracle(textured_frame, qp=None)
        b, _ = proxy_oracle(textured_frame, qp=40)
        assert (a.values == b.values).all()

    def test_two_objects_two_instances(self, object_frame):
        smap, layout = proxy_oracle(object_frame)
        assert layout.instance_count == 2
        # labels appear in scanline discovery order: top-left object first
        first_rows = np.unique(layout.labels[:40])
        assert 1 in first_rows and 2 not in first_rows

    def test_importance_concentrates_on_objects(self, object_frame):
        smap, _ = proxy_oracle(object_frame)
        inside = smap.values[14:44, 12:48].mean()
        background = smap.values[64:, :64].mean()
        assert inside > 5 * background

    def test_tiny_speck_filtered_by_area(self):
        luma = helpers.flat_luma(64, value=60)
        luma[30:32, 30:32] = 250
        _, layout = proxy_oracle(Frame(luma))
        # the bright speck excites the map but covers well under 64 pixels
        assert layout.instance_count <= 1


class TestMapIO:
    def test_map_roundtrip_quantized(self, tmp_path, rng):
        vals = rng.uniform(0, 1, size=(16, 16))
        vals[0, 0], vals[0, 1] = 0.0, 1.0
        path = tmp_path / "m.pgm"
        write_map(path, SemanticMap(vals))
        back = read_map(path)
        assert np.abs(back.values - vals).max() <= 0.5 / 65535 + 1e-12

    def test_map_io_idempotent_after_quantization(self, tmp_path, rng):
        vals = rng.uniform(0, 1, size=(8, 8))
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_map(p1, SemanticMap(vals))
        write_map(p2, read_map(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_layout_roundtrip_exact(self, tmp_path):
        labels = np.zeros((12, 12), dtype=np.int32)
        labels[2:6, 2:6] = 1
        labels[8:11, 8:11] = 2
        path = tmp_path / "l.pgm"
        write_layout(path, InstanceLayout(labels, 2))
        back = read_layout(path)
        assert (back.labels == labels).all()
        assert back.instance_count == 2

    def test_layout_rejects_too_many_instances(self, tmp_path):
        with pytest.raises(ValueError):
            write_layout(tmp_path / "l.pgm", InstanceLayout(np.full((1, 300), 0), 256))

    def test_read_map_rejects_8bit(self, tmp_path, object_frame):
        _, layout = proxy_oracle(object_frame)
        path = tmp_path / "l.pgm"
        write_layout(path, layout)
        with pytest.raises(ValueError, match="16-bit"):
            read_map(path)


class TestFileOracle:
    @pytest.fixture()
    def stored(self, tmp_path, object_frame):
        smap, layout = proxy_oracle(object_frame)
        map_path = tmp_path / "map.pgm"
        layout_path = tmp_path / "layout.pgm"
        write_map(map_path, smap)
        write_layout(layout_path, layout)
        return map_path, layout_path, smap, layout

    def test_static_mode_serves_one_map(self, stored, object_frame):
        map_path, layout_path, smap, layout = stored
        oracle = file_oracle(map_path, layout_path)
        for qp in (None, 30, 51):
            got_map, got_layout = oracle(object_frame, qp=qp)
            assert np.abs(got_map.values - smap.values).max() < 1e-4
            assert (got_layout.labels == layout.labels).all()

    def test_static_mode_checks_dims(self, stored, textured_frame):
        map_path, layout_path, _, _ = stored
        oracle = file_oracle(map_path, layout_path)
        small = Frame(helpers.flat_luma(64))
        with pytest.raises(ValueError, match="64x64"):
            oracle(small)

    def test_per_qp_mode(self, tmp_path, object_frame):
        smap, layout = proxy_oracle(object_frame)
        d = tmp_path / "maps"
        d.mkdir()
        write_map(d / "orig.pgm", smap)
        shifted = SemanticMap(np.clip(smap.values * 0.5, 0, 1))
        write_map(d / "q30.pgm", shifted)
        write_layout(tmp_path / "layout.pgm", layout)
        oracle = file_oracle(d, tmp_path / "layout.pgm", mode="per-qp")
        base_map, _ = oracle(object_frame, qp=None)
        q30_map, _ = oracle(object_frame, qp=30)
        assert np.abs(base_map.values - smap.values).max() < 1e-4
        assert np.abs(q30_map.values - shifted.values).max() < 1e-4
        with pytest.raises(KeyError):
            oracle(object_frame, qp=31)

    def test_per_qp_requires_directory(self, tmp_path, stored):
        map_path, layout_path, _, _ = stored
        with pytest.raises(ValueError, match="directory"):
            FileOracle(map_path, layout_path, mode="per-qp")

    def test_per_qp_rejects_bad_filenames(self, tmp_path, stored):
        _, layout_path, smap, _ = stored
        d = tmp_path / "maps"
        d.mkdir()
        write_map(d / "qxx.pgm", smap)
        with pytest.raises(ValueError, match="q<QP>"):
            FileOracle(d, layout_path, mode="per-qp")

    def test_per_qp_rejects_empty_dir(self, tmp_path, stored):
        _, layout_path, _, _ = stored
        d = tmp_path / "maps"
        d.mkdir()
        with pytest.raises(ValueError, match="no maps"):
            FileOracle(d, layout_path, mode="per-qp")

    def test_unknown_mode(self, stored):
        map_path, layout_path, _, _ = stored
        with pytest.raises(ValueError, match="mode"):
            FileOracle(map_path, layout_path, mode="dynamic")
