import csv
import subprocess
import sys

import numpy as np
import pytest

import mapgen.cli as cli
from mapgen import pgmio

from rsc import semantics
from rsc.frames import read_frame

from conftest import StubDetector, TinyClassifier, box_mask


def run(argv, capsys):
    rc = cli.main(argv)
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def write_gray(path, size=32, seed=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(size, size), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    pgmio.write_pgm(path, pixels, maxval=255)
    return path


@pytest.fixture
def stub_detection(monkeypatch):
    """Route the detection tasks to a small fixed-output model."""
    model = StubDetector(
        [0.9, 0.7],
        np.stack([box_mask(32, 32, 2, 10, 2, 10),
                  box_mask(32, 32, 16, 30, 16, 30)]),
    )
    monkeypatch.setattr(cli, "load_instance_model", lambda weights=None: model)
    return model


class TestGenMap:
    def test_detection_writes_parsable_pair(self, tmp_path, capsys, stub_detection):
        image = write_gray(tmp_path / "img.pgm")
        map_path = tmp_path / "out" / "map.pgm"
        layout_path = tmp_path / "out" / "layout.pgm"
        rc, out, _ = run(["gen-map", "--image", str(image), "--task", "detection",
                          "--map", str(map_path), "--layout", str(layout_path)],
                         capsys)
        assert rc == 0
        assert "wrote" in out
        smap = semantics.read_map(map_path)
        layout = semantics.read_layout(layout_path)
        assert smap.values.shape == (32, 32)
        assert layout.instance_count == 2
        assert layout.labels[4, 4] == 1
        assert layout.labels[20, 20] == 2
        assert smap.values[4, 4] == 1.0 and smap.values[12, 12] == 0.0

    def test_segmentation_task_uses_same_route(self, tmp_path, capsys, stub_detection):
        image = write_gray(tmp_path / "img.pgm")
        rc, _, _ = run(["gen-map", "--image", str(image), "--task", "segmentation",
                        "--map", str(tmp_path / "m.pgm"),
                        "--layout", str(tmp_path / "l.pgm")], capsys)
        assert rc == 0
        assert semantics.read_layout(tmp_path / "l.pgm").instance_count == 2

    def test_classification_with_real_backbone(self, tmp_path, capsys, vgg_weights):
        image = write_gray(tmp_path / "img.pgm", size=48, seed=3)
        map_path = tmp_path / "map.pgm"
        layout_path = tmp_path / "layout.pgm"
        rc, _, _ = run(["gen-map", "--image", str(image), "--task", "classification",
                        "--map", str(map_path), "--layout", str(layout_path),
                        "--weights", str(vgg_weights)], capsys)
        assert rc == 0
        smap = semantics.read_map(map_path)
        assert smap.values.shape == (48, 48)
        assert 0.0 <= smap.values.min() and smap.values.max() <= 1.0
        # classification route has no instances
        assert semantics.read_layout(layout_path).instance_count == 0
        # the static oracle accepts the pair for a frame of matching size
        oracle = semantics.file_oracle(map_path, layout_path)
        frame = read_frame(image)
        got_map, got_layout = oracle(frame)
        assert got_map.values.shape == (48, 48)
        assert got_layout.instance_count == 0

    def test_missing_image_is_config_error(self, tmp_path, capsys):
        rc, _, err = run(["gen-map", "--image", str(tmp_path / "nope.pgm"),
                          "--task", "detection",
                          "--map", str(tmp_path / "m.pgm"),
                          "--layout", str(tmp_path / "l.pgm")], capsys)
        assert rc == 2
        assert "image not found" in err

    def test_unsupported_image_type(self, tmp_path, capsys, stub_detection):
        bad = tmp_path / "notes.txt"
        bad.write_text("not an image")
        rc, _, err = run(["gen-map", "--image", str(bad), "--task", "detection",
                          "--map", str(tmp_path / "m.pgm"),
                          "--layout", str(tmp_path / "l.pgm")], capsys)
        assert rc == 2
        assert "unsupported image type" in err

    def test_sixteen_bit_input_rejected(self, tmp_path, capsys, stub_detection):
        wide = tmp_path / "wide.pgm"
        pgmio.write_pgm(wide, np.zeros((8, 8), dtype=np.uint16), maxval=65535)
        rc, _, err = run(["gen-map", "--image", str(wide), "--task", "detection",
                          "--map", str(tmp_path / "m.pgm"),
                          "--layout", str(tmp_path / "l.pgm")], capsys)
        assert rc == 2
        assert "8-bit" in err

    def test_missing_weights_file(self, tmp_path, capsys):
        image = write_gray(tmp_path / "img.pgm")
        rc, _, err = run(["gen-map", "--image", str(image),
                          "--task", "classification",
                          "--map", str(tmp_path / "m.pgm"),
                          "--layout", str(tmp_path / "l.pgm"),
                          "--weights", str(tmp_path / "absent.pt")], capsys)
        assert rc == 2
        assert "weights file not found" in err

    def test_corrupt_weights_file(self, tmp_path, capsys):
        image = write_gray(tmp_path / "img.pgm")
        junk = tmp_path / "junk.pt"
        junk.write_bytes(b"\x00" * 64)
        rc, _, err = run(["gen-map", "--image", str(image),
                          "--task", "classification",
                          "--map", str(tmp_path / "m.pgm"),
                          "--layout", str(tmp_path / "l.pgm"),
                          "--weights", str(junk)], capsys)
        assert rc == 2
        assert "cannot load weights" in err

    def test_failed_pretrained_fetch(self, tmp_path, capsys, monkeypatch):
        import torchvision.models as tvm

        def refuse(*args, **kwargs):
            raise OSError("download blocked")

        monkeypatch.setattr(tvm, "vgg19", refuse)
        image = write_gray(tmp_path / "img.pgm")
        rc, _, err = run(["gen-map", "--image", str(image),
                          "--task", "classification",
                          "--map", str(tmp_path / "m.pgm"),
                          "--layout", str(tmp_path / "l.pgm")], capsys)
        assert rc == 2
        assert "pretrained" in err


class TestGenBatch:
    def test_static_batch_manifest(self, tmp_path, capsys, stub_detection):
        images = tmp_path / "images"
        write_gray(images / "b.pgm", seed=1)
        write_gray(images / "a.pgm", seed=2)
        out = tmp_path / "out"
        rc, _, _ = run(["gen-batch", "--images", str(images),
                        "--task", "detection", "--out", str(out)], capsys)
        assert rc == 0
        rows = list(csv.reader((out / "manifest.csv").open()))
        assert rows[0] == ["image", "map", "layout", "status"]
        assert [r[0] for r in rows[1:]] == ["a.pgm", "b.pgm"]
        for name, map_name, layout_name, status in rows[1:]:
            assert status == "ok"
            assert semantics.read_map(out / map_name).values.shape == (32, 32)
            assert semantics.read_layout(out / layout_name).instance_count == 2

    def test_empty_directory_gives_empty_manifest(self, tmp_path, capsys):
        images = tmp_path / "none"
        images.mkdir()
        out = tmp_path / "out"
        rc, _, _ = run(["gen-batch", "--images", str(images),
                        "--task", "detection", "--out", str(out)], capsys)
        assert rc == 0
        rows = list(csv.reader((out / "manifest.csv").open()))
        assert rows == [["image", "map", "layout", "status"]]

    def test_partial_failure_is_recorded(self, tmp_path, capsys, stub_detection):
        images = tmp_path / "images"
        write_gray(images / "good.pgm")
        (images / "broken.png").write_bytes(b"not a png at all")
        out = tmp_path / "out"
        rc, _, _ = run(["gen-batch", "--images", str(images),
                        "--task", "detection", "--out", str(out)], capsys)
        assert rc == 3
        rows = {r[0]: r for r in list(csv.reader((out / "manifest.csv").open()))[1:]}
        assert rows["good.pgm"][3] == "ok"
        assert rows["broken.png"][3].startswith("error:")
        assert rows["broken.png"][1] == ""

    def test_missing_images_dir(self, tmp_path, capsys):
        rc, _, err = run(["gen-batch", "--images", str(tmp_path / "absent"),
                          "--task", "detection", "--out", str(tmp_path / "o")],
                         capsys)
        assert rc == 2
        assert "image directory not found" in err

    def test_per_qp_layout(self, tmp_path, capsys, stub_detection):
        images = tmp_path / "images"
        write_gray(images / "scene.pgm", seed=4)
        for qp in (30, 40):
            write_gray(tmp_path / f"q{qp}" / "scene.pgm", seed=10 + qp)
        out = tmp_path / "out"
        rc, _, _ = run(["gen-batch", "--images", str(images),
                        "--task", "detection", "--out", str(out),
                        "--recon-dirs", str(tmp_path / "q30"),
                        str(tmp_path / "q40")], capsys)
        assert rc == 0
        item = out / "scene"
        assert sorted(p.name for p in item.iterdir()) == [
            "layout.pgm", "orig.pgm", "q30.pgm", "q40.pgm"]
        oracle = semantics.file_oracle(item, item / "layout.pgm", mode="per-qp")
        frame = read_frame(images / "scene.pgm")
        for qp in (None, 30, 40):
            smap, layout = oracle(frame, qp=qp)
            assert smap.values.shape == (32, 32)
            assert layout.instance_count == 2
        rows = list(csv.reader((out / "manifest.csv").open()))
        assert rows[1] == ["scene.pgm", "scene", "scene/layout.pgm", "ok"]

    def test_per_qp_missing_recon_fails_that_image(self, tmp_path, capsys,
                                                   stub_detection):
        images = tmp_path / "images"
        write_gray(images / "one.pgm", seed=5)
        write_gray(images / "two.pgm", seed=6)
        write_gray(tmp_path / "q30" / "one.pgm", seed=7)
        out = tmp_path / "out"
        rc, _, _ = run(["gen-batch", "--images", str(images),
                        "--task", "detection", "--out", str(out),
                        "--recon-dirs", str(tmp_path / "q30")], capsys)
        assert rc == 3
        rows = {r[0]: r for r in list(csv.reader((out / "manifest.csv").open()))[1:]}
        assert rows["one.pgm"][3] == "ok"
        assert rows["two.pgm"][3].startswith("error: missing reconstruction")
        assert not (out / "two").exists()

    def test_recon_dir_name_must_encode_qp(self, tmp_path, capsys):
        images = tmp_path / "images"
        write_gray(images / "img.pgm")
        bad = tmp_path / "recon30"
        bad.mkdir()
        rc, _, err = run(["gen-batch", "--images", str(images),
                          "--task", "detection", "--out", str(tmp_path / "o"),
                          "--recon-dirs", str(bad)], capsys)
        assert rc == 2
        assert "q<QP>" in err

    def test_rerun_is_byte_identical(self, tmp_path, capsys, stub_detection):
        images = tmp_path / "images"
        write_gray(images / "x.pgm", seed=8)
        outs = []
        for name in ("out1", "out2"):
            out = tmp_path / name
            rc, _, _ = run(["gen-batch", "--images", str(images),
                            "--task", "detection", "--out", str(out)], capsys)
            assert rc == 0
            outs.append(out)
        for path in sorted(outs[0].rglob("*")):
            twin = outs[1] / path.relative_to(outs[0])
            assert twin.read_bytes() == path.read_bytes()


class TestModuleEntry:
    def test_missing_image_via_module(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mapgen", "gen-map",
             "--image", str(tmp_path / "gone.pgm"), "--task", "detection",
             "--map", str(tmp_path / "m.pgm"),
             "--layout", str(tmp_path / "l.pgm")],
            capture_output=True, text=True)
        assert proc.returncode == 2
        assert "image not found" in proc.stderr

    def test_unknown_task_via_module(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mapgen", "gen-map",
             "--image", "x.pgm", "--task", "captioning",
             "--map", "m.pgm", "--layout", "l.pgm"],
            capture_output=True, text=True)
        assert proc.returncode == 2
        assert "invalid choice" in proc.stderr

    def test_no_subcommand_via_module(self):
        proc = subprocess.run([sys.executable, "-m", "mapgen"],
                              capture_output=True, text=True)
        assert proc.returncode == 2
