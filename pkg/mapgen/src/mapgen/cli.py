"""Command-line surface: single images and batches.

``gen-map`` produces one map/layout pair. ``gen-batch`` walks an image
directory and writes a ``manifest.csv`` (columns image,map,layout,status)
next to its outputs; with ``--recon-dirs`` it switches to per-QP layout,
mapping every reconstruction directory (named ``q<QP>``) of every image
into ``<out>/<stem>/q<QP>.pgm`` beside ``orig.pgm`` and ``layout.pgm``.

Exit codes: 0 success, 2 input or model-loading error, 3 batch finished
with per-item failures (recorded in the manifest).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import pgmio
from .gradcam import activation_map
from .instances import instance_union
from .models import ModelLoadError, load_classifier, load_instance_model

TASKS = ("classification", "detection", "segmentation")
IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def load_image(path: Path) -> np.ndarray:
    """Image as (H, W, 3) float64 in [0, 1]; grayscale is replicated."""
    if not path.is_file():
        raise CliError(2, f"image not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        try:
            gray = pgmio.read_pgm(path)
        except ValueError as exc:
            raise CliError(2, str(exc))
        if gray.dtype != np.uint8:
            raise CliError(2, f"{path}: expected an 8-bit image")
        rgb = np.stack([gray, gray, gray], axis=2)
        return rgb.astype(np.float64) / 255.0
    if suffix in IMAGE_SUFFIXES:
        from PIL import Image

        try:
            with Image.open(path) as img:
                rgb = np.asarray(img.convert("RGB"))
        except Exception as exc:
            raise CliError(2, f"{path}: cannot decode image: {exc}")
        return rgb.astype(np.float64) / 255.0
    raise CliError(2, f"{path}: unsupported image type {suffix!r}")


def _load_model(task: str, weights: str | None):
    try:
        if task == "classification":
            return load_classifier(weights)
        return load_instance_model(weights)
    except ModelLoadError as exc:
        raise CliError(2, str(exc))


def generate(model, task: str, image: np.ndarray):
    """Map values plus layout labels for one image."""
    if task == "classification":
        values = activation_map(model, image)
        labels = np.zeros(values.shape, dtype=np.int32)
    else:
        values, labels, _ = instance_union(model, image)
    return values, labels


def cmd_gen_map(args) -> int:
    if args.task not in TASKS:
        raise CliError(2, f"task must be one of {TASKS}, got {args.task!r}")
    image = load_image(Path(args.image))
    model = _load_model(args.task, args.weights)
    values, labels = generate(model, args.task, image)
    map_path, layout_path = Path(args.map), Path(args.layout)
    map_path.parent.mkdir(parents=True, exist_ok=True)
    layout_path.parent.mkdir(parents=True, exist_ok=True)
    pgmio.write_map(map_path, values)
    pgmio.write_layout(layout_path, labels)
    print(f"wrote {map_path} and {layout_path}")
    return 0


def _list_images(images_dir: Path) -> list[Path]:
    if not images_dir.is_dir():
        raise CliError(2, f"image directory not found: {images_dir}")
    return sorted(p for p in images_dir.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES)


def _check_recon_dirs(recon_dirs: list[str]) -> list[tuple[int, Path]]:
    out = []
    for entry in recon_dirs:
        path = Path(entry)
        if not path.is_dir():
            raise CliError(2, f"reconstruction directory not found: {path}")
        name = path.name
        if not (name.startswith("q") and name[1:].isdigit()):
            raise CliError(2, f"{path}: reconstruction dirs must be named q<QP>")
        out.append((int(name[1:]), path))
    return sorted(out)


def _batch_static(model, task: str, images: list[Path], out_dir: Path):
    rows = []
    for img_path in images:
        map_name = f"{img_path.stem}_map.pgm"
        layout_name = f"{img_path.stem}_layout.pgm"
        try:
            values, labels = generate(model, task, load_image(img_path))
            pgmio.write_map(out_dir / map_name, values)
            pgmio.write_layout(out_dir / layout_name, labels)
            rows.append((img_path.name, map_name, layout_name, "ok"))
        except (CliError, ValueError, RuntimeError) as exc:
            rows.append((img_path.name, "", "", f"error: {exc}"))
    return rows


def _batch_per_qp(model, task: str, images: list[Path], out_dir: Path,
                  recon_dirs: list[tuple[int, Path]]):
    rows = []
    for img_path in images:
        stem = img_path.stem
        item_dir = out_dir / stem
        try:
            recons = []
            for qp, rdir in recon_dirs:
                recon_path = rdir / f"{stem}.pgm"
                if not recon_path.is_file():
                    raise CliError(3, f"missing reconstruction {recon_path}")
                recons.append((qp, recon_path))
            item_dir.mkdir(parents=True, exist_ok=True)
            values, labels = generate(model, task, load_image(img_path))
            pgmio.write_map(item_dir / "orig.pgm", values)
            pgmio.write_layout(item_dir / "layout.pgm", labels)
            for qp, recon_path in recons:
                values, _ = generate(model, task, load_image(recon_path))
                pgmio.write_map(item_dir / f"q{qp}.pgm", values)
            rows.append((img_path.name, stem, f"{stem}/layout.pgm", "ok"))
        except (CliError, ValueError, RuntimeError) as exc:
            rows.append((img_path.name, "", "", f"error: {exc}"))
    return rows


def cmd_gen_batch(args) -> int:
    if args.task not in TASKS:
        raise CliError(2, f"task must be one of {TASKS}, got {args.task!r}")
    images = _list_images(Path(args.images))
    recon_dirs = _check_recon_dirs(args.recon_dirs) if args.recon_dirs else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    if images:
        model = _load_model(args.task, args.weights)
        if recon_dirs is None:
            rows = _batch_static(model, args.task, images, out_dir)
        else:
            rows = _batch_per_qp(model, args.task, images, out_dir, recon_dirs)

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("image", "map", "layout", "status"))
        writer.writerows(rows)
    failed = sum(1 for row in rows if row[3] != "ok")
    print(f"wrote {manifest} ({len(rows)} images, {failed} failed)")
    return 3 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapgen",
        description="Semantic importance maps from pretrained vision models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    one = sub.add_parser("gen-map", help="map one image")
    one.add_argument("--image", required=True)
    one.add_argument("--task", required=True, choices=TASKS)
    one.add_argument("--map", required=True, help="output map path")
    one.add_argument("--layout", required=True, help="output layout path")
    one.add_argument("--weights", default=None, help="local state-dict file")
    one.set_defaults(func=cmd_gen_map)

    batch = sub.add_parser("gen-batch", help="map a directory of images")
    batch.add_argument("--images", required=True)
    batch.add_argument("--task", required=True, choices=TASKS)
    batch.add_argument("--out", required=True)
    batch.add_argument("--weights", default=None, help="local state-dict file")
    batch.add_argument("--recon-dirs", nargs="+", default=None,
                       help="per-QP mode: reconstruction dirs named q<QP>")
    batch.set_defaults(func=cmd_gen_batch)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - report, exit nonzero, no traceback
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
