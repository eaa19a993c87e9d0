"""Command-line surface for the coding pipeline.

Four subcommands cover the workflow end to end: ``build-dataset`` sweeps
the bundled frames through the codec and tabulates rate and map drift,
``train`` fits the per-CU QP policy against a cache, ``encode`` applies a
trained policy (or a fixed QP, or a handcrafted mapping) to one frame, and
``eval`` produces rate-distortion curves, BD summaries, the alpha sweep,
and the drift-vs-fidelity correlation samples.

Configuration is file plus flags: a flat ``key=value`` file (``#`` starts
a comment) supplies defaults, and command-line flags override it. Unknown
keys are rejected rather than ignored so a typo cannot silently drop a
hyperparameter.

Exit codes: 0 success, 2 input or configuration error, 3 insufficient
data, 1 internal error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import agent as agent_mod
from . import dataset as dataset_mod
from .agent import TrainConfig
from .baselines import CURVE_KINDS, MappingCurve, handcrafted_qpmap
from .codec import encode_frame_uniform, encode_frame_with_qpmap, frame_bpp
from .dataset import CacheParseError, load_cache, save_cache
from .env import EpisodeConfig, make_env
from .evaluation import (
    EvaluationError,
    RdCurve,
    bd_rate,
    correlation_protocol,
    fidelity_proxy,
    mean_stable,
    pearson_r,
    sweep_points,
    write_correlation_csv,
    write_curve_csv,
    write_sweep_csv,
)
from .frames import Frame, read_frame, write_frame
from .semantics import file_oracle, proxy_oracle

ANCHOR_QPS = (22, 32, 42, 51)
BASELINE_QP_FLOORS = (22, 32, 42, 51)


class CliError(Exception):
    """Carries the process exit code alongside the message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Merged view of config-file values and command-line flags."""

    seed: int = 0
    frames: str | None = None
    maps: str | None = None
    cache: str | None = None
    model: str | None = None
    out: str | None = None
    oracle: str = "proxy"
    alpha: float = 1.0
    uniform_qp: int | None = None
    baseline: str | None = None
    global_branch: bool = True
    # training hyperparameters, passed through to TrainConfig
    learning_rate: float | None = None
    gamma: float | None = None
    batch_size: int | None = None
    target_sync_every: int | None = None
    epsilon_start: float | None = None
    epsilon_end: float | None = None
    epsilon_decay_steps: int | None = None
    buffer_capacity: int | None = None
    total_steps: int | None = None

    def train_config(self) -> TrainConfig:
        base = TrainConfig(seed=self.seed)
        overrides = {}
        for name in ("learning_rate", "gamma", "batch_size", "target_sync_every",
                     "epsilon_start", "epsilon_end", "epsilon_decay_steps",
                     "buffer_capacity", "total_steps"):
            value = getattr(self, name)
            if value is not None:
                overrides[name] = value
        return replace(base, **overrides)


_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False,
               "1": True, "0": False}


def _parse_value(key: str, raw: str, kind) -> object:
    try:
        if kind is bool:
            word = raw.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[word]
        return kind(raw)
    except ValueError as exc:
        raise CliError(2, f"config key {key!r}: {exc}")


def read_config_file(path) -> dict:
    """Parse a flat key=value file into a dict of typed values."""
    field_types = {}
    for f in fields(RunConfig):
        base = f.type.replace(" | None", "") if isinstance(f.type, str) else f.type
        field_types[f.name] = {"int": int, "float": float, "str": str,
                               "bool": bool}.get(base, str)
    values: dict = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(2, f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        raw = raw.strip()
        if key not in field_types:
            raise CliError(2, f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw, field_types[key])
    return values


def merge_config(args: argparse.Namespace) -> RunConfig:
    """Config-file values first, then explicit flags on top."""
    values: dict = {}
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise CliError(2, f"config file not found: {cfg_path}")
        values.update(read_config_file(cfg_path))
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    if getattr(args, "no_global_branch", False):
        values["global_branch"] = False
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise CliError(2, str(exc))
    if config.oracle not in ("proxy", "files"):
        raise CliError(2, f"oracle must be 'proxy' or 'files', got {config.oracle!r}")
    if config.baseline is not None and config.baseline not in CURVE_KINDS:
        raise CliError(2, f"baseline must be one of {CURVE_KINDS}, got {config.baseline!r}")
    if config.uniform_qp is not None and not 0 <= config.uniform_qp <= 51:
        raise CliError(2, f"uniform-qp must lie in [0, 51], got {config.uniform_qp}")
    return config


# ---------------------------------------------------------------------------
# shared plumbing


def _require_dir(path_str: str | None, what: str) -> Path:
    if not path_str:
        raise CliError(2, f"missing required path: {what}")
    path = Path(path_str)
    if not path.is_dir():
        raise CliError(2, f"{what} directory not found: {path}")
    return path


def _require_file(path_str: str | None, what: str) -> Path:
    if not path_str:
        raise CliError(2, f"missing required path: {what}")
    path = Path(path_str)
    if not path.is_file():
        raise CliError(2, f"{what} not found: {path}")
    return path


def _out_dir(config: RunConfig) -> Path:
    if not config.out:
        raise CliError(2, "missing required path: --out")
    path = Path(config.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _list_frames(frames_dir: Path) -> list[tuple[str, Path]]:
    entries = sorted(frames_dir.glob("*.pgm"))
    if not entries:
        raise CliError(2, f"no .pgm frames in {frames_dir}")
    return [(entry.stem, entry) for entry in entries]


def _load_frame(path: Path) -> Frame:
    try:
        return read_frame(path)
    except (ValueError, OSError) as exc:
        raise CliError(2, f"{path}: {exc}")


def _frame_oracle(config: RunConfig, frame_id: str):
    """Resolve the oracle callable for one frame."""
    if config.oracle == "proxy":
        return proxy_oracle
    maps_dir = _require_dir(config.maps, "--maps")
    frame_dir = maps_dir / frame_id
    if not frame_dir.is_dir():
        raise CliError(2, f"no map directory for frame {frame_id!r}: {frame_dir}")
    layout = frame_dir / "layout.pgm"
    if not layout.is_file():
        raise CliError(2, f"missing layout file: {layout}")
    static_map = frame_dir / "map.pgm"
    try:
        if static_map.is_file():
            return file_oracle(static_map, layout, mode="static")
        return file_oracle(frame_dir, layout, mode="per-qp")
    except ValueError as exc:
        raise CliError(2, str(exc))


def _check_model_dims(net, frame: Frame) -> None:
    patch = net.arch_descriptor()["patch_size"]
    if frame.width % patch or frame.height % patch:
        raise CliError(
            2,
            f"frame is {frame.width}x{frame.height}, not a multiple of the "
            f"model's {patch}x{patch} coding unit",
        )


# ---------------------------------------------------------------------------
# build-dataset


def cmd_build_dataset(config: RunConfig) -> int:
    frames_dir = _require_dir(config.frames, "--frames")
    named = _list_frames(frames_dir)
    frames = [(fid, _load_frame(path)) for fid, path in named]
    if config.oracle == "files":
        oracle = {fid: _frame_oracle(config, fid) for fid, _ in named}
    else:
        oracle = proxy_oracle
    if not config.cache and not config.out:
        raise CliError(2, "missing required path: --cache (or --out)")
    cache_path = Path(config.cache) if config.cache else Path(config.out) / "cache.txt"
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        cache = dataset_mod.build_cache(frames, oracle, seed=config.seed)
    except (ValueError, RuntimeError, KeyError) as exc:
        raise CliError(2, f"dataset build failed: {exc}")
    save_cache(cache, cache_path)
    splits = {meta.frame_id: meta.split for meta in cache.frames}
    print(f"wrote {cache_path} ({len(cache.samples)} samples, splits {splits})")
    return 0


# ---------------------------------------------------------------------------
# train


def _load_cache_checked(config: RunConfig):
    cache_path = _require_file(config.cache, "--cache")
    try:
        return load_cache(cache_path)
    except CacheParseError as exc:
        raise CliError(2, str(exc))


def cmd_train(config: RunConfig) -> int:
    cache = _load_cache_checked(config)
    frames_dir = _require_dir(config.frames, "--frames")
    out_dir = _out_dir(config)

    train_ids = cache.frame_ids(split="train")
    if not train_ids:
        raise CliError(3, "cache has no training frames")
    episode_cfg = EpisodeConfig(alpha_s=config.alpha)
    envs = []
    for fid in train_ids:
        frame_path = frames_dir / f"{fid}.pgm"
        frame = _load_frame(_require_file(str(frame_path), f"frame {fid!r}"))
        oracle = _frame_oracle(config, fid)
        envs.append(make_env(fid, frame, oracle, episode_cfg, cache=cache))

    def factory(episode: int):
        return envs[episode % len(envs)]

    net, log = agent_mod.train(factory, config.train_config(),
                               global_branch=config.global_branch)

    tag = f"alpha_{config.alpha:g}"
    model_path = out_dir / f"{tag}.rscq"
    agent_mod.save_model(net, model_path, seed=config.seed)
    log_path = out_dir / f"{tag}_log.csv"
    with open(log_path, "w") as fh:
        fh.write(f"# seed={config.seed}\n")
        fh.write("step,episode,epsilon,loss,return\n")
        for row in log:
            fh.write(f"{row.step},{row.episode},{row.epsilon:.17g},"
                     f"{row.loss:.17g},{row.episode_return:.17g}\n")
    print(f"wrote {model_path} and {log_path} ({len(log)} steps)")
    return 0


# ---------------------------------------------------------------------------
# encode


def _encode_stats(frame: Frame, recon: Frame, results) -> tuple[float, float]:
    """Rate from the bit accounting, fidelity from the pixels.

    Fidelity always recomputes maps from the pixels: a precomputed map
    file cannot describe an arbitrary mixed-QP reconstruction, so the
    files oracle feeds importance maps to the policy and baselines while
    the damage measurement stays pixel-derived.
    """
    bpp = frame_bpp(results, frame)
    orig_map, _ = proxy_oracle(frame)
    recon_map, _ = proxy_oracle(recon)
    return bpp, fidelity_proxy(orig_map, recon_map)


def cmd_encode(config: RunConfig) -> int:
    frame_path = _require_file(config.frames, "--frames")
    frame = _load_frame(frame_path)
    frame_id = frame_path.stem
    out_dir = _out_dir(config)
    oracle = _frame_oracle(config, frame_id)

    modes = [config.uniform_qp is not None, config.baseline is not None,
             config.model is not None]
    if sum(modes) > 1:
        raise CliError(2, "choose one of --uniform-qp, --baseline, --model")

    if config.uniform_qp is not None:
        results, recon = encode_frame_uniform(frame, config.uniform_qp)
        qpmap = [config.uniform_qp] * len(results)
    elif config.baseline is not None:
        smap, _ = oracle(frame)
        curve = MappingCurve(kind=config.baseline)
        qpmap = handcrafted_qpmap(frame, smap, curve)
        results, recon = encode_frame_with_qpmap(frame, qpmap)
    else:
        model_path = _require_file(config.model, "--model")
        try:
            net = agent_mod.load_model(model_path)
        except agent_mod.ModelLoadError as exc:
            raise CliError(2, str(exc))
        _check_model_dims(net, frame)
        from .env import FrameContext

        ctx = FrameContext.from_oracle(frame_id, frame, oracle)
        qpmap = agent_mod.infer_qpmap(net, ctx, EpisodeConfig(alpha_s=config.alpha))
        results, recon = encode_frame_with_qpmap(frame, qpmap)

    bpp, fidelity = _encode_stats(frame, recon, results)

    qpmap_path = out_dir / f"{frame_id}_qpmap.txt"
    with open(qpmap_path, "w") as fh:
        for qp in qpmap:
            fh.write(f"{qp}\n")
    recon_path = out_dir / f"{frame_id}_recon.pgm"
    write_frame(recon_path, recon)
    stats_path = out_dir / f"{frame_id}_stats.txt"
    with open(stats_path, "w") as fh:
        fh.write(f"# seed={config.seed}\n")
        fh.write(f"{bpp:.17g} {fidelity:.17g}\n")
    print(f"{bpp:.17g} {fidelity:.17g}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _mean_point(points: list[tuple[float, float]]) -> tuple[float, float]:
    return (mean_stable([p[0] for p in points]),
            mean_stable([p[1] for p in points]))


def _eval_frames(config: RunConfig, cache) -> list[tuple[str, Frame, object]]:
    frames_dir = _require_dir(config.frames, "--frames")
    test_ids = cache.frame_ids(split="test")
    if not test_ids:
        raise CliError(3, "cache has no held-out test frames")
    rows = []
    for fid in test_ids:
        frame_path = _require_file(str(frames_dir / f"{fid}.pgm"), f"frame {fid!r}")
        rows.append((fid, _load_frame(frame_path), _frame_oracle(config, fid)))
    return rows


def _uniform_point(frames, qp: int) -> tuple[float, float]:
    points = []
    for _, frame, _oracle in frames:
        results, recon = encode_frame_uniform(frame, qp)
        points.append(_encode_stats(frame, recon, results))
    return _mean_point(points)


def _baseline_curve(frames, kind: str) -> RdCurve:
    points = []
    for floor in BASELINE_QP_FLOORS:
        per_frame = []
        for _, frame, oracle in frames:
            smap, _ = oracle(frame)
            curve = MappingCurve(kind=kind, qp_min=floor)
            qpmap = handcrafted_qpmap(frame, smap, curve)
            results, recon = encode_frame_with_qpmap(frame, qpmap)
            per_frame.append(_encode_stats(frame, recon, results))
        points.append(_mean_point(per_frame))
    return RdCurve(points=tuple(points), label=kind)


def _discover_models(model_dir: Path) -> list[tuple[float, Path]]:
    found = []
    for entry in sorted(model_dir.glob("alpha_*.rscq")):
        tag = entry.stem[len("alpha_"):]
        try:
            found.append((float(tag), entry))
        except ValueError:
            raise CliError(2, f"{entry}: model names must look like alpha_<value>.rscq")
    found.sort(key=lambda pair: pair[0])
    return found


def cmd_eval(config: RunConfig) -> int:
    cache = _load_cache_checked(config)
    model_dir = _require_dir(config.model, "--model")
    out_dir = _out_dir(config)
    frames = _eval_frames(config, cache)

    models = _discover_models(model_dir)
    if len(models) < 4:
        raise CliError(
            3,
            f"alpha sweep needs at least 4 models in {model_dir}, found "
            f"{len(models)}; train more alpha points first",
        )

    try:
        anchor = RdCurve(points=tuple(_uniform_point(frames, qp) for qp in ANCHOR_QPS),
                         label="anchor")
        curves = [anchor]
        bd_rows = []
        for kind in CURVE_KINDS:
            curve = _baseline_curve(frames, kind)
            curves.append(curve)
            result = bd_rate(curve, anchor)
            bd_rows.append((kind, result))
    except EvaluationError as exc:
        raise CliError(3, f"reference curves are degenerate: {exc}")

    runs = []
    from .env import FrameContext

    for alpha, model_path in models:
        try:
            net = agent_mod.load_model(model_path)
        except agent_mod.ModelLoadError as exc:
            raise CliError(2, str(exc))
        points = []
        for fid, frame, oracle in frames:
            _check_model_dims(net, frame)
            ctx = FrameContext.from_oracle(fid, frame, oracle)
            qpmap = agent_mod.infer_qpmap(net, ctx, EpisodeConfig(alpha_s=alpha))
            results, recon = encode_frame_with_qpmap(frame, qpmap)
            points.append(_encode_stats(frame, recon, results))
        runs.append((alpha, points))

    try:
        agent_curve, sweep_rows = sweep_points(runs, label="agent")
        curves.append(agent_curve)
        bd_rows.append(("agent", bd_rate(agent_curve, anchor)))
    except EvaluationError as exc:
        raise CliError(3, f"agent sweep is degenerate: {exc}")

    # Drift-vs-fidelity samples need maps recomputed on every jittered
    # reconstruction, which only a computing oracle can do.
    samples, r = correlation_protocol(
        [(fid, frame) for fid, frame, _ in frames], proxy_oracle,
        seed=config.seed,
    )

    write_curve_csv(out_dir / "curves.csv", curves, seed=config.seed)
    write_sweep_csv(out_dir / "alpha_sweep.csv", sweep_rows, seed=config.seed)
    write_correlation_csv(out_dir / "correlation.csv", samples, seed=config.seed)
    bd_path = out_dir / "bd_results.csv"
    with open(bd_path, "w") as fh:
        fh.write(f"# seed={config.seed}\n")
        fh.write("comparator,bd_br_percent,bd_metric\n")
        for label, result in bd_rows:
            fh.write(f"{label},{result.bd_br:.17g},{result.bd_metric:.17g}\n")

    print(f"frames: {[fid for fid, _, _ in frames]}")
    for label, result in bd_rows:
        print(f"BD-BR {label} vs anchor: {result.bd_br:+.2f}%  "
              f"(metric {result.bd_metric:+.4f})")
    print(f"drift/fidelity correlation: r={r:.4f} over {len(samples)} encodes")
    print(f"wrote curves.csv, alpha_sweep.csv, correlation.csv, bd_results.csv "
          f"in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None,
                        help="semantic drift weight alpha_s")
    parser.add_argument("--oracle", choices=("proxy", "files"), default=None)
    parser.add_argument("--frames", default=None,
                        help="frames directory (or one frame for encode)")
    parser.add_argument("--maps", default=None,
                        help="map/layout directory for the files oracle")
    parser.add_argument("--cache", default=None, help="dataset cache path")
    parser.add_argument("--model", default=None,
                        help="model file (encode) or models directory (eval)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--uniform-qp", dest="uniform_qp", type=int, default=None,
                        help="bypass the policy and encode at one QP")
    parser.add_argument("--no-global-branch", dest="no_global_branch",
                        action="store_true",
                        help="ablation: drop the frame-level feature branch")
    parser.add_argument("--baseline", choices=CURVE_KINDS, default=None,
                        help="encode with a handcrafted mapping instead")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsc",
        description="Task-driven semantic coding: dataset, training, "
                    "encoding, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (
        ("build-dataset", cmd_build_dataset),
        ("train", cmd_train),
        ("encode", cmd_encode),
        ("eval", cmd_eval),
    ):
        cmd = sub.add_parser(name)
        _add_common(cmd)
        cmd.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = merge_config(args)
        return args.func(config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
