#!/usr/bin/env python3
"""Train the QP-allocation agent across the alpha sweep and evaluate it.

One command reproduces the whole pipeline on the bundled corpus:

    python3 scripts/run_experiment.py --out runs/full

It trains one policy per alpha in the sweep, then runs ``rsc eval`` to
produce rate-distortion curves, BD-rate summaries against the uniform-QP
anchor and both handcrafted mappings, the alpha sweep table, and the
drift-vs-fidelity correlation samples. It finishes by scoring the
designated-alpha policy against the per-CU brute-force optimum on the
held-out frames and writing everything worth quoting to ``summary.txt``.

The bundled cache under assets/ is used when present; pass --cache to point
elsewhere (a missing cache is rebuilt, which adds about two minutes).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from rsc import cli  # noqa: E402
from rsc.agent import load_model, infer_qpmap  # noqa: E402
from rsc.dataset import load_cache  # noqa: E402
from rsc.env import EpisodeConfig, FrameContext, episode_return, optimal_qpmap  # noqa: E402
from rsc.frames import read_frame  # noqa: E402
from rsc.semantics import proxy_oracle  # noqa: E402

# The reward at low alpha is nearly flat across QPs, so the greedy policy
# needs many more gradient steps there before its argmax stabilises. The
# designated alpha anneals exploration so the later steps refine the
# policy's own trajectory; the other alphas keep exploration at 1.0, which
# spreads the replay buffer over the whole action grid and reaches a good
# operating point sooner.
DESIGNATED_ALPHA = 16.0
SWEEP = {
    16.0: {"total-steps": 12000, "epsilon-end": 0.05, "epsilon-decay-steps": 9000},
    32.0: {"total-steps": 6000, "epsilon-end": 1.0, "epsilon-decay-steps": 1},
    64.0: {"total-steps": 5000, "epsilon-end": 1.0, "epsilon-decay-steps": 1},
    128.0: {"total-steps": 3000, "epsilon-end": 1.0, "epsilon-decay-steps": 1},
}
COMMON = {
    "learning-rate": 1e-3,
    # each CU's reward depends only on its own QP, so the bootstrap term
    # carries no signal and gamma=0 turns the update into plain regression
    "gamma": 0.0,
    "batch-size": 64,
    "epsilon-start": 1.0,
}
RATIO_TARGET = 0.90


def run_cli(argv: list[str]) -> None:
    code = cli.main(argv)
    if code != 0:
        raise SystemExit(f"step failed (exit {code}): rsc {' '.join(argv)}")


def held_out_ratio(model_path: Path, cache_path: Path, frames_dir: Path,
                   alpha: float) -> tuple[float, list[str]]:
    """Mean ratio of the policy's return to the brute-force optimum."""
    net = load_model(model_path)
    cache = load_cache(cache_path)
    cfg = EpisodeConfig(alpha_s=alpha)
    ratios = []
    test_ids = cache.frame_ids("test")
    for fid in test_ids:
        frame = read_frame(frames_dir / f"{fid}.pgm")
        ctx = FrameContext.from_oracle(fid, frame, proxy_oracle)
        qpmap = infer_qpmap(net, ctx, cfg)
        achieved = episode_return(qpmap, fid, cache, cfg)
        _, best = optimal_qpmap(fid, cache, cfg)
        ratios.append(achieved / best)
    return sum(ratios) / len(ratios), test_ids


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="run directory")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--frames", default=str(REPO / "assets" / "frames"))
    parser.add_argument("--cache", default=str(REPO / "assets" / "cache.txt"))
    args = parser.parse_args()

    started = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache_path = Path(args.cache)
    if not cache_path.exists():
        cache_path = out / "cache.txt"
        print(f"cache not found, building {cache_path}")
        run_cli(["build-dataset", "--frames", args.frames,
                 "--cache", str(cache_path), "--seed", str(args.seed)])

    models = out / "models"
    models.mkdir(exist_ok=True)
    for alpha, overrides in SWEEP.items():
        cfg_path = out / f"train_alpha_{alpha:g}.cfg"
        settings = {**COMMON, **overrides}
        cfg_path.write_text(
            "".join(f"{key} = {value}\n" for key, value in settings.items()))
        print(f"=== training alpha={alpha:g} "
              f"({settings['total-steps']} steps) ===", flush=True)
        run_cli(["train", "--config", str(cfg_path),
                 "--frames", args.frames, "--cache", str(cache_path),
                 "--out", str(models), "--alpha", f"{alpha:g}",
                 "--seed", str(args.seed)])

    print("=== evaluating ===", flush=True)
    eval_dir = out / "eval"
    run_cli(["eval", "--frames", args.frames, "--cache", str(cache_path),
             "--model", str(models), "--out", str(eval_dir),
             "--seed", str(args.seed)])

    ratio, test_ids = held_out_ratio(
        models / f"alpha_{DESIGNATED_ALPHA:g}.rscq", cache_path,
        Path(args.frames), DESIGNATED_ALPHA)
    elapsed = time.monotonic() - started

    bd_lines = (eval_dir / "bd_results.csv").read_text().splitlines()[2:]
    summary = [
        f"held-out frames: {' '.join(test_ids)}",
        f"reward ratio at alpha={DESIGNATED_ALPHA:g}: {ratio:.4f} "
        f"(target >= {RATIO_TARGET})",
        *(f"bd {line}" for line in bd_lines),
        f"wall time: {elapsed:.1f}s",
    ]
    (out / "summary.txt").write_text("".join(f"{line}\n" for line in summary))
    print()
    for line in summary:
        print(line)
    return 0 if ratio >= RATIO_TARGET else 1


if __name__ == "__main__":
    raise SystemExit(main())
