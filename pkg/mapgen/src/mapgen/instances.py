"""Instance masks from a detection model, merged into one importance map.

The map is the binary union of the kept instances' masks (importance 1.0
on any instance, 0 elsewhere), and the layout labels each pixel with its
instance, numbered 1..k in descending detection-score order. Where masks
overlap, the higher-scoring instance keeps the pixel.
"""

from __future__ import annotations

import numpy as np
import torch

SCORE_THRESHOLD = 0.5
MASK_THRESHOLD = 0.5
MAX_INSTANCES = 255


def instance_union(
    model: torch.nn.Module,
    rgb01: np.ndarray,
    score_threshold: float = SCORE_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Run the detector and merge its masks.

    Args:
        model: detection model following the torchvision API: called with a
            list of (3, H, W) tensors in [0, 1], returns per-image dicts
            with "scores" and "masks" (n, 1, H, W) entries.
        rgb01: (H, W, 3) image with values in [0, 1].

    Returns:
        (map values, labels, instance count). Instances at or above the
        score threshold whose binarized mask is non-empty are kept, at most
        MAX_INSTANCES of them; an instance fully hidden behind
        higher-scoring masks keeps its label number but owns no pixels.
    """
    if rgb01.ndim != 3 or rgb01.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) array of values in [0, 1]")
    model.eval()
    x = torch.from_numpy(np.ascontiguousarray(rgb01)).float().permute(2, 0, 1)
    with torch.no_grad():
        output = model([x])[0]

    scores = output["scores"].detach().cpu().numpy()
    masks = output["masks"].detach().cpu().numpy()
    height, width = rgb01.shape[0], rgb01.shape[1]
    labels = np.zeros((height, width), dtype=np.int32)

    order = np.argsort(-scores, kind="stable")
    count = 0
    for idx in order:
        if scores[idx] < score_threshold:
            break
        binary = masks[idx, 0] >= MASK_THRESHOLD
        if not binary.any():
            continue
        if count == MAX_INSTANCES:
            raise ValueError(f"more than {MAX_INSTANCES} instances kept")
        count += 1
        claim = binary & (labels == 0)
        labels[claim] = count
    values = (labels > 0).astype(np.float64)
    return values, labels, count
