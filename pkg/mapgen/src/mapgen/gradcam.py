"""Class-activation heat maps from a classification backbone.

The map for an image is the channel-weighted sum of the last convolution
layer's activations, where each channel's weight is the spatial mean of the
top logit's gradient at that channel. The rectified sum is upsampled to the
image size and min-max normalized, so a non-degenerate map peaks at
exactly 1.0.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

# ImageNet statistics, matching how the pretrained backbones were trained
_MEAN = (0.485, 0.456, 0.406)
_STD = (0.229, 0.224, 0.225)


def _last_conv(model: torch.nn.Module) -> torch.nn.Module:
    """Default target layer: the final conv of the feature stack."""
    stack = model.features if hasattr(model, "features") else model
    last = None
    for module in stack.modules():
        if isinstance(module, torch.nn.Conv2d):
            last = module
    if last is None:
        raise ValueError("model has no Conv2d layer to hook")
    return last


def _preprocess(rgb01: np.ndarray) -> torch.Tensor:
    if rgb01.ndim != 3 or rgb01.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) array of values in [0, 1]")
    x = torch.from_numpy(np.ascontiguousarray(rgb01)).float().permute(2, 0, 1)
    mean = torch.tensor(_MEAN).view(3, 1, 1)
    std = torch.tensor(_STD).view(3, 1, 1)
    return ((x - mean) / std).unsqueeze(0)


def activation_map(
    model: torch.nn.Module,
    rgb01: np.ndarray,
    target_layer: torch.nn.Module | None = None,
) -> np.ndarray:
    """Heat map in [0, 1] with the input's height and width.

    The class is the argmax logit. A constant response (including all-zero,
    which a rectified map with non-positive channel weights produces) has no
    contrast to normalize and comes back as all zeros.
    """
    model.eval()
    layer = _last_conv(model) if target_layer is None else target_layer
    height, width = rgb01.shape[0], rgb01.shape[1]

    captured: list[torch.Tensor] = []

    def keep_output(module, args, output):
        output.retain_grad()
        captured.append(output)

    handle = layer.register_forward_hook(keep_output)
    try:
        x = _preprocess(rgb01)
        logits = model(x)
        top = int(logits[0].argmax())
        model.zero_grad(set_to_none=True)
        logits[0, top].backward()
    finally:
        handle.remove()
    model.zero_grad(set_to_none=True)

    out = captured[-1]
    if out.grad is None:
        raise RuntimeError("target layer received no gradient")
    acts = out.detach()[0]
    grads = out.grad[0]
    with torch.no_grad():
        weights = grads.mean(dim=(1, 2))
        cam = F.relu((weights[:, None, None] * acts).sum(dim=0))
        cam = F.interpolate(cam[None, None], size=(height, width),
                            mode="bilinear", align_corners=False)[0, 0]
        lo, hi = float(cam.min()), float(cam.max())
        if hi > lo:
            cam = (cam - lo) / (hi - lo)
        else:
            cam = torch.zeros_like(cam)
    return cam.numpy().astype(np.float64)
