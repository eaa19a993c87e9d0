"""Model construction and weight loading for both map routes.

Classification maps use VGG-19; instance maps use Mask R-CNN with a
ResNet-50 FPN backbone. Weights are a runtime dependency: pass a local
state-dict file, or omit it to fetch the torchvision pretrained weights
(which needs network access to the torchvision download host). Either
way, failure to produce a ready model raises ModelLoadError so callers
can map it to a clean exit.
"""

from __future__ import annotations

from pathlib import Path

import torch


class ModelLoadError(RuntimeError):
    pass


def _load_state(model: torch.nn.Module, weights: str | Path) -> torch.nn.Module:
    path = Path(weights)
    if not path.is_file():
        raise ModelLoadError(f"weights file not found: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except ModelLoadError:
        raise
    except Exception as exc:
        raise ModelLoadError(f"cannot load weights from {path}: {exc}")
    return model


def load_classifier(weights: str | Path | None = None) -> torch.nn.Module:
    """VGG-19 classifier, from a local state dict or pretrained download."""
    from torchvision import models as tvm

    if weights is not None:
        model = tvm.vgg19(weights=None)
        _load_state(model, weights)
    else:
        try:
            model = tvm.vgg19(weights=tvm.VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ModelLoadError(f"cannot fetch pretrained classifier weights: {exc}")
    return model.eval()


def load_instance_model(weights: str | Path | None = None) -> torch.nn.Module:
    """Mask R-CNN detector, from a local state dict or pretrained download."""
    from torchvision.models import detection as tvd

    if weights is not None:
        model = tvd.maskrcnn_resnet50_fpn(weights=None, weights_backbone=None)
        _load_state(model, weights)
    else:
        try:
            model = tvd.maskrcnn_resnet50_fpn(
                weights=tvd.MaskRCNN_ResNet50_FPN_Weights.COCO_V1)
        except Exception as exc:
            raise ModelLoadError(f"cannot fetch pretrained detector weights: {exc}")
    return model.eval()
