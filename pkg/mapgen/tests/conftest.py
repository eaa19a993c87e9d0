import numpy as np
import pytest
import torch
import torch.nn as nn

from mapgen import pgmio


class TinyClassifier(nn.Module):
    """Small stand-in with the features/classifier split the hook expects."""

    def __init__(self, seed: int = 0, channels: int = 8, classes: int = 10):
        super().__init__()
        torch.manual_seed(seed)
        self.features = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(channels, 2 * channels, 3, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d((4, 4)),
        )
        self.classifier = nn.Linear(2 * channels * 16, classes)

    def forward(self, x):
        x = self.features(x)
        return self.classifier(torch.flatten(x, 1))


class StubDetector(nn.Module):
    """Fixed detector output in the shape torchvision models produce."""

    def __init__(self, scores, masks):
        super().__init__()
        self.scores = torch.as_tensor(scores, dtype=torch.float32)
        self.masks = torch.as_tensor(masks, dtype=torch.float32)

    def forward(self, images):
        return [{"scores": self.scores, "masks": self.masks}
                for _ in images]


def box_mask(height, width, y0, y1, x0, x1, inside=1.0):
    mask = np.zeros((1, height, width), dtype=np.float32)
    mask[0, y0:y1, x0:x1] = inside
    return mask


@pytest.fixture
def rgb_image():
    rng = np.random.default_rng(42)
    return rng.random((48, 48, 3))


@pytest.fixture
def gray_pgm(tmp_path):
    """8-bit test frame on disk, returned as its path."""
    rng = np.random.default_rng(7)
    pixels = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
    path = tmp_path / "frame.pgm"
    pgmio.write_pgm(path, pixels, maxval=255)
    return path


@pytest.fixture(scope="session")
def vgg_weights(tmp_path_factory):
    """Randomly initialized VGG-19 state dict saved to disk once per run."""
    from torchvision import models as tvm

    torch.manual_seed(0)
    model = tvm.vgg19(weights=None)
    path = tmp_path_factory.mktemp("weights") / "vgg19.pt"
    torch.save(model.state_dict(), path)
    return path
