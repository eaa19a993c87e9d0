"""Semantic importance maps and instance layouts from pretrained models.

Two routes produce the map for an image: a class-activation heat map from
a classification backbone, and the union of instance-segmentation masks
from a detection model. Both emit the portable-graymap formats the coding
pipeline consumes (16-bit maps, 8-bit layouts), so the packages only meet
on disk.
"""

from .gradcam import activation_map
from .instances import instance_union
from .models import ModelLoadError, load_classifier, load_instance_model

__all__ = [
    "ModelLoadError",
    "activation_map",
    "instance_union",
    "load_classifier",
    "load_instance_model",
]
