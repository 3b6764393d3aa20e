"""Automatic mask, keypoint and body-part annotation for rodents recorded
by a stationary camera, plus occlusion augmentation, COCO-style evaluation,
and a synthetic-scene generator for end-to-end verification."""

from . import (  # noqa: F401
    annotate,
    augment,
    background,
    coco,
    errors,
    evalmetrics,
    geometry,
    raster,
    synthgen,
)

__version__ = "0.1.0"
