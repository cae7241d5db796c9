"""Spatio-temporal video grounding toolkit: metrics, losses, decoder, data synthesis."""

from .geometry import BBox, TimeSpan, Tube, box_giou, box_iou, clamp_box, temporal_iou
from .losses import LossWeights

__version__ = "0.1.0"
