"""Acoustic vehicle counting from one-channel roadside audio.

A regressor maps per-frame acoustic features to a clipped
vehicle-to-microphone distance; vehicles are counted as prominent minima
of the predicted distance that fall below a detection threshold.
"""

from .counter import ClipFeatures, VehicleCounter
from .dataset import AnnotationSet, AudioClip, load_annotations, load_clip, load_manifest
from .features import FeatureExtractor, assemble
from .metrics import SweepReport, nauc, efp, rvce, sweep
from .svr import EpsilonSVR

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet", "AudioClip", "ClipFeatures", "EpsilonSVR", "FeatureExtractor", "SweepReport",
    "VehicleCounter", "assemble", "efp", "load_annotations", "load_clip", "load_manifest", "nauc",
    "rvce", "sweep",
]
