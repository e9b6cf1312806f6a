"""Offline embedding extractor producing FSE1/FSP1 stores for the
few-shot recognition engine."""

from .encoders import ClipEncoder, StubEncoder, make_encoder
from .extract import ExtractionJob, extract, sample_video_frames, uniform_frame_indices
from .templates import DEFAULT_TEMPLATES, fill_template, load_templates

__version__ = "0.1.0"

__all__ = [
    "ClipEncoder",
    "DEFAULT_TEMPLATES",
    "ExtractionJob",
    "StubEncoder",
    "extract",
    "fill_template",
    "load_templates",
    "make_encoder",
    "sample_video_frames",
    "uniform_frame_indices",
]
