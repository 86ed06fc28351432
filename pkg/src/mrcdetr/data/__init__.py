"""Synthetic dataset generation and manifest handling."""
from .manifest import Annotation, DatasetManifest, ImageRecord, load_manifest, split, write_manifest
from .pnm import read_pnm, write_pnm
from .synth import CLASSES, GenConfig, generate_dataset, plan_counts, render_image

__all__ = [
    "Annotation", "CLASSES", "DatasetManifest", "GenConfig", "ImageRecord", "generate_dataset",
    "load_manifest", "plan_counts", "read_pnm", "render_image", "split", "write_manifest", "write_pnm",
]
