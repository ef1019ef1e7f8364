"""MRI-to-PET conditional GAN whose discriminator also classifies disease stage."""
from __future__ import annotations

from .core import LossWeights, Split, Stage, Volume, merge_label, read_manifest, read_volume, write_volume
from .errors import GandalfError
from .evaluation import MetricsReport, evaluate, fbeta, metrics_from_confusion, mri_probe_baseline
from .nets import build_discriminator, build_generator, infer_shapes
from .phantom import PhantomConfig, generate_dataset, generate_subject
from .schedule import ScheduleConfig, apply_adjustment, lambda_at_epoch
from .stabilize import Decision, StabilizerState, Variant, observe_epoch
from .train import RunConfig, classify

__version__ = "0.1.0"
