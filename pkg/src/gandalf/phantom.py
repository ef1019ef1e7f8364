"""Deterministic synthetic MRI / AV45 / FDG phantoms with stage-dependent features.

Each subject is an ellipsoidal "brain" with a hypointense "ventricle" whose
size grows with disease stage, seen through a random per-subject affine
jitter.  AV45 shows stage-scaled uptake over the cortical ribbon, densest at
two fixed cortical foci; FDG shows a global metabolism level that falls with stage.  All fields are
evaluated analytically, so the coarse PET grid covers the same field of view
as the MRI grid.
"""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (
    ManifestEntry,
    Split,
    Stage,
    SubjectRecord,
    Volume,
    write_manifest,
    write_volume,
)
from .errors import DatasetWriteError, InvalidStage

GEOMETRY = {
    "desk": dict(mri=(1, 64, 64, 64), pet=(2, 24, 19, 19)),
    "paper": dict(mri=(1, 256, 256, 256), pet=(2, 93, 76, 76)),
    "tiny": dict(mri=(1, 8, 8, 8), pet=(2, 5, 4, 4)),
}
MRI_VOXEL_MM = {"desk": 4.0, "paper": 1.0, "tiny": 32.0}

SPLIT_FRACTIONS = (("train", 0.7), ("val", 0.1), ("test", 0.2))


@dataclass(frozen=True)
class StageSignature:
    ventricle_radius_factor: tuple[float, ...] = (1.0, 1.18, 1.36, 1.56)
    av45_uptake_level: tuple[float, ...] = (0.05, 0.25, 0.45, 0.65)
    fdg_metabolism_level: tuple[float, ...] = (0.85, 0.72, 0.59, 0.46)

    def __post_init__(self):
        for name, seq, sign in (
            ("ventricle_radius_factor", self.ventricle_radius_factor, 1),
            ("av45_uptake_level", self.av45_uptake_level, 1),
            ("fdg_metabolism_level", self.fdg_metabolism_level, -1),
        ):
            if len(seq) != len(Stage):
                raise ValueError(f"{name} needs one value per stage")
            if not all(sign * (b - a) > 0 for a, b in zip(seq, seq[1:])):
                raise ValueError(f"{name} is not strictly monotone in stage")


@dataclass(frozen=True)
class PhantomConfig:
    scale: str = "desk"
    n_subjects: int = 200
    seed: int = 0
    stage_mix: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    noise_sigma: float = 0.05
    deform_amplitude: float = 0.1
    # relative spread of ventricle size at a fixed stage
    anatomy_sigma: float = 0.03
    signature: StageSignature = field(default_factory=StageSignature)

    def __post_init__(self):
        if self.scale not in GEOMETRY:
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if len(self.stage_mix) != len(Stage) or min(self.stage_mix) < 0:
            raise ValueError("stage_mix needs one nonnegative proportion per stage")
        if abs(sum(self.stage_mix) - 1.0) > 1e-9:
            raise ValueError("stage_mix must sum to 1")
        if self.noise_sigma < 0 or self.deform_amplitude < 0 or self.anatomy_sigma < 0:
            raise ValueError("noise and deformation amplitudes must be nonnegative")


def pet_voxel_size(pet_shape, mri: Volume) -> tuple[float, float, float]:
    """PET voxel size covering the same field of view as ``mri``."""
    return tuple(v * m / p for v, m, p in zip(mri.voxel_size, mri.dims[-3:], pet_shape[-3:]))


def subject_seed(seed: int, subject_id: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{subject_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# -- geometry -----------------------------------------------------------------

BRAIN_RADII = np.array([0.62, 0.78, 0.66])  # depth, height, width (normalised FOV units)
VENTRICLE_RADII = np.array([0.17, 0.21, 0.13])
VENTRICLE_OFFSET = np.array([0.08, 0.0, 0.0])
# two fixed "cortical" uptake regions, in brain-relative coordinates
FOCI = np.array([[0.35, 0.45, 0.55], [0.35, 0.45, -0.55]])
FOCUS_WIDTH = 0.28


@dataclass(frozen=True)
class _Pose:
    scale: np.ndarray
    shift: np.ndarray
    angle: float
    ventricle: float


def _draw_pose(rng: np.random.Generator, cfg: PhantomConfig, stage: Stage) -> _Pose:
    a = cfg.deform_amplitude
    scale = 1.0 + a * rng.uniform(-1.0, 1.0, 3)
    shift = a * BRAIN_RADII.mean() * rng.uniform(-1.0, 1.0, 3)
    angle = a * rng.uniform(-1.0, 1.0)
    vent = cfg.signature.ventricle_radius_factor[stage] * float(
        np.exp(cfg.anatomy_sigma * rng.standard_normal())
    )
    return _Pose(scale, shift, angle, vent)


def _brain_coords(spatial, pose: _Pose):
    """Brain-relative coordinates (unit ball = brain surface) for each voxel centre."""
    axes = [((np.arange(n, dtype=np.float32) + 0.5) / n * 2.0 - 1.0) for n in spatial]
    z = axes[0][:, None, None] - np.float32(pose.shift[0])
    y = axes[1][None, :, None] - np.float32(pose.shift[1])
    x = axes[2][None, None, :] - np.float32(pose.shift[2])
    c, s = np.float32(np.cos(pose.angle)), np.float32(np.sin(pose.angle))
    yr = c * y + s * x
    xr = -s * y + c * x
    radii = (BRAIN_RADII * pose.scale).astype(np.float32)
    return z / radii[0], yr / radii[1], xr / radii[2], radii


def _soft(dist: np.ndarray, width: float) -> np.ndarray:
    # smooth 0..1 step of about `width` (FOV units) around the surface
    return (0.5 * (1.0 + np.tanh(dist / np.float32(width)))).astype(np.float32)


def _fields(spatial, pose: _Pose):
    u, v, w, radii = _brain_coords(spatial, pose)
    voxel = 2.0 / min(spatial)
    rb = np.sqrt(u * u + v * v + w * w)
    brain = _soft((1.0 - rb) * np.float32(radii.mean()), voxel)
    vr = (VENTRICLE_RADII / BRAIN_RADII) * pose.ventricle
    du, dv, dw = (u - VENTRICLE_OFFSET[0]) / vr[0], v / vr[1], w / vr[2]
    rv = np.sqrt(du * du + dv * dv + dw * dw)
    ventricle = _soft((1.0 - rv) * np.float32(radii.mean() * vr.mean()), voxel)
    cortex = _soft((rb - 0.82) * np.float32(radii.mean()), voxel) * brain
    foci = np.zeros_like(rb)
    for fu, fv, fw in FOCI:
        d2 = (u - fu) ** 2 + (v - fv) ** 2 + (w - fw) ** 2
        foci += np.exp(-d2 / np.float32(2 * FOCUS_WIDTH**2)).astype(np.float32)
    foci = np.minimum(foci, 1.0) * brain
    return brain, ventricle * brain, cortex, foci


def _noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    if sigma == 0:
        rng.standard_normal(0)
        return np.zeros(shape, np.float32)
    return (sigma * rng.standard_normal(shape, dtype=np.float32)).astype(np.float32)


def generate_subject(config: PhantomConfig, subject_id: str, stage: Stage | int | str,
                     subject_seed_value: int | None = None) -> SubjectRecord:
    stage = Stage.parse(stage)
    if subject_seed_value is None:
        subject_seed_value = subject_seed(config.seed, subject_id)
    rng = np.random.default_rng(subject_seed_value)
    pose = _draw_pose(rng, config, stage)
    geo = GEOMETRY[config.scale]
    sig = config.signature
    mm = MRI_VOXEL_MM[config.scale]

    brain, vent, cortex, _ = _fields(geo["mri"][1:], pose)
    # white matter 0.85, cortical ribbon 0.65, ventricle 0.15
    mri = brain * (0.85 - 0.2 * cortex) - vent * 0.7
    mri = mri + _noise(rng, mri.shape, config.noise_sigma)
    mri = np.clip(mri, 0.0, 1.0)[None]

    pb, _, pcortex, foci = _fields(geo["pet"][1:], pose)
    # tracer retention spreads over the whole cortical ribbon, densest at the foci
    av1 = 0.25 * pb + sig.av45_uptake_level[stage] * np.maximum(foci, pcortex)
    av1 = np.clip(av1 + _noise(rng, av1.shape, config.noise_sigma), 0.0, 1.0)
    av2 = np.clip(av1 + 0.02 * (1 + stage) * foci, 0.0, 1.0)
    fdg1 = sig.fdg_metabolism_level[stage] * pb * (0.8 + 0.2 * pcortex)
    fdg1 = np.clip(fdg1 + _noise(rng, fdg1.shape, config.noise_sigma), 0.0, 1.0)
    fdg2 = np.clip(fdg1 - 0.01 * (1 + stage) * pb, 0.0, 1.0)

    pet_mm = pet_voxel_size(geo["pet"], Volume(mri, (mm, mm, mm)))
    return SubjectRecord(
        subject_id=subject_id,
        stage=stage,
        mri=Volume(mri, (mm, mm, mm)),
        pet_av45=Volume(np.stack([av1, av2]), pet_mm),
        pet_fdg=Volume(np.stack([fdg1, fdg2]), pet_mm),
        seed=subject_seed_value,
    )


def ventricle_volume(mri: Volume | np.ndarray, threshold: float = 0.5) -> int:
    """Voxels below ``threshold`` enclosed by the above-threshold brain mask."""
    arr = mri.values if isinstance(mri, Volume) else np.asarray(mri)
    if arr.ndim == 4:
        arr = arr[0]
    bright = arr > threshold
    filled = ndimage.binary_fill_holes(bright)
    return int(np.count_nonzero(filled & ~bright))


# -- dataset ------------------------------------------------------------------

def _apportion(n: int, weights) -> list[int]:
    """Largest-remainder rounding of ``n * weights`` (ties go to the lower index)."""
    raw = [n * w for w in weights]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_sizes(n: int) -> dict[str, int]:
    n_train = int(np.floor(0.7 * n + 0.5))
    n_val = int(np.floor(0.1 * n + 0.5))
    n_val = min(n_val, n - n_train)
    return {"train": n_train, "val": n_val, "test": n - n_train - n_val}


def plan_dataset(config: PhantomConfig) -> list[tuple[str, Stage, Split, int]]:
    """Subject ids, stages, splits and seeds, without rendering any volume.

    Splits are stratified: subjects are shuffled within each stage and then
    interleaved by their within-stage quantile, so every prefix of the order
    carries the stage mix; the first 70% go to train, the next 10% to val.
    """
    rng = np.random.default_rng([int(config.seed), 0x5EED])
    n = config.n_subjects
    ids = [f"sub-{i:04d}" for i in range(n)]
    stages: list[Stage] = []
    for s, c in zip(Stage, _apportion(n, config.stage_mix)):
        stages += [s] * c
    stages = [stages[i] for i in rng.permutation(n)]

    keyed = []
    for s in Stage:
        members = [i for i in range(n) if stages[i] == s]
        members = [members[j] for j in rng.permutation(len(members))]
        for rank, i in enumerate(members):
            keyed.append(((rank + 0.5) / len(members), int(s), i))
    keyed.sort()
    sizes = split_sizes(n)
    split_of = {}
    for pos, (_, _, i) in enumerate(keyed):
        if pos < sizes["train"]:
            split_of[i] = Split.TRAIN
        elif pos < sizes["train"] + sizes["val"]:
            split_of[i] = Split.VAL
        else:
            split_of[i] = Split.TEST
    return [(ids[i], stages[i], split_of[i], subject_seed(config.seed, ids[i])) for i in range(n)]


def _render(args):
    config, out_dir, sid, stage, split, seed = args
    rec = generate_subject(config, sid, stage, seed)
    rel = {}
    for key, vol in (("mri", rec.mri), ("pet_av45", rec.pet_av45), ("pet_fdg", rec.pet_fdg)):
        rel[key] = f"volumes/{sid}_{key}.gvol"
        write_volume(vol, Path(out_dir) / rel[key])
    return ManifestEntry(sid, stage, split, rel["mri"], rel["pet_av45"], rel["pet_fdg"], seed)


def generate_dataset(config: PhantomConfig, out_dir: str | os.PathLike, workers: int = 1) -> Path:
    """Render every subject to GVOL files and write ``manifest.jsonl``.

    Output is independent of ``workers``: each subject owns its seed.
    """
    out_dir = Path(out_dir)
    try:
        (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
        jobs = [(config, str(out_dir), *p) for p in plan_dataset(config)]
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                entries = list(ex.map(_render, jobs))
        else:
            entries = [_render(j) for j in jobs]
        return write_manifest(out_dir / "manifest.jsonl", entries)
    except OSError as exc:
        raise DatasetWriteError(str(exc)) from exc
