"""Domain types, the GVOL volume container and the dataset manifest."""
from __future__ import annotations

import enum
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptVolume, FormatError, InvalidStage, InvalidTaskLabel

GVOL_MAGIC = b"GVOL"
GVOL_VERSION = 1


class Stage(enum.IntEnum):
    CN = 0
    EMCI = 1
    LMCI = 2
    AD = 3

    @classmethod
    def parse(cls, value: "Stage | int | str") -> "Stage":
        if isinstance(value, Stage):
            return value
        try:
            if isinstance(value, str):
                return cls[value.upper()]
            return cls(int(value))
        except (KeyError, ValueError) as exc:
            raise InvalidStage(f"unknown stage {value!r}") from exc


# class names per task arity, index order = class index
TASK_CLASSES = {
    2: ("CN", "AD"),
    3: ("CN", "MCI", "AD"),
    4: ("CN", "EMCI", "LMCI", "AD"),
}

_MERGE = {
    2: {Stage.CN: 0, Stage.AD: 1},
    3: {Stage.CN: 0, Stage.EMCI: 1, Stage.LMCI: 1, Stage.AD: 2},
    4: {Stage.CN: 0, Stage.EMCI: 1, Stage.LMCI: 2, Stage.AD: 3},
}


def merge_label(stage: Stage | int | str, task: int) -> int:
    """Map a four-stage label onto the class index of a 2-, 3- or 4-class task.

    The three-class task folds EMCI and LMCI into a single MCI class; the
    binary task only admits CN and AD.
    """
    stage = Stage.parse(stage)
    if task not in _MERGE:
        raise InvalidTaskLabel(f"task arity must be 2, 3 or 4, got {task}")
    try:
        return _MERGE[task][stage]
    except KeyError:
        raise InvalidTaskLabel(f"{stage.name} has no class in the {task}-class task") from None


def task_accepts(stage: Stage | int | str, task: int) -> bool:
    return Stage.parse(stage) in _MERGE[task]


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class Volume:
    """Dense float32 grid laid out channels x depth x height x width."""

    values: np.ndarray
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim < 1 or any(n < 1 for n in arr.shape):
            raise CorruptVolume(f"invalid extents {arr.shape}")
        if arr is self.values:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        vs = tuple(float(np.float32(v)) for v in self.voxel_size)
        if len(vs) != 3:
            raise CorruptVolume("voxel_size needs three entries")
        object.__setattr__(self, "voxel_size", vs)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None


def volume_bytes(v: Volume) -> bytes:
    head = struct.pack("<4sII", GVOL_MAGIC, GVOL_VERSION, len(v.dims))
    head += struct.pack(f"<{len(v.dims)}I", *v.dims)
    head += struct.pack("<3f", *v.voxel_size)
    return head + v.values.astype("<f4", copy=False).tobytes(order="C")


def volume_from_bytes(buf: bytes) -> Volume:
    if len(buf) < 12 or buf[:4] != GVOL_MAGIC:
        raise FormatError("missing GVOL magic")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != GVOL_VERSION:
        raise FormatError(f"unsupported GVOL version {version}")
    if ndim < 1 or ndim > 16:
        raise FormatError(f"bad ndim {ndim}")
    off = 12
    need = off + 4 * ndim + 12
    if len(buf) < need:
        raise FormatError("truncated GVOL header")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    voxel_size = struct.unpack_from("<3f", buf, off)
    off += 12
    count = int(np.prod(dims, dtype=np.int64))
    payload = memoryview(buf)[off:]
    if count < 1 or len(payload) != 4 * count:
        raise CorruptVolume(f"extents {dims} need {4 * count} bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    return Volume(values, voxel_size)


def write_volume(v: Volume, path: str | os.PathLike) -> None:
    Path(path).write_bytes(volume_bytes(v))


def read_volume(path: str | os.PathLike) -> Volume:
    return volume_from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class LossWeights:
    lambda_gan_d: float
    lambda_cls_d: float
    lambda_gan_g: float
    lambda_cls_g: float
    lambda_l1: float

    NAMES = ("lambda_gan_d", "lambda_cls_d", "lambda_gan_g", "lambda_cls_g", "lambda_l1")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in self.NAMES)

    def replace(self, **kw) -> "LossWeights":
        vals = {n: getattr(self, n) for n in self.NAMES}
        vals.update(kw)
        return LossWeights(**vals)


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    subject_id: str
    stage: Stage
    mri: Volume
    pet_av45: Volume
    pet_fdg: Volume
    split: Split | None = None
    seed: int = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.stage == other.stage
            and self.split == other.split
            and self.seed == other.seed
            and self.mri == other.mri
            and self.pet_av45 == other.pet_av45
            and self.pet_fdg == other.pet_fdg
        )

    __hash__ = None


# -- manifest -----------------------------------------------------------------

MANIFEST_FIELDS = ("subject_id", "stage", "split", "mri", "pet_av45", "pet_fdg", "seed")


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    stage: Stage
    split: Split
    mri: str
    pet_av45: str
    pet_fdg: str
    seed: int

    def to_line(self) -> str:
        rec = {
            "subject_id": self.subject_id,
            "stage": self.stage.name,
            "split": self.split.value,
            "mri": self.mri,
            "pet_av45": self.pet_av45,
            "pet_fdg": self.pet_fdg,
            "seed": self.seed,
        }
        return json.dumps(rec, separators=(", ", ": "))

    @classmethod
    def from_line(cls, line: str) -> "ManifestEntry":
        rec = json.loads(line)
        missing = [k for k in MANIFEST_FIELDS if k not in rec]
        if missing:
            raise FormatError(f"manifest record lacks {missing}")
        return cls(
            subject_id=str(rec["subject_id"]),
            stage=Stage.parse(rec["stage"]),
            split=Split(rec["split"]),
            mri=rec["mri"],
            pet_av45=rec["pet_av45"],
            pet_fdg=rec["pet_fdg"],
            seed=int(rec["seed"]),
        )


@dataclass
class Manifest:
    path: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def root(self) -> Path:
        return self.path.parent

    def select(self, split: Split | str | None = None, task: int | None = None) -> list[ManifestEntry]:
        out = []
        for e in self.entries:
            if split is not None and e.split != Split(split):
                continue
            if task is not None and not task_accepts(e.stage, task):
                continue
            out.append(e)
        return out

    def split_counts(self) -> dict[str, int]:
        counts = {s.value: 0 for s in Split}
        for e in self.entries:
            counts[e.split.value] += 1
        return counts

    def load(self, entry: ManifestEntry, tracer: str = "av45") -> tuple[Volume, Volume]:
        mri = read_volume(self.root / entry.mri)
        pet = read_volume(self.root / (entry.pet_av45 if tracer == "av45" else entry.pet_fdg))
        return mri, pet


def write_manifest(path: str | os.PathLike, entries: Iterable[ManifestEntry]) -> Path:
    path = Path(path)
    text = "".join(e.to_line() + "\n" for e in entries)
    path.write_text(text, encoding="utf-8")
    return path


def read_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    entries = [
        ManifestEntry.from_line(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    return Manifest(path, entries)


def ensure_shape(actual: Sequence[int], expected: Sequence[int], what: str) -> None:
    from .errors import ShapeError

    if tuple(actual) != tuple(expected):
        raise ShapeError(f"{what}: expected {tuple(expected)}, got {tuple(actual)}")
