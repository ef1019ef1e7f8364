from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gandalf.core import (
    LossWeights,
    Split,
    Stage,
    Volume,
    merge_label,
    read_manifest,
    read_volume,
    volume_bytes,
    volume_from_bytes,
    write_volume,
)
from gandalf.errors import CorruptVolume, FormatError, InvalidStage, InvalidTaskLabel


def test_zero_volume_roundtrip(tmp_path):
    v = Volume(np.zeros((1, 4, 4, 4), np.float32), (1.0, 1.0, 1.0))
    write_volume(v, tmp_path / "z.gvol")
    assert read_volume(tmp_path / "z.gvol") == v


def test_wrong_magic_is_format_error():
    buf = bytearray(volume_bytes(Volume(np.zeros((2, 2, 2), np.float32), (1, 1, 1))))
    buf[:4] = b"XVOL"
    with pytest.raises(FormatError):
        volume_from_bytes(bytes(buf))


def test_bad_version_is_format_error():
    buf = bytearray(volume_bytes(Volume(np.zeros((2, 2, 2), np.float32), (1, 1, 1))))
    buf[4:8] = struct.pack("<I", 7)
    with pytest.raises(FormatError):
        volume_from_bytes(bytes(buf))


def test_truncated_payload_is_corrupt():
    buf = volume_bytes(Volume(np.ones((2, 3, 3), np.float32), (1, 1, 1)))
    with pytest.raises(CorruptVolume):
        volume_from_bytes(buf[:-4])


def test_pet_sized_file_length(tmp_path):
    v = Volume(np.zeros((2, 93, 76, 76), np.float32), (2.0, 2.0, 2.0))
    write_volume(v, tmp_path / "p.gvol")
    header = 4 + 4 + 4 + 4 * 4 + 3 * 4
    assert (tmp_path / "p.gvol").stat().st_size == 4 * 2 * 93 * 76 * 76 + header


def test_volume_values_are_read_only():
    v = Volume(np.zeros((2, 2, 2), np.float32), (1, 1, 1))
    with pytest.raises(ValueError):
        v.values[0, 0, 0] = 1.0


@settings(max_examples=60, deadline=None)
@given(
    hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=6),
               elements=st.floats(width=32)),
    st.tuples(*[st.floats(0.125, 8.0, width=32)] * 3),
)
def test_gvol_roundtrip_bit_exact(values, voxel):
    v = Volume(values, voxel)
    buf = volume_bytes(v)
    back = volume_from_bytes(buf)
    assert back == v
    assert volume_bytes(back) == buf


def test_merge_label_examples():
    assert merge_label(Stage.EMCI, 3) == 1
    assert merge_label(Stage.LMCI, 3) == 1
    assert merge_label(Stage.CN, 4) == 0
    assert merge_label(Stage.AD, 4) == 3
    assert merge_label("AD", 2) == 1
    with pytest.raises(InvalidTaskLabel):
        merge_label(Stage.LMCI, 2)
    with pytest.raises(InvalidTaskLabel):
        merge_label(Stage.CN, 5)


def test_stage_parse_rejects_unknown():
    assert Stage.parse("lmci") is Stage.LMCI
    assert Stage.parse(3) is Stage.AD
    with pytest.raises(InvalidStage):
        Stage.parse(7)


def test_loss_weights_replace():
    w = LossWeights(0.01, 100, 100, 0.01, 100)
    assert w.replace(lambda_l1=1.0).as_tuple() == (0.01, 100, 100, 0.01, 1.0)


def test_manifest_roundtrip(tiny_manifest):
    m = read_manifest(tiny_manifest)
    counts = m.split_counts()
    assert sum(counts.values()) == 20
    entry = m.select(Split.TRAIN)[0]
    mri, pet = m.load(entry)
    assert mri.dims == (1, 8, 8, 8) and pet.dims == (2, 5, 4, 4)
    lines = tiny_manifest.read_text().splitlines()
    assert [e.to_line() for e in m.entries] == lines
