from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gandalf import checkpoint as gckp
from gandalf.core import LossWeights
from gandalf.errors import CheckpointError

W = LossWeights(0.01, 100.0, 100.0, 0.01, 100.0)

blob_arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
                         elements=st.floats(width=32))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.tuples(*[st.floats(allow_nan=False)] * 5),
    st.dictionaries(st.text(min_size=1, max_size=12), blob_arrays, max_size=5),
)
def test_gckp_roundtrip_bit_exact(epoch, lambdas, blobs):
    ck = gckp.Checkpoint(epoch, LossWeights(*lambdas), {"note": "x", "n": [1, 2]}, blobs)
    buf = gckp.to_bytes(ck)
    back = gckp.from_bytes(buf)
    assert back.epoch == epoch
    assert back.weights.as_tuple() == lambdas
    assert back.meta == ck.meta
    assert list(back.blobs) == list(blobs)
    for k in blobs:
        assert back.blobs[k].shape == blobs[k].shape
        assert back.blobs[k].tobytes() == blobs[k].tobytes()
    assert gckp.to_bytes(back) == buf


def test_save_load_atomic(tmp_path):
    ck = gckp.Checkpoint(3, W, {"a": 1}, {"G/w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    path = gckp.save(ck, tmp_path / "sub" / "c.gckp")
    assert [p.name for p in path.parent.iterdir()] == ["c.gckp"]
    back = gckp.load(path)
    assert back.blobs["G/w"].tolist() == [[0, 1, 2], [3, 4, 5]]


def test_corrupted_blob_length(tmp_path):
    ck = gckp.Checkpoint(0, W, {}, {"x": np.ones(4, np.float32)})
    buf = gckp.to_bytes(ck)
    with pytest.raises(CheckpointError):
        gckp.from_bytes(buf[:-2])
    with pytest.raises(CheckpointError):
        gckp.from_bytes(buf + b"\0\0\0\0")


def test_bad_header():
    with pytest.raises(CheckpointError):
        gckp.from_bytes(b"NOPE" + bytes(60))
    buf = bytearray(gckp.to_bytes(gckp.Checkpoint(0, W)))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(CheckpointError):
        gckp.from_bytes(bytes(buf))
    with pytest.raises(CheckpointError):
        gckp.from_bytes(gckp.to_bytes(gckp.Checkpoint(0, W, {"k": 1}))[:30])


def test_blob_hash_prefix_and_order():
    a = {"G/a": np.ones(2, np.float32), "D/b": np.zeros(3, np.float32)}
    b = {"D/b": np.zeros(3, np.float32), "G/a": np.ones(2, np.float32)}
    assert gckp.blob_hash(a) == gckp.blob_hash(b)
    assert gckp.blob_hash(a, "G/") != gckp.blob_hash(a, "D/")
    c = dict(a, **{"G/a": np.array([1, 1.0000001], np.float32)})
    assert gckp.blob_hash(c, "G/") != gckp.blob_hash(a, "G/")
