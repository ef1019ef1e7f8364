from __future__ import annotations

import numpy as np
import pytest
import torch

from gandalf.errors import CheckpointError
from gandalf.stabilize import StabilizerState, Variant, observe_epoch, replay, restore
from traces import TRACES


def test_first_epoch_accepts():
    d, s = observe_epoch(StabilizerState(), 3.0, 4.0, checkpoint_ref="a")
    assert d.variant is Variant.ACCEPT
    assert (s.prev_d_loss, s.prev_g_loss, s.checkpoint_ref) == (3.0, 4.0, "a")


def test_d_rise_halves_cls_d():
    _, s = observe_epoch(StabilizerState(), 0.9, 1.0)
    d, s2 = observe_epoch(s, 0.95, 1.0)
    assert d.variant is Variant.ROLLBACK_D
    assert (d.cls_d_factor, d.cls_g_factor) == (0.5, 1.0)
    assert s2.adjustment_multiplier_d == 0.5
    assert s2.prev_d_loss == 0.9  # rollback keeps the accepted reference


def test_observe_is_pure():
    s = StabilizerState(prev_d_loss=1.0, prev_g_loss=1.0)
    a = observe_epoch(s, 2.0, 1.0)
    b = observe_epoch(s, 2.0, 1.0)
    assert a == b
    assert s.consecutive_rollbacks_d == 0


def test_nonfinite_flag():
    _, s = observe_epoch(StabilizerState(), 1.0, 1.0)
    d, _ = observe_epoch(s, float("nan"), 1.0)
    assert d.nonfinite and d.variant is Variant.ROLLBACK_D


@pytest.mark.parametrize("name,trace,want,mults", TRACES, ids=[t[0] for t in TRACES])
def test_scripted_traces(name, trace, want, mults):
    state = StabilizerState()
    got = []
    for d_loss, g_loss in trace:
        dec, state = observe_epoch(state, d_loss, g_loss)
        got.append(dec.variant.value)
    assert got == want
    assert (state.adjustment_multiplier_d, state.adjustment_multiplier_g) == mults
    assert [d.variant.value for d in replay(trace)] == want


def test_state_dict_roundtrip():
    s = StabilizerState(prev_d_loss=1.5, consecutive_rollbacks_g=2, adjustment_multiplier_d=0.25)
    assert StabilizerState.from_dict(s.to_dict()) == s


def test_restore_missing_or_corrupt(tmp_path):
    with pytest.raises(CheckpointError):
        restore(str(tmp_path / "nope.gckp"))
    (tmp_path / "bad.gckp").write_bytes(b"GCKP\x01\x00")
    with pytest.raises(CheckpointError):
        restore(str(tmp_path / "bad.gckp"))
    with pytest.raises(CheckpointError):
        restore("")
