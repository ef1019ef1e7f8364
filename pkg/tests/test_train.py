from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from gandalf import checkpoint as gckp
from gandalf.core import LossWeights, read_manifest
from gandalf.errors import AbortRun, ConfigError
from gandalf.phantom import PhantomConfig, generate_dataset
from gandalf.schedule import ScheduleConfig
from gandalf.train import (
    EpochRecord,
    LoadedModel,
    RunConfig,
    Trainer,
    classify,
    norm_statistics,
    synthesize,
    read_run_log,
    train,
    train_baseline,
)


def _cfg(manifest, out="", **kw):
    kw.setdefault("epochs", 2)
    return RunConfig(scale="tiny", data=str(manifest), out=str(out), **kw)


def test_smoke_two_epochs(tiny_manifest, tmp_path):
    final = train(_cfg(tiny_manifest, tmp_path))
    recs = read_run_log(tmp_path / "run_log.jsonl")
    assert [r.wall_epoch for r in recs] == [0, 1]
    assert recs[0].decision == "Accept"
    assert (recs[0].lambda_gan_d, recs[0].lambda_cls_d) == (0.01, 100.0)
    model = LoadedModel(final)
    assert model.kind == "gandalf"
    assert len((tmp_path / "timing.jsonl").read_text().splitlines()) == 2


def test_record_line_roundtrip():
    rec = EpochRecord("gandalf", 3, 2, *([0.5] * 8), 0.01, 100, 100, 0.01, 100, "RollbackD", 0.5, 1.0, False, "ab")
    assert EpochRecord.from_line(rec.to_line()) == rec


def test_runs_are_bit_identical(tiny_manifest, tmp_path):
    train(_cfg(tiny_manifest, tmp_path / "a", epochs=4))
    train(_cfg(tiny_manifest, tmp_path / "b", epochs=4))
    assert (tmp_path / "a" / "run_log.jsonl").read_bytes() == (tmp_path / "b" / "run_log.jsonl").read_bytes()
    a, b = gckp.load(tmp_path / "a" / "final.gckp"), gckp.load(tmp_path / "b" / "final.gckp")
    # meta differs only in the output paths it records
    assert gckp.blob_hash(a.blobs) == gckp.blob_hash(b.blobs)
    assert a.meta["torch_rng"] == b.meta["torch_rng"] and a.meta["data_rng"] == b.meta["data_rng"]


def test_seed_changes_run(tiny_manifest):
    a = Trainer(_cfg(tiny_manifest, seed=0))
    b = Trainer(_cfg(tiny_manifest, seed=1))
    assert a.state_hash() != b.state_hash()


def test_pure_l1_decreases(tmp_path):
    m = generate_dataset(PhantomConfig(scale="tiny", n_subjects=20, seed=1, noise_sigma=0.0), tmp_path / "d")
    zero = tuple((n, 0.0) for n in LossWeights.NAMES if n != "lambda_l1")
    cfg = _cfg(m, epochs=5, stabilizer=False, schedule=ScheduleConfig(overrides=zero), learning_rate=1e-3)
    t = Trainer(cfg)
    l1 = [r.g_l1 for r in t.fit()]
    assert all(b < a for a, b in zip(l1, l1[1:])), l1


def test_parameter_isolation(tiny_manifest):
    t = Trainer(_cfg(tiny_manifest))
    w = t.current_weights()
    g0 = {k: v.clone() for k, v in t.G.state_dict().items()}
    d0 = {k: v.clone() for k, v in t.D.state_dict().items()}
    mri, pet, labels = next(t._batches())
    # the D step alone must leave G untouched
    with torch.no_grad():
        fake = t.G(mri)
    from gandalf.objectives import d_total
    pr, lr = t.D(mri, pet)
    pf, _ = t.D(mri, fake)
    t.opt_d.zero_grad()
    d_total(w, pr, pf, lr, labels).total.backward()
    t.opt_d.step()
    assert all(torch.equal(g0[k], v) for k, v in t.G.state_dict().items())
    assert any(not torch.equal(d0[k], v) for k, v in t.D.state_dict().items())
    assert all(p.grad is None for p in t.G.parameters())


def test_full_epoch_touches_both(tiny_manifest):
    t = Trainer(_cfg(tiny_manifest))
    h_g, h = t.state_hash_g(), t.state_hash()
    t.run_epoch(t.current_weights())
    assert t.state_hash_g() != h_g and t.state_hash() != h


def test_rollback_restores_pre_rise_state(tiny_manifest):
    # a stabilizer so strict that any rise is rejected
    cfg = _cfg(tiny_manifest, epochs=6, epsilon_rel=-0.5)
    t = Trainer(cfg)
    recs = t.fit()
    accepted_hashes = {}
    last_accepted = None
    for r in recs:
        if r.decision in ("Accept", "ForcedAccept"):
            last_accepted = r.state_hash
        else:
            assert r.state_hash == last_accepted
            accepted_hashes[r.wall_epoch] = r.state_hash
    assert accepted_hashes, [r.decision for r in recs]


def test_resume_is_bit_exact(tiny_manifest, tmp_path):
    full = Trainer(_cfg(tiny_manifest, epochs=5))
    full_recs = full.fit()
    part = Trainer(_cfg(tiny_manifest, epochs=5))
    part.fit(epochs=2)
    ck = gckp.from_bytes(gckp.to_bytes(part.snapshot(part.current_weights())))
    resumed = Trainer(_cfg(tiny_manifest, epochs=5))
    resumed.load_state(ck)
    resumed.stab = resumed.stab.__class__(**{**resumed.stab.to_dict(), "checkpoint_ref": None})
    tail = resumed.fit()
    assert [r.to_line() for r in full_recs[2:]] == [r.to_line() for r in tail]


def test_resume_via_train(tiny_manifest, tmp_path):
    train(_cfg(tiny_manifest, tmp_path / "full", epochs=4))
    t = Trainer(_cfg(tiny_manifest, tmp_path / "part", epochs=2))
    t.fit()
    t.save_final("k2.gckp")
    train(_cfg(tiny_manifest, tmp_path / "part", epochs=4), resume_from=tmp_path / "part" / "k2.gckp")
    full = (tmp_path / "full" / "run_log.jsonl").read_text().splitlines()
    part = (tmp_path / "part" / "run_log.jsonl").read_text().splitlines()
    assert full[2:] == part[-2:]


def test_nonfinite_aborts(tiny_manifest, monkeypatch):
    t = Trainer(_cfg(tiny_manifest, epochs=3, stabilizer=False))

    def bad(*a, **k):
        return {k: float("nan") for k in ("d_total", "d_adv_real", "d_adv_fake", "d_cls_real",
                                          "g_total", "g_adv", "g_cls_fake", "g_l1")}
    monkeypatch.setattr(t, "run_epoch", bad)
    with pytest.raises(AbortRun):
        t.fit()
    assert t.records[-1].nonfinite


def test_baseline_two_stages(tiny_manifest, tmp_path):
    cfg = _cfg(tiny_manifest, tmp_path, mode="pix2pix_then_cnn", epochs=2, stage2_epochs=2)
    final = train_baseline(cfg)
    recs = read_run_log(tmp_path / "run_log.jsonl")
    assert [r.phase for r in recs] == ["stage1", "stage1", "stage2", "stage2"]
    assert all(r.lambda_cls_d == 0 and r.lambda_cls_g == 0 for r in recs[:2])
    # stage 2 never touches the generator
    assert recs[2].state_hash == recs[3].state_hash
    assert LoadedModel(final).kind == "baseline"


def test_classify_sums_to_one(tiny_manifest, tmp_path):
    final = train(_cfg(tiny_manifest, tmp_path, epochs=1))
    m = read_manifest(tiny_manifest)
    mri, _ = m.load(m.entries[0])
    p = classify(final, mri)
    assert p.shape == (4,)
    assert math.isclose(float(p.sum()), 1.0, rel_tol=1e-9)
    assert np.array_equal(p, classify(final, mri))


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(mode="bogus")
    with pytest.raises(ConfigError):
        RunConfig(task=5)
    assert RunConfig(scale="desk").epochs == 60


def test_norm_statistics_leave_model_untouched(tiny_manifest):
    t = Trainer(_cfg(tiny_manifest, epochs=1))
    t.fit()
    before = t.state_hash()
    stats = norm_statistics(t.D, t.data.mri, synthesize(t.G, t.data.mri))
    assert stats and all(k.rsplit(".", 1)[-1] in ("running_mean", "running_var") for k in stats)
    assert t.state_hash() == before


def test_final_checkpoint_carries_inference_statistics(tiny_manifest, tmp_path):
    t = Trainer(_cfg(tiny_manifest, tmp_path, epochs=1))
    t.fit()
    ck = gckp.load(t.save_final())
    stats = ck.subset("Dstats/")
    assert stats
    # training buffers are stored as they were; the loaded model uses the re-estimated ones
    live = dict(t.D.named_buffers())
    assert all(np.array_equal(ck.subset("D/")[k], live[k].numpy()) for k in stats)
    loaded = dict(LoadedModel(ck).D.named_buffers())
    assert all(np.array_equal(loaded[k].numpy(), v) for k, v in stats.items())


def test_fake_pair_class_term_changes_d_loss(tiny_manifest):
    on = Trainer(_cfg(tiny_manifest, epochs=1)).fit()[0]
    off = Trainer(_cfg(tiny_manifest, epochs=1, d_cls_on_fake=False)).fit()[0]
    assert on.d_total != off.d_total
