"""Alternating generator / discriminator training with adaptive loss weights.

One D step then one G step per batch.  At every epoch boundary the mean
losses go to the stabilizer; an accepted epoch becomes the new rollback
target, a rejected one is undone by restoring the last accepted checkpoint.
"""
from __future__ import annotations

import base64
import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import checkpoint as gckp
from .core import LossWeights, Manifest, Split, merge_label, read_manifest
from .errors import AbortRun, ConfigError, ShapeError
from .nets import (
    Discriminator,
    Generator,
    build_discriminator,
    build_generator,
    init_weights,
)
from .objectives import cgan_d_terms, cgan_g_adv_loss, cls_loss, d_total, g_total, l1_loss
from .schedule import ScheduleConfig, weights_for_epoch
from .stabilize import Decision, StabilizerState, Variant, observe_epoch, restore

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"paper": 1000, "desk": 60, "tiny": 60}
DEFAULT_BATCH = {"paper": 1, "desk": 4, "tiny": 4}

# plain conditional-GAN + L1 weights for the first stage of the two-stage baseline
PIX2PIX_WEIGHTS = LossWeights(1.0, 0.0, 1.0, 0.0, 100.0)


@dataclass
class RunConfig:
    mode: str = "gandalf"  # gandalf | pix2pix_then_cnn
    task: int = 4
    scale: str = "desk"
    epochs: int | None = None
    batch_size: int | None = None
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    data: str = ""
    out: str = ""
    tracer: str = "av45"
    width: int | None = None
    stabilizer: bool = True
    epsilon_rel: float = 1e-3
    max_consecutive: int = 3
    gamma: float = 0.5
    # D's class head also learns from (MRI, G(MRI)) pairs, weighted like the adversarial term
    d_cls_on_fake: bool = True
    stage2_epochs: int | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        if self.mode not in ("gandalf", "pix2pix_then_cnn"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.task not in (2, 3, 4):
            raise ConfigError("task must be 2, 3 or 4")
        if self.scale not in DEFAULT_EPOCHS:
            raise ConfigError(f"unknown scale {self.scale!r}")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.scale]
        if self.batch_size is None:
            self.batch_size = DEFAULT_BATCH[self.scale]
        if self.stage2_epochs is None:
            self.stage2_epochs = self.epochs
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def to_meta(self) -> dict:
        d = asdict(self)
        d["schedule"] = {k: v for k, v in asdict(self.schedule).items()}
        d["schedule"]["overrides"] = [list(p) for p in self.schedule.overrides]
        return d


@dataclass
class EpochRecord:
    phase: str
    wall_epoch: int
    epoch: int
    d_total: float
    d_adv_real: float
    d_adv_fake: float
    d_cls_real: float
    g_total: float
    g_adv: float
    g_cls_fake: float
    g_l1: float
    lambda_gan_d: float
    lambda_cls_d: float
    lambda_gan_g: float
    lambda_cls_g: float
    lambda_l1: float
    decision: str
    cls_d_multiplier: float
    cls_g_multiplier: float
    nonfinite: bool
    state_hash: str

    def to_line(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_line(cls, line: str) -> "EpochRecord":
        return cls(**json.loads(line))


def read_run_log(path) -> list[EpochRecord]:
    return [EpochRecord.from_line(l) for l in Path(path).read_text().splitlines() if l.strip()]


# -- data ---------------------------------------------------------------------

@dataclass
class Batchable:
    mri: torch.Tensor
    pet: torch.Tensor
    labels: torch.Tensor
    ids: list[str]

    def __len__(self) -> int:
        return len(self.ids)


def load_split(manifest: Manifest | str, split: Split | str, task: int, tracer: str = "av45") -> Batchable:
    if not isinstance(manifest, Manifest):
        manifest = read_manifest(manifest)
    entries = manifest.select(split, task)
    mris, pets, labels = [], [], []
    for e in entries:
        mri, pet = manifest.load(e, tracer)
        mris.append(mri.values)
        pets.append(pet.values)
        labels.append(merge_label(e.stage, task))
    if not entries:
        return Batchable(torch.zeros(0), torch.zeros(0), torch.zeros(0, dtype=torch.long), [])
    return Batchable(
        torch.from_numpy(np.stack(mris)),
        torch.from_numpy(np.stack(pets)),
        torch.tensor(labels, dtype=torch.long),
        [e.subject_id for e in entries],
    )


# -- state (de)serialisation ------------------------------------------------------

def _module_blobs(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def _load_module(module: torch.nn.Module, blobs: dict[str, np.ndarray]) -> None:
    state = module.state_dict()
    if set(state) != set(blobs):
        raise ShapeError("checkpoint does not match the network architecture")
    module.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in blobs.items()})


@torch.no_grad()
def norm_statistics(D: Discriminator, mri: torch.Tensor, pet: torch.Tensor,
                    chunk: int = 32) -> dict[str, np.ndarray]:
    """Batch-norm running statistics of ``D`` re-estimated over (mri, pet).

    Training normalizes with per-batch statistics; the momentum averages kept
    along the way mix real and generated inputs from many past parameter
    states.  Inference uses these whole-set statistics instead.  ``D`` itself
    is left untouched.
    """
    probe = copy.deepcopy(D)
    norms = [m for m in probe.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]
    for m in norms:
        m.reset_running_stats()
        m.momentum = None  # cumulative average over the chunks
    probe.train()
    for i in range(0, len(mri), chunk):
        probe(mri[i:i + chunk], pet[i:i + chunk])
    return {k: v for k, v in _module_blobs(probe, "").items() if k.rsplit(".", 1)[-1].startswith("running_")}


def apply_norm_statistics(D: Discriminator, stats: dict[str, np.ndarray]) -> None:
    buffers = dict(D.named_buffers())
    if not set(stats) <= set(buffers):
        raise ShapeError("checkpoint normalization statistics do not match the network")
    for name, v in stats.items():
        buffers[name].copy_(torch.from_numpy(np.array(v)))


def _optim_blobs(opt: torch.optim.Optimizer, module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        out[f"{prefix}{name}/exp_avg"] = st["exp_avg"].detach().numpy().copy()
        out[f"{prefix}{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().numpy().copy()
        out[f"{prefix}{name}/step"] = np.array([float(st["step"])], dtype=np.float32)
    return out


def _load_optim(opt: torch.optim.Optimizer, module: torch.nn.Module, blobs: dict[str, np.ndarray]) -> None:
    opt.state.clear()
    for name, p in module.named_parameters():
        if f"{name}/step" not in blobs:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(blobs[f"{name}/step"][0]), dtype=torch.float32),
            "exp_avg": torch.from_numpy(np.array(blobs[f"{name}/exp_avg"])),
            "exp_avg_sq": torch.from_numpy(np.array(blobs[f"{name}/exp_avg_sq"])),
        }


def _torch_rng_b64() -> str:
    return base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode()


def _set_torch_rng(b64: str) -> None:
    raw = np.frombuffer(base64.b64decode(b64), dtype=np.uint8).copy()
    torch.set_rng_state(torch.from_numpy(raw))


# -- trainer ------------------------------------------------------------------

class Trainer:
    """Owns G, D, their optimizers and all RNG / stabilizer state for one run."""

    def __init__(self, cfg: RunConfig, data: Batchable | None = None,
                 emit: Callable[[EpochRecord], None] | None = None):
        self.cfg = cfg
        self.out = Path(cfg.out) if cfg.out else None
        self.emit = emit
        n_classes = cfg.task
        self.g_spec = build_generator(cfg.scale, tracer=cfg.tracer, width=cfg.width)
        self.d_spec = build_discriminator(cfg.scale, n_classes=n_classes, width=cfg.width)
        torch.manual_seed(cfg.seed)
        self.G = init_weights(Generator(self.g_spec), 2 * cfg.seed + 1)
        self.D = init_weights(Discriminator(self.d_spec), 2 * cfg.seed + 2)
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = torch.optim.Adam(self.G.parameters(), lr=cfg.learning_rate, betas=betas)
        self.opt_d = torch.optim.Adam(self.D.parameters(), lr=cfg.learning_rate, betas=betas)
        self.data_rng = np.random.default_rng([cfg.seed, 0xDA7A])
        self.stab = StabilizerState(epsilon_rel=cfg.epsilon_rel, max_consecutive=cfg.max_consecutive,
                                    gamma=cfg.gamma)
        self.epoch = 0       # accepted epochs; indexes the schedule
        self.wall_epoch = 0  # every epoch run, including rolled-back ones
        self.records: list[EpochRecord] = []
        self.data = data if data is not None else load_split(cfg.data, Split.TRAIN, cfg.task, cfg.tracer)
        if len(self.data) == 0:
            raise ConfigError("training split is empty for this task")
        if tuple(self.data.mri.shape[1:]) != tuple(self.g_spec.input_shape):
            raise ShapeError(f"data MRI extent {tuple(self.data.mri.shape[1:])} does not fit scale {cfg.scale}")

    # state ----------------------------------------------------------------

    def model_meta(self, kind: str = "gandalf") -> dict:
        return {"kind": kind, "scale": self.cfg.scale, "width": self.cfg.width, "tracer": self.cfg.tracer,
                "n_classes": self.cfg.task, "task": self.cfg.task}

    def state_hash(self) -> str:
        blobs = {**_module_blobs(self.G, "G/"), **_module_blobs(self.D, "D/")}
        return gckp.blob_hash(blobs)

    def state_hash_g(self) -> str:
        return gckp.blob_hash(_module_blobs(self.G, "G/"))

    def snapshot(self, weights: LossWeights, kind: str = "gandalf") -> gckp.Checkpoint:
        blobs = {
            **_module_blobs(self.G, "G/"),
            **_module_blobs(self.D, "D/"),
            **_optim_blobs(self.opt_g, self.G, "optG/"),
            **_optim_blobs(self.opt_d, self.D, "optD/"),
        }
        meta = {
            "model": self.model_meta(kind),
            "run": self.cfg.to_meta(),
            "torch_rng": _torch_rng_b64(),
            "data_rng": self.data_rng.bit_generator.state,
            "stabilizer": self.stab.to_dict(),
            "wall_epoch": self.wall_epoch,
        }
        return gckp.Checkpoint(self.epoch, weights, meta, blobs)

    def load_state(self, ckpt: gckp.Checkpoint, data_rng: bool = True, trainer_state: bool = True) -> None:
        _load_module(self.G, ckpt.subset("G/"))
        _load_module(self.D, ckpt.subset("D/"))
        _load_optim(self.opt_g, self.G, ckpt.subset("optG/"))
        _load_optim(self.opt_d, self.D, ckpt.subset("optD/"))
        _set_torch_rng(ckpt.meta["torch_rng"])
        if data_rng:
            self.data_rng.bit_generator.state = ckpt.meta["data_rng"]
        if trainer_state:
            self.epoch = ckpt.epoch
            self.wall_epoch = ckpt.meta["wall_epoch"]
            self.stab = StabilizerState.from_dict(ckpt.meta["stabilizer"])

    # epochs ---------------------------------------------------------------

    def current_weights(self) -> LossWeights:
        if self.cfg.mode != "gandalf":
            return PIX2PIX_WEIGHTS
        return weights_for_epoch(self.cfg.schedule, self.epoch,
                                 self.stab.adjustment_multiplier_d, self.stab.adjustment_multiplier_g)

    def _batches(self):
        n = len(self.data)
        order = self.data_rng.permutation(n)
        bs = self.cfg.batch_size
        for i in range(0, n, bs):
            idx = torch.from_numpy(order[i:i + bs])
            yield self.data.mri[idx], self.data.pet[idx], self.data.labels[idx]

    def run_epoch(self, w: LossWeights, use_cls: bool = True) -> dict[str, float]:
        sums: dict[str, list[float]] = {k: [] for k in (
            "d_total", "d_adv_real", "d_adv_fake", "d_cls_real", "g_total", "g_adv", "g_cls_fake", "g_l1")}
        sizes = []
        zero = torch.zeros(())
        self.G.train()
        self.D.train()
        for mri, pet, labels in self._batches():
            # D step, G frozen
            with torch.no_grad():
                fake = self.G(mri)
            patch_real, logits_real = self.D(mri, pet)
            patch_fake, logits_fake = self.D(mri, fake)
            if use_cls:
                d = d_total(w, patch_real, patch_fake, logits_real, labels)
                d_loss = d.total
                if self.cfg.d_cls_on_fake:
                    d_loss = d_loss + w.lambda_gan_d * cls_loss(logits_fake, labels)
                d_parts = (d.adv_real, d.adv_fake, d.cls_real)
            else:
                adv_real, adv_fake = cgan_d_terms(patch_real, patch_fake)
                d_loss = w.lambda_gan_d * (adv_real + adv_fake)
                d_parts = (adv_real, adv_fake, zero)
            self.opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            self.opt_d.step()

            # G step, D frozen
            self.D.requires_grad_(False)
            fake = self.G(mri)
            patch_fake, logits_fake = self.D(mri, fake)
            if use_cls:
                g = g_total(w, patch_fake, logits_fake, labels, pet, fake)
                g_loss, g_parts = g.total, (g.adv, g.cls_fake, g.l1)
            else:
                adv, l1 = cgan_g_adv_loss(patch_fake), l1_loss(pet, fake)
                g_loss = w.lambda_gan_g * adv + w.lambda_l1 * l1
                g_parts = (adv, zero, l1)
            self.opt_g.zero_grad(set_to_none=True)
            g_loss.backward()
            self.opt_g.step()
            self.D.requires_grad_(True)

            vals = (d_loss, *d_parts, g_loss, *g_parts)
            for key, v in zip(sums, vals):
                sums[key].append(float(v.detach()) * len(labels))
            sizes.append(len(labels))
        n = sum(sizes)
        return {k: math.fsum(v) / n for k, v in sums.items()}

    # driver ---------------------------------------------------------------

    def _ckpt_path(self, name: str) -> Path | None:
        return self.out / name if self.out else None

    def _save_accepted(self, w: LossWeights) -> str:
        ckpt = self.snapshot(w)
        path = self._ckpt_path("accepted.gckp")
        if path is None:
            self._accepted_mem = ckpt
            return "memory"
        gckp.save(ckpt, path)
        return str(path)

    def _restore_accepted(self) -> None:
        if self.stab.checkpoint_ref == "memory":
            ckpt = self._accepted_mem
        else:
            ckpt = restore(self.stab.checkpoint_ref)
        # the data-order stream keeps advancing so the retry sees new batches
        self.load_state(ckpt, data_rng=False, trainer_state=False)

    def _record(self, phase: str, wall: int, k: int, w: LossWeights, means: dict,
                decision: Decision) -> EpochRecord:
        rec = EpochRecord(
            phase=phase, wall_epoch=wall, epoch=k,
            **means, **{n: float(v) for n, v in zip(LossWeights.NAMES, w.as_tuple())},
            decision=decision.variant.value,
            cls_d_multiplier=self.stab.adjustment_multiplier_d,
            cls_g_multiplier=self.stab.adjustment_multiplier_g,
            nonfinite=decision.nonfinite,
            state_hash=self.state_hash(),
        )
        self.records.append(rec)
        if self.emit:
            self.emit(rec)
        return rec

    def fit(self, epochs: int | None = None, phase: str = "gandalf") -> list[EpochRecord]:
        """Run ``epochs`` more wall epochs (default: up to ``cfg.epochs`` in total)."""
        target = self.cfg.epochs if epochs is None else self.wall_epoch + epochs
        use_cls = self.cfg.mode == "gandalf"
        stabilize = self.cfg.stabilizer and self.cfg.mode == "gandalf"
        if self.stab.checkpoint_ref is None or (
            self.stab.checkpoint_ref != "memory" and not Path(self.stab.checkpoint_ref).exists()
        ):
            self.stab = _replace_ref(self.stab, self._save_accepted(self.current_weights()))
        new = []
        while self.wall_epoch < target:
            wall, k = self.wall_epoch, self.epoch
            w = self.current_weights()
            means = self.run_epoch(w, use_cls=use_cls)
            if stabilize:
                decision, state = observe_epoch(self.stab, means["d_total"], means["g_total"],
                                                checkpoint_ref=self.stab.checkpoint_ref)
            else:
                nonfinite = not (math.isfinite(means["d_total"]) and math.isfinite(means["g_total"]))
                decision, state = Decision(Variant.ACCEPT, nonfinite=nonfinite), self.stab
            self.stab = state
            self.wall_epoch += 1
            if decision.accepted and decision.nonfinite:
                new.append(self._record(phase, wall, k, w, means, decision))
                raise AbortRun(f"non-finite epoch loss at wall epoch {wall}")
            if decision.accepted:
                self.epoch += 1
                self.stab = _replace_ref(self.stab, self._save_accepted(w))
            else:
                self._restore_accepted()
                log.info("wall epoch %d: %s, cls multipliers D=%g G=%g", wall, decision.variant.value,
                         self.stab.adjustment_multiplier_d, self.stab.adjustment_multiplier_g)
            new.append(self._record(phase, wall, k, w, means, decision))
        return new

    def save_final(self, name: str = "final.gckp", kind: str = "gandalf") -> Path | None:
        """Checkpoint plus D's inference-time normalization statistics over (MRI, G(MRI))."""
        path = self._ckpt_path(name)
        if path is not None:
            ckpt = self.snapshot(self.current_weights(), kind)
            stats = norm_statistics(self.D, self.data.mri, synthesize(self.G, self.data.mri))
            ckpt.blobs.update({"Dstats/" + k: v for k, v in stats.items()})
            gckp.save(ckpt, path)
        return path


def _replace_ref(state: StabilizerState, ref: str) -> StabilizerState:
    from dataclasses import replace
    return replace(state, checkpoint_ref=ref)


class RunLog:
    """Line-delimited EpochRecords; wall-clock timing goes to a sidecar file."""

    def __init__(self, out: Path, echo: bool = False, append: bool = False):
        out.mkdir(parents=True, exist_ok=True)
        mode = "a" if append else "w"
        self.fh = open(out / "run_log.jsonl", mode, encoding="utf-8")
        self.timing = open(out / "timing.jsonl", mode, encoding="utf-8")
        self.echo = echo
        self.t0 = time.perf_counter()

    def __call__(self, rec: EpochRecord) -> None:
        line = rec.to_line()
        self.fh.write(line + "\n")
        self.fh.flush()
        now = time.perf_counter()
        self.timing.write(json.dumps({"phase": rec.phase, "wall_epoch": rec.wall_epoch,
                                      "seconds": now - self.t0}) + "\n")
        self.timing.flush()
        self.t0 = now
        if self.echo:
            print(line, flush=True)

    def close(self) -> None:
        self.fh.close()
        self.timing.close()


def train(cfg: RunConfig, resume_from: str | Path | None = None, echo: bool = False) -> Path | None:
    """GANDALF training. Returns the final checkpoint path (None without ``cfg.out``)."""
    if cfg.mode != "gandalf":
        return train_baseline(cfg, echo=echo)
    runlog = RunLog(Path(cfg.out), echo, append=resume_from is not None) if cfg.out else None
    try:
        trainer = Trainer(cfg, emit=runlog)
        if resume_from is not None:
            trainer.load_state(gckp.load(resume_from))
            trainer.stab = _replace_ref(trainer.stab, trainer._save_accepted(trainer.current_weights()))
        trainer.fit()
        return trainer.save_final()
    finally:
        if runlog:
            runlog.close()


# -- two-stage baseline & classifiers ------------------------------------------

def fit_classifier(D: Discriminator, mri: torch.Tensor, pet: torch.Tensor, labels: torch.Tensor,
                   epochs: int, cfg: RunConfig, rng: np.random.Generator,
                   on_epoch: Callable[[int, float], None] | None = None) -> None:
    """Train D's trunk and class head with the classification loss alone."""
    opt = torch.optim.Adam(D.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    D.train()
    n = len(labels)
    for ep in range(epochs):
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[i:i + cfg.batch_size])
            _, logits = D(mri[idx], pet[idx])
            loss = cls_loss(logits, labels[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()) * len(idx))
        if on_epoch:
            on_epoch(ep, math.fsum(losses) / n)


@torch.no_grad()
def synthesize(G: Generator, mri: torch.Tensor, batch: int = 8) -> torch.Tensor:
    G.eval()
    return torch.cat([G(mri[i:i + batch]) for i in range(0, len(mri), batch)]) if len(mri) else mri


def train_baseline(cfg: RunConfig, echo: bool = False) -> Path | None:
    """pix2pix synthesis (adversarial + L1 only), then a classifier on (MRI, frozen G(MRI))."""
    if cfg.mode != "pix2pix_then_cnn":
        raise ConfigError("train_baseline needs mode = pix2pix_then_cnn")
    runlog = RunLog(Path(cfg.out), echo) if cfg.out else None
    try:
        trainer = Trainer(cfg, emit=runlog)
        trainer.fit(phase="stage1")
        g_hash = trainer.state_hash_g()
        fakes = synthesize(trainer.G, trainer.data.mri)
        clf = init_weights(Discriminator(trainer.d_spec), 2 * cfg.seed + 3)
        rng = np.random.default_rng([cfg.seed, 0xC1A5])

        def on_epoch(ep, loss):
            rec = EpochRecord(
                phase="stage2", wall_epoch=ep, epoch=ep, d_total=loss, d_adv_real=0.0, d_adv_fake=0.0,
                d_cls_real=loss, g_total=0.0, g_adv=0.0, g_cls_fake=0.0, g_l1=0.0,
                lambda_gan_d=0.0, lambda_cls_d=1.0, lambda_gan_g=0.0, lambda_cls_g=0.0, lambda_l1=0.0,
                decision=Variant.ACCEPT.value, cls_d_multiplier=1.0, cls_g_multiplier=1.0,
                nonfinite=not math.isfinite(loss), state_hash=trainer.state_hash_g(),
            )
            trainer.records.append(rec)
            if runlog:
                runlog(rec)
            if not math.isfinite(loss):
                raise AbortRun(f"non-finite classifier loss at stage-2 epoch {ep}")

        fit_classifier(clf, trainer.data.mri, fakes, trainer.data.labels, cfg.stage2_epochs, cfg, rng, on_epoch)
        assert trainer.state_hash_g() == g_hash
        trainer.D = clf
        trainer.opt_d = torch.optim.Adam(clf.parameters(), lr=cfg.learning_rate)
        return trainer.save_final(kind="baseline")
    finally:
        if runlog:
            runlog.close()


# -- inference ------------------------------------------------------------------

class LoadedModel:
    """Frozen G and D (or a classifier) rebuilt from a checkpoint."""

    def __init__(self, ckpt: gckp.Checkpoint | str | Path):
        if not isinstance(ckpt, gckp.Checkpoint):
            ckpt = gckp.load(ckpt)
        m = ckpt.meta.get("model")
        if not m:
            raise ShapeError("checkpoint carries no model description")
        self.kind = m["kind"]
        self.task = int(m["task"])
        self.g_spec = build_generator(m["scale"], tracer=m["tracer"], width=m["width"])
        self.d_spec = build_discriminator(m["scale"], n_classes=m["n_classes"], width=m["width"])
        self.D = Discriminator(self.d_spec)
        _load_module(self.D, ckpt.subset("D/"))
        apply_norm_statistics(self.D, ckpt.subset("Dstats/"))
        self.D.eval()
        self.G = None
        if self.kind != "probe":
            self.G = Generator(self.g_spec)
            _load_module(self.G, ckpt.subset("G/"))
            self.G.eval()

    @torch.no_grad()
    def synthesize(self, mri: torch.Tensor) -> torch.Tensor:
        if self.G is None:
            raise ShapeError("probe checkpoints carry no generator")
        return self.G(self._check(mri))

    def _check(self, mri: torch.Tensor) -> torch.Tensor:
        mri = torch.from_numpy(np.array(mri, dtype=np.float32)) if isinstance(mri, np.ndarray) else mri.float()
        if mri.dim() == len(self.g_spec.input_shape):
            mri = mri.unsqueeze(0)
        if tuple(mri.shape[1:]) != tuple(self.g_spec.input_shape):
            raise ShapeError(f"MRI extent {tuple(mri.shape[1:])} != {tuple(self.g_spec.input_shape)}")
        return mri

    @torch.no_grad()
    def probabilities(self, mri: torch.Tensor) -> torch.Tensor:
        mri = self._check(mri)
        if self.G is None:
            pet = torch.zeros((len(mri), *self.d_spec.pet_shape))
        else:
            pet = self.G(mri)
        _, logits = self.D(mri, pet)
        return torch.softmax(logits.double(), dim=-1)


def classify(model: LoadedModel | gckp.Checkpoint | str | Path, mri) -> np.ndarray:
    """Class probabilities for one MRI volume from D's class head on (MRI, G(MRI))."""
    if not isinstance(model, LoadedModel):
        model = LoadedModel(model)
    values = mri.values if hasattr(mri, "values") else mri
    return model.probabilities(torch.tensor(np.asarray(values)))[0].numpy()
