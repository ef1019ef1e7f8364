"""Generator / discriminator specs, shape inference and torch modules.

The generator is a U-Net whose encoder runs at MRI resolution and whose last
two transpose-convolution layers land exactly on the (smaller, anisotropic)
PET grid.  The discriminator has separate MRI and PET conv branches merged by
resampling the MRI features onto the PET-branch grid; a shared two-layer
trunk feeds a patch real/fake head and a global class head.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ArchitectureError, ShapeError

Shape = tuple[int, ...]

# MRI / PET geometry per scale. "tiny" exists for gradient checks and fast tests.
SCALES: dict[str, dict] = {
    "paper": dict(mri=(1, 256, 256, 256), pet=(2, 93, 76, 76), width=64, enc=8, dec=5, skips=5, dropout=3),
    "desk": dict(mri=(1, 64, 64, 64), pet=(2, 24, 19, 19), width=16, enc=5, dec=4, skips=3, dropout=2),
    "tiny": dict(mri=(1, 8, 8, 8), pet=(2, 5, 4, 4), width=4, enc=2, dec=2, skips=1, dropout=1),
}

KERNEL = 4
LEAK = 0.2
DROPOUT_P = 0.5


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = KERNEL
    stride: int = 2
    padding: int = 1
    norm: bool = True


@dataclass(frozen=True)
class DecoderLayer:
    out_channels: int
    stride: int = 2
    target: Shape | None = None  # spatial extent this layer must emit


@dataclass(frozen=True)
class GeneratorSpec:
    input_shape: Shape
    output_shape: Shape
    encoder_layers: tuple[tuple[int, int], ...]  # (out_channels, stride)
    decoder_layers: tuple[DecoderLayer, ...]
    skip_pairs: tuple[tuple[int, int], ...]  # encoder output idx -> decoder input idx
    n_dropout: int = 0
    tracer: str = "av45"


@dataclass(frozen=True)
class DiscriminatorSpec:
    mri_shape: Shape
    pet_shape: Shape
    mri_branch: tuple[ConvSpec, ...]
    pet_branch: tuple[ConvSpec, ...]
    trunk: tuple[ConvSpec, ...]
    n_classes: int


# -- shape arithmetic ---------------------------------------------------------

def conv_out(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def tconv_out(n: int, kernel: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (n - 1) * stride - 2 * padding + kernel + output_padding


def _targeted_plan(target: Sequence[int], stride: int) -> tuple[Shape, Shape]:
    """Input extent and output padding that make a k4/p1 transpose conv emit `target`."""
    pre = tuple(t // stride for t in target)
    if any(p < 1 for p in pre):
        raise ArchitectureError(f"target {tuple(target)} too small for a stride-{stride} transpose")
    op = tuple(t - tconv_out(p, KERNEL, stride, 1) for t, p in zip(target, pre))
    if any(o < 0 or o >= stride for o in op):
        raise ArchitectureError(f"cannot reach target {tuple(target)} with stride {stride}")
    return pre, op


def _voxels(spatial: Sequence[int]) -> int:
    n = 1
    for s in spatial:
        n *= s
    return n


def _generator_shapes(spec: GeneratorSpec, input_shape: Sequence[int]):
    """Walk the generator; returns [(layer name, shape, extra)], extra holds layer plans."""
    input_shape = tuple(input_shape)
    if input_shape != tuple(spec.input_shape):
        raise ShapeError(f"generator input {input_shape} != declared {tuple(spec.input_shape)}")
    out = []
    c, sp = input_shape[0], tuple(input_shape[1:])
    enc_shapes = []
    for i, (ch, stride) in enumerate(spec.encoder_layers):
        sp = tuple(conv_out(n, KERNEL, stride, 1) for n in sp)
        if any(n < 1 for n in sp):
            raise ArchitectureError(f"encoder layer {i} collapses extent to {sp}")
        c = ch
        enc_shapes.append((c, *sp))
        out.append((f"enc{i}", (c, *sp), None))
    skips_for: dict[int, list[int]] = {}
    for e, d in spec.skip_pairs:
        if not (0 <= e < len(spec.encoder_layers) and 0 <= d < len(spec.decoder_layers)):
            raise ArchitectureError(f"skip pair {(e, d)} out of range")
        skips_for.setdefault(d, []).append(e)
    for j, layer in enumerate(spec.decoder_layers):
        in_c = c + sum(enc_shapes[e][0] for e in skips_for.get(j, []))
        if layer.target is not None:
            pre, op = _targeted_plan(layer.target, layer.stride)
        else:
            pre, op = sp, (0,) * len(sp)
        sp = tuple(tconv_out(n, KERNEL, layer.stride, 1, o) for n, o in zip(pre, op))
        if any(n < 1 for n in sp):
            raise ArchitectureError(f"decoder layer {j} yields extent {sp}")
        c = layer.out_channels
        out.append((f"dec{j}", (c, *sp), dict(in_channels=in_c, pre=pre, output_padding=op,
                                              skips=tuple(skips_for.get(j, [])))))
    return out


def _disc_shapes(spec: DiscriminatorSpec, mri_shape: Sequence[int], pet_shape: Sequence[int]):
    out = []
    mri_shape, pet_shape = tuple(mri_shape), tuple(pet_shape)
    if mri_shape != tuple(spec.mri_shape) or pet_shape != tuple(spec.pet_shape):
        raise ShapeError(
            f"discriminator inputs {mri_shape}/{pet_shape} != declared "
            f"{tuple(spec.mri_shape)}/{tuple(spec.pet_shape)}"
        )

    def run(prefix, layers, shape):
        c, sp = shape[0], tuple(shape[1:])
        for i, cs in enumerate(layers):
            sp = tuple(conv_out(n, cs.kernel, cs.stride, cs.padding) for n in sp)
            if any(n < 1 for n in sp):
                raise ArchitectureError(f"{prefix}{i} collapses extent to {sp}")
            c = cs.out_channels
            out.append((f"{prefix}{i}", (c, *sp), None))
        return c, sp

    mc, msp = run("mri", spec.mri_branch, mri_shape)
    pc, psp = run("pet", spec.pet_branch, pet_shape)
    # MRI features are resampled onto the PET-branch grid before concatenation
    out.append(("merge", (mc + pc, *psp), dict(mri_extent=msp)))
    tc, tsp = run("trunk", spec.trunk, (mc + pc, *psp))
    out.append(("patch", (1, *tsp), None))
    out.append(("class", (spec.n_classes,), None))
    return out


def infer_shapes(spec: GeneratorSpec | DiscriminatorSpec, input_shape=None) -> list[tuple[str, Shape]]:
    """Per-layer output shapes (batch axis excluded).

    For a generator the final entry must equal ``spec.output_shape``; for a
    discriminator ``input_shape`` is the (mri_shape, pet_shape) pair and the
    last two entries are the patch map and the class-logit vector.
    """
    if isinstance(spec, GeneratorSpec):
        shapes = _generator_shapes(spec, spec.input_shape if input_shape is None else input_shape)
        if shapes[-1][1] != tuple(spec.output_shape):
            raise ArchitectureError(
                f"generator emits {shapes[-1][1]}, declared {tuple(spec.output_shape)}"
            )
    elif isinstance(spec, DiscriminatorSpec):
        mri, pet = (spec.mri_shape, spec.pet_shape) if input_shape is None else input_shape
        shapes = _disc_shapes(spec, mri, pet)
    else:
        raise TypeError(f"not a network spec: {type(spec).__name__}")
    return [(name, shape) for name, shape, _ in shapes]


# -- builders -----------------------------------------------------------------

def _widths(base: int, n: int) -> list[int]:
    return [base * 2 ** min(i, 3) for i in range(n)]


def build_generator(scale: str = "desk", n_pet_channels: int = 2, tracer: str = "av45",
                    width: int | None = None) -> GeneratorSpec:
    if scale not in SCALES:
        raise ArchitectureError(f"unknown scale {scale!r}")
    if tracer not in ("av45", "fdg"):
        raise ArchitectureError(f"unknown tracer {tracer!r}")
    cfg = SCALES[scale]
    n_enc, n_dec = cfg["enc"], cfg["dec"]
    pet = (n_pet_channels, *cfg["pet"][1:])
    enc_w = _widths(width or cfg["width"], n_enc)
    encoder = tuple((w, 2) for w in enc_w)

    # mirrored U-Net widths; the last two layers are shape-targeted transposes
    final_sp = pet[1:]
    penult_sp = tuple(t // 2 for t in final_sp)
    decoder = []
    for j in range(n_dec):
        if j == n_dec - 1:
            decoder.append(DecoderLayer(n_pet_channels, 2, final_sp))
        elif j == n_dec - 2:
            decoder.append(DecoderLayer(enc_w[max(n_enc - 2 - j, 0)], 2, penult_sp))
        else:
            decoder.append(DecoderLayer(enc_w[n_enc - 2 - j], 2, None))

    # middle encoder layers, deepest first, feed mirrored decoder inputs starting
    # at dec1; any surplus beyond the decoder depth joins the last layer
    n_skip = cfg["skips"]
    middle = list(range(n_enc - 2, n_enc - 2 - n_skip, -1))
    skips = []
    for k, e in enumerate(middle):
        skips.append((e, min(k + 1, n_dec - 1)))
    spec = GeneratorSpec(
        input_shape=tuple(cfg["mri"]),
        output_shape=pet,
        encoder_layers=encoder,
        decoder_layers=tuple(decoder),
        skip_pairs=tuple(skips),
        n_dropout=cfg["dropout"],
        tracer=tracer,
    )
    infer_shapes(spec)
    return spec


def build_discriminator(scale: str = "desk", n_classes: int = 4, n_pet_channels: int = 2,
                        width: int | None = None) -> DiscriminatorSpec:
    if scale not in SCALES:
        raise ArchitectureError(f"unknown scale {scale!r}")
    cfg = SCALES[scale]
    w = width or cfg["width"]
    pet = (n_pet_channels, *cfg["pet"][1:])
    if scale == "tiny":
        mri_branch = (ConvSpec(w, norm=False), ConvSpec(2 * w))
        pet_branch = (ConvSpec(w, norm=False), ConvSpec(2 * w, kernel=3, stride=1))
    else:
        mri_branch = (ConvSpec(w, norm=False), ConvSpec(2 * w), ConvSpec(4 * w))
        pet_branch = (ConvSpec(w, norm=False), ConvSpec(2 * w))
    # the layer feeding both heads stays unnormalized: instance norm would strip
    # the per-subject feature means the pooled class head depends on
    trunk = (ConvSpec(4 * w, kernel=3, stride=1), ConvSpec(4 * w, kernel=3, stride=1, norm=False))
    spec = DiscriminatorSpec(tuple(cfg["mri"]), pet, mri_branch, pet_branch, trunk, n_classes)
    infer_shapes(spec)
    return spec


# -- modules ------------------------------------------------------------------

def _norm(channels: int, spatial: Sequence[int], wanted: bool, batch: bool = False) -> nn.Module:
    # statistics over a single voxel are undefined
    if not wanted or _voxels(spatial) <= 1:
        return nn.Identity()
    # batch statistics keep between-subject intensity levels, which carry the
    # stage in PET; instance norm would erase them before the class head
    return nn.BatchNorm3d(channels) if batch else nn.InstanceNorm3d(channels, affine=True)


def _resize(x: torch.Tensor, spatial: Sequence[int]) -> torch.Tensor:
    if tuple(x.shape[2:]) == tuple(spatial):
        return x
    return F.interpolate(x, size=tuple(spatial), mode="trilinear", align_corners=False)


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        plan = _generator_shapes(spec, spec.input_shape)
        n_enc = len(spec.encoder_layers)
        self.encoder = nn.ModuleList()
        in_c = spec.input_shape[0]
        for i, (ch, stride) in enumerate(spec.encoder_layers):
            sp = plan[i][1][1:]
            self.encoder.append(nn.Sequential(
                nn.Conv3d(in_c, ch, KERNEL, stride, 1),
                _norm(ch, sp, i > 0),
                nn.LeakyReLU(LEAK),
            ))
            in_c = ch
        self.decoder = nn.ModuleList()
        self._plans = []
        for j, layer in enumerate(spec.decoder_layers):
            _, shape, info = plan[n_enc + j]
            last = j == len(spec.decoder_layers) - 1
            mods = [nn.ConvTranspose3d(info["in_channels"], layer.out_channels, KERNEL,
                                       layer.stride, 1, output_padding=info["output_padding"])]
            if last:
                mods.append(nn.Sigmoid())
            else:
                mods += [_norm(layer.out_channels, shape[1:], True), nn.ReLU()]
                if j < spec.n_dropout:
                    mods.append(nn.Dropout(DROPOUT_P))
            self.decoder.append(nn.Sequential(*mods))
            self._plans.append((info["pre"], info["skips"]))

    def forward(self, mri: torch.Tensor) -> torch.Tensor:
        feats = []
        x = mri
        for layer in self.encoder:
            x = layer(x)
            feats.append(x)
        for layer, (pre, skips) in zip(self.decoder, self._plans):
            if skips:
                x = torch.cat([x] + [_resize(feats[e], x.shape[2:]) for e in skips], dim=1)
            x = layer(_resize(x, pre))
        return x


class Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        plan = {name: (shape, info) for name, shape, info in _disc_shapes(spec, spec.mri_shape, spec.pet_shape)}

        def branch(prefix, layers, in_c):
            mods = []
            for i, cs in enumerate(layers):
                sp = plan[f"{prefix}{i}"][0][1:]
                mods += [nn.Conv3d(in_c, cs.out_channels, cs.kernel, cs.stride, cs.padding),
                         _norm(cs.out_channels, sp, cs.norm, batch=True), nn.LeakyReLU(LEAK)]
                in_c = cs.out_channels
            return nn.Sequential(*mods), in_c

        self.mri_branch, mc = branch("mri", spec.mri_branch, spec.mri_shape[0])
        self.pet_branch, pc = branch("pet", spec.pet_branch, spec.pet_shape[0])
        self.trunk, tc = branch("trunk", spec.trunk, mc + pc)
        self.patch_head = nn.Conv3d(tc, 1, 1)
        self.class_head = nn.Linear(tc, spec.n_classes)

    def features(self, mri: torch.Tensor, pet: torch.Tensor) -> torch.Tensor:
        p = self.pet_branch(pet)
        m = _resize(self.mri_branch(mri), p.shape[2:])
        return self.trunk(torch.cat([m, p], dim=1))

    def forward(self, mri: torch.Tensor, pet: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.features(mri, pet)
        return self.patch_head(h), self.class_head(h.mean(dim=(2, 3, 4)))


def init_weights(module: nn.Module, seed: int) -> nn.Module:
    """pix2pix-style N(0, 0.02) init, reproducible from ``seed`` alone."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif p.dim() == 1:  # norm affine scale
                p.normal_(1.0, 0.02, generator=gen)
            else:
                p.normal_(0.0, 0.02, generator=gen)
    return module


# -- functional wrappers --------------------------------------------------------

ParameterSet = Mapping[str, torch.Tensor]


@functools.lru_cache(maxsize=16)
def _module_for(spec) -> nn.Module:
    return Generator(spec) if isinstance(spec, GeneratorSpec) else Discriminator(spec)


def init_params(spec: GeneratorSpec | DiscriminatorSpec, seed: int = 0) -> dict[str, torch.Tensor]:
    mod = Generator(spec) if isinstance(spec, GeneratorSpec) else Discriminator(spec)
    init_weights(mod, seed)
    return {k: v.detach().clone() for k, v in mod.state_dict().items()}


def _check_params(mod: nn.Module, params: ParameterSet) -> None:
    expected = {k: tuple(v.shape) for k, v in mod.state_dict().items()}
    got = {k: tuple(v.shape) for k, v in params.items()}
    if expected != got:
        raise ShapeError("parameter set does not match the network spec")


def _batched(x: torch.Tensor, shape: Shape, what: str) -> torch.Tensor:
    if tuple(x.shape) == tuple(shape):
        x = x.unsqueeze(0)
    if x.dim() != len(shape) + 1 or tuple(x.shape[1:]) != tuple(shape):
        raise ShapeError(f"{what}: expected (*, {', '.join(map(str, shape))}), got {tuple(x.shape)}")
    return x


def generator_forward(spec: GeneratorSpec, params: ParameterSet, mri, train: bool = False) -> torch.Tensor:
    """Synthesize PET for a batch of MRI volumes (or a single volume).

    Dropout acts as the noise source and is only active with ``train=True``.
    """
    mri = _batched(torch.as_tensor(mri), spec.input_shape, "generator input")
    mod = _module_for(spec)
    _check_params(mod, params)
    mod.train(train)
    return torch.func.functional_call(mod, dict(params), (mri.to(next(iter(params.values())).dtype),))


def discriminator_forward(spec: DiscriminatorSpec, params: ParameterSet, mri, pet):
    mri = _batched(torch.as_tensor(mri), spec.mri_shape, "discriminator MRI input")
    pet = _batched(torch.as_tensor(pet), spec.pet_shape, "discriminator PET input")
    if mri.shape[0] != pet.shape[0]:
        raise ShapeError("MRI and PET batch sizes differ")
    mod = _module_for(spec)
    _check_params(mod, params)
    mod.eval()
    dtype = next(iter(params.values())).dtype
    return torch.func.functional_call(mod, dict(params), (mri.to(dtype), pet.to(dtype)))
