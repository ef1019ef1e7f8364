"""Flat ``key = value`` configuration files.

Keys are dotted by section (``run.``, ``schedule.``, ``stabilizer.``,
``phantom.``); ``#`` starts a comment.  Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError
from .phantom import PhantomConfig
from .schedule import ScheduleConfig
from .train import RunConfig

_RUN_KEYS = ("mode", "task", "scale", "epochs", "batch_size", "learning_rate", "beta1", "beta2",
             "seed", "tracer", "width", "d_cls_on_fake", "stage2_epochs")
_STAB_KEYS = {"enabled": "stabilizer", "epsilon_rel": "epsilon_rel",
              "max_consecutive": "max_consecutive", "gamma": "gamma"}
_SCHED_KEYS = ("rising_start", "rising_factor", "cap", "falling_start", "falling_factor", "floor", "lambda_l1")
_OVERRIDE_KEYS = ("lambda_gan_d", "lambda_cls_d", "lambda_gan_g", "lambda_cls_g", "lambda_l1")
_PHANTOM_KEYS = ("scale", "n_subjects", "seed", "stage_mix", "noise_sigma", "deform_amplitude", "anatomy_sigma")


def defaults() -> dict[str, object]:
    run, sched, ph = RunConfig(), ScheduleConfig(), PhantomConfig()
    out: dict[str, object] = {}
    for k in _RUN_KEYS:
        out[f"run.{k}"] = None if k in ("epochs", "batch_size", "width", "stage2_epochs") else getattr(run, k)
    for k, attr in _STAB_KEYS.items():
        out[f"stabilizer.{k}"] = getattr(run, attr)
    for k in _SCHED_KEYS:
        out[f"schedule.{k}"] = getattr(sched, k)
    for k in _OVERRIDE_KEYS:
        out[f"schedule.override.{k}"] = None
    for k in _PHANTOM_KEYS:
        out[f"phantom.{k}"] = getattr(ph, k)
    return out


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return str(v)


def dump_defaults() -> str:
    lines = ["# auto = derived from run.scale (epochs, batch_size, width) or unset (overrides)"]
    section = None
    for key, val in defaults().items():
        head = key.split(".")[0]
        if head != section:
            lines.append(f"\n# [{head}]")
            section = head
        lines.append(f"{key} = {_fmt(val)}")
    return "\n".join(lines) + "\n"


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    if raw.lower() in ("auto", "none", ""):
        return None
    try:
        if key.endswith("stage_mix"):
            return tuple(float(x) for x in raw.split(","))
        if isinstance(default, bool) or key == "stabilizer.enabled" or key.endswith("d_cls_on_fake"):
            if raw.lower() in ("true", "yes", "on", "1"):
                return True
            if raw.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int) or key.split(".")[-1] in (
                "epochs", "batch_size", "width", "stage2_epochs", "task", "seed", "n_subjects"):
            return int(raw)
        if isinstance(default, float) or key.startswith("schedule.override."):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str) -> dict[str, object]:
    known = defaults()
    settings: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        settings[key] = _coerce(key, raw, known[key])
    return settings


def load_config(path: str | Path | None) -> dict[str, object]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def run_config(settings: dict[str, object], **extra) -> RunConfig:
    merged = {**defaults(), **settings}
    sched = ScheduleConfig(
        **{k: merged[f"schedule.{k}"] for k in _SCHED_KEYS},
        overrides=tuple((k, float(merged[f"schedule.override.{k}"])) for k in _OVERRIDE_KEYS
                        if merged[f"schedule.override.{k}"] is not None),
    )
    kw = {k: merged[f"run.{k}"] for k in _RUN_KEYS}
    kw.update({attr: merged[f"stabilizer.{k}"] for k, attr in _STAB_KEYS.items()})
    kw.update(extra)
    try:
        return RunConfig(schedule=sched, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def phantom_config(settings: dict[str, object], **extra) -> PhantomConfig:
    merged = {**defaults(), **settings}
    kw = {k: merged[f"phantom.{k}"] for k in _PHANTOM_KEYS}
    kw.update({k: v for k, v in extra.items() if v is not None})
    try:
        return PhantomConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def as_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
