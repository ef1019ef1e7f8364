"""Epoch-level rollback stabilizer.

After every epoch the mean D and G losses are compared with the last
accepted epoch.  A side whose loss rose by more than ``epsilon_rel`` triggers a
rollback to the last accepted checkpoint and halves that side's
classification weight multiplier.  A side that has already been rolled back
``max_consecutive`` times in a row is force-accepted so training always
advances.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .errors import CheckpointError


class Variant(str, enum.Enum):
    ACCEPT = "Accept"
    ROLLBACK_D = "RollbackD"
    ROLLBACK_G = "RollbackG"
    ROLLBACK_BOTH = "RollbackBoth"
    FORCED_ACCEPT = "ForcedAccept"

    @property
    def accepted(self) -> bool:
        return self in (Variant.ACCEPT, Variant.FORCED_ACCEPT)


@dataclass(frozen=True)
class Decision:
    variant: Variant
    cls_d_factor: float = 1.0
    cls_g_factor: float = 1.0
    nonfinite: bool = False

    @property
    def accepted(self) -> bool:
        return self.variant.accepted


@dataclass(frozen=True)
class StabilizerState:
    prev_d_loss: float | None = None
    prev_g_loss: float | None = None
    checkpoint_ref: str | None = None
    consecutive_rollbacks_d: int = 0
    consecutive_rollbacks_g: int = 0
    epsilon_rel: float = 1e-3
    max_consecutive: int = 3
    gamma: float = 0.5
    adjustment_multiplier_d: float = 1.0
    adjustment_multiplier_g: float = 1.0

    def to_dict(self) -> dict:
        return {
            "prev_d_loss": self.prev_d_loss,
            "prev_g_loss": self.prev_g_loss,
            "checkpoint_ref": self.checkpoint_ref,
            "consecutive_rollbacks_d": self.consecutive_rollbacks_d,
            "consecutive_rollbacks_g": self.consecutive_rollbacks_g,
            "epsilon_rel": self.epsilon_rel,
            "max_consecutive": self.max_consecutive,
            "gamma": self.gamma,
            "adjustment_multiplier_d": self.adjustment_multiplier_d,
            "adjustment_multiplier_g": self.adjustment_multiplier_g,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StabilizerState":
        return cls(**d)


def _rose(loss: float, prev: float, eps: float) -> bool:
    if not math.isfinite(loss):
        return True
    return loss > prev * (1.0 + eps)


def observe_epoch(state: StabilizerState, d_loss: float, g_loss: float,
                  checkpoint_ref: str | None = None) -> tuple[Decision, StabilizerState]:
    """Decide whether the epoch that produced ``(d_loss, g_loss)`` is kept.

    Pure function of its arguments.  ``checkpoint_ref`` names the state the
    caller will store if the epoch is accepted.  Non-finite losses count as a
    rise and set ``Decision.nonfinite``.
    """
    d_loss, g_loss = float(d_loss), float(g_loss)
    nonfinite = not (math.isfinite(d_loss) and math.isfinite(g_loss))

    def accept(variant: Variant) -> tuple[Decision, StabilizerState]:
        new = replace(
            state,
            prev_d_loss=d_loss,
            prev_g_loss=g_loss,
            checkpoint_ref=checkpoint_ref if checkpoint_ref is not None else state.checkpoint_ref,
            consecutive_rollbacks_d=0,
            consecutive_rollbacks_g=0,
        )
        return Decision(variant, nonfinite=nonfinite), new

    if state.prev_d_loss is None or state.prev_g_loss is None:
        if nonfinite:
            # nothing to roll back to yet; the caller aborts on this
            return Decision(Variant.FORCED_ACCEPT, nonfinite=True), state
        return accept(Variant.ACCEPT)

    d_up = _rose(d_loss, state.prev_d_loss, state.epsilon_rel)
    g_up = _rose(g_loss, state.prev_g_loss, state.epsilon_rel)
    if not (d_up or g_up):
        return accept(Variant.ACCEPT)

    exhausted = (d_up and state.consecutive_rollbacks_d >= state.max_consecutive) or (
        g_up and state.consecutive_rollbacks_g >= state.max_consecutive
    )
    if exhausted:
        return accept(Variant.FORCED_ACCEPT)

    fd = state.gamma if d_up else 1.0
    fg = state.gamma if g_up else 1.0
    variant = Variant.ROLLBACK_BOTH if d_up and g_up else (Variant.ROLLBACK_D if d_up else Variant.ROLLBACK_G)
    new = replace(
        state,
        consecutive_rollbacks_d=state.consecutive_rollbacks_d + int(d_up),
        consecutive_rollbacks_g=state.consecutive_rollbacks_g + int(g_up),
        adjustment_multiplier_d=state.adjustment_multiplier_d * fd,
        adjustment_multiplier_g=state.adjustment_multiplier_g * fg,
    )
    return Decision(variant, cls_d_factor=fd, cls_g_factor=fg, nonfinite=nonfinite), new


def restore(checkpoint_ref: str):
    """Load the accepted checkpoint named by ``checkpoint_ref``.

    The returned checkpoint holds G/D parameters, optimizer moments and RNG
    state; raises CheckpointError when missing or corrupt.
    """
    from . import checkpoint

    if not checkpoint_ref:
        raise CheckpointError("no accepted checkpoint to restore")
    return checkpoint.load(checkpoint_ref)


def replay(trace, state: StabilizerState | None = None) -> list[Decision]:
    """Run ``observe_epoch`` over a sequence of (d_loss, g_loss) pairs."""
    state = state or StabilizerState()
    out = []
    for d, g in trace:
        decision, state = observe_epoch(state, d, g)
        out.append(decision)
    return out
